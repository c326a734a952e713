from __future__ import annotations

import math

import numpy as np
import pytest

from tempdich.admissibility import detect_dichotomy
from tempdich.dynamics import (
    BernoulliShift,
    Cocycle,
    ConstantGenerator,
    IrrationalRotation,
    SteppedDiagonalGenerator,
    SymbolGenerator,
    rotation_matrix,
)
from tempdich.errors import NoGap, NoReturn
from tempdich.spectrum import (
    build_return_cocycle,
    bound_on_set,
    induced_decay_check,
    interval_predicate,
    kac_check,
    kac_history,
    lyapunov_qr,
    met_dichotomy,
    oseledets_split,
    return_constants,
    symbol_predicate,
    whole_space,
)

LN2 = math.log(2)
ROT = IrrationalRotation()
HYP = Cocycle(ROT, ConstantGenerator(np.diag([0.5, 2.0])))
STEP = Cocycle(ROT, SteppedDiagonalGenerator())


def test_lyapunov_constant_diagonal():
    rep = lyapunov_qr(HYP, 0.1, 500)
    assert np.allclose(rep.exponents, [LN2, -LN2], atol=1e-12)


def test_lyapunov_stepped_against_birkhoff_average():
    n = 100_000
    rep = lyapunov_qr(STEP, 0.1, n)
    rates = STEP.generator.rates(ROT.states(0.1, 0, n - 1))
    oracle = sorted([rates.mean(), -LN2, -rates.mean()], reverse=True)
    assert np.allclose(rep.exponents, oracle, atol=1e-6)
    assert rep.exponents[1] == pytest.approx(-LN2, abs=1e-10)


def test_lyapunov_sum_rule():
    drv = BernoulliShift(4, 3)
    rng = np.random.default_rng(2)
    mats = rng.standard_normal((3, 3, 3)) + 2 * np.eye(3)
    c = Cocycle(drv, SymbolGenerator(drv, mats))
    n = 20_000
    rep = lyapunov_qr(c, 0, n)
    dets = np.log(np.abs(np.linalg.det(c.matrices(drv.states(0, 0, n - 1)))))
    assert rep.exponents.sum() == pytest.approx(dets.mean(), abs=1e-6)


def test_lyapunov_jordan_block():
    c = Cocycle(ROT, ConstantGenerator(np.array([[0.5, 1.0], [0.0, 0.5]])))
    n = 10_000
    rep = lyapunov_qr(c, 0.1, n)
    assert np.all(np.abs(rep.exponents + LN2) <= 4 * math.log(n) / n)


def test_lyapunov_history_checkpoints():
    rep = lyapunov_qr(HYP, 0.1, 1000, checkpoints=[100, 500])
    assert [h[0] for h in rep.history] == [100, 500, 1000]
    assert rep.to_rows()[0][0] == 100


def test_oseledets_split_examples():
    s = oseledets_split(HYP, 0.1, 200)
    assert np.allclose(s.projection, np.diag([1.0, 0.0]), atol=1e-12)
    s = oseledets_split(STEP, 0.1, 2000)
    assert np.allclose(s.projection, np.diag([1.0, 1.0, 0.0]), atol=1e-10)


@pytest.mark.parametrize("A", [rotation_matrix(1.0), np.diag([1.0, 2.0])])
def test_no_gap(A):
    with pytest.raises(NoGap):
        met_dichotomy(Cocycle(ROT, ConstantGenerator(A)), 0.1, 2000)


def test_met_matches_detect():
    m = met_dichotomy(STEP, 0.1, 10_000)
    d = detect_dichotomy(STEP, 0.1, 0.5, None, 40)
    assert np.max(np.abs(m.proj - d.proj)) <= 1e-6
    assert m.meta["validation"]["pass"]
    assert np.allclose(m.stable(0), np.diag([1.0, 1.0, 0.0]), atol=1e-10)
    assert m.alpha >= LN2 * 0.9 - 1e-12 and m.K.max() == pytest.approx(1.0, abs=1e-6)


def test_met_hyperbolic():
    m = met_dichotomy(HYP, 0.1, 1000)
    assert np.allclose(m.stable(0), np.diag([1.0, 0.0]), atol=1e-12)
    assert m.alpha == pytest.approx(0.9 * LN2)


def test_return_times_against_orbit_scan():
    F = interval_predicate(0.0, 0.5)
    rc = build_return_cocycle(STEP, F, 0.1, 2000, p_hat_samples=1000)
    s = ROT.states(0.1, 0, int(rc.times[-1]))
    hits = np.nonzero(F(s[1:]))[0] + 1
    assert np.array_equal(rc.times, hits[: rc.n_returns])
    gaps = np.diff(np.concatenate([[0], rc.times]))
    # three-distance structure: three gap values, the largest the sum of the other two
    assert set(gaps.tolist()) == {1, 2, 3}


def test_return_cocycle_generators_are_products():
    F = interval_predicate(0.0, 0.3)
    rc = build_return_cocycle(STEP, F, 0.1, 50, p_hat_samples=1000)
    t0 = 0
    for j in range(5):
        t1 = int(rc.times[j])
        mats = STEP.matrices(ROT.states(0.1, t0, t1 - 1))
        prod = np.eye(3)
        for a in mats:
            prod = a @ prod
        assert np.allclose(rc.generators[j], prod, rtol=1e-13)
        t0 = t1


def test_induced_cocycle_law():
    rc = build_return_cocycle(HYP, interval_predicate(0.0, 0.4), 0.1, 60, p_hat_samples=1000)
    n, m = 7, 11
    lhs = rc.induced(n + m)
    rhs = rc.induced(m, start=n) @ rc.induced(n)
    assert np.allclose(lhs, rhs, rtol=1e-12)


def test_whole_space_returns():
    rc = build_return_cocycle(HYP, whole_space, 0.1, 200, p_hat_samples=1000)
    assert np.array_equal(rc.times, np.arange(1, 201))
    k = kac_check(rc)
    assert k["kac_ratio"] == 1.0


def test_kac_rotation_and_monotone_history():
    rc = build_return_cocycle(HYP, interval_predicate(0.0, 0.5), 0.1, 100_000, store_generators=False)
    k = kac_check(rc, 0.05, p_exact=0.5)
    assert k["pass"] and abs(k["kac_ratio_exact_measure"] - 1) < 1e-3
    hist = kac_history(rc, [1000, 10_000, 100_000], p=0.5)
    dev = [h["deviation"] for h in hist]
    assert dev[0] >= dev[1] >= dev[2]


def test_kac_bernoulli_geometric():
    drv = BernoulliShift(17)
    c = Cocycle(drv, ConstantGenerator(np.eye(1)))
    F = symbol_predicate(drv, 0)
    w0 = int(np.nonzero(F(np.arange(100)))[0][0])
    rc = build_return_cocycle(c, F, w0, 50_000, store_generators=False, p_hat_samples=20_000)
    assert kac_check(rc)["mean_return"] == pytest.approx(2.0, abs=0.05)


def test_no_return():
    F = interval_predicate(0.0, 1e-9)
    with pytest.raises(NoReturn):
        build_return_cocycle(HYP, F, 0.0, 5, step_cap=1000)


def test_return_constants_unit_L():
    c = return_constants(1.0)
    assert (c.h1, c.h2, c.n0, c.n0_prime) == (3.0, 3.0, 24, 24)
    assert c.nu == 1 / 24 and c.nu_prime == 1 / 24
    assert c.Q == pytest.approx(3 * math.e) and c.Q_prime == pytest.approx(3 * math.e)
    assert 9 / 24 > 1 / math.e >= 9 / 25


def test_return_constants_monotone_and_huge():
    hs = [return_constants(L).h1 for L in (1.0, 1.5, 2.0, 5.0)]
    assert hs == sorted(hs)
    c = return_constants(math.exp(19))
    assert c.n0 >= 1 and math.isfinite(c.Q)


def test_induced_decay():
    F = interval_predicate(0.0, 0.9)
    rc = build_return_cocycle(STEP, F, 0.1, 2000, p_hat_samples=1000)
    consts = return_constants(1.0)
    assert induced_decay_check(rc, np.eye(3)[:, :2], consts)["pass"]
    assert not induced_decay_check(rc, np.eye(3)[:, 2:], consts)["pass"]
    rc = build_return_cocycle(HYP, whole_space, 0.1, 200, p_hat_samples=1000)
    L = bound_on_set(HYP, whole_space, samples=100)
    assert L == 2.0
    assert induced_decay_check(rc, np.array([[1.0], [0.0]]), return_constants(L))["pass"]
