from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import alpha_tilde_hp, beta_star_hp, kappa_hp
from tempdich.admissibility import extract_projector
from tempdich.dynamics import Cocycle, ConstantGenerator, IrrationalRotation, rotation_matrix
from tempdich.errors import DetectionFailure, DomainError, NoConvergence
from tempdich.green import DichotomyData, green_bound_check, green_table
from tempdich.roughness import (
    PerturbationSpec,
    beta_star,
    check_smallness,
    contraction_lhs,
    deterministic_mode,
    holder_bound,
    holder_empirical,
    iteration_rate,
    new_bound,
    new_exponent,
    perturbed_green,
    roughness_constants,
    smallness_threshold,
)

LN2 = math.log(2)
A0 = np.diag([0.5, 2.0])
HYP = Cocycle(IrrationalRotation(), ConstantGenerator(A0))
E_UP = np.array([[0.0, 1.0], [0.0, 0.0]])


def dich(N=30):
    return DichotomyData.build(HYP, 0.1, -N, N, np.diag([1.0, 0.0]), LN2)


def family(E):
    return lambda xi: ConstantGenerator(A0 + xi * E)


def admissible():
    return st.tuples(st.floats(0.05, 5.0), st.floats(0.01, 0.95)).map(
        lambda t: (t[0], t[1] * smallness_threshold(t[0]))
    )


def test_beta_star_reference_values():
    b = beta_star(LN2, 0.1)
    assert b.beta_star == pytest.approx(0.28018, abs=1e-4)
    assert b.contraction == 0.65
    ref, c = beta_star_hp(LN2, 0.1)
    assert b.beta_star == pytest.approx(float(ref), rel=1e-13)


@settings(max_examples=200, deadline=None)
@given(admissible())
def test_beta_star_against_high_precision(ar):
    alpha, rho = ar
    b = beta_star(alpha, rho)
    ref, c = beta_star_hp(alpha, rho)
    assert b.beta_star == pytest.approx(float(ref), rel=1e-9, abs=1e-12)
    assert b.contraction == pytest.approx(float(c), rel=1e-13)
    assert 0 < b.beta_star < alpha
    assert b.contraction < 1
    # at beta* the contraction inequality holds with equality
    assert contraction_lhs(alpha, rho, b.beta_star) == pytest.approx(b.contraction, rel=1e-9)


def test_beta_star_small_rho_limit():
    assert beta_star(1.0, 1e-12).contraction == pytest.approx(0.5, abs=1e-11)


def test_beta_star_domain():
    with pytest.raises(DomainError):
        beta_star(LN2, 0.4)
    with pytest.raises(DomainError):
        beta_star(LN2, 0.0)


def test_threshold_value():
    assert smallness_threshold(LN2) == pytest.approx(1 / 3, rel=1e-15)


def test_new_exponent_reference_values():
    assert new_exponent(LN2, 0.0) == LN2
    assert new_exponent(LN2, 0.1) == pytest.approx(0.49801, abs=1e-4)
    assert new_exponent(LN2, 0.1) == pytest.approx(-math.log(1.25 - math.sqrt(0.4125)), rel=1e-13)


@settings(max_examples=200, deadline=None)
@given(admissible())
def test_new_exponent_against_high_precision(ar):
    alpha, rho = ar
    assert new_exponent(alpha, rho) == pytest.approx(float(alpha_tilde_hp(alpha, rho)), rel=1e-10, abs=1e-13)


def test_new_exponent_decreasing_in_rho():
    rhos = np.linspace(0, 0.33, 40)
    vals = [new_exponent(LN2, r) for r in rhos]
    assert all(a > b for a, b in zip(vals, vals[1:]))


@settings(max_examples=200, deadline=None)
@given(admissible())
def test_kappa_against_high_precision(ar):
    alpha, rho = ar
    kappa, _, aux = new_bound(alpha, rho)
    assert kappa == pytest.approx(float(kappa_hp(alpha, rho)), rel=1e-9)
    assert kappa >= 1


def test_new_bound_zero_rho():
    kappa, K, aux = new_bound(LN2, 0.0, K_samples=np.array([1.0, 2.0]))
    assert kappa == 1.0 and np.array_equal(K, [1.0, 2.0])
    assert aux["D1"] == aux["D2"] == 1.0 and aux["varrho"] == 0.0
    c = roughness_constants(LN2, 0.0)
    assert c.alpha_tilde == LN2 and c.kappa == 1.0


def test_new_bound_reference():
    kappa, _, aux = new_bound(LN2, 0.1)
    assert aux["varrho"] == pytest.approx(0.3, rel=1e-14)
    assert kappa == pytest.approx(float(kappa_hp(LN2, 0.1)), rel=1e-12)


def test_near_threshold_flag():
    c = roughness_constants(LN2, smallness_threshold(LN2) * (1 - 1e-10))
    assert c.near_threshold


def test_iteration_rate_below_one_at_beta_star():
    for alpha, rho in ((LN2, 0.1), (1.0, 0.2), (2.0, 0.5)):
        b = beta_star(alpha, rho).beta_star
        for mode in ("plus", "minus", "absolute"):
            lam = -b if mode == "minus" else b
            assert iteration_rate(alpha, rho, lam, mode) < 1


def test_holder_bound_examples():
    assert holder_bound(1, 1, 1, LN2) == pytest.approx(5 / 3, rel=1e-14)
    assert holder_bound(2, 1, 1, 50.0) == pytest.approx(4.0)
    assert holder_bound(1, 3, 1, LN2) == pytest.approx(3 * holder_bound(1, 1, 1, LN2))
    with pytest.raises(DomainError):
        holder_bound(1, 1, 1, LN2, sigma=1.5)


def test_check_smallness_examples():
    d = dich()
    ok = check_smallness(HYP, PerturbationSpec(family(E_UP), 0.06), d, 0.0)
    assert ok["pass"] and ok["orbit_margin"] == 0.06
    bad = check_smallness(HYP, PerturbationSpec(family(E_UP), 0.4), d, 0.0)
    assert not bad["pass"] and bad["threshold_margin"] < 0
    q = rotation_matrix(0.9)
    rep = check_smallness(HYP, PerturbationSpec(family(q), 0.06), d, 0.05)
    assert rep["pass"] and rep["worst_weighted_perturbation"] == pytest.approx(0.05)


def test_perturbed_green_zero_perturbation_exact():
    d = dich(12)
    pg = perturbed_green(d, PerturbationSpec(family(E_UP), 0.06), 0.0)
    assert pg.iterations == 1
    assert np.array_equal(pg.table.G, green_table(d).G)


@pytest.mark.parametrize("mode", ["plus", "minus", "absolute"])
def test_perturbed_green_orthogonal_direction(mode):
    q = np.linalg.qr(np.random.default_rng(7).standard_normal((2, 2)))[0]
    d = dich(30)
    pert = PerturbationSpec(family(q), 0.06)
    pg = perturbed_green(d, pert, 0.05, mode=mode)
    assert pg.measured_rate <= 1.1 * pg.analytic_rate
    assert green_bound_check(pg.table)["pass"]
    direct = extract_projector(pert.cocycle(HYP, 0.05), 0.1, 30, 0.3).P
    assert np.max(np.abs(direct - pg.projector)) <= 1e-7


def test_perturbed_projector_closed_form():
    d = dich(20)
    pert = PerturbationSpec(family(E_UP), 0.06)
    for xi in (0.01, 0.03, 0.05):
        P = perturbed_green(d, pert, xi).projector
        assert np.allclose(P, [[1.0, -xi / 1.5], [0.0, 0.0]], atol=1e-12)


def test_perturbed_decay_along_orbit():
    d = dich(20)
    pert = PerturbationSpec(family(E_UP), 0.06)
    pg = perturbed_green(d, pert, 0.05)
    c = pg.constants
    B = A0 + 0.05 * E_UP
    P = pg.projector
    for n in range(0, 20):
        lhs = np.linalg.norm(np.linalg.matrix_power(B, n) @ P, 2)
        assert lhs <= c.kappa * 1.0 * math.exp(-c.alpha_tilde * n) * (1 + 1e-12)


def test_perturbed_green_no_convergence():
    d = dich(10)
    with pytest.raises(NoConvergence):
        perturbed_green(d, PerturbationSpec(family(E_UP), 0.06), 0.05, beta=0.0, max_iters=1)


def test_holder_empirical_closed_form_ratio():
    d = dich(20)
    pert = PerturbationSpec(family(E_UP), 0.04)
    rep = holder_empirical(pert, d, [(0.01, 0.02), (0.01, 0.04), (0.02, 0.04), (0.02, 0.02)])
    assert len(rep["pairs"]) == 3
    assert rep["max_ratio"] == pytest.approx(2 / 3, rel=1e-9)
    assert rep["pass"]


def test_deterministic_mode_examples():
    tr = np.array([A0] * 121)
    d = deterministic_mode(tr, 1.0, 0.0, 0.3)
    assert np.allclose(d.stable(0), np.diag([1.0, 0.0]), atol=1e-12)
    n = np.arange(-60, 61)
    tr = np.array([np.diag([math.exp(-1 - 0.1 * math.cos(k)), math.exp(1 + 0.1 * math.cos(k))]) for k in n])
    d = deterministic_mode(tr, 1.0, 0.0, 0.5)
    assert np.allclose(d.stable(0), np.diag([1.0, 0.0]), atol=1e-12)
    assert d.meta["kappa_tilde"] < math.exp(0.3)
    with pytest.raises(DetectionFailure):
        deterministic_mode(np.array([rotation_matrix(1.0)] * 121), 1.0, 0.0, 0.3)
