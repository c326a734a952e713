from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import dense_bounded_solution, gamma_hp, skewed_hyperbolic
from tempdich.dynamics import Cocycle, ConstantGenerator, IrrationalRotation, SteppedDiagonalGenerator
from tempdich.errors import DomainError, WindowMismatch
from tempdich.green import (
    DichotomyData,
    gamma,
    gamma_tilde,
    green,
    green_bound_check,
    green_table,
    rho_beta,
    solve_convolution,
)
from tempdich.weighted_spaces import WeightSpec, WindowedSequence, weighted_norm

LN2 = math.log(2)


def hyperbolic(N=12, A=None, P=None, alpha=LN2, K=1.0):
    A = np.diag([0.5, 2.0]) if A is None else A
    P = np.diag([1.0, 0.0]) if P is None else P
    c = Cocycle(IrrationalRotation(), ConstantGenerator(A))
    return DichotomyData.build(c, 0.1, -N, N, P, alpha, K)


def test_green_examples():
    d = hyperbolic()
    assert np.allclose(green(d, 2), np.diag([0.25, 0.0]))
    assert np.allclose(green(d, -1), np.diag([0.0, -0.5]))
    assert np.array_equal(green(d, 0), d.stable(0))


def test_green_table_matches_pointwise():
    c = Cocycle(IrrationalRotation(), SteppedDiagonalGenerator(6))
    d = DichotomyData.build(c, 0.3, -8, 8, np.diag([1.0, 1.0, 0.0]), LN2)
    t = green_table(d)
    for n, k in ((3, -2), (-4, 1), (0, 0), (5, 5), (-8, 8)):
        ref = green(d, n - k, k)
        assert np.allclose(t(n, k), ref, rtol=1e-12, atol=1e-300)


def test_green_bound_equality_case():
    rep = green_bound_check(green_table(hyperbolic()))
    assert rep["max_slack"] == pytest.approx(1.0, abs=1e-14) and rep["pass"]


def test_green_bound_stepped_diagonal():
    c = Cocycle(IrrationalRotation(), SteppedDiagonalGenerator())
    d = DichotomyData.build(c, 0.1, -20, 20, np.diag([1.0, 1.0, 0.0]), LN2)
    assert green_bound_check(green_table(d))["pass"]


def test_green_bound_inflated_alpha_fails():
    N = 12
    rep = green_bound_check(green_table(hyperbolic(N)), alpha=2 * LN2)
    assert not rep["pass"]
    assert rep["max_slack"] == pytest.approx(2.0 ** (2 * N), rel=1e-12)


def test_solve_convolution_delta():
    d = hyperbolic()
    f = WindowedSequence.delta(-12, 12, 0, np.array([1.0, 0.0]))
    x = solve_convolution(d, f)
    n = x.indices
    expect = np.where(n >= 0, 2.0 ** (-np.abs(n)), 0.0)
    assert np.allclose(x.values[:, 0], expect, atol=1e-15)
    assert np.all(x.values[:, 1] == 0)


def test_solve_convolution_zero():
    d = hyperbolic()
    x = solve_convolution(d, WindowedSequence.zeros(-12, 12, 2))
    assert not np.any(x.values)


def test_solve_convolution_window_too_large():
    with pytest.raises(WindowMismatch):
        solve_convolution(hyperbolic(4), WindowedSequence.zeros(-5, 5, 2))


def test_dense_oracle_random_inputs():
    rng = np.random.default_rng(3)
    for A, P in ((np.diag([0.5, 2.0]), np.diag([1.0, 0.0])), skewed_hyperbolic(LN2, 0.4)):
        d = hyperbolic(8, A, P)
        table = green_table(d)
        mats = d.segment.matrices[:-1]
        for _ in range(20):
            f = rng.standard_normal((17, 2))
            x = solve_convolution(d, WindowedSequence(f, -8), table).values
            ref = dense_bounded_solution(mats, P, P, f)
            assert np.max(np.abs(x - ref)) <= 1e-10 * (1 + np.abs(f).max())


def test_recurrence_residual():
    rng = np.random.default_rng(4)
    c = Cocycle(IrrationalRotation(), SteppedDiagonalGenerator(4))
    d = DichotomyData.build(c, 0.2, -10, 10, np.diag([1.0, 1.0, 0.0]), LN2)
    f = rng.standard_normal((21, 3))
    x = solve_convolution(d, WindowedSequence(f, -10)).values
    A = d.segment.matrices[:-1]
    res = x[1:] - np.einsum("nij,nj->ni", A, x[:-1]) - f[1:]
    assert np.max(np.linalg.norm(res, axis=1)) <= 1e-9 * (1 + np.abs(f).max())


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([(LN2, 0.0), (LN2, 0.3), (LN2, -0.3), (1.0, 0.5), (1.0, -0.5)]), st.integers(0, 2**32 - 1))
def test_norm_bound_random_probes(ab, seed):
    alpha, beta = ab
    A, P = skewed_hyperbolic(alpha, 0.5)
    K = max(np.linalg.norm(P, 2), np.linalg.norm(np.eye(2) - P, 2))
    d = hyperbolic(20, A, P, alpha, K)
    f = WindowedSequence(np.random.default_rng(seed).standard_normal((41, 2)), -20)
    x = solve_convolution(d, f)
    for variant, const in (("signed", gamma(alpha, beta)), ("absolute", gamma_tilde(alpha, beta))):
        w = WeightSpec(beta=beta, variant=variant, K_samples=d.K, n_lo=-20)
        assert weighted_norm(x, w, unweighted_K=True) <= const * weighted_norm(f, w) * (1 + 1e-12)


def test_gamma_examples():
    assert gamma(LN2, 0.0) == pytest.approx(3.0, rel=1e-15)
    assert gamma(1.0, 0.5) == pytest.approx(float(gamma_hp(1.0, 0.5)), rel=1e-14)
    assert gamma(1.0, 0.5) == pytest.approx(4.0830, abs=1e-4)
    assert gamma(60.0, 0.2) == pytest.approx(1.0, abs=1e-20)
    e = math.exp(-(LN2 - 0.3))
    assert gamma_tilde(LN2, 0.3) == pytest.approx((1 + e) / (1 - e), rel=1e-14)
    assert gamma_tilde(LN2, 0.0) == gamma(LN2, 0.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 20), st.floats(-0.99, 0.99))
def test_gamma_properties(alpha, frac):
    beta = frac * alpha
    assert gamma_tilde(alpha, beta) == gamma_tilde(alpha, -beta)
    assert gamma(alpha, beta) >= 1.0
    assert gamma(alpha, beta) == pytest.approx(float(gamma_hp(alpha, beta)), rel=1e-10)


def test_gamma_domain():
    with pytest.raises(DomainError):
        gamma(LN2, 1.0)
    with pytest.raises(DomainError):
        gamma_tilde(-1.0, 0.0)


def test_rho_beta():
    assert rho_beta(3, 5) == 5
    assert rho_beta(2.5, 2.5) == 2.5
    assert rho_beta(gamma(LN2, 0.2), gamma(LN2, -0.2)) == max(gamma(LN2, 0.2), gamma(LN2, -0.2))


def test_validate_and_csv(tmp_path):
    d = hyperbolic(6)
    rep = d.validate()
    assert rep["pass"] and rep["idempotence_defect"] == 0.0
    t = green_table(d)
    p = tmp_path / "g.csv"
    t.to_csv(str(p))
    lines = p.read_text().splitlines()
    assert lines[0] == "n,k,row,col,value"
    assert len(lines) == 1 + 13 * 13 * 4
