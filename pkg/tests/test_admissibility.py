from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import dense_min_boundary, skewed_hyperbolic
from tempdich.admissibility import (
    DetectionTolerances,
    WindowProblem,
    WindowSolver,
    check_pm_agreement,
    classify_vector,
    detect_dichotomy,
    extract_projector,
    green_from_deltas,
    solve_window,
)
from tempdich.dynamics import (
    GOLDEN,
    Cocycle,
    ConstantGenerator,
    IrrationalRotation,
    SteppedDiagonalGenerator,
    evolve,
    orbit,
    rotation_matrix,
)
from tempdich.errors import DetectionFailure, NotAProjection
from tempdich.weighted_spaces import WeightSpec, WindowedSequence

LN2 = math.log(2)
ROT = IrrationalRotation()


def const(A):
    return Cocycle(ROT, ConstantGenerator(np.asarray(A, dtype=float)))


HYP = const(np.diag([0.5, 2.0]))
STEP = Cocycle(ROT, SteppedDiagonalGenerator())


def test_solve_window_zero_input():
    f = WindowedSequence.zeros(-8, 8, 2)
    x = solve_window(WindowProblem.on_orbit(HYP, 0.1, f))
    assert np.max(np.abs(x.values)) == 0.0


def test_solve_window_delta_leak():
    N = 8
    f = WindowedSequence.delta(-N, N, 0, np.array([1.0, 0.0]))
    x = solve_window(WindowProblem.on_orbit(HYP, 0.1, f))
    n = x.indices
    pos = n >= 0
    assert np.allclose(x.values[pos, 0], 2.0 ** (-n[pos]), atol=2.0 ** (-2 * N))
    assert np.max(np.linalg.norm(x.values[~pos], axis=1)) <= 2.0 ** (-N)


def test_solve_window_degenerate_window():
    f = WindowedSequence(np.array([[3.0, 4.0]]), 0)
    x = solve_window(WindowProblem.on_orbit(HYP, 0.1, f))
    assert np.array_equal(x.values, np.zeros((1, 2)))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0.0, 0.3, -0.3]), st.integers(2, 4))
def test_window_solver_matches_kkt_oracle(seed, lam, d):
    rng = np.random.default_rng(seed)
    L = 13
    mats = rng.standard_normal((L - 1, d, d)) + 2 * np.eye(d)
    f = rng.standard_normal((L, d))
    ref = dense_min_boundary(mats, f, lam, -6)
    got = WindowSolver(mats, -6, lam=lam).solve(f)
    scale = 1 + np.abs(ref).max()
    assert np.max(np.abs(got - ref)) <= 1e-8 * scale


def test_green_from_deltas_examples():
    N = 20
    tol = 2.0 ** (-N)
    assert np.allclose(green_from_deltas(HYP, 0.1, N, 0.3, None, 0, 0), np.diag([1.0, 0.0]), atol=tol)
    assert np.allclose(green_from_deltas(HYP, 0.1, N, 0.3, None, 2, 0), np.diag([0.25, 0.0]), atol=tol)
    assert np.allclose(green_from_deltas(HYP, 0.1, N, 0.3, None, -1, 0), np.diag([0.0, -0.5]), atol=tol)


def test_green_structure_against_products():
    N = 24
    P0 = np.diag([1.0, 1.0, 0.0])
    for n in (1, 3, 6):
        G = green_from_deltas(STEP, 0.2, N, 0.5, None, n, 0)
        assert np.allclose(G, evolve(STEP, 0.2, n) @ P0, rtol=1e-8, atol=1e-12)
    for n in (-1, -4):
        G = green_from_deltas(STEP, 0.2, N, 0.5, None, n, 0)
        back = evolve(STEP, ROT.states(0.2, n, n)[0], -n)
        ref = -np.linalg.inv(back) @ (np.eye(3) - P0)
        assert np.allclose(G, ref, rtol=1e-8, atol=1e-12)


def test_pm_agreement():
    pairs = [(0, 0), (3, -2), (-5, 4)]
    assert check_pm_agreement(HYP, 0.1, 40, 0.3, None, pairs) <= 1e-10
    assert check_pm_agreement(const([[0.5]]), 0.1, 20, 0.2, None, pairs) <= 1e-14
    assert check_pm_agreement(const(rotation_matrix(math.pi / 2)), 0.1, 20, 0.3, None, pairs) > 0.1


def test_extract_projector_hyperbolic():
    N = 12
    cert = extract_projector(HYP, 0.1, N, 0.3)
    assert np.max(np.abs(cert.P - np.diag([1.0, 0.0]))) <= 2.0 ** (-2 * N) + 1e-10
    assert cert.alpha_hat == pytest.approx(LN2, abs=1e-3)


def test_extract_projector_stepped_diagonal():
    cert = extract_projector(STEP, 0.1, 40, 0.5)
    assert np.max(np.abs(cert.P - np.diag([1.0, 1.0, 0.0]))) <= 1e-8


def test_extract_projector_identity_fails():
    with pytest.raises(NotAProjection):
        extract_projector(const(np.eye(2)), 0.1, 20, 0.3, tol=1e-12)


def test_classify_vector_examples():
    assert classify_vector(HYP, 0.1, [1, 0], 30).label == "stable"
    c = classify_vector(HYP, 0.1, [0, 1], 30)
    assert c.label == "unstable" and c.forward_rate == pytest.approx(LN2, abs=1e-10)
    c = classify_vector(HYP, 0.1, [1, 1], 30)
    assert c.label == "neither"
    assert c.forward_rate == pytest.approx(LN2, abs=0.05) and c.backward_rate == pytest.approx(LN2, abs=0.05)


def test_range_kernel_characterisation():
    cert = extract_projector(STEP, 0.3, 30, 0.5)
    P = cert.P
    Q = np.eye(3) - P
    for j in range(3):
        if np.linalg.norm(P[:, j]) > 1e-8:
            assert classify_vector(STEP, 0.3, P[:, j], 30, alpha_hat=cert.alpha_hat).label == "stable"
        if np.linalg.norm(Q[:, j]) > 1e-8:
            assert classify_vector(STEP, 0.3, Q[:, j], 30, alpha_hat=cert.alpha_hat).label == "unstable"


def test_unstable_fiber_invertibility():
    d = detect_dichotomy(STEP, 0.4, 0.5, None, 20)
    for n in range(-19, 20):
        U = np.linalg.svd(d.unstable(n))[0][:, :1]
        smin = np.linalg.svd(d.A(n) @ U, compute_uv=False)[-1]
        assert smin > 1e-6


def test_detect_stepped_diagonal():
    d = detect_dichotomy(STEP, 0.1, 0.5, None, 40)
    assert np.max(np.abs(d.stable(0) - np.diag([1.0, 1.0, 0.0]))) <= 1e-8
    assert d.alpha >= LN2 - 0.05
    assert 0.9 <= d.K.min() and d.K.max() <= 1.1
    assert d.meta["validation"]["pass"]


def test_detect_hyperbolic_rate():
    d = detect_dichotomy(HYP, 0.1, 0.3, None, 30)
    assert np.allclose(d.stable(0), np.diag([1.0, 0.0]), atol=1e-12)
    assert d.alpha == pytest.approx(LN2, abs=1e-6)


def test_detect_skewed_system():
    A, P = skewed_hyperbolic(LN2, 0.6)
    d = detect_dichotomy(const(A), 0.1, 0.3, None, 30)
    assert np.allclose(d.stable(5), P, atol=1e-10)


def test_detect_golden_rotation_fails():
    with pytest.raises(DetectionFailure):
        detect_dichotomy(const(rotation_matrix(2 * math.pi * GOLDEN)), 0.1, 0.3, None, 30)


def test_detect_list_and_threads():
    ws = [0.1, 0.5, 0.9]
    a = detect_dichotomy(STEP, ws, 0.5, None, 20)
    b = detect_dichotomy(STEP, ws, 0.5, None, 20, threads=3)
    assert len(a) == 3
    for x, y in zip(a, b):
        assert np.array_equal(x.proj, y.proj)


@pytest.mark.parametrize("c", [0.1, 10.0])
def test_scale_invariance_in_K(c):
    base = WeightSpec.from_envelope(1.0, 0.0, 0.5)
    d1 = detect_dichotomy(STEP, 0.25, 0.5, base, 20)
    d2 = detect_dichotomy(STEP, 0.25, 0.5, base.scaled(c), 20)
    assert np.max(np.abs(d1.proj - d2.proj)) <= 1e-12


def test_defects_shrink_with_window():
    A, _ = skewed_hyperbolic(0.4, 0.7)
    c = const(A)
    tol = DetectionTolerances(idempotence=1.0, equivariance=1.0, agreement=10.0, decay_slack=10.0, temperedness=10.0)
    defects = []
    for N in (10, 20, 40):
        d = detect_dichotomy(c, 0.1, 0.2, None, N, tol, )
        defects.append(d.meta["agreement_defect"] + 1e-300)
    assert defects[0] > defects[1] > defects[2] or defects[2] < 1e-13
