"""Lyapunov spectra, finite-time splittings and induced return cocycles.

Exponents come from the discrete QR method. The splitting at a base point
uses two sweeps: a forward QR sweep arriving at the point (its leading
columns span the unstable directions) and an adjoint sweep with ``A^T``
arriving at the point from the future (its leading columns span the
orthocomplement of the stable directions).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy.linalg import lapack

from .dynamics import Cocycle, orbit
from .errors import Degenerate, NoGap, NoReturn
from .green import DichotomyData, _opnorm, green_table
from .weighted_spaces import temperedness_estimate

__all__ = [
    "LyapunovReport",
    "lyapunov_qr",
    "SplittingEstimate",
    "oseledets_split",
    "met_dichotomy",
    "ReturnCocycle",
    "build_return_cocycle",
    "interval_predicate",
    "symbol_predicate",
    "kac_check",
    "kac_history",
    "ReturnConstants",
    "return_constants",
    "induced_decay_check",
    "bound_on_set",
]

_CHUNK = 4096


def _qr(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthogonal factor and ``|diag R|`` via LAPACK directly (small matrices, many calls)."""
    qr, tau, _, _ = lapack.dgeqrf(m)
    return lapack.dorgqr(qr, tau)[0], np.abs(qr.diagonal())


def _matrix_stream(cocycle: Cocycle, w: Any, n_lo: int, n_hi: int, reverse: bool = False):
    """Yield ``(n, A(theta^n w))`` in chunks, increasing or decreasing in ``n``.

    Each chunk starts from the last state of the previous one, so the whole
    stream costs one driver step per index.
    """
    if n_lo > n_hi:
        return
    drv = cocycle.driver
    if not reverse:
        a = n_lo
        s = orbit(drv, w, min(0, a), max(0, a)).state(a)
        while a <= n_hi:
            b = min(n_hi, a + _CHUNK - 1)
            seg = orbit(cocycle, s, 0, b - a)
            for j, m in enumerate(seg.matrices):
                yield a + j, m
            s = drv.forward(seg.states[-1])
            a = b + 1
    else:
        b = n_hi
        s = orbit(drv, w, min(0, b), max(0, b)).state(b)
        while b >= n_lo:
            a = max(n_lo, b - _CHUNK + 1)
            seg = orbit(cocycle, s, a - b, 0)
            for j in range(len(seg.matrices) - 1, -1, -1):
                yield a + j, seg.matrices[j]
            s = drv.backward(seg.states[0])
            b = a - 1


@dataclass
class LyapunovReport:
    exponents: np.ndarray
    n_steps: int
    history: list[tuple[int, list[float]]] = field(default_factory=list)

    def to_rows(self) -> list[list[float]]:
        return [[n] + list(ex) for n, ex in self.history]


def lyapunov_qr(
    cocycle: Cocycle,
    w: Any,
    n_steps: int,
    *,
    checkpoints: Sequence[int] | None = None,
) -> LyapunovReport:
    """``lambda_i = (1/n) sum_m ln |R_ii(m)|`` with re-orthonormalisation every step."""
    if n_steps < 100:
        raise ValueError("n_steps must be at least 100")
    d = cocycle.dim
    q = np.eye(d)
    acc = np.zeros(d)
    cps = sorted(set(int(c) for c in (checkpoints or []) if 0 < c <= n_steps) | {n_steps})
    history: list[tuple[int, list[float]]] = []
    ci = 0
    for n, a in _matrix_stream(cocycle, w, 0, n_steps - 1):
        q, diag = _qr(a @ q)
        if np.any(diag == 0.0):
            raise Degenerate(f"R has a zero diagonal entry at step {n}", {"step": n})
        acc += np.log(diag)
        if n + 1 == cps[ci]:
            history.append((n + 1, sorted((acc / (n + 1)).tolist(), reverse=True)))
            ci += 1
    ex = np.sort(acc / n_steps)[::-1]
    return LyapunovReport(ex, n_steps, history)


@dataclass
class SplittingEstimate:
    stable_basis: np.ndarray
    unstable_basis: np.ndarray
    gap: float
    exponents: np.ndarray

    @property
    def projection(self) -> np.ndarray:
        """Projection onto the stable span along the unstable span."""
        return _oblique_projection(self.stable_basis, self.unstable_basis)


def _oblique_projection(S: np.ndarray, U: np.ndarray) -> np.ndarray:
    d = S.shape[0]
    if S.shape[1] == 0:
        return np.zeros((d, d))
    if U.shape[1] == 0:
        return np.eye(d)
    V = np.hstack([S, U])
    sel = np.zeros((d, d))
    sel[: S.shape[1], : S.shape[1]] = np.eye(S.shape[1])
    return V @ sel @ np.linalg.inv(V)


def _start_frame(d: int, seed: int = 12345) -> np.ndarray:
    g = np.random.default_rng(seed).standard_normal((d, d))
    return np.linalg.qr(g)[0]


def _sweeps(cocycle: Cocycle, w: Any, k: int, n_lo: int, n_hi: int, n_split: int) -> tuple[np.ndarray, np.ndarray]:
    """Unstable and stable bases at every ``theta^n w`` with ``n`` in ``[n_lo, n_hi]``."""
    d = cocycle.dim
    L = n_hi - n_lo + 1
    uns = np.zeros((L, d, k))
    stab = np.zeros((L, d, d - k))
    q = _start_frame(d)
    for n, a in _matrix_stream(cocycle, w, n_lo - n_split, n_hi - 1):
        q = _qr(a @ q)[0]
        if n + 1 >= n_lo:
            uns[n + 1 - n_lo] = q[:, :k]
    q = _start_frame(d, 54321)
    for n, a in _matrix_stream(cocycle, w, n_lo, n_hi + n_split - 1, reverse=True):
        q = _qr(a.T @ q)[0]
        if n <= n_hi:
            stab[n - n_lo] = q[:, k:]
    return uns, stab


def oseledets_split(
    cocycle: Cocycle,
    w: Any,
    n_steps: int,
    *,
    gap_tolerance: float = 1e-2,
    report: LyapunovReport | None = None,
) -> SplittingEstimate:
    """Stable and unstable bases at ``w`` from ``n_steps``-long sweeps."""
    rep = report or lyapunov_qr(cocycle, w, max(n_steps, 100))
    gap = float(np.min(np.abs(rep.exponents)))
    if gap < gap_tolerance:
        raise NoGap(
            f"smallest |exponent| {gap:.3e} is below the gap tolerance {gap_tolerance:.1e}",
            {"exponents": rep.exponents.tolist(), "gap": gap},
        )
    k = int(np.sum(rep.exponents > 0))
    uns, stab = _sweeps(cocycle, w, k, 0, 0, n_steps)
    return SplittingEstimate(stab[0], uns[0], gap, rep.exponents)


def met_dichotomy(
    cocycle: Cocycle,
    w: Any,
    n_steps: int = 10_000,
    gap_tolerance: float = 1e-2,
    *,
    N: int = 40,
    n_split: int = 60,
    margin_fraction: float = 0.1,
) -> DichotomyData:
    """Dichotomy on ``[-N, N]`` assembled from the Lyapunov splitting.

    ``alpha`` is the smallest ``|exponent|`` less ``margin_fraction`` of it;
    ``K(theta^m w)`` is the smallest constant making the Green bound hold
    on the window.
    """
    rep = lyapunov_qr(cocycle, w, n_steps)
    gap = float(np.min(np.abs(rep.exponents)))
    if gap < gap_tolerance:
        raise NoGap(
            f"smallest |exponent| {gap:.3e} is below the gap tolerance {gap_tolerance:.1e}",
            {"exponents": rep.exponents.tolist(), "gap": gap},
        )
    k = int(np.sum(rep.exponents > 0))
    d = cocycle.dim
    uns, stab = _sweeps(cocycle, w, k, -N, N, n_split)
    proj = np.stack([_oblique_projection(stab[i], uns[i]) for i in range(2 * N + 1)])
    alpha = (1.0 - margin_fraction) * gap
    dich = DichotomyData.build(cocycle, w, -N, N, proj, alpha, 1.0)
    table = green_table(dich)
    idx = dich.indices
    lag = np.abs(idx[:, None] - idx[None, :]).astype(float)
    K = np.max(_opnorm(table.G) * np.exp(alpha * lag), axis=0)
    K = np.maximum(K, 1e-300)
    meta = {
        "exponents": rep.exponents.tolist(),
        "gap": gap,
        "alpha": alpha,
        "unstable_dim": k,
        "stable_dim": d - k,
        "K_max": float(K.max()),
        "temperedness": temperedness_estimate(K, max(1, N // 4)),
    }
    out = DichotomyData(cocycle, w, -N, N, proj, alpha, K, dich.segment, meta)
    out.meta["validation"] = out.validate(tol=1e-8)
    return out


# --------------------------------------------------------------------------
# induced cocycle


def interval_predicate(a: float, b: float) -> Callable[[np.ndarray], np.ndarray]:
    """Membership in ``[a, b)``."""

    def pred(states: np.ndarray) -> np.ndarray:
        s = np.asarray(states, dtype=float)
        return (s >= a) & (s < b)

    pred.description = f"[{a}, {b})"  # type: ignore[attr-defined]
    return pred


def symbol_predicate(driver: Any, symbol: int) -> Callable[[np.ndarray], np.ndarray]:
    """Bernoulli states whose current symbol equals ``symbol``."""

    def pred(states: np.ndarray) -> np.ndarray:
        return driver.symbol(states) == symbol

    pred.description = f"symbol == {symbol}"  # type: ignore[attr-defined]
    return pred


def whole_space(states: np.ndarray) -> np.ndarray:
    return np.ones(len(np.atleast_1d(states)), dtype=bool)


@dataclass
class ReturnCocycle:
    """First returns of the orbit of ``w`` to ``F``.

    ``times[j]`` is ``tau_{j+1}(w)``; ``generators[j]`` is
    ``Phi(tau_1, bar-theta^j w)``, so the induced cocycle is their product.
    """

    base: Any
    times: np.ndarray
    generators: np.ndarray | None
    p_hat: float
    p_hat_samples: int

    @property
    def n_returns(self) -> int:
        return int(self.times.size)

    def induced(self, n: int, start: int = 0) -> np.ndarray:
        """``bar-Phi(n, bar-theta^start w)``."""
        if self.generators is None:
            raise ValueError("generators were not stored")
        d = self.generators.shape[1]
        out = np.eye(d)
        for j in range(start, start + n):
            out = self.generators[j] @ out
        return out


def build_return_cocycle(
    cocycle: Cocycle,
    F: Callable[[np.ndarray], np.ndarray],
    w: Any,
    n_returns: int,
    *,
    step_cap: int | None = None,
    store_generators: bool = True,
    p_hat_samples: int = 100_000,
    seed: int = 0,
) -> ReturnCocycle:
    """Scan the forward orbit of ``w`` for ``n_returns`` visits to ``F``."""
    if not bool(np.atleast_1d(F(np.atleast_1d(np.asarray(w))))[0]):
        raise ValueError("base point must lie in F")
    cap = step_cap if step_cap is not None else 1000 * n_returns + 10_000
    d = cocycle.dim
    times = np.empty(n_returns, dtype=np.int64)
    gens = np.empty((n_returns, d, d)) if store_generators else None
    found = 0
    prod = np.eye(d)
    pos = 1
    s = w
    while found < n_returns:
        if pos > cap:
            raise NoReturn(
                f"only {found} returns to F within {cap} steps",
                {"returns": found, "step_cap": cap},
            )
        hi = min(cap, pos + _CHUNK - 1)
        # states theta^{pos-1} w ... theta^{hi} w
        seg = orbit(cocycle, s, 0, hi - pos + 1)
        hits = np.asarray(F(seg.states[1:]), dtype=bool)
        for j in range(hi - pos + 1):
            if store_generators:
                prod = seg.matrices[j] @ prod
            if hits[j]:
                times[found] = pos + j
                if gens is not None:
                    gens[found] = prod
                    prod = np.eye(d)
                found += 1
                if found == n_returns:
                    break
        s = seg.states[-1]
        pos = hi + 1
    rng = np.random.default_rng(seed)
    sample = cocycle.driver.sample(rng, p_hat_samples)
    p_hat = float(np.mean(np.asarray(F(sample), dtype=bool)))
    return ReturnCocycle(w, times, gens, p_hat, p_hat_samples)


def kac_check(rc: ReturnCocycle, tolerance: float = 0.05, *, p_exact: float | None = None) -> dict:
    """Mean return time ``tau_n / n`` against ``1 / P(F)``."""
    if rc.n_returns < 100:
        raise ValueError("need at least 100 returns")
    mean = float(rc.times[-1]) / rc.n_returns
    ratio = mean * rc.p_hat
    out = {
        "n_returns": rc.n_returns,
        "mean_return": mean,
        "p_hat": rc.p_hat,
        "kac_ratio": ratio,
        "deviation": abs(ratio - 1.0),
        "tolerance": tolerance,
        "pass": bool(abs(ratio - 1.0) <= tolerance),
    }
    if p_exact is not None:
        out["kac_ratio_exact_measure"] = mean * p_exact
    return out


def kac_history(rc: ReturnCocycle, checkpoints: Sequence[int], p: float | None = None) -> list[dict]:
    """``tau_n / n * P(F)`` at each checkpoint ``n`` (``P(F)`` defaults to ``p_hat``)."""
    p = rc.p_hat if p is None else p
    rows = []
    for n in checkpoints:
        if n > rc.n_returns:
            break
        mean = float(rc.times[n - 1]) / n
        rows.append({"n": int(n), "mean_return": mean, "kac_ratio": mean * p, "deviation": abs(mean * p - 1.0)})
    return rows


@dataclass(frozen=True)
class ReturnConstants:
    L: float
    h1: float
    h2: float
    n0: int
    nu: float
    Q: float
    n0_prime: int
    nu_prime: float
    Q_prime: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _first_n(h: float) -> int:
    """Smallest ``n >= 1`` with ``h^2 / (n + 1) <= 1/e``."""
    n = max(1, math.ceil(math.e * h * h - 1.0))
    if n > 2**52:
        # unit steps are below float resolution here
        return n
    while h * h / (n + 1) > 1.0 / math.e:
        n += 1
    while n > 1 and h * h / n <= 1.0 / math.e:
        n -= 1
    return n


def return_constants(L: float) -> ReturnConstants:
    if not L >= 1.0:
        raise ValueError("L must be at least 1")
    h1 = 1.0 + L**2 + L**4
    h2 = L**3 * (1.0 + L**2) + L**2
    n0 = _first_n(h1)
    n0p = _first_n(h2)
    return ReturnConstants(L, h1, h2, n0, 1.0 / n0, h1 * math.e, n0p, 1.0 / n0p, h2 * math.e)


def bound_on_set(cocycle: Cocycle, F: Callable, *, samples: int = 10_000, seed: int = 0) -> float:
    """``max(1, sup ||A||, sup ||A^{-1}||)`` over sampled points of ``F``."""
    rng = np.random.default_rng(seed)
    pts = cocycle.driver.sample(rng, samples)
    pts = pts[np.asarray(F(pts), dtype=bool)]
    if len(pts) == 0:
        raise NoReturn("no sampled point falls in F", {"samples": samples})
    mats = cocycle.matrices(pts)
    sv = np.linalg.svd(mats, compute_uv=False)
    with np.errstate(divide="ignore"):
        inv = np.where(sv[:, -1] > 0, 1.0 / sv[:, -1], np.inf)
    return float(max(1.0, sv[:, 0].max(), inv.max()))


def induced_decay_check(
    rc: ReturnCocycle,
    vectors: np.ndarray,
    consts: ReturnConstants,
    *,
    slack: float = 1e-9,
) -> dict:
    """``max_n |bar-Phi(n) v| e^{nu n} / (Q |v|)`` for each column ``v``."""
    if rc.generators is None:
        raise ValueError("generators were not stored")
    V = np.atleast_2d(np.asarray(vectors, dtype=float))
    if V.shape[0] != rc.generators.shape[1]:
        V = V.T
    worst = []
    for c in range(V.shape[1]):
        x = V[:, c] / np.linalg.norm(V[:, c])
        acc = 0.0
        top = -math.log(consts.Q)
        for n, g in enumerate(rc.generators, start=1):
            x = g @ x
            s = float(np.linalg.norm(x))
            if s == 0.0:
                break
            acc += math.log(s)
            x /= s
            top = max(top, acc + consts.nu * n - math.log(consts.Q))
        worst.append(math.exp(top) if top < 709.0 else math.inf)
    m = max(worst) if worst else 0.0
    return {"ratios": worst, "max_ratio": m, "slack": slack, "pass": bool(m <= 1.0 + slack)}
