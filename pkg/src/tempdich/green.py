"""Green functions of a tempered exponential dichotomy and the convolution solver.

Given projections ``Pi^s(n) = Pi^s(theta^n w)`` on a window, the Green
function is ``G(m, theta^k w) = Phi(m, theta^k w) Pi^s(k)`` for ``m >= 0``
and ``-Phi(m, theta^k w) Pi^u(k)`` for ``m < 0``. The truncated sum
``x(n) = sum_k G(n - k, theta^k w) f(k)`` solves
``x(n+1) = A(theta^n w) x(n) + f(n+1)`` exactly on the window.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .dynamics import Cocycle, OrbitSegment, orbit, projector_rank
from .errors import DomainError, SingularRestriction, WindowMismatch
from .weighted_spaces import WeightSpec, WindowedSequence, weighted_norm

__all__ = [
    "DichotomyData",
    "GreenTable",
    "green",
    "green_table",
    "green_bound_check",
    "solve_convolution",
    "convolution_tail_bound",
    "gamma",
    "gamma_tilde",
    "rho_beta",
]


def _opnorm(m: np.ndarray) -> np.ndarray:
    """Spectral norms over the trailing two axes."""
    if m.ndim == 2:
        return np.linalg.norm(m, 2)
    return np.linalg.norm(m, ord=2, axis=(-2, -1))


@dataclass(frozen=True, eq=False)
class DichotomyData:
    """Stable projections, rate and bound along one orbit window.

    ``proj[n - n_lo]`` is ``Pi^s(theta^n w)``; ``K[n - n_lo]`` is ``K(theta^n w)``.
    The unstable projection is always ``Id - Pi^s``.
    """

    cocycle: Cocycle
    base: Any
    n_lo: int
    n_hi: int
    proj: np.ndarray
    alpha: float
    K: np.ndarray
    segment: OrbitSegment
    meta: dict = field(default_factory=dict)

    @classmethod
    def build(
        cls,
        cocycle: Cocycle,
        base: Any,
        n_lo: int,
        n_hi: int,
        proj: Any,
        alpha: float,
        K: Any = 1.0,
        meta: dict | None = None,
    ) -> "DichotomyData":
        """Assemble from a projection field (one matrix, or one per index)."""
        length = n_hi - n_lo + 1
        d = cocycle.dim
        p = np.array(proj, dtype=float)
        if p.ndim == 2:
            p = np.broadcast_to(p, (length, d, d)).copy()
        if p.shape != (length, d, d):
            raise WindowMismatch(f"projection field has shape {p.shape}, expected {(length, d, d)}")
        k = np.array(K, dtype=float)
        if k.ndim == 0:
            k = np.full(length, float(k))
        if k.shape != (length,):
            raise WindowMismatch(f"K has {k.size} samples, window has {length}")
        if alpha <= 0:
            raise ValueError("alpha must be positive")
        seg = orbit(cocycle, base, n_lo, n_hi)
        return cls(cocycle, base, n_lo, n_hi, p, float(alpha), k, seg, dict(meta or {}))

    @property
    def dim(self) -> int:
        return self.cocycle.dim

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.n_lo, self.n_hi + 1)

    def _i(self, n: int) -> int:
        if not self.n_lo <= n <= self.n_hi:
            raise IndexError(f"index {n} outside the window [{self.n_lo}, {self.n_hi}]")
        return n - self.n_lo

    def stable(self, n: int) -> np.ndarray:
        return self.proj[self._i(n)]

    def unstable(self, n: int) -> np.ndarray:
        return np.eye(self.dim) - self.proj[self._i(n)]

    def A(self, n: int) -> np.ndarray:
        return self.segment.A(n)

    def K_at(self, n: int) -> float:
        return float(self.K[self._i(n)])

    @property
    def stable_rank(self) -> int:
        return projector_rank(self.proj[len(self.proj) // 2])

    def with_bounds(self, alpha: float | None = None, K: Any = None) -> "DichotomyData":
        k = self.K if K is None else np.broadcast_to(np.asarray(K, dtype=float), self.K.shape).copy()
        return DichotomyData(
            self.cocycle, self.base, self.n_lo, self.n_hi, self.proj,
            self.alpha if alpha is None else float(alpha), k, self.segment, dict(self.meta),
        )

    def validate(self, tol: float = 1e-10, slack: float = 1e-6, table: "GreenTable | None" = None) -> dict:
        """Idempotence, equivariance and decay defects; ``pass`` summarises them."""
        p = self.proj
        idem = float(np.max(_opnorm(p @ p - p) / np.maximum(1.0, _opnorm(p))))
        a = self.segment.matrices[:-1]
        lhs = p[1:] @ a
        rhs = a @ p[:-1]
        scale = _opnorm(a) * np.maximum(1.0, _opnorm(p[:-1]))
        equi = float(np.max(_opnorm(lhs - rhs) / scale)) if len(a) else 0.0
        if table is None:
            table = green_table(self)
        decay = green_bound_check(table, slack=slack)
        ok = idem <= tol and equi <= tol and decay["pass"]
        return {
            "idempotence_defect": idem,
            "equivariance_defect": equi,
            "decay_max_slack": decay["max_slack"],
            "tolerance": tol,
            "slack": slack,
            "pass": bool(ok),
        }


@dataclass(frozen=True, eq=False)
class GreenTable:
    """``G[n - n_lo, k - n_lo] = G(n - k, theta^k w)`` for ``n, k`` in the window."""

    source: DichotomyData
    n_lo: int
    n_hi: int
    G: np.ndarray

    def __call__(self, n: int, k: int) -> np.ndarray:
        return self.G[n - self.n_lo, k - self.n_lo]

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.n_lo, self.n_hi + 1)

    def to_csv(self, path: str) -> None:
        """Columns ``n, k, row, col, value`` with shortest round-trip floats."""
        d = self.G.shape[-1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "k", "row", "col", "value"])
            for n in range(self.n_lo, self.n_hi + 1):
                for k in range(self.n_lo, self.n_hi + 1):
                    g = self(n, k)
                    for r in range(d):
                        for c in range(d):
                            w.writerow([n, k, r, c, repr(float(g[r, c]))])


def _restricted_inverses(dich: DichotomyData, tol: float) -> list[np.ndarray | None]:
    """For each ``n < n_hi`` a matrix mapping range ``Pi^u(n+1)`` back into range ``Pi^u(n)``."""
    d = dich.dim
    out: list[np.ndarray | None] = []
    for n in range(dich.n_lo, dich.n_hi):
        pu = dich.unstable(n)
        r = d - projector_rank(dich.stable(n))
        if r <= 0:
            out.append(None)
            continue
        u = np.linalg.svd(pu)[0][:, :r]
        a = dich.A(n)
        au = a @ u
        sv = np.linalg.svd(au, compute_uv=False)
        if sv[-1] < tol * max(1.0, float(np.linalg.norm(a, 2))):
            raise SingularRestriction(
                f"A restricted to the unstable fiber at index {n} has smallest singular value {sv[-1]:.3e}"
            )
        out.append(u @ np.linalg.pinv(au))
    return out


def green_table(dich: DichotomyData, *, tol: float = 1e-12) -> GreenTable:
    """All ``G(n - k, theta^k w)`` on the window.

    Forward products are re-projected onto the stable fiber each step and
    backward products onto the unstable fiber, so rounding in a slightly
    inexact projection field cannot be amplified by the opposite rate.
    """
    L = dich.n_hi - dich.n_lo + 1
    d = dich.dim
    G = np.zeros((L, L, d, d))
    P = dich.proj
    I = np.eye(d)
    A = dich.segment.matrices
    inv = _restricted_inverses(dich, tol)
    for k in range(L):
        m = P[k].copy()
        G[k, k] = m
        for n in range(k + 1, L):
            m = P[n] @ (A[n - 1] @ m)
            G[n, k] = m
        m = I - P[k]
        for n in range(k - 1, -1, -1):
            r = inv[n]
            if r is None:
                break
            m = (I - P[n]) @ (r @ m)
            G[n, k] = -m
    return GreenTable(dich, dich.n_lo, dich.n_hi, G)


def green(dich: DichotomyData, n: int, k: int = 0) -> np.ndarray:
    """``G(n, theta^k w)``; ``theta^{n+k} w`` must lie in the window."""
    d = dich.dim
    dich._i(k)
    dich._i(k + n)
    if n >= 0:
        m = dich.stable(k)
        for j in range(k, k + n):
            m = dich.stable(j + 1) @ (dich.A(j) @ m)
        return m
    from .dynamics import evolve_unstable_backward

    return -evolve_unstable_backward(dich.cocycle, dich, n, k)


def green_bound_check(
    table: GreenTable,
    *,
    alpha: float | None = None,
    K: Any = None,
    slack: float = 1e-6,
) -> dict:
    """``max ||G(n - k, theta^k w)|| e^{alpha |n - k|} / K(k)`` over the table."""
    src = table.source
    a = src.alpha if alpha is None else float(alpha)
    ks = src.K if K is None else np.broadcast_to(np.asarray(K, dtype=float), src.K.shape)
    idx = table.indices
    lag = np.abs(idx[:, None] - idx[None, :]).astype(float)
    norms = _opnorm(table.G)
    with np.errstate(divide="ignore"):
        logr = np.log(norms) + a * lag - np.log(ks)[None, :]
    logr = np.where(norms > 0, logr, -np.inf)
    flat = int(np.argmax(logr))
    ni, ki = np.unravel_index(flat, logr.shape)
    top = float(logr[ni, ki])
    max_slack = math.exp(top) if top > -math.inf else 0.0
    return {
        "max_slack": max_slack,
        "argmax_n": int(idx[ni]),
        "argmax_k": int(idx[ki]),
        "alpha": a,
        "slack_tolerance": slack,
        "pass": bool(max_slack <= 1.0 + slack),
    }


def solve_convolution(
    dich: DichotomyData, f: WindowedSequence, table: GreenTable | None = None
) -> WindowedSequence:
    """``x(n) = sum_k G(n - k, theta^k w) f(k)`` over the window of ``f``."""
    if table is None:
        table = green_table(dich)
    if f.n_lo < table.n_lo or f.n_hi > table.n_hi:
        raise WindowMismatch(
            f"input window [{f.n_lo}, {f.n_hi}] exceeds the table window [{table.n_lo}, {table.n_hi}]"
        )
    if not np.all(np.isfinite(f.values)):
        raise ValueError("input sequence must be finite")
    a, b = f.n_lo - table.n_lo, f.n_hi - table.n_lo + 1
    sub = table.G[a:b, a:b]
    x = np.einsum("nkij,kj->ni", sub, f.values)
    return WindowedSequence(x, f.n_lo)


def convolution_tail_bound(dich: DichotomyData, f: WindowedSequence, beta: float = 0.0) -> np.ndarray:
    """Bound on what truncation drops at each ``n``: ``K e^{-(alpha-|beta|)(N-|n|)} ||f||``."""
    w = WeightSpec(beta=beta, variant="absolute", K_samples=dich.K[f.n_lo - dich.n_lo : f.n_hi - dich.n_lo + 1], n_lo=f.n_lo)
    fn = weighted_norm(f, w)
    N = min(-f.n_lo, f.n_hi)
    n = np.abs(f.indices)
    rate = dich.alpha - abs(beta)
    return float(np.max(dich.K)) * np.exp(-rate * np.maximum(N - n, 0)) * fn


def _check_domain(alpha: float, beta: float) -> None:
    if not alpha > 0:
        raise DomainError(f"alpha must be positive, got {alpha}")
    if not abs(beta) < alpha:
        raise DomainError(f"need |beta| < alpha, got alpha={alpha}, beta={beta}")


def gamma(alpha: float, beta: float) -> float:
    """``(1 + e^{-(alpha-beta)}) / (1 - e^{-(alpha-|beta|)})``."""
    _check_domain(alpha, beta)
    return (1.0 + math.exp(-(alpha - beta))) / -math.expm1(-(alpha - abs(beta)))


def gamma_tilde(alpha: float, beta: float) -> float:
    """``(1 + e^{-(alpha-|beta|)}) / (1 - e^{-(alpha-|beta|)})``, written piecewise in ``beta``."""
    _check_domain(alpha, beta)
    r = alpha - beta if beta >= 0 else alpha + beta
    return (1.0 + math.exp(-r)) / -math.expm1(-r)


def rho_beta(gamma_plus: float, gamma_minus: float) -> float:
    if gamma_plus <= 0 or gamma_minus <= 0:
        raise DomainError("both constants must be positive")
    return max(gamma_plus, gamma_minus)
