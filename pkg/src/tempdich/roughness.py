"""Persistence of a dichotomy under small perturbations ``B_xi = A + C_xi``.

Closed forms for the admissible weight exponent, the contraction constant,
the new rate and bound and the Hölder constant of ``xi -> Pi^s_xi``, plus
the fixed-point iteration that builds the perturbed Green table from the
unperturbed one:

    G_xi(n, m) = G(n, m) + sum_k G(n, k) C(theta^{k-1} w) G_xi(k-1, m).

All closed forms use ``a = e^{-alpha}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Literal, Sequence

import numpy as np

from .admissibility import DetectionTolerances, detect_dichotomy
from .dynamics import Cocycle, IntegerShift, TableGenerator
from .errors import DomainError, NoConvergence
from .green import DichotomyData, GreenTable, _opnorm, green_bound_check, green_table
from .weighted_spaces import WeightSpec

__all__ = [
    "PerturbationSpec",
    "BetaStar",
    "RoughnessConstants",
    "smallness_threshold",
    "check_smallness",
    "beta_star",
    "contraction_lhs",
    "iteration_rate",
    "new_exponent",
    "new_bound",
    "roughness_constants",
    "PerturbedGreen",
    "perturbed_green",
    "holder_bound",
    "holder_empirical",
    "deterministic_mode",
]

Mode = Literal["plus", "minus", "absolute"]


@dataclass(frozen=True, eq=False)
class PerturbationSpec:
    """``family(xi)`` returns the generator of ``B_xi``.

    ``rho`` bounds ``||B_xi - A|| K(theta w)`` and ``upsilon``, ``sigma`` bound
    ``||B_xi1 - B_xi2|| K(theta w) <= upsilon |xi1 - xi2|^sigma``.
    """

    family: Callable[[Any], Any]
    rho: float
    upsilon: float = 1.0
    sigma: float = 1.0

    def __post_init__(self) -> None:
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if not self.upsilon > 0:
            raise ValueError("upsilon must be positive")
        if not 0 < self.sigma <= 1:
            raise ValueError("sigma must lie in (0, 1]")

    def cocycle(self, base: Cocycle, xi: Any) -> Cocycle:
        return base.with_generator(self.family(xi), f"{base.name}+perturbation")


def smallness_threshold(alpha: float) -> float:
    """``(1 - e^{-alpha}) / (1 + e^{-alpha}) = tanh(alpha / 2)``."""
    return math.tanh(alpha / 2.0)


def _check_rho(alpha: float, rho: float, allow_zero: bool = False) -> None:
    if not alpha > 0:
        raise DomainError(f"alpha must be positive, got {alpha}")
    if rho < 0 or (rho == 0 and not allow_zero):
        raise DomainError(f"rho must be {'non-negative' if allow_zero else 'positive'}, got {rho}")
    thr = smallness_threshold(alpha)
    if not rho < thr:
        raise DomainError(f"rho={rho} violates the smallness bound rho < {thr:.6g}")


def check_smallness(
    cocycle: Cocycle,
    pert: PerturbationSpec,
    dich: DichotomyData,
    xi: Any,
) -> dict:
    """``||A - B_xi|| K(theta^{n+1} w) <= rho`` along the window and ``rho`` below threshold."""
    b = pert.family(xi).batch(dich.segment.states[:-1])
    a = dich.segment.matrices[:-1]
    vals = _opnorm(a - b) * dich.K[1:]
    worst = float(vals.max()) if vals.size else 0.0
    thr = smallness_threshold(dich.alpha)
    ok_orbit = worst <= pert.rho
    ok_rho = pert.rho < thr
    return {
        "worst_weighted_perturbation": worst,
        "rho": pert.rho,
        "orbit_margin": pert.rho - worst,
        "threshold": thr,
        "threshold_margin": thr - pert.rho,
        "pass": bool(ok_orbit and ok_rho),
    }


@dataclass(frozen=True)
class BetaStar:
    beta_star: float
    contraction: float


def beta_star(alpha: float, rho: float) -> BetaStar:
    """Weight exponent at which the contraction constant equals ``(1 + varrho) / 2``.

    ``ln[(-T + sqrt(Delta)) / (4 rho a)]`` is evaluated as
    ``ln[2 (1 + varrho) / (T + sqrt(Delta))]``, the same number without the
    cancellation for small ``rho``.
    """
    _check_rho(alpha, rho)
    a = math.exp(-alpha)
    c1 = 1.0 + rho * (1.0 + a) / (1.0 - a)
    T = 2.0 * rho + a * c1
    delta = T * T + 8.0 * rho * a * c1
    b = math.log(2.0 * c1 / (T + math.sqrt(delta)))
    return BetaStar(b, c1 / 2.0)


def contraction_lhs(alpha: float, rho: float, beta: float) -> float:
    """``rho e^{beta} (1 + e^{-(alpha-beta)}) / (1 - e^{-(alpha-beta)})``."""
    e = math.exp(-(alpha - beta))
    return rho * math.exp(beta) * (1.0 + e) / (1.0 - e)


def iteration_rate(alpha: float, rho: float, lam: float, mode: Mode = "plus") -> float:
    """Lipschitz constant of the perturbed fixed-point map in the weighted norm.

    Signed weight ``lam``: ``rho e^{-lam} (1/(1 - e^{-(alpha+lam)}) + e^{-(alpha-lam)}/(1 - e^{-(alpha-lam)}))``.
    The absolute-value weight is bounded by the worse of the two signs.
    """
    if mode == "absolute":
        b = abs(lam)
        return max(iteration_rate(alpha, rho, b), iteration_rate(alpha, rho, -b))
    if not abs(lam) < alpha:
        raise DomainError("need |lambda| < alpha")
    g = 1.0 / -math.expm1(-(alpha + lam)) + math.exp(-(alpha - lam)) / -math.expm1(-(alpha - lam))
    return rho * math.exp(-lam) * g


def new_exponent(alpha: float, rho: float) -> float:
    """``-ln(cosh alpha - sqrt(cosh^2 alpha - 1 - 2 rho sinh alpha))``.

    Evaluated as ``ln(cosh alpha + sqrt(R)) - ln(1 + 2 rho sinh alpha)`` with
    ``R`` the radicand; ``rho = 0`` returns ``alpha`` exactly.
    """
    if rho == 0:
        if not alpha > 0:
            raise DomainError("alpha must be positive")
        return float(alpha)
    if rho < 0:
        raise DomainError("rho must be non-negative")
    sh = math.sinh(alpha)
    rad = sh * (sh - 2.0 * rho)
    if not rad > 0:
        raise DomainError(f"radicand {rad:.3e} is not positive for alpha={alpha}, rho={rho}")
    return math.log(math.cosh(alpha) + math.sqrt(rad)) - math.log1p(2.0 * rho * sh)


@dataclass(frozen=True)
class RoughnessConstants:
    alpha: float
    rho: float
    beta_star: float
    contraction: float
    alpha_tilde: float
    kappa: float
    varrho: float
    D1: float
    D2: float
    beta_tilde: float
    near_threshold: bool = False

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _inv_gap(x: float, name: str, flags: list[str]) -> float:
    """``1 / (1 - x)`` with a domain check; flags tiny denominators."""
    den = 1.0 - x
    if not den > 0:
        raise DomainError(f"denominator of {name} is {den:.3e} (not positive)")
    if den < 1e-8:
        flags.append(name)
    return 1.0 / den


def new_bound(
    alpha: float, rho: float, alpha_tilde: float | None = None, K_samples: Any = 1.0
) -> tuple[float, np.ndarray, dict]:
    """``kappa`` and ``K~ = kappa K``; the third item carries the intermediate constants."""
    if rho == 0:
        ks = np.asarray(K_samples, dtype=float)
        return 1.0, ks.copy(), {"varrho": 0.0, "D1": 1.0, "D2": 1.0, "beta_tilde": float(alpha), "flags": []}
    _check_rho(alpha, rho)
    at = new_exponent(alpha, rho) if alpha_tilde is None else alpha_tilde
    a = math.exp(-alpha)
    flags: list[str] = []
    varrho = rho * (1.0 + a) / (1.0 - a)
    bt = at + math.log1p(2.0 * rho * math.sinh(alpha))
    D1 = _inv_gap(rho * a / -math.expm1(-(alpha + at)), "D1", flags)
    D2 = _inv_gap(rho * math.exp(-bt) / -math.expm1(-(alpha + bt)), "D2", flags)
    one_minus_varrho = 1.0 - varrho
    if not one_minus_varrho > 0:
        raise DomainError("varrho must be below 1")
    if one_minus_varrho < 1e-8:
        flags.append("varrho")
    kappa = (1.0 + rho / (one_minus_varrho * (1.0 - a))) * max(D1, D2)
    ks = kappa * np.asarray(K_samples, dtype=float)
    return kappa, ks, {"varrho": varrho, "D1": D1, "D2": D2, "beta_tilde": bt, "flags": flags}


def roughness_constants(alpha: float, rho: float) -> RoughnessConstants:
    if rho == 0:
        return RoughnessConstants(alpha, 0.0, alpha, 0.5, float(alpha), 1.0, 0.0, 1.0, 1.0, float(alpha))
    bs = beta_star(alpha, rho)
    at = new_exponent(alpha, rho)
    kappa, _, aux = new_bound(alpha, rho, at)
    return RoughnessConstants(
        alpha, rho, bs.beta_star, bs.contraction, at, kappa,
        aux["varrho"], aux["D1"], aux["D2"], aux["beta_tilde"], bool(aux["flags"]),
    )


# --------------------------------------------------------------------------
# perturbed Green table


@dataclass
class PerturbedGreen:
    table: GreenTable
    iterations: int
    ratios: list[float]
    measured_rate: float
    analytic_rate: float
    lam: float
    mode: str
    constants: RoughnessConstants
    history: list[float] = field(default_factory=list)

    @property
    def projector(self) -> np.ndarray:
        return self.table(0, 0)

    def report(self) -> dict:
        return {
            "iterations": self.iterations,
            "measured_rate": self.measured_rate,
            "analytic_rate": self.analytic_rate,
            "rate_ok": bool(self.measured_rate <= 1.1 * self.analytic_rate),
            "lambda": self.lam,
            "mode": self.mode,
            "increments": self.history,
        }


def _column_norm(D: np.ndarray, logw: np.ndarray) -> float:
    """``max_{m, j} sup_n w(n - m) |D[n, :, m, j]|`` for blocks laid out ``(L, d, L, d)``."""
    mags = np.linalg.norm(D, axis=1)  # (L, L, d)
    with np.errstate(divide="ignore"):
        lm = np.log(mags) + logw[:, :, None]
    top = np.max(lm)
    return float(math.exp(top)) if top > -math.inf else 0.0


def perturbed_green(
    dich: DichotomyData,
    pert: PerturbationSpec,
    xi: Any,
    *,
    mode: Mode = "plus",
    beta: float | None = None,
    tol: float = 1e-12,
    max_iters: int | None = None,
    table: GreenTable | None = None,
) -> PerturbedGreen:
    """Iterate ``X <- G (S X + I)`` from ``X = 0`` until increments drop below ``tol``.

    ``G`` is the block table of the unperturbed Green function, ``S`` shifts
    by one index and multiplies by ``C(theta^{k-1} w) = B_xi - A``. The
    increment is measured in the weighted sup-norm of each delta response,
    centred at its input index.
    """
    consts = roughness_constants(dich.alpha, pert.rho)
    lam_abs = consts.beta_star if beta is None else float(beta)
    lam = {"plus": lam_abs, "minus": -lam_abs, "absolute": lam_abs}[mode]
    rate = iteration_rate(dich.alpha, pert.rho, lam, mode)
    if not rate < 1:
        raise NoConvergence(f"analytic rate {rate:.4f} is not below 1", {"analytic_rate": rate})
    if max_iters is None:
        max_iters = math.ceil(math.log(tol) / math.log(rate)) + 10
    if table is None:
        table = green_table(dich)
    L = dich.n_hi - dich.n_lo + 1
    d = dich.dim
    Gm = np.transpose(table.G, (0, 2, 1, 3)).reshape(L * d, L * d)
    C = pert.family(xi).batch(dich.segment.states) - dich.segment.matrices
    idx = dich.indices
    lag = (idx[:, None] - idx[None, :]).astype(float)
    logw = -lam * (np.abs(lag) if mode == "absolute" else lag)

    def shift(X: np.ndarray) -> np.ndarray:
        Xb = X.reshape(L, d, L * d)
        out = np.zeros_like(Xb)
        out[1:] = np.einsum("kij,kjm->kim", C[:-1], Xb[:-1])
        return out.reshape(L * d, L * d)

    X = np.zeros((L * d, L * d))
    I = np.eye(L * d)
    prev_inc = None
    ratios: list[float] = []
    history: list[float] = []
    first_fixed = None
    floor = 1e3 * np.finfo(float).eps
    for i in range(1, max_iters + 1):
        Xn = Gm @ (shift(X) + I)
        inc = _column_norm((Xn - X).reshape(L, d, L, d), logw)
        history.append(inc)
        X = Xn
        scale = max(1.0, _column_norm(X.reshape(L, d, L, d), logw))
        if prev_inc is not None and prev_inc > floor * scale:
            ratios.append(inc / prev_inc)
            if inc > prev_inc * (1.0 + 1e-9) and inc > floor * scale:
                raise NoConvergence(
                    f"increment grew at iteration {i}",
                    {"increments": history, "analytic_rate": rate},
                )
        if i >= 2 and inc < tol:
            first_fixed = i - 1
            break
        prev_inc = inc
    if first_fixed is None:
        raise NoConvergence(
            f"no convergence within {max_iters} iterations",
            {"increments": history, "analytic_rate": rate, "max_iters": max_iters},
        )
    Gt = np.transpose(X.reshape(L, d, L, d), (0, 2, 1, 3)).copy()
    proj = Gt[np.arange(L), np.arange(L)].copy()
    cocycle = pert.cocycle(dich.cocycle, xi)
    kappa = consts.kappa
    src = DichotomyData.build(
        cocycle, dich.base, dich.n_lo, dich.n_hi, proj, consts.alpha_tilde, kappa * dich.K,
        meta={"perturbation": repr(xi)},
    )
    gt = GreenTable(src, dich.n_lo, dich.n_hi, Gt)
    measured = max(ratios) if ratios else 0.0
    return PerturbedGreen(gt, first_fixed, ratios, measured, rate, lam, mode, consts, history)


def holder_bound(kappa: float, upsilon: float, K0: float, alpha_tilde: float, sigma: float = 1.0) -> float:
    """``kappa^2 upsilon K0 (1 + e^{-2 alpha~}) / (1 - e^{-2 alpha~})``."""
    if min(kappa, upsilon, K0, alpha_tilde) <= 0:
        raise DomainError("all inputs must be positive")
    if not 0 < sigma <= 1:
        raise DomainError("sigma must lie in (0, 1]")
    e = math.exp(-2.0 * alpha_tilde)
    return kappa * kappa * upsilon * K0 * (1.0 + e) / (1.0 - e)


def holder_empirical(
    pert: PerturbationSpec,
    dich: DichotomyData,
    xi_pairs: Sequence[tuple[Any, Any]],
    *,
    slack: float = 1e-9,
) -> dict:
    """Largest ``||Pi_xi2 - Pi_xi1|| / |xi2 - xi1|^sigma`` over the pairs, against the bound.

    Pairs with ``xi1 == xi2`` are skipped.
    """
    consts = roughness_constants(dich.alpha, pert.rho)
    bound = holder_bound(consts.kappa, pert.upsilon, dich.K_at(0), consts.alpha_tilde, pert.sigma)
    table = green_table(dich)
    cache: dict[Any, np.ndarray] = {}

    def proj(xi: Any) -> np.ndarray:
        key = tuple(np.atleast_1d(np.asarray(xi, dtype=float)).tolist())
        if key not in cache:
            cache[key] = perturbed_green(dich, pert, xi, table=table).projector
        return cache[key]

    rows = []
    for x1, x2 in xi_pairs:
        dist = float(np.linalg.norm(np.atleast_1d(np.asarray(x2, dtype=float) - np.asarray(x1, dtype=float))))
        if dist == 0.0:
            continue
        diff = float(np.linalg.norm(proj(x2) - proj(x1), 2))
        rows.append({"xi1": x1, "xi2": x2, "ratio": diff / dist**pert.sigma})
    m = max((r["ratio"] for r in rows), default=0.0)
    return {"pairs": rows, "max_ratio": m, "bound": bound, "pass": bool(m <= bound * (1.0 + slack))}


# --------------------------------------------------------------------------
# deterministic equations


def deterministic_mode(
    trace: np.ndarray,
    kappa: float,
    epsilon: float,
    beta: float,
    *,
    start: int | None = None,
    N: int | None = None,
    tolerances: DetectionTolerances | None = None,
) -> DichotomyData:
    """Detect a nonuniform dichotomy of ``x(n+1) = A(n) x(n)`` from a matrix trace.

    ``trace[j]`` is ``A(start + j)``; by default the trace is centred on 0.
    Projections are reported on the inner half of the trace; the fitted
    envelope ``kappa~`` is stored in ``meta['kappa_tilde']``.
    """
    t = np.asarray(trace, dtype=float)
    if t.ndim != 3:
        raise ValueError("trace must have shape (steps, d, d)")
    if not (kappa > 0 and epsilon >= 0 and beta > 0):
        raise ValueError("need kappa > 0, epsilon >= 0, beta > 0")
    if not np.all(np.isfinite(t)):
        raise ValueError("trace must be finite")
    steps = t.shape[0]
    if start is None:
        start = -(steps // 2)
    T = min(-start, start + steps - 1)
    if T < 8:
        raise ValueError("trace must cover at least [-8, 8]")
    n_half = N if N is not None else T // 2
    base = tolerances or DetectionTolerances()
    tol = DetectionTolerances(
        base.idempotence, base.equivariance, base.agreement, base.min_alpha,
        base.decay_slack, base.temperedness, T - n_half,
    )
    cocycle = Cocycle(IntegerShift(), TableGenerator(t, start), "trace")
    weight = WeightSpec.from_envelope(kappa, epsilon, beta)
    dich = detect_dichotomy(cocycle, 0, beta, weight, n_half, tol)
    n = np.abs(dich.indices).astype(float)
    dich.meta["kappa_tilde"] = float(np.max(dich.K * np.exp(-epsilon * n)))
    dich.meta["epsilon"] = epsilon
    return dich
