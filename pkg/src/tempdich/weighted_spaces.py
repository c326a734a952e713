"""Weighted sup-norms of sequences on a finite window and a temperedness estimate.

For a weight ``K(n) > 0`` and exponent ``beta`` the two norms are

* signed:   ``sup_n K(n) e^{-beta n}   |f(n)|``
* absolute: ``sup_n K(n) e^{-beta |n|} |f(n)|``

with ``|.|`` the Euclidean norm. Weights are evaluated in log space so
large windows with large ``|beta|`` do not overflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import WindowMismatch

Variant = Literal["signed", "absolute"]

__all__ = [
    "WeightSpec",
    "WindowedSequence",
    "weighted_norm",
    "temperedness_estimate",
    "log_weights",
]


@dataclass(frozen=True, eq=False)
class WindowedSequence:
    """Vectors ``values[n - n_lo]`` in ``R^d`` for ``n`` in ``[n_lo, n_hi]``."""

    values: np.ndarray
    n_lo: int

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] == 0:
            raise ValueError("values must be a nonempty (length, d) array")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "n_lo", int(self.n_lo))

    @property
    def n_hi(self) -> int:
        return self.n_lo + self.values.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.n_lo, self.n_hi + 1)

    def __getitem__(self, n: int) -> np.ndarray:
        if not self.n_lo <= n <= self.n_hi:
            raise IndexError(f"index {n} outside [{self.n_lo}, {self.n_hi}]")
        return self.values[n - self.n_lo]

    def __len__(self) -> int:
        return self.values.shape[0]

    @classmethod
    def zeros(cls, n_lo: int, n_hi: int, d: int) -> "WindowedSequence":
        return cls(np.zeros((n_hi - n_lo + 1, d)), n_lo)

    @classmethod
    def delta(cls, n_lo: int, n_hi: int, k: int, z: np.ndarray) -> "WindowedSequence":
        z = np.asarray(z, dtype=float)
        out = np.zeros((n_hi - n_lo + 1, z.size))
        out[k - n_lo] = z
        return cls(out, n_lo)

    def scaled(self, c: float) -> "WindowedSequence":
        return WindowedSequence(c * self.values, self.n_lo)

    def padded(self, n_lo: int, n_hi: int) -> "WindowedSequence":
        """Zero-extend to the larger window ``[n_lo, n_hi]``."""
        if n_lo > self.n_lo or n_hi < self.n_hi:
            raise WindowMismatch("padding window must contain the current one")
        out = np.zeros((n_hi - n_lo + 1, self.dim))
        out[self.n_lo - n_lo : self.n_hi - n_lo + 1] = self.values
        return WindowedSequence(out, n_lo)


@dataclass(frozen=True, eq=False)
class WeightSpec:
    """Weight ``K`` sampled on a window, exponent ``beta`` and norm variant.

    With ``envelope=(kappa, eps)`` the samples are ``kappa * e^{eps |n|}``
    and ``K_samples`` may be omitted.
    """

    beta: float = 0.0
    variant: Variant = "signed"
    K_samples: np.ndarray | None = None
    n_lo: int = 0
    envelope: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if self.variant not in ("signed", "absolute"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.envelope is not None:
            kappa, eps = self.envelope
            if kappa <= 0 or eps < 0:
                raise ValueError("envelope needs kappa > 0 and eps >= 0")
        if self.K_samples is not None:
            k = np.array(self.K_samples, dtype=float).ravel()
            if not np.all(k > 0) or not np.all(np.isfinite(k)):
                raise ValueError("K samples must be finite and strictly positive")
            object.__setattr__(self, "K_samples", k)

    @classmethod
    def unit(cls, beta: float = 0.0, variant: Variant = "signed") -> "WeightSpec":
        return cls(beta=beta, variant=variant, envelope=(1.0, 0.0))

    @classmethod
    def from_envelope(
        cls, kappa: float, eps: float, beta: float = 0.0, variant: Variant = "signed"
    ) -> "WeightSpec":
        return cls(beta=beta, variant=variant, envelope=(kappa, eps))

    def with_beta(self, beta: float, variant: Variant | None = None) -> "WeightSpec":
        return WeightSpec(beta, variant or self.variant, self.K_samples, self.n_lo, self.envelope)

    def scaled(self, c: float) -> "WeightSpec":
        env = None if self.envelope is None else (self.envelope[0] * c, self.envelope[1])
        ks = None if self.K_samples is None else self.K_samples * c
        return WeightSpec(self.beta, self.variant, ks, self.n_lo, env)

    def log_K(self, n_lo: int, n_hi: int) -> np.ndarray:
        n = np.arange(n_lo, n_hi + 1)
        if self.envelope is not None:
            kappa, eps = self.envelope
            return math.log(kappa) + eps * np.abs(n).astype(float)
        if self.K_samples is None:
            return np.zeros(n.size)
        hi = self.n_lo + self.K_samples.size - 1
        if n_lo < self.n_lo or n_hi > hi:
            raise WindowMismatch(
                f"weight covers [{self.n_lo}, {hi}], sequence needs [{n_lo}, {n_hi}]"
            )
        return np.log(self.K_samples[n_lo - self.n_lo : n_hi - self.n_lo + 1])

    def K(self, n_lo: int, n_hi: int) -> np.ndarray:
        return np.exp(self.log_K(n_lo, n_hi))


def log_weights(w: WeightSpec, n_lo: int, n_hi: int) -> np.ndarray:
    """``ln K(n) - beta * n`` (signed) or ``ln K(n) - beta * |n|`` (absolute)."""
    n = np.arange(n_lo, n_hi + 1, dtype=float)
    expo = n if w.variant == "signed" else np.abs(n)
    return w.log_K(n_lo, n_hi) - w.beta * expo


def row_norms(v: np.ndarray) -> np.ndarray:
    """Euclidean norm of each row, rescaled so tiny or huge entries neither underflow nor overflow."""
    v = np.asarray(v, dtype=float)
    m = np.max(np.abs(v), axis=1)
    safe = np.where(m > 0, m, 1.0)
    return m * np.linalg.norm(v / safe[:, None], axis=1)


def weighted_norm(f: WindowedSequence, w: WeightSpec, *, unweighted_K: bool = False) -> float:
    """Weighted sup-norm of ``f``; ``unweighted_K`` drops ``K`` (the ``l^inf_{1,beta}`` norm)."""
    if w.envelope is None and w.K_samples is not None and not unweighted_K:
        if w.n_lo != f.n_lo or w.K_samples.size != len(f):
            raise WindowMismatch(
                f"sequence window [{f.n_lo}, {f.n_hi}] and weight window "
                f"[{w.n_lo}, {w.n_lo + w.K_samples.size - 1}] differ"
            )
    mags = row_norms(f.values)
    if unweighted_K:
        lw = log_weights(WeightSpec.unit(w.beta, w.variant), f.n_lo, f.n_hi)
    else:
        lw = log_weights(w, f.n_lo, f.n_hi)
    nz = mags > 0
    if not np.any(nz):
        return 0.0
    return float(np.max(np.exp(lw[nz] + np.log(mags[nz]))))


def temperedness_estimate(K_samples: np.ndarray, n_min: int, n_lo: int | None = None) -> float:
    """``max |ln K(n)| / |n|`` over ``n_min <= |n| <= N``.

    ``K_samples`` covers ``[n_lo, n_lo + len - 1]``; by default the window is
    assumed symmetric, ``[-N, N]``.
    """
    k = np.asarray(K_samples, dtype=float).ravel()
    if n_lo is None:
        if k.size % 2 == 0:
            raise ValueError("symmetric window needs an odd number of samples")
        n_lo = -(k.size // 2)
    n = np.arange(n_lo, n_lo + k.size)
    n_max = int(np.max(np.abs(n)))
    if not 1 <= n_min < n_max + 1:
        raise ValueError(f"need 1 <= n_min <= N, got n_min={n_min}, N={n_max}")
    sel = np.abs(n) >= n_min
    return float(np.max(np.abs(np.log(k[sel])) / np.abs(n[sel])))
