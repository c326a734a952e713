"""Base drivers, matrix generators and linear cocycles.

A driver is an invertible measure-preserving map ``theta`` on a state
space. A :class:`Cocycle` pairs a driver with a generator ``A(omega)``;
``Phi(n, omega) = A(theta^{n-1} omega) ... A(omega)``.

States are plain Python values: a float in ``[0, 1)`` for the rotation,
an integer position for the Bernoulli shift (the symbol stream is a pure
function of ``(seed, position)`` so only the symbols an orbit touches are
ever materialized), and an integer for the deterministic shift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Protocol, Sequence

import numpy as np

from .errors import ProductOverflow, SingularRestriction

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

__all__ = [
    "GOLDEN",
    "IrrationalRotation",
    "BernoulliShift",
    "IntegerShift",
    "ConstantGenerator",
    "SteppedDiagonalGenerator",
    "TableGenerator",
    "SymbolGenerator",
    "FunctionGenerator",
    "PerturbedGenerator",
    "Cocycle",
    "OrbitSegment",
    "orbit",
    "evolve",
    "evolve_logscaled",
    "evolve_unstable_backward",
    "rotation_matrix",
    "piece_index",
]


# --------------------------------------------------------------------------
# drivers


@dataclass(frozen=True)
class IrrationalRotation:
    """``omega -> omega + q (mod 1)`` on ``[0, 1)`` with Lebesgue measure."""

    q: float = GOLDEN
    kind: str = field(default="irrational_rotation", init=False)

    def __post_init__(self) -> None:
        if not 0.0 < self.q < 1.0:
            raise ValueError(f"rotation number must lie in (0, 1), got {self.q}")

    @staticmethod
    def _wrap(x: float) -> float:
        x = x % 1.0
        # (-tiny) % 1.0 rounds to 1.0
        return 0.0 if x >= 1.0 else x

    def forward(self, w: float) -> float:
        return self._wrap(w + self.q)

    def backward(self, w: float) -> float:
        return self._wrap(w - self.q)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.random(size)

    def states(self, w: float, n_lo: int, n_hi: int) -> np.ndarray:
        out = np.empty(n_hi - n_lo + 1)
        x = float(w)
        for n in range(0, n_hi + 1):
            if n >= n_lo:
                out[n - n_lo] = x
            x = self.forward(x)
        x = float(w)
        for n in range(0, n_lo - 1, -1):
            if n <= n_hi:
                out[n - n_lo] = x
            x = self.backward(x)
        return out

    def circle_distance(self, a: float, b: float) -> float:
        d = abs(a - b) % 1.0
        return min(d, 1.0 - d)


_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = x + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


@dataclass(frozen=True)
class BernoulliShift:
    """Two-sided shift on i.i.d. uniform symbols ``{0, ..., symbol_count-1}``.

    The state is an integer position ``p``; the sequence seen from ``p`` is
    ``(s(p + k))_k`` where ``s`` is a fixed hash of ``(seed, index)``.
    """

    seed: int = 0
    symbol_count: int = 2
    kind: str = field(default="bernoulli_shift", init=False)

    def __post_init__(self) -> None:
        if self.symbol_count < 2:
            raise ValueError("symbol_count must be at least 2")

    def symbol(self, positions: Any) -> np.ndarray:
        p = np.asarray(positions, dtype=np.int64).astype(np.uint64)
        key = _splitmix64(np.array([self.seed], dtype=np.int64).astype(np.uint64))[0]
        h = _splitmix64(_splitmix64(p) ^ key)
        return (h % np.uint64(self.symbol_count)).astype(np.int64)

    def forward(self, w: int) -> int:
        return int(w) + 1

    def backward(self, w: int) -> int:
        return int(w) - 1

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.integers(-(2**61), 2**61, size=size, dtype=np.int64)

    def states(self, w: int, n_lo: int, n_hi: int) -> np.ndarray:
        return int(w) + np.arange(n_lo, n_hi + 1, dtype=np.int64)


@dataclass(frozen=True)
class IntegerShift:
    """Deterministic time ``n -> n + 1``; used for non-random equations."""

    kind: str = field(default="integer_shift", init=False)

    def forward(self, w: int) -> int:
        return int(w) + 1

    def backward(self, w: int) -> int:
        return int(w) - 1

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return np.zeros(size, dtype=np.int64)

    def states(self, w: int, n_lo: int, n_hi: int) -> np.ndarray:
        return int(w) + np.arange(n_lo, n_hi + 1, dtype=np.int64)


# --------------------------------------------------------------------------
# generators


class Generator(Protocol):
    dim: int

    def __call__(self, state: Any) -> np.ndarray: ...

    def batch(self, states: np.ndarray) -> np.ndarray: ...


class _BatchByLoop:
    def batch(self, states: np.ndarray) -> np.ndarray:
        return np.stack([self(s) for s in states]) if len(states) else np.empty((0, self.dim, self.dim))


@dataclass(frozen=True, eq=False)
class ConstantGenerator(_BatchByLoop):
    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("generator matrix must be square")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def __call__(self, state: Any) -> np.ndarray:
        return self.matrix.copy()

    def batch(self, states: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.matrix, (len(states),) + self.matrix.shape).copy()


def piece_index(w: Any, i_max: int | None = None) -> np.ndarray:
    """Index ``i`` with ``w`` in ``[1 - 1/i, 1 - 1/(i+1))``, optionally capped."""
    w = np.asarray(w, dtype=float)
    with np.errstate(divide="ignore"):
        i = np.floor(1.0 / (1.0 - w))
    i = np.where(np.isfinite(i), i, np.inf)
    # floor(1/(1-w)) can land one piece too high right at a boundary
    i = np.where(w < 1.0 - 1.0 / np.maximum(i, 1.0), i - 1.0, i)
    i = np.maximum(i, 1.0)
    if i_max is not None:
        i = np.minimum(i, float(i_max))
    return i.astype(np.int64)


@dataclass(frozen=True)
class SteppedDiagonalGenerator(_BatchByLoop):
    """``diag(e^{-(2i+1)}, 1/2, e^{2i+1})`` on the piece ``[1-1/i, 1-1/(i+1))``.

    Pieces beyond ``i_max`` reuse the ``i_max`` rates.
    """

    i_max: int = 20
    dim: int = field(default=3, init=False)

    def __post_init__(self) -> None:
        if self.i_max < 1:
            raise ValueError("i_max must be >= 1")

    def rates(self, states: Any) -> np.ndarray:
        i = piece_index(states, self.i_max).astype(float)
        return 2.0 * i + 1.0

    def __call__(self, state: Any) -> np.ndarray:
        return self.batch(np.array([state], dtype=float))[0]

    def batch(self, states: np.ndarray) -> np.ndarray:
        r = self.rates(states)
        out = np.zeros((len(r), 3, 3))
        out[:, 0, 0] = np.exp(-r)
        out[:, 1, 1] = 0.5
        out[:, 2, 2] = np.exp(r)
        return out


@dataclass(frozen=True, eq=False)
class TableGenerator(_BatchByLoop):
    """Matrix per integer state, ``A(n) = table[n - start]``."""

    table: np.ndarray
    start: int = 0

    def __post_init__(self) -> None:
        t = np.array(self.table, dtype=float)
        if t.ndim != 3 or t.shape[1] != t.shape[2]:
            raise ValueError("table must have shape (steps, d, d)")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    @property
    def stop(self) -> int:
        return self.start + self.table.shape[0] - 1

    def __call__(self, state: Any) -> np.ndarray:
        return self.batch(np.array([state]))[0]

    def batch(self, states: np.ndarray) -> np.ndarray:
        idx = np.asarray(states, dtype=np.int64) - self.start
        if len(idx) and (idx.min() < 0 or idx.max() >= self.table.shape[0]):
            raise IndexError(
                f"table covers states [{self.start}, {self.stop}], "
                f"requested [{int(idx.min()) + self.start}, {int(idx.max()) + self.start}]"
            )
        return self.table[idx].copy()

    @classmethod
    def from_csv(cls, path: str, dim: int, start: int = 0) -> "TableGenerator":
        rows = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
        if rows.shape[1] != dim * dim:
            raise ValueError(f"expected {dim * dim} values per line, got {rows.shape[1]}")
        return cls(rows.reshape(-1, dim, dim), start)


@dataclass(frozen=True, eq=False)
class SymbolGenerator(_BatchByLoop):
    """``A(omega) = matrices[omega_0]`` for a Bernoulli shift state."""

    driver: BernoulliShift
    matrices: np.ndarray

    def __post_init__(self) -> None:
        m = np.array(self.matrices, dtype=float)
        if m.shape[0] != self.driver.symbol_count:
            raise ValueError("need one matrix per symbol")
        object.__setattr__(self, "matrices", m)

    @property
    def dim(self) -> int:
        return self.matrices.shape[1]

    def __call__(self, state: Any) -> np.ndarray:
        return self.batch(np.array([state], dtype=np.int64))[0]

    def batch(self, states: np.ndarray) -> np.ndarray:
        return self.matrices[self.driver.symbol(states)].copy()


@dataclass(frozen=True, eq=False)
class FunctionGenerator(_BatchByLoop):
    """Wrap an arbitrary ``state -> matrix`` callable."""

    func: Callable[[Any], np.ndarray]
    dim: int

    def __call__(self, state: Any) -> np.ndarray:
        return np.asarray(self.func(state), dtype=float)


@dataclass(frozen=True, eq=False)
class PerturbedGenerator(_BatchByLoop):
    """``A(omega) + C(omega)`` with ``C`` a constant matrix or a generator."""

    base: Any
    perturbation: Any

    @property
    def dim(self) -> int:
        return self.base.dim

    def _c(self, states: np.ndarray) -> np.ndarray:
        if hasattr(self.perturbation, "batch"):
            return self.perturbation.batch(states)
        c = np.asarray(self.perturbation, dtype=float)
        return np.broadcast_to(c, (len(states),) + c.shape)

    def __call__(self, state: Any) -> np.ndarray:
        return self.batch(np.array([state]))[0]

    def batch(self, states: np.ndarray) -> np.ndarray:
        return self.base.batch(states) + self._c(states)


def rotation_matrix(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


# --------------------------------------------------------------------------
# cocycles and orbits


@dataclass(frozen=True, eq=False)
class Cocycle:
    driver: Any
    generator: Any
    name: str = ""

    @property
    def dim(self) -> int:
        return int(self.generator.dim)

    def matrix(self, state: Any) -> np.ndarray:
        return np.asarray(self.generator(state), dtype=float)

    def matrices(self, states: np.ndarray) -> np.ndarray:
        return np.asarray(self.generator.batch(np.asarray(states)), dtype=float)

    def with_generator(self, generator: Any, name: str = "") -> "Cocycle":
        return Cocycle(self.driver, generator, name or self.name)


@dataclass(frozen=True, eq=False)
class OrbitSegment:
    """States ``theta^n omega`` and matrices ``A(theta^n omega)`` for ``n`` in ``[n_lo, n_hi]``."""

    base: Any
    n_lo: int
    n_hi: int
    states: np.ndarray
    matrices: np.ndarray

    def __len__(self) -> int:
        return self.n_hi - self.n_lo + 1

    def state(self, n: int) -> Any:
        return self.states[n - self.n_lo]

    def A(self, n: int) -> np.ndarray:
        return self.matrices[n - self.n_lo]

    def slice(self, n_lo: int, n_hi: int) -> "OrbitSegment":
        if n_lo < self.n_lo or n_hi > self.n_hi or n_lo > n_hi:
            raise IndexError(f"[{n_lo}, {n_hi}] not inside [{self.n_lo}, {self.n_hi}]")
        a, b = n_lo - self.n_lo, n_hi - self.n_lo + 1
        return OrbitSegment(self.base, n_lo, n_hi, self.states[a:b], self.matrices[a:b])


def orbit(cocycle: Cocycle | Any, w: Any, n_lo: int, n_hi: int) -> OrbitSegment:
    """Orbit segment of ``w`` on ``[n_lo, n_hi]``.

    Accepts either a :class:`Cocycle` (states and matrices) or a bare
    driver (states only, ``matrices`` left empty).
    """
    if n_lo > n_hi:
        raise ValueError(f"n_lo={n_lo} > n_hi={n_hi}")
    driver = cocycle.driver if isinstance(cocycle, Cocycle) else cocycle
    states = driver.states(w, n_lo, n_hi)
    if isinstance(cocycle, Cocycle):
        mats = cocycle.matrices(states)
    else:
        mats = np.empty((0, 0, 0))
    return OrbitSegment(w, n_lo, n_hi, states, mats)


def _check_finite(m: np.ndarray, step: int) -> None:
    if not np.all(np.isfinite(m)):
        raise ProductOverflow(f"matrix product left the float range at step {step}")


def evolve(cocycle: Cocycle, w: Any, n: int) -> np.ndarray:
    """``Phi(n, w) = A(theta^{n-1} w) ... A(w)`` for ``n >= 0``."""
    if n < 0:
        raise ValueError("evolve needs n >= 0; use evolve_unstable_backward for n < 0")
    d = cocycle.dim
    out = np.eye(d)
    if n == 0:
        return out
    mats = cocycle.matrices(cocycle.driver.states(w, 0, n - 1))
    for j in range(n):
        out = mats[j] @ out
        _check_finite(out, j)
    return out


def evolve_logscaled(cocycle: Cocycle, w: Any, n: int) -> tuple[np.ndarray, float]:
    """``Phi(n, w) = exp(log_scale) * M`` with ``M`` kept at unit max-norm."""
    if n < 0:
        raise ValueError("n must be >= 0")
    d = cocycle.dim
    out = np.eye(d)
    log_scale = 0.0
    if n == 0:
        return out, 0.0
    mats = cocycle.matrices(cocycle.driver.states(w, 0, n - 1))
    for j in range(n):
        out = mats[j] @ out
        s = np.max(np.abs(out))
        if s == 0.0:
            return out, -math.inf
        out /= s
        log_scale += math.log(s)
    return out, log_scale


def _range_basis(p: np.ndarray, rank: int) -> np.ndarray:
    u, _, _ = np.linalg.svd(p)
    return u[:, :rank]


def projector_rank(p: np.ndarray) -> int:
    return int(round(float(np.trace(p))))


def evolve_unstable_backward(
    cocycle: Cocycle,
    dichotomy: Any,
    n: int,
    k: int = 0,
    *,
    tol: float = 1e-12,
) -> np.ndarray:
    """``Phi(n, theta^k w) Pi^u(theta^k w)`` for ``n <= 0``.

    Each step inverts ``A(theta^{j-1} w)`` restricted to the range of
    ``Pi^u(theta^{j-1} w)``; ``dichotomy`` supplies ``unstable(j)`` and the
    cached orbit matrices ``A(j)``.
    """
    if n > 0:
        raise ValueError("evolve_unstable_backward needs n <= 0")
    out = dichotomy.unstable(k)
    for j in range(k, k + n, -1):
        pu = dichotomy.unstable(j - 1)
        r = cocycle.dim - projector_rank(dichotomy.stable(j - 1))
        if r == 0:
            return np.zeros_like(out)
        basis = _range_basis(pu, r)
        a = dichotomy.A(j - 1)
        au = a @ basis
        sv = np.linalg.svd(au, compute_uv=False)
        if sv[-1] < tol * max(1.0, float(np.linalg.norm(a, 2))):
            raise SingularRestriction(
                f"A restricted to the unstable fiber at index {j - 1} has smallest "
                f"singular value {sv[-1]:.3e}"
            )
        z, *_ = np.linalg.lstsq(au, out, rcond=None)
        out = basis @ z
    return out


def states_equal(driver: Any, a: Any, b: Any) -> bool:
    return bool(a == b)


def _as_sequence(x: Any) -> Sequence[Any]:
    return x if isinstance(x, (list, tuple, np.ndarray)) else [x]
