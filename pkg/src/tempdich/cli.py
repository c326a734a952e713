"""Scenario runner: ``tempdich run <file|name>``, ``tempdich list``, ``tempdich --version``.

A scenario is a TOML file naming a driver, a generator, a window and one
pipeline (forward, detect, met, roughness, deterministic, kac). Each run
writes ``report.json`` plus deterministic CSV tables into the output
directory. Exit status: 0 when every certificate passes, 2 when a
certificate fails, 1 on invalid input.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Callable

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from . import __version__
from .admissibility import DetectionTolerances, detect_dichotomy
from .dynamics import (
    BernoulliShift,
    Cocycle,
    ConstantGenerator,
    IntegerShift,
    IrrationalRotation,
    PerturbedGenerator,
    SteppedDiagonalGenerator,
    SymbolGenerator,
    TableGenerator,
    rotation_matrix,
)
from .errors import CertificateFailure, ConfigError
from .green import (
    DichotomyData,
    gamma,
    gamma_tilde,
    green_bound_check,
    green_table,
    solve_convolution,
)
from .roughness import (
    PerturbationSpec,
    check_smallness,
    deterministic_mode,
    holder_bound,
    holder_empirical,
    perturbed_green,
    roughness_constants,
)
from .spectrum import (
    build_return_cocycle,
    interval_predicate,
    induced_decay_check,
    kac_check,
    kac_history,
    lyapunov_qr,
    met_dichotomy,
    return_constants,
)
from .weighted_spaces import WeightSpec, WindowedSequence, weighted_norm

PIPELINES = ("forward", "detect", "met", "roughness", "deterministic", "kac")


# --------------------------------------------------------------------------
# config access with field paths


class Section:
    """Typed, path-aware access to a TOML table."""

    def __init__(self, data: dict, path: str = ""):
        if not isinstance(data, dict):
            raise ConfigError(path or "<root>", "expected a table")
        self.data = data
        self.path = path

    def _p(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def has(self, key: str) -> bool:
        return key in self.data

    def sub(self, key: str, required: bool = True) -> "Section":
        if key not in self.data:
            if required:
                raise ConfigError(self._p(key), "missing table")
            return Section({}, self._p(key))
        return Section(self.data[key], self._p(key))

    def get(self, key: str, kind: type | tuple, default: Any = ..., check: Callable[[Any], bool] | None = None, why: str = "") -> Any:
        if key not in self.data:
            if default is ...:
                raise ConfigError(self._p(key), "missing required field")
            return default
        v = self.data[key]
        if kind is float and isinstance(v, int) and not isinstance(v, bool):
            v = float(v)
        if isinstance(v, bool) and kind in (int, float):
            raise ConfigError(self._p(key), f"expected {kind.__name__}, got bool")
        if not isinstance(v, kind):
            name = kind.__name__ if isinstance(kind, type) else "/".join(k.__name__ for k in kind)
            raise ConfigError(self._p(key), f"expected {name}, got {type(v).__name__}")
        if check is not None and not check(v):
            raise ConfigError(self._p(key), why or f"invalid value {v!r}")
        return v

    def matrix(self, key: str, d: int | None = None) -> np.ndarray:
        raw = self.get(key, list)
        try:
            m = np.array(raw, dtype=float)
        except (TypeError, ValueError):
            raise ConfigError(self._p(key), "expected a numeric matrix") from None
        if m.ndim != 2 or m.shape[0] != m.shape[1] or (d is not None and m.shape[0] != d):
            raise ConfigError(self._p(key), f"expected a square {d or 'd'}x{d or 'd'} matrix, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ConfigError(self._p(key), "matrix entries must be finite")
        return m

    def floats(self, key: str, default: Any = ...) -> list[float]:
        raw = self.get(key, list, default)
        out = []
        for i, v in enumerate(raw):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"{self._p(key)}[{i}]", "expected a number")
            out.append(float(v))
        return out


def _pos(x: Any) -> bool:
    return x > 0


def _nonneg(x: Any) -> bool:
    return x >= 0


# --------------------------------------------------------------------------
# building objects from config


def build_driver(sec: Section) -> Any:
    kind = sec.get("kind", str, check=lambda k: k in ("irrational_rotation", "bernoulli_shift", "integer_shift"),
                   why="must be irrational_rotation, bernoulli_shift or integer_shift")
    if kind == "irrational_rotation":
        q = sec.get("q", float, (math.sqrt(5.0) - 1.0) / 2.0, check=lambda q: 0 < q < 1, why="must lie in (0, 1)")
        return IrrationalRotation(q)
    if kind == "bernoulli_shift":
        seed = sec.get("seed", int, 0, check=_nonneg, why="must be non-negative")
        count = sec.get("symbol_count", int, 2, check=lambda c: c >= 2, why="must be at least 2")
        return BernoulliShift(seed, count)
    return IntegerShift()


def _random_orthogonal(d: int, seed: int) -> np.ndarray:
    q, r = np.linalg.qr(np.random.default_rng(seed).standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def build_generator(sec: Section, driver: Any, base_dir: Path) -> Any:
    kind = sec.get("kind", str)
    if kind == "constant_diag":
        diag = sec.floats("diag")
        if not diag:
            raise ConfigError(sec._p("diag"), "must be nonempty")
        return ConstantGenerator(np.diag(diag))
    if kind == "constant_matrix":
        return ConstantGenerator(sec.matrix("matrix"))
    if kind == "rotation_matrix":
        return ConstantGenerator(rotation_matrix(sec.get("angle", float)))
    if kind in ("remark42", "stepped_diagonal"):
        return SteppedDiagonalGenerator(sec.get("i_max", int, 20, check=_pos, why="must be positive"))
    if kind == "symbol_table":
        if not isinstance(driver, BernoulliShift):
            raise ConfigError(sec._p("kind"), "symbol_table needs a bernoulli_shift driver")
        mats = sec.get("matrices", list)
        try:
            arr = np.array(mats, dtype=float)
        except (TypeError, ValueError):
            raise ConfigError(sec._p("matrices"), "expected a list of matrices") from None
        if arr.ndim != 3 or arr.shape[0] != driver.symbol_count:
            raise ConfigError(sec._p("matrices"), "need one square matrix per symbol")
        return SymbolGenerator(driver, arr)
    if kind == "custom_table":
        rel = sec.get("path", str)
        path = (base_dir / rel) if not Path(rel).is_absolute() else Path(rel)
        dim = sec.get("dim", int, check=_pos, why="must be positive")
        start = sec.get("start", int, 0)
        if not path.exists():
            raise ConfigError(sec._p("path"), f"file not found: {path}")
        try:
            return TableGenerator.from_csv(str(path), dim, start)
        except ValueError as e:
            raise ConfigError(sec._p("path"), str(e)) from None
    if kind == "perturbed":
        base = build_generator(sec.sub("base"), driver, base_dir)
        E = _direction(sec, base.dim)
        xi = sec.get("xi", float, 1.0)
        return PerturbedGenerator(base, xi * E)
    raise ConfigError(sec._p("kind"), f"unknown generator {kind!r}")


def _direction(sec: Section, d: int) -> np.ndarray:
    if sec.has("direction"):
        return sec.matrix("direction", d)
    seed = sec.get("direction_seed", int, 0, check=_nonneg, why="must be non-negative")
    return _random_orthogonal(d, seed)


@dataclass
class Scenario:
    name: str
    description: str
    pipeline: str
    seed: int
    cocycle: Cocycle
    N: int
    root: Section
    base_dir: Path


def load_scenario(path: Path, seed_override: int | None = None) -> Scenario:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError("<file>", f"TOML syntax error: {e}") from None
    root = Section(data)
    name = root.get("name", str, path.stem)
    desc = root.get("description", str, "")
    pipeline = root.get("pipeline", str, check=lambda p: p in PIPELINES, why=f"must be one of {', '.join(PIPELINES)}")
    seed = root.get("seed", int, 0, check=lambda s: 0 <= s < 2**64, why="must be an unsigned 64-bit integer")
    if seed_override is not None:
        seed = seed_override
    driver = build_driver(root.sub("driver"))
    gen = build_generator(root.sub("generator"), driver, path.parent)
    win = root.sub("window", required=False)
    N = win.get("N", int, 40, check=lambda n: n >= 4, why="must be an integer >= 4")
    return Scenario(name, desc, pipeline, seed, Cocycle(driver, gen, name), N, root, path.parent)


def _omegas(sc: Scenario) -> list[Any]:
    sec = sc.root.sub("omega", required=False)
    drv = sc.cocycle.driver
    if sec.has("samples"):
        vals = sec.get("samples", list)
        if not vals:
            raise ConfigError("omega.samples", "must be nonempty")
        out = []
        for i, v in enumerate(vals):
            if isinstance(drv, IrrationalRotation):
                if isinstance(v, bool) or not isinstance(v, (int, float)) or not 0 <= v < 1:
                    raise ConfigError(f"omega.samples[{i}]", "rotation states must lie in [0, 1)")
                out.append(float(v))
            else:
                if isinstance(v, bool) or not isinstance(v, int):
                    raise ConfigError(f"omega.samples[{i}]", "expected an integer state")
                out.append(int(v))
        return out
    count = sec.get("count", int, 1, check=_pos, why="must be positive")
    rng = np.random.default_rng(sc.seed)
    return [s.item() if hasattr(s, "item") else s for s in drv.sample(rng, count)]


def _tolerances(sc: Scenario) -> DetectionTolerances:
    t = sc.root.sub("tolerances", required=False)
    base = DetectionTolerances()
    return DetectionTolerances(
        idempotence=t.get("idempotence", float, base.idempotence, check=_pos, why="must be positive"),
        equivariance=t.get("equivariance", float, base.equivariance, check=_pos, why="must be positive"),
        agreement=t.get("agreement", float, base.agreement, check=_pos, why="must be positive"),
        min_alpha=t.get("min_alpha", float, base.min_alpha, check=_pos, why="must be positive"),
        decay_slack=t.get("decay_slack", float, base.decay_slack, check=_nonneg, why="must be non-negative"),
        temperedness=t.get("temperedness", float, base.temperedness, check=_pos, why="must be positive"),
        margin=t.get("margin", int, None) if t.has("margin") else None,
    )


# --------------------------------------------------------------------------
# output helpers


def _fmt(v: Any) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path: Path, header: list[str], rows: list[list[Any]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _jsonify(o: Any) -> Any:
    if isinstance(o, dict):
        return {str(k): _jsonify(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonify(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonify(o.tolist())
    if isinstance(o, (np.floating,)):
        o = float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, float) and not math.isfinite(o):
        return str(o)
    return o


def _check(value: float, limit: float, name: str, *, upper: bool = True) -> dict:
    ok = value <= limit if upper else value >= limit
    return {"name": name, "value": value, "limit": limit, "margin": (limit - value) if upper else (value - limit), "pass": bool(ok)}


def _proj_rows(dich: DichotomyData, sample: int) -> list[list[Any]]:
    rows = []
    d = dich.dim
    for n in dich.indices:
        p = dich.stable(int(n))
        for r in range(d):
            for c in range(d):
                rows.append([sample, int(n), r, c, float(p[r, c])])
    return rows


def _expect_projection(sc: Scenario, dichs: list[DichotomyData], checks: list[dict]) -> None:
    exp = sc.root.sub("expect", required=False)
    if exp.has("projection"):
        P = exp.matrix("projection", sc.cocycle.dim)
        tol = exp.get("projection_tol", float, 1e-8, check=_pos, why="must be positive")
        err = max(float(np.max(np.abs(d.proj - P))) for d in dichs)
        checks.append(_check(err, tol, "projection_error"))
    if exp.has("alpha_min"):
        a = min(d.alpha for d in dichs)
        checks.append(_check(a, exp.get("alpha_min", float), "alpha_hat", upper=False))
    if exp.has("K_range"):
        lo, hi = exp.floats("K_range")
        kmax = max(float(d.K.max()) for d in dichs)
        kmin = min(float(d.K.min()) for d in dichs)
        checks.append(_check(kmax, hi, "K_hat_max"))
        checks.append(_check(kmin, lo, "K_hat_min", upper=False))


# --------------------------------------------------------------------------
# pipelines


def _known_dichotomy(sc: Scenario, w: Any) -> DichotomyData:
    sec = sc.root.sub("dichotomy")
    P = sec.matrix("projection", sc.cocycle.dim)
    alpha = sec.get("alpha", float, check=_pos, why="must be positive")
    K = sec.get("K", float, 1.0, check=_pos, why="must be positive")
    return DichotomyData.build(sc.cocycle, w, -sc.N, sc.N, P, alpha, K)


def run_forward(sc: Scenario, out: Path, threads: int) -> dict:
    w = _omegas(sc)[0]
    dich = _known_dichotomy(sc, w)
    table = green_table(dich)
    bound = green_bound_check(table)
    sec = sc.root.sub("forward", required=False)
    betas = sec.floats("betas", [0.0])
    probes = sec.get("probes", int, 100, check=_pos, why="must be positive")
    for i, b in enumerate(betas):
        if not abs(b) < dich.alpha:
            raise ConfigError(f"forward.betas[{i}]", "need |beta| < alpha")
    rng = np.random.default_rng(sc.seed)
    d = dich.dim
    L = 2 * sc.N + 1
    rows = []
    checks = [dict(bound, name="green_bound")]
    worst_res = 0.0
    for b in betas:
        g, gt = gamma(dich.alpha, b), gamma_tilde(dich.alpha, b)
        for variant, const in (("signed", g), ("absolute", gt)):
            wk = WeightSpec(beta=b, variant=variant, K_samples=dich.K, n_lo=-sc.N)
            top = 0.0
            for _ in range(probes):
                f = WindowedSequence(rng.standard_normal((L, d)), -sc.N)
                x = solve_convolution(dich, f, table)
                res = x.values[1:] - np.einsum("nij,nj->ni", dich.segment.matrices[:-1], x.values[:-1]) - f.values[1:]
                worst_res = max(worst_res, float(np.max(np.linalg.norm(res, axis=1))) / (1 + float(np.max(np.abs(f.values)))))
                ratio = weighted_norm(x, wk, unweighted_K=True) / weighted_norm(f, wk)
                top = max(top, ratio)
            rows.append([b, variant, const, top])
            checks.append(_check(top, const, f"ratio_{variant}_beta_{b}"))
    checks.append(_check(worst_res, 1e-9, "recurrence_residual"))
    table.to_csv(str(out / "green_table.csv"))
    write_csv(out / "probes.csv", ["beta", "variant", "constant", "max_ratio"], rows)
    return {"omega": w, "checks": checks}


def run_detect(sc: Scenario, out: Path, threads: int) -> dict:
    ws = _omegas(sc)
    wsec = sc.root.sub("weight", required=False)
    beta = wsec.get("beta", float, 0.5, check=_pos, why="must be positive")
    tol = _tolerances(sc)
    dichs = detect_dichotomy(sc.cocycle, ws, beta, None, sc.N, tol, threads=threads)
    rows = []
    certs = []
    for i, d in enumerate(dichs):
        rows.extend(_proj_rows(d, i))
        certs.append({k: v for k, v in d.meta.items()})
    write_csv(out / "projections.csv", ["sample", "n", "row", "col", "value"], rows)
    checks: list[dict] = []
    for i, d in enumerate(dichs):
        v = d.meta["validation"]
        checks.append(_check(v["idempotence_defect"], tol.idempotence, f"sample{i}_idempotence"))
        checks.append(_check(v["equivariance_defect"], tol.equivariance, f"sample{i}_equivariance"))
        checks.append(_check(v["decay_max_slack"], 1 + tol.decay_slack, f"sample{i}_decay"))
    _expect_projection(sc, dichs, checks)
    return {"beta": beta, "certificates": certs, "projection_at_0": [d.stable(0) for d in dichs], "checks": checks}


def run_met(sc: Scenario, out: Path, threads: int) -> dict:
    ws = _omegas(sc)
    sec = sc.root.sub("met", required=False)
    n_steps = sec.get("n_steps", int, 10_000, check=lambda n: n >= 100, why="must be >= 100")
    gap_tol = sec.get("gap_tolerance", float, 1e-2, check=_pos, why="must be positive")
    n_split = sec.get("n_split", int, 60, check=_pos, why="must be positive")
    history_steps = sec.get("history_steps", int, n_steps, check=lambda n: n >= 100, why="must be >= 100")

    def one(w: Any) -> DichotomyData:
        return met_dichotomy(sc.cocycle, w, n_steps, gap_tol, N=sc.N, n_split=n_split)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as ex:
        dichs = list(ex.map(one, ws))
    cps = sorted({c for c in (100, 1000, 10_000, 100_000, 1_000_000) if c <= history_steps} | {history_steps})
    rep = lyapunov_qr(sc.cocycle, ws[0], history_steps, checkpoints=cps)
    d = sc.cocycle.dim
    write_csv(out / "lyapunov.csv", ["checkpoint"] + [f"exponent_{i + 1}" for i in range(d)], rep.to_rows())
    rows = []
    for i, dd in enumerate(dichs):
        rows.extend(_proj_rows(dd, i))
    write_csv(out / "projections.csv", ["sample", "n", "row", "col", "value"], rows)
    checks: list[dict] = []
    for i, dd in enumerate(dichs):
        v = dd.meta["validation"]
        checks.append(_check(v["idempotence_defect"], 1e-8, f"sample{i}_idempotence"))
        checks.append(_check(v["equivariance_defect"], 1e-8, f"sample{i}_equivariance"))
    if sec.get("compare_detect", bool, False):
        beta = sec.get("detect_beta", float, 0.5, check=_pos, why="must be positive")
        det = detect_dichotomy(sc.cocycle, ws, beta, None, sc.N, _tolerances(sc))
        err = max(float(np.max(np.abs(a.proj - b.proj))) for a, b in zip(dichs, det))
        checks.append(_check(err, sec.get("agreement_tol", float, 1e-6), "met_vs_detect"))
    _expect_projection(sc, dichs, checks)
    return {
        "exponents": rep.exponents,
        "history": rep.history,
        "certificates": [dd.meta for dd in dichs],
        "checks": checks,
    }


def run_roughness(sc: Scenario, out: Path, threads: int) -> dict:
    sec = sc.root.sub("roughness")
    w = _omegas(sc)[0]
    if sc.root.has("dichotomy"):
        dich = _known_dichotomy(sc, w)
    else:
        beta = sc.root.sub("weight", required=False).get("beta", float, 0.3, check=_pos, why="must be positive")
        dich = detect_dichotomy(sc.cocycle, w, beta, None, sc.N, _tolerances(sc))
    E = _direction(sec, sc.cocycle.dim)
    E_norm = float(np.linalg.norm(E, 2))
    base_gen = sc.cocycle.generator
    rhos = sec.floats("rho")
    xis = sec.floats("xi")
    if len(xis) != len(rhos):
        raise ConfigError("roughness.xi", "need one perturbation size per rho")
    holder_xis = sec.floats("holder_xi", [])
    sigma = sec.get("sigma", float, 1.0, check=lambda s: 0 < s <= 1, why="must lie in (0, 1]")
    modes = sec.get("modes", list, ["plus", "minus", "absolute"])
    for i, m in enumerate(modes):
        if m not in ("plus", "minus", "absolute"):
            raise ConfigError(f"roughness.modes[{i}]", "must be plus, minus or absolute")
    Kmax = float(dich.K.max())
    table = green_table(dich)
    rows = []
    checks: list[dict] = []
    details = []

    def family(xi: Any) -> Any:
        return PerturbedGenerator(base_gen, float(xi) * E)

    for i, (rho, xi) in enumerate(zip(rhos, xis)):
        if not rho > 0:
            raise ConfigError(f"roughness.rho[{i}]", "must be positive")
        pert = PerturbationSpec(family, rho, upsilon=E_norm * Kmax, sigma=sigma)
        small = check_smallness(sc.cocycle, pert, dich, xi)
        entry: dict[str, Any] = {"rho": rho, "xi": xi, "smallness": small}
        if not small["pass"]:
            rows.append([rho, xi, "", "", "", "", "", "", "", "", "", "smallness_failed"])
            checks.append(dict(small, name=f"rho{i}_smallness"))
            details.append(entry)
            continue
        consts = roughness_constants(dich.alpha, rho)
        entry["constants"] = consts.to_dict()
        rates = []
        pg = None
        for m in modes:
            pg = perturbed_green(dich, pert, xi, mode=m, table=table)
            rates.append((m, pg.measured_rate, pg.analytic_rate))
            checks.append(_check(pg.measured_rate, 1.1 * pg.analytic_rate, f"rho{i}_{m}_rate"))
        assert pg is not None
        bc = green_bound_check(pg.table)
        checks.append(dict(bc, name=f"rho{i}_perturbed_green_bound"))
        CH = holder_bound(consts.kappa, pert.upsilon, dich.K_at(0), consts.alpha_tilde, sigma)
        hol = None
        if len(holder_xis) >= 2:
            pairs = [(a, b) for j, a in enumerate(holder_xis) for b in holder_xis[j + 1 :]]
            if max(abs(x) for x in holder_xis) * E_norm * Kmax > rho:
                raise ConfigError("roughness.holder_xi", f"perturbations exceed rho={rho}")
            hol = holder_empirical(pert, dich, pairs)
            checks.append(_check(hol["max_ratio"], hol["bound"], f"rho{i}_holder"))
        entry.update(rates=rates, green_bound=bc, holder=hol, projector=pg.projector)
        details.append(entry)
        worst_rate = max(r[1] / r[2] for r in rates) if rates else float("nan")
        rows.append([
            rho, xi, consts.beta_star, consts.contraction, consts.alpha_tilde, consts.kappa, CH,
            max(r[1] for r in rates), max(r[2] for r in rates), worst_rate,
            "" if hol is None else hol["max_ratio"], bc["max_slack"],
        ])
    write_csv(
        out / "roughness.csv",
        ["rho", "xi", "beta_star", "contraction", "alpha_tilde", "kappa", "C_H",
         "measured_rate", "analytic_rate", "rate_ratio", "holder_max_ratio", "green_bound_slack"],
        rows,
    )
    return {"omega": w, "rows": details, "checks": checks}


def run_deterministic(sc: Scenario, out: Path, threads: int) -> dict:
    gen = sc.cocycle.generator
    if not isinstance(gen, TableGenerator):
        raise ConfigError("generator.kind", "deterministic pipeline needs a custom_table generator")
    sec = sc.root.sub("deterministic", required=False)
    kappa = sec.get("kappa", float, 1.0, check=_pos, why="must be positive")
    eps = sec.get("epsilon", float, 0.0, check=_nonneg, why="must be non-negative")
    beta = sec.get("beta", float, 0.5, check=_pos, why="must be positive")
    dich = deterministic_mode(gen.table, kappa, eps, beta, start=gen.start, tolerances=_tolerances(sc))
    write_csv(out / "projections.csv", ["sample", "n", "row", "col", "value"], _proj_rows(dich, 0))
    checks: list[dict] = []
    v = dich.meta["validation"]
    checks.append(_check(v["idempotence_defect"], 1e-8, "idempotence"))
    checks.append(_check(v["equivariance_defect"], 1e-8, "equivariance"))
    _expect_projection(sc, [dich], checks)
    return {"alpha_hat": dich.alpha, "kappa_tilde": dich.meta["kappa_tilde"], "certificate": dich.meta, "checks": checks}


def run_kac(sc: Scenario, out: Path, threads: int) -> dict:
    sec = sc.root.sub("kac")
    a, b = sec.floats("interval")
    n_ret = sec.get("n_returns", int, 100_000, check=lambda n: n >= 100, why="must be >= 100")
    tol = sec.get("tolerance", float, 0.05, check=_pos, why="must be positive")
    L = sec.get("L", float, 1.0, check=lambda x: x >= 1, why="must be >= 1")
    F = interval_predicate(a, b)
    w = _omegas(sc)[0]
    rc = build_return_cocycle(sc.cocycle, F, w, n_ret, seed=sc.seed)
    kac = kac_check(rc, tol)
    hist = kac_history(rc, [c for c in (1000, 10_000, 100_000, 1_000_000) if c <= n_ret])
    write_csv(out / "kac.csv", ["n", "mean_return", "kac_ratio"], [[h["n"], h["mean_return"], h["kac_ratio"]] for h in hist])
    consts = return_constants(L)
    checks = [dict(kac, name="kac")]
    res: dict[str, Any] = {"kac": kac, "history": hist, "constants": consts.to_dict()}
    if sec.has("stable_vectors"):
        V = np.array(sec.get("stable_vectors", list), dtype=float).T
        rc_dec = rc
        if sec.has("decay_interval"):
            da, db = sec.floats("decay_interval")
            rc_dec = build_return_cocycle(sc.cocycle, interval_predicate(da, db), w, n_ret, seed=sc.seed)
        dec = induced_decay_check(rc_dec, V, consts)
        checks.append(dict(dec, name="induced_decay"))
        res["induced_decay"] = dec
    res["checks"] = checks
    return res


RUNNERS = {
    "forward": run_forward,
    "detect": run_detect,
    "met": run_met,
    "roughness": run_roughness,
    "deterministic": run_deterministic,
    "kac": run_kac,
}


# --------------------------------------------------------------------------
# entry points


def _scenario_dir() -> Path:
    return Path(str(resources.files("tempdich") / "scenarios"))


def list_scenarios() -> list[tuple[str, str]]:
    out = []
    for p in sorted(_scenario_dir().glob("*.toml")):
        with open(p, "rb") as fh:
            data = tomllib.load(fh)
        out.append((p.stem, str(data.get("description", ""))))
    return out


def resolve(target: str) -> Path:
    p = Path(target)
    if p.exists():
        return p
    cand = _scenario_dir() / f"{target}.toml"
    if cand.exists():
        return cand
    raise ConfigError("<scenario>", f"no file or shipped scenario named {target!r}")


def run(target: str, out_dir: str | None = None, seed: int | None = None, threads: int = 1) -> tuple[int, dict]:
    """Run a scenario; returns ``(exit_code, report)`` and writes the report to disk."""
    t0 = time.perf_counter()
    report: dict[str, Any] = {"tool": "tempdich", "version": __version__}
    try:
        path = resolve(target)
        sc = load_scenario(path, seed)
    except ConfigError as e:
        return 1, {"error": "config", "field": e.field, "message": str(e)}
    out = Path(out_dir) if out_dir else Path("runs") / sc.name
    out.mkdir(parents=True, exist_ok=True)
    report.update(scenario={"name": sc.name, "file": str(path), "pipeline": sc.pipeline, "seed": sc.seed, "config": sc.root.data})
    code = 0
    try:
        res = RUNNERS[sc.pipeline](sc, out, threads)
        report["result"] = res
        failed = [c["name"] for c in res.get("checks", []) if not c.get("pass", False)]
        report["failed_checks"] = failed
        report["status"] = "pass" if not failed else "fail"
        code = 0 if not failed else 2
    except ConfigError as e:
        report.update(status="config_error", field=e.field, message=str(e))
        code = 1
    except CertificateFailure as e:
        report.update(status="certificate_failure", error=type(e).__name__, message=str(e), certificate=e.report)
        code = 2
    report["wall_time_s"] = time.perf_counter() - t0
    with open(out / "report.json", "w") as fh:
        json.dump(_jsonify(report), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return code, report


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="tempdich", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"tempdich {__version__}")
    subs = ap.add_subparsers(dest="cmd", required=True)
    r = subs.add_parser("run", help="run a scenario file or a shipped scenario by name")
    r.add_argument("scenario")
    r.add_argument("--out", default=None, help="output directory (default runs/<name>)")
    r.add_argument("--seed", type=int, default=None, help="override the scenario seed (unsigned 64-bit)")
    r.add_argument("--threads", type=int, default=1, help="worker threads for independent samples")
    subs.add_parser("list", help="list shipped scenarios")
    args = ap.parse_args(argv)
    if args.cmd == "list":
        for name, desc in list_scenarios():
            print(f"{name}\t{desc}")
        return 0
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 1
    if args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return 1
    code, rep = run(args.scenario, args.out, args.seed, args.threads)
    if code == 1:
        print(f"error: {rep.get('message')}", file=sys.stderr)
    else:
        status = rep.get("status")
        print(f"{rep['scenario']['name']}: {status} ({rep['wall_time_s']:.2f} s)")
        if status == "certificate_failure":
            print(f"  {rep['error']}: {rep['message']}")
        for name in rep.get("failed_checks", []):
            print(f"  failed check: {name}")
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
