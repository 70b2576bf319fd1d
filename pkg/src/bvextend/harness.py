"""Experiment orchestration: configs, deterministic inputs, runners, reports.

Every experiment is driven by an ExperimentConfig; the same config always
produces bit-identical CSV/JSON artifacts.  Random inputs are generated
from the seed alone, trials fan out over a worker pool capped by the
BVEXTEND_THREADS environment variable, and results are aggregated in
trial order so scheduling cannot leak into the output.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .cubes import GeometryConfig, SkipGrid, unit_cube
from .functionals import (
    GridFunction,
    aperture_ratio_report,
    carleson_dyadic,
    carleson_of_gradient,
    dyadic_vs_nondyadic_report,
    lemma31_check,
    lp_norm,
    maximal_dyadic,
    nontangential_max_dyadic,
)
from .martingale import (
    build_approximant,
    dyadic_average_extension,
    gradient_measure,
    lacunary_function,
    localize,
)

SCHEMA_VERSION = 1

__all__ = [
    "ExperimentConfig",
    "ReportRow",
    "generate_inputs",
    "run_experiment",
    "write_outputs",
    "worker_count",
]

INPUT_CLASSES = ("haar", "random-smooth", "spike", "lacunary")


@dataclass
class ExperimentConfig:
    """Knobs shared by all subcommands; flags and config files mirror the fields."""

    seed: int = 0
    n: int = 1
    J: int = 8
    N_skip: int = 4
    p: float = 2.0
    eps: float = 0.5
    K: int = 10
    A_thresh: float = 2.0
    eta: float = 0.0
    aperture: float = 1.0
    aperture_beta: float = 2.0
    backend: str = "poisson"
    input_class: str = "random-smooth"
    trials: int = 1
    k_range: str = "2..8"
    lambdas: str = "0.125,0.25,0.5,1.0,2.0"
    out_dir: str = "bvextend-out"

    def validate(self) -> list[str]:
        errs = []
        if self.n not in (1, 2):
            errs.append(f"n must be 1 or 2, got {self.n}")
        if self.J < 1 or self.J > 16:
            errs.append(f"J must be in 1..16, got {self.J}")
        if self.N_skip < 1:
            errs.append(f"N_skip must be >= 1, got {self.N_skip}")
        if not 1 < self.p < float("inf"):
            errs.append(f"p must lie in (1, inf), got {self.p}")
        if not 0 < self.eps < 1:
            errs.append(f"eps must lie in (0, 1), got {self.eps}")
        if self.K < 1:
            errs.append(f"K must be >= 1, got {self.K}")
        if self.A_thresh <= 1:
            errs.append(f"A_thresh must exceed 1, got {self.A_thresh}")
        if self.backend not in ("poisson", "fd"):
            errs.append(f"backend must be poisson or fd, got {self.backend!r}")
        if self.input_class not in INPUT_CLASSES:
            errs.append(f"input_class must be one of {INPUT_CLASSES}, got {self.input_class!r}")
        if self.trials < 1:
            errs.append(f"trials must be >= 1, got {self.trials}")
        return errs

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    @staticmethod
    def from_file(path) -> "ExperimentConfig":
        """Flat 'key = value' text format with the exact field names."""
        cfg = ExperimentConfig()
        valid = {f.name: f.type for f in fields(ExperimentConfig)}
        casts = {int: int, float: float, str: str, "int": int, "float": float, "str": str}
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#")[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
                key, _, value = line.partition("=")
                key, value = key.strip(), value.strip()
                if key not in valid:
                    raise ValueError(f"{path}:{lineno}: unknown field {key!r}")
                cast = casts[valid[key]]
                try:
                    setattr(cfg, key, cast(value))
                except ValueError as exc:
                    raise ValueError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
        return cfg


@dataclass
class ReportRow:
    """One measured constant; the report tables are append-only lists of these."""

    experiment: str
    name: str
    value: float
    J: int
    trials: int

    def as_csv(self, config_hash: str) -> str:
        return f"{self.experiment},{self.name},{self.value!r},{self.J},{self.trials},{config_hash}"


CSV_HEADER = "experiment,name,value,J,trials,config_hash"


def worker_count() -> int:
    env = os.environ.get("BVEXTEND_THREADS", "")
    if env.strip():
        return max(1, int(env))
    return min(8, os.cpu_count() or 1)


def _trial_map(fn, trials: int):
    """Deterministic fan-out: results keyed and returned in trial order."""
    workers = worker_count()
    if workers == 1 or trials == 1:
        return [fn(t) for t in range(trials)]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, range(trials)))


# ---------------------------------------------------------------------------
# deterministic inputs


def generate_inputs(seed: int, input_class: str, n: int = 1, J: int = 8,
                    mean_zero: bool = False) -> GridFunction:
    """Seeded test data: haar, random-smooth, spike, or lacunary (n=1)."""
    if input_class not in INPUT_CLASSES:
        raise ValueError(f"unknown input class {input_class!r}")
    rng = np.random.default_rng((seed, INPUT_CLASSES.index(input_class)))
    shape = (2**J,) * n
    if input_class == "haar":
        vals = rng.choice([-1.0, 1.0], size=shape) * rng.uniform(0.5, 1.5, size=shape)
    elif input_class == "random-smooth":
        kmax = 12
        xs = (np.arange(2**J) + 0.5) * 2.0 ** (-J)
        amp = rng.normal(size=(kmax,) * n) / _freq_weights(kmax, n)
        phase = rng.uniform(0, 2 * np.pi, size=(kmax,) * n)
        if n == 1:
            vals = np.zeros(2**J)
            for k in range(kmax):
                vals += amp[k] * np.cos(2 * np.pi * (k + 1) * xs + phase[k])
        else:
            vals = np.zeros(shape)
            for k1 in range(kmax):
                for k2 in range(kmax):
                    vals += amp[k1, k2] * np.cos(2 * np.pi * ((k1 + 1) * xs[:, None] +
                                                              (k2 + 1) * xs[None, :]) + phase[k1, k2])
    elif input_class == "spike":
        vals = np.zeros(shape)
        idx = tuple(rng.integers(0, 2**J) for _ in range(n))
        vals[idx] = 2.0 ** (n * J / 2)
    else:  # lacunary
        if n != 1:
            raise ValueError("the lacunary class is one-dimensional")
        k = min(J - 1, 2 + seed % max(1, J - 2))
        vals = lacunary_function(k, J)[0].values
    g = GridFunction(n, J, vals)
    if mean_zero:
        g = GridFunction(n, J, g.values - g.mean())
    return g


def _freq_weights(kmax: int, n: int) -> np.ndarray:
    w1 = (1 + np.arange(kmax)) ** 1.2
    if n == 1:
        return w1
    return np.outer(w1, w1)


# ---------------------------------------------------------------------------
# experiment runners (each returns rows, summary, contracts_ok)


def _run_extend(cfg: ExperimentConfig):
    rows, worst = [], {"closeness": 0.0, "carleson_t": 0.0, "carleson_full": 0.0}

    def one(trial):
        g = generate_inputs(cfg.seed + trial, cfg.input_class, cfg.n, cfg.J, mean_zero=True)
        _, fam, rep = build_approximant(g, cfg.eps, p_values=(cfg.p,))
        return rep, len(fam)

    results = _trial_map(one, cfg.trials)
    sizes = []
    for rep, size in results:
        worst["closeness"] = max(worst["closeness"], rep.closeness_ratio)
        worst["carleson_t"] = max(worst["carleson_t"], rep.carleson_t_ratio)
        worst["carleson_full"] = max(worst["carleson_full"], rep.carleson_full_ratio)
        sizes.append(size)
    for name, value in worst.items():
        rows.append(ReportRow("extend", f"max_{name}_ratio", value, cfg.J, cfg.trials))
    rows.append(ReportRow("extend", "mean_family_size", float(np.mean(sizes)), cfg.J, cfg.trials))
    ok = worst["closeness"] <= cfg.eps + 1e-12
    summary = {"worst_ratios": worst, "eps": cfg.eps, "contract_closeness_le_eps": ok}
    return rows, summary, ok


def _run_extend_iterate(cfg: ExperimentConfig):
    from .extension import iterate_extension, trace_whitney

    rows = []
    worst_resid, worst_trace = 0.0, 0.0

    def one(trial):
        g = generate_inputs(cfg.seed + trial, cfg.input_class, cfg.n, cfg.J)
        res = iterate_extension(g, cfg.eps, cfg.K, cfg.p)
        tr, _ = trace_whitney(res.total)
        num = lp_norm(tr - g, cfg.p)
        den = lp_norm(g, cfg.p)
        return res.residual_norms[-1] / max(den, 1e-300), num / max(den, 1e-300)

    results = _trial_map(one, cfg.trials)
    for resid, tr_err in results:
        worst_resid = max(worst_resid, resid)
        worst_trace = max(worst_trace, tr_err)
    rows.append(ReportRow("extend-iterate", "max_residual_rel", worst_resid, cfg.J, cfg.trials))
    rows.append(ReportRow("extend-iterate", "max_trace_err_rel", worst_trace, cfg.J, cfg.trials))
    bound = cfg.eps**cfg.K + 1e-10
    ok = worst_resid <= bound and worst_trace <= bound
    return rows, {"bound": bound, "max_residual": worst_resid, "max_trace_err": worst_trace}, ok


def _run_trace(cfg: ExperimentConfig):
    from .extension import trace_whitney

    g = generate_inputs(cfg.seed, cfg.input_class, cfg.n, cfg.J)
    u = dyadic_average_extension(g)
    tr, incs = trace_whitney(u)
    err = float(np.abs(tr.values - g.values).max())
    rows = [ReportRow("trace", "extension_trace_exact_err", err, cfg.J, 1),
            ReportRow("trace", "max_scale_increment", float(incs.max()) if incs.size else 0.0,
                      cfg.J, 1)]
    return rows, {"trace_error": err}, err == 0.0


def _run_square(cfg: ExperimentConfig):
    from .square import l2_bound_check, random_family, stopped_square, weak_l1_probe

    lambdas = [float(s) for s in cfg.lambdas.split(",") if s.strip()]
    rows = []
    ok = True
    sweep = []

    def one(trial):
        g = generate_inputs(cfg.seed + trial, cfg.input_class, cfg.n, cfg.J)
        fam = random_family(cfg.n, cfg.J, cfg.seed + 1000 + trial)
        lhs, rhs = l2_bound_check(g, fam)
        probes = [weak_l1_probe(g, fam, lam) for lam in lambdas]
        return lhs, rhs, probes

    results = _trial_map(one, cfg.trials)
    worst_excess = -np.inf
    for t, (lhs, rhs, probes) in enumerate(results):
        worst_excess = max(worst_excess, lhs - rhs)
        ok = ok and lhs <= rhs * (1 + 1e-10)
        for lam, (measure, bound) in zip(lambdas, probes):
            sweep.append((t, lam, measure, bound))
    rows.append(ReportRow("square", "max_l2_excess", float(worst_excess), cfg.J, cfg.trials))
    for lam in lambdas:
        ms = [m for (_, l, m, _) in sweep if l == lam]
        bs = [b for (_, l, _, b) in sweep if l == lam]
        ratio = max((m / b if b > 0 else 0.0) for m, b in zip(ms, bs))
        rows.append(ReportRow("square", f"weak11_ratio_lambda_{lam}", ratio, cfg.J, cfg.trials))
    summary = {"l2_contract_ok": ok,
               "sweep": [{"trial": t, "lambda": l, "measure": m, "bound": b}
                         for (t, l, m, b) in sweep]}
    return rows, summary, ok


def _run_counterexample(cfg: ExperimentConfig):
    lo, _, hi = cfg.k_range.partition("..")
    ks = list(range(int(lo), int(hi or lo) + 1))
    rows, table = [], []
    prev_ratio = -np.inf
    mono = True
    for k in ks:
        _, rep = lacunary_function(k, cfg.J)
        l2 = rep["l2_sq"] ** 0.5
        ratio = rep["min_carleson"] / l2
        mono = mono and ratio > prev_ratio
        prev_ratio = ratio
        table.append({"k": k, "l2_norm": l2, "min_carleson": rep["min_carleson"],
                      "carleson_over_k": rep["min_carleson"] / k})
        rows.append(ReportRow("counterexample", f"min_carleson_k{k}", rep["min_carleson"],
                              cfg.J, 1))
    exact = all(abs(row["l2_norm"] ** 2 - (row["k"] + 1)) < 1e-9 for row in table)
    ok = exact and mono
    return rows, {"table": table, "l2_identity_ok": exact, "ratio_monotone": mono}, ok


def _run_elliptic(cfg: ExperimentConfig):
    from .elliptic import run_pipeline

    rows = []
    packing = {"P": 0.0, "S": 0.0, "R": 0.0}
    worst_close, worst_l53 = 0.0, 0.0
    sparse_all = True

    def one(trial):
        g = generate_inputs(cfg.seed + trial, cfg.input_class, 1, cfg.J)
        res = run_pipeline(g, skip=cfg.N_skip, eps=cfg.eps, backend=cfg.backend,
                           a_thresh=cfg.A_thresh)
        return res.report

    reports = _trial_map(one, cfg.trials)
    for rep in reports:
        worst_close = max(worst_close, rep.closeness_max)
        worst_l53 = max(worst_l53, rep.lemma53_max)
        sparse_all = sparse_all and rep.sparse_ok
        for fam in packing:
            packing[fam] = max(packing[fam], rep.packing[fam])
    for fam, v in packing.items():
        rows.append(ReportRow("elliptic", f"packing_{fam}", v, cfg.J, cfg.trials))
    rows.append(ReportRow("elliptic", "max_closeness", worst_close, cfg.J, cfg.trials))
    rows.append(ReportRow("elliptic", "max_lemma53", worst_l53, cfg.J, cfg.trials))
    rows.append(ReportRow("elliptic", "c_eps_max",
                          max(rep.c_eps for rep in reports), cfg.J, cfg.trials))
    ok = worst_close <= 1.0 + 1e-10 and sparse_all
    summary = {"packing": packing, "max_closeness": worst_close,
               "max_lemma53": worst_l53, "sparse_ok": sparse_all,
               "counts": [rep.counts for rep in reports]}
    return rows, summary, ok


def _run_functionals(cfg: ExperimentConfig):
    g = generate_inputs(cfg.seed, cfg.input_class, cfg.n, cfg.J)
    u = dyadic_average_extension(g)
    rep_ap = aperture_ratio_report(u, cfg.aperture, cfg.aperture_beta, cfg.p)
    rep_dn = dyadic_vs_nondyadic_report(u, cfg.p,
                                        GeometryConfig(aperture=cfg.aperture))
    rows = [ReportRow("functionals", k, v, cfg.J, 1)
            for k, v in {**rep_ap, **rep_dn}.items()]
    ok = all(np.isfinite(v) and v > 0 for v in {**rep_ap, **rep_dn}.values())
    return rows, {"aperture": rep_ap, "dyadic_vs_nondyadic": rep_dn}, ok


def _run_verify(cfg: ExperimentConfig):
    """A fast cross-section of the property suite on seeded data."""
    from .square import l2_bound_check, random_family

    checks = {}
    # the empty-input corner: all functionals vanish on g = 0
    g0 = GridFunction(cfg.n, cfg.J, np.zeros((2**cfg.J,) * cfg.n))
    u0 = dyadic_average_extension(g0)
    checks["zero_corner"] = (float(maximal_dyadic(g0).values.max()) == 0.0
                             and float(carleson_dyadic(u0).values.max()) == 0.0
                             and float(nontangential_max_dyadic(u0).values.max()) == 0.0)
    g = generate_inputs(cfg.seed, cfg.input_class, cfg.n, cfg.J, mean_zero=True)
    # pointwise closeness
    _, _, rep = build_approximant(g, cfg.eps, p_values=(cfg.p,))
    checks["closeness_le_eps"] = rep.closeness_ratio <= cfg.eps + 1e-12
    # lemma 3.1 on a sample of cubes
    gabs = GridFunction(cfg.n, cfg.J, np.abs(g.values) + 0.1)
    worst = 0.0
    for q in (unit_cube(cfg.n),):
        lhs, rhs = lemma31_check(gabs, q)
        worst = max(worst, lhs - rhs)
    checks["lemma31_top"] = worst <= 1e-12
    # stopped square function L2 bound
    lhs, rhs = l2_bound_check(g, random_family(cfg.n, cfg.J, cfg.seed + 5))
    checks["stopped_sf_l2"] = lhs <= rhs * (1 + 1e-10)
    # weak (1,1) for the maximal function with constant one
    md = maximal_dyadic(g)
    lam = float(np.quantile(md.values, 0.7)) + 1e-9
    measure = float((md.values > lam).mean())
    checks["weak11_constant_one"] = measure <= lp_norm(g, 1.0) / lam + 1e-12
    rows = [ReportRow("verify", name, float(val), cfg.J, 1) for name, val in checks.items()]
    return rows, {"checks": checks}, all(checks.values())


RUNNERS = {
    "extend": _run_extend,
    "extend-iterate": _run_extend_iterate,
    "trace": _run_trace,
    "square": _run_square,
    "counterexample": _run_counterexample,
    "elliptic": _run_elliptic,
    "functionals": _run_functionals,
    "verify": _run_verify,
}


def run_experiment(subcommand: str, cfg: ExperimentConfig):
    """Dispatch one subcommand; returns (rows, summary dict, contracts_ok)."""
    if subcommand not in RUNNERS:
        raise ValueError(f"unknown subcommand {subcommand!r}")
    return RUNNERS[subcommand](cfg)


def write_outputs(subcommand: str, cfg: ExperimentConfig, rows, summary, ok) -> dict:
    """JSON summary plus a flat CSV table, both carrying the config hash."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h = cfg.digest()
    payload = {
        "schema_version": SCHEMA_VERSION,
        "experiment": subcommand,
        "config": asdict(cfg),
        "config_hash": h,
        "contracts_ok": bool(ok),
        "summary": summary,
        "rows": [asdict(r) for r in rows],
    }
    jpath = out / f"{subcommand}-{h}.json"
    with open(jpath, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1, default=float)
        fh.write("\n")
    cpath = out / f"{subcommand}-{h}.csv"
    with open(cpath, "w") as fh:
        fh.write(CSV_HEADER + "\n")
        for r in rows:
            fh.write(r.as_csv(h) + "\n")
    return {"json": str(jpath), "csv": str(cpath)}
