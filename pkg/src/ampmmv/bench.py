"""Seeded experiment sweeps over synthetic instances.

Each (grid point, trial) pair draws its own instance from a seed derived from
``(spec.seed, grid index, trial index)``, so serial and pooled execution give
identical tables.  Wall-clock timings live in a separate table because they
cannot be reproduced bit for bit.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .em_tuner import initial_params
from .exact_oracle import enumerate_mmse
from .metrics import MetricError, estimate_support, nser, tnmse, to_db
from .mmv_engine import SolverConfig, solve
from .signal_model import GenConfig, ModelParams, generate_instance
from .sks_oracle import sks_smooth

log = logging.getLogger(__name__)

SWEEPABLE = ("M_over_K", "T", "snr_db", "N_over_M", "N", "beta")
ALGORITHMS = ("amp-mmv", "sks", "enum")
FAIL_FLAG_FRACTION = 0.2

RESULT_COLUMNS = ["grid_value", "algorithm", "trial", "seed", "status", "tnmse", "tnmse_db",
                  "nser", "K", "sigma_e2_true", "lam_hat", "sigma_e2_hat"]
TIMING_COLUMNS = ["grid_value", "algorithm", "trial", "runtime_s"]
AGG_COLUMNS = ["grid_value", "algorithm", "trials", "failures", "flagged", "tnmse_mean",
               "tnmse_mean_db", "tnmse_db_mean", "tnmse_db_se", "nser_mean", "nser_se"]


@dataclass
class SweepSpec:
    swept_parameter: str
    grid: list
    base: GenConfig
    trials: int = 50
    algorithms: tuple = ("amp-mmv", "sks")
    support_rule: str = "posterior-threshold"
    seed: int = 0
    solver: SolverConfig = field(default_factory=SolverConfig)
    amp_params: str = "em"     # "em": learn from the default initialization; "true": oracle values
    workers: int = 1
    single_threaded: bool = True

    def __post_init__(self):
        if self.swept_parameter not in SWEEPABLE:
            raise ValueError(f"swept_parameter must be one of {SWEEPABLE}")
        if len(self.grid) == 0:
            raise ValueError("grid must be nonempty")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        bad = set(self.algorithms) - set(ALGORITHMS)
        if bad:
            raise ValueError(f"unknown algorithms {sorted(bad)}")
        if self.support_rule not in ("k-largest", "posterior-threshold"):
            raise ValueError(f"unknown support rule {self.support_rule!r}")
        if self.amp_params not in ("em", "true"):
            raise ValueError("amp_params must be 'em' or 'true'")

    def to_dict(self) -> dict:
        base = {k: v for k, v in asdict(self.base).items() if k not in ("params", "operator_factory")}
        base["params"] = self.base.params.to_dict()
        return {
            "swept_parameter": self.swept_parameter, "grid": list(self.grid),
            "base": base, "trials": self.trials, "algorithms": list(self.algorithms),
            "support_rule": self.support_rule, "seed": self.seed,
            "solver": asdict(self.solver), "amp_params": self.amp_params,
            "workers": self.workers, "single_threaded": self.single_threaded,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SweepSpec":
        d = dict(d)
        base = dict(d.pop("base"))
        base["params"] = ModelParams.from_dict(base["params"])
        d["base"] = GenConfig(**base)
        d["solver"] = SolverConfig(**d.get("solver", {}))
        d["algorithms"] = tuple(d.get("algorithms", ("amp-mmv", "sks")))
        return cls(**d)


def trial_seed(seed: int, grid_index: int, trial: int) -> int:
    ss = np.random.SeedSequence([int(seed), int(grid_index), int(trial)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def configure(base: GenConfig, swept: str, value) -> GenConfig:
    """The generator config of one grid point.

    ``M_over_K`` moves the activity rate (and an exact support size, if set) at fixed
    N and M.  ``N_over_M`` moves M at fixed N keeping the base M/K.  ``N`` moves N
    keeping N/M and the activity rate.
    """
    p = base.params
    lam = float(np.mean(p.lam_vector(base.N)))
    if swept == "M_over_K":
        K = base.M / float(value)
        cfg = replace(base, params=p.replace(lam=K / base.N))
        if base.support_size is not None:
            cfg = replace(cfg, support_size=int(round(K)))
        return cfg
    if swept == "N_over_M":
        M = max(1, int(round(base.N / float(value))))
        return replace(base, M=M, params=p.replace(lam=lam * M / base.M))
    if swept == "N":
        N = int(value)
        M = max(1, int(round(N * base.M / base.N)))
        return replace(base, N=N, M=M)
    if swept == "T":
        return replace(base, T=int(value))
    if swept == "snr_db":
        return replace(base, snr_db=float(value))
    if swept == "beta":
        return replace(base, beta=float(value))
    raise ValueError(swept)


class _Posterior:
    def __init__(self, x_mean, s_post):
        self.x_mean, self.s_post = x_mean, s_post


def _row(value, alg, trial, seed, truth, used):
    return {"grid_value": value, "algorithm": alg, "trial": trial, "seed": seed,
            "status": "ok", "tnmse": math.nan, "tnmse_db": math.nan, "nser": math.nan,
            "K": int(truth.K), "sigma_e2_true": float(used.sigma_e2),
            "lam_hat": math.nan, "sigma_e2_hat": math.nan}


def run_trial(spec: SweepSpec, grid_index: int, trial: int):
    """Run every requested algorithm on one instance; returns (rows, timings)."""
    value = spec.grid[grid_index]
    seed = trial_seed(spec.seed, grid_index, trial)
    gen = replace(configure(spec.base, spec.swept_parameter, value), seed=seed)
    problem, truth, used = generate_instance(gen)
    rows, timings = [], []
    for alg in spec.algorithms:
        row = _row(value, alg, trial, seed, truth, used)
        elapsed = math.nan
        try:
            t0 = time.perf_counter()
            if alg == "amp-mmv":
                if spec.amp_params == "em":
                    p0 = initial_params(problem)
                    cfg = replace(spec.solver, em_enabled=True, seed=seed)
                else:
                    p0, cfg = used, replace(spec.solver, em_enabled=False, seed=seed)
                summary, _, p_final = solve(problem, p0, cfg)
                elapsed = time.perf_counter() - t0
                x_hat, post = summary.x_mean, summary
                row["lam_hat"] = float(np.mean(p_final.lam_vector(gen.N)))
                row["sigma_e2_hat"] = float(p_final.sigma_e2)
            elif alg == "sks":
                out = sks_smooth(problem, truth.support, used)
                elapsed = time.perf_counter() - t0
                x_hat = out.x_hat
                post = _Posterior(x_hat, truth.support.astype(float))
            else:
                res = enumerate_mmse(problem, used)
                elapsed = time.perf_counter() - t0
                x_hat = res.x_mmse
                post = _Posterior(x_hat, res.support_post)
            row["tnmse"] = tnmse(truth.signals, x_hat)
            row["tnmse_db"] = to_db(row["tnmse"])
            if truth.K > 0:
                s_hat = estimate_support(post, spec.support_rule, truth.K)
                row["nser"] = nser(truth.support, s_hat)
        except MetricError as err:
            row["status"] = f"undefined-metric: {err}"
        except Exception as err:  # per-trial failures are data, not fatal
            log.warning("trial %s/%s %s failed: %s", grid_index, trial, alg, err)
            row["status"] = f"failed: {type(err).__name__}: {err}"
        rows.append(row)
        timings.append({"grid_value": value, "algorithm": alg, "trial": trial,
                        "runtime_s": elapsed})
    return rows, timings


def _run_task(args):
    spec, gi, trial = args
    if spec.single_threaded:
        from threadpoolctl import threadpool_limits
        with threadpool_limits(limits=1):
            return run_trial(spec, gi, trial)
    return run_trial(spec, gi, trial)


@dataclass
class SweepResult:
    rows: list
    timings: list
    aggregate: list
    spec: SweepSpec

    def table(self, algorithm: str, column: str = "tnmse_mean_db") -> dict:
        return {a["grid_value"]: a[column] for a in self.aggregate if a["algorithm"] == algorithm}


def aggregate(rows, timings, spec: SweepSpec) -> list:
    out = []
    for value in spec.grid:
        for alg in spec.algorithms:
            sel = [r for r in rows if r["grid_value"] == value and r["algorithm"] == alg]
            ok = [r for r in sel if r["status"] == "ok"]
            tim = [t["runtime_s"] for t in timings
                   if t["grid_value"] == value and t["algorithm"] == alg
                   and math.isfinite(t["runtime_s"])]
            failures = len(sel) - len(ok)
            tn = np.array([r["tnmse"] for r in ok])
            db = np.array([r["tnmse_db"] for r in ok])
            ns = np.array([r["nser"] for r in ok if math.isfinite(r["nser"])])
            out.append({
                "grid_value": value, "algorithm": alg, "trials": len(sel),
                "failures": failures,
                "flagged": failures > FAIL_FLAG_FRACTION * len(sel),
                "tnmse_mean": _mean(tn), "tnmse_mean_db": to_db(_mean(tn)) if len(tn) else math.nan,
                "tnmse_db_mean": _mean(db), "tnmse_db_se": _se(db),
                "nser_mean": _mean(ns), "nser_se": _se(ns),
                "runtime_mean_s": _mean(np.array(tim)),
            })
    return out


def _mean(a) -> float:
    return float(np.mean(a)) if len(a) else math.nan


def _se(a) -> float:
    return float(np.std(a, ddof=1) / np.sqrt(len(a))) if len(a) > 1 else math.nan


def run_sweep(spec: SweepSpec, progress=None) -> SweepResult:
    tasks = [(spec, gi, tr) for gi in range(len(spec.grid)) for tr in range(spec.trials)]
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            results = list(pool.map(_run_task, tasks))
    else:
        results = []
        for task in tasks:
            results.append(_run_task(task))
            if progress:
                progress(len(results), len(tasks))
    rows = [r for rs, _ in results for r in rs]
    timings = [t for _, ts in results for t in ts]
    return SweepResult(rows, timings, aggregate(rows, timings, spec), spec)


def _write_csv(path: Path, columns, records):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in records:
            w.writerow({k: r[k] for k in columns})


def write_sweep(result: SweepResult, out_dir) -> Path:
    """Write results.csv, aggregate.csv, timings.csv and manifest.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "results.csv", RESULT_COLUMNS, result.rows)
    _write_csv(out / "aggregate.csv", AGG_COLUMNS, result.aggregate)
    _write_csv(out / "timings.csv", TIMING_COLUMNS, result.timings)
    manifest = {"spec": result.spec.to_dict(),
                "files": ["results.csv", "aggregate.csv", "timings.csv"],
                "flagged": [[a["grid_value"], a["algorithm"]] for a in result.aggregate
                            if a["flagged"]]}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return out
