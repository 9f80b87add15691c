"""Command-line entry point: ``ampmmv {gen,solve,sks,sweep,selftest}``.

Configuration comes from an optional JSON file with sections ``gen``,
``params``, ``solver`` and ``sweep``; every field of each section can be
overridden by a flag named ``--<section>-<field>`` (underscores become dashes).
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import io
from .bench import SweepSpec, run_sweep, write_sweep
from .em_tuner import initial_params
from .metrics import MetricError, estimate_support, nser, tnmse, to_db
from .mmv_engine import SolverConfig, solve
from .signal_model import GenConfig, ModelParams, generate_instance, rho_for_variance
from .sks_oracle import sks_smooth

log = logging.getLogger("ampmmv")


def _scalar(text: str):
    z = complex(text.replace(" ", ""))
    return z.real if z.imag == 0 else z


def _bool(text: str) -> bool:
    t = text.lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _opt(kind):
    def parse(text):
        return None if text.lower() in ("none", "null") else kind(text)
    return parse


def _floats(text):
    return [float(v) for v in text.split(",") if v]


def _words(text):
    return tuple(v for v in text.split(",") if v)


# every overridable field, by section: name -> (parser, default)
SECTIONS = {
    "params": {
        "lam": (float, 0.1), "zeta": (_scalar, 0.0), "alpha": (float, 0.1),
        "rho": (_opt(float), None), "sigma_e2": (float, 1e-3),
    },
    "gen": {
        "N": (int, 1000), "M": (int, 313), "T": (int, 4), "snr_db": (_opt(float), 25.0),
        "beta": (float, 0.0), "matrix_kind": (str, "iid-gaussian-unit-columns"),
        "is_complex": (_bool, False), "support_size": (_opt(int), None),
    },
    "solver": {f.name: (_bool if isinstance(f.default, bool) else type(f.default), f.default)
               for f in dataclasses.fields(SolverConfig) if f.name != "seed"},
    "sweep": {
        "swept_parameter": (str, "M_over_K"), "grid": (_floats, [2.0]), "trials": (int, 50),
        "algorithms": (_words, ("amp-mmv", "sks")), "support_rule": (str, "posterior-threshold"),
        "amp_params": (str, "em"), "workers": (int, 1), "single_threaded": (_bool, True),
    },
}


def _flag(section, name):
    return f"--{section}-{name}".replace("_", "-")


def _dest(section, name):
    return f"{section}__{name}"


def add_config_flags(parser, sections):
    for sec in sections:
        group = parser.add_argument_group(f"{sec} overrides")
        for name, (kind, default) in SECTIONS[sec].items():
            group.add_argument(_flag(sec, name), dest=_dest(sec, name), type=kind, default=None,
                               help=f"default: {default}")


def resolve_config(args, sections) -> dict:
    """Defaults, then the JSON file, then flags."""
    cfg = {sec: {k: d for k, (_, d) in SECTIONS[sec].items()} for sec in sections}
    if getattr(args, "config", None):
        loaded = json.loads(Path(args.config).read_text())
        for sec, vals in loaded.items():
            if sec not in cfg:
                continue
            unknown = set(vals) - set(SECTIONS[sec])
            if unknown:
                raise SystemExit(f"unknown {sec} fields in config: {sorted(unknown)}")
            cfg[sec].update(vals)
    for sec in sections:
        for name in SECTIONS[sec]:
            v = getattr(args, _dest(sec, name), None)
            if v is not None:
                cfg[sec][name] = v
    return cfg


def build_params(d: dict) -> ModelParams:
    zeta = d["zeta"]
    if isinstance(zeta, list):
        zeta = complex(*zeta)
    rho = d["rho"] if d.get("rho") is not None else rho_for_variance(d["alpha"])
    return ModelParams(lam=d["lam"], zeta=zeta, alpha=d["alpha"], rho=rho,
                       sigma_e2=d["sigma_e2"])


def build_gen(cfg: dict, seed: int) -> GenConfig:
    return GenConfig(params=build_params(cfg["params"]), seed=seed, **cfg["gen"])


def build_solver(cfg: dict, seed: int = 0) -> SolverConfig:
    return SolverConfig(seed=seed, **cfg["solver"])


def _json_ready(o):
    if isinstance(o, complex):
        return [o.real, o.imag]
    if isinstance(o, tuple):
        return list(o)
    return o


def _dump(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_ready))


# ---------------------------------------------------------------- subcommands

def cmd_gen(args) -> int:
    cfg = resolve_config(args, ("params", "gen"))
    problem, truth, used = generate_instance(build_gen(cfg, args.seed))
    io.save_instance(args.out, problem, truth, used, seed=args.seed,
                     extra={"config": {k: {n: _json_ready(v) for n, v in s.items()}
                                       for k, s in cfg.items()}})
    print(f"wrote instance N={problem.dims[0]} M={problem.dims[1]} T={problem.dims[2]} "
          f"K={truth.K} to {args.out}")
    return 0


def _metrics(truth, x_hat, s_hat):
    out = {}
    if truth is None:
        return out
    try:
        out["tnmse"] = tnmse(truth.signals, x_hat)
        out["tnmse_db"] = to_db(out["tnmse"])
        if s_hat is not None:
            out["nser"] = nser(truth.support, s_hat)
    except MetricError as err:
        out["metric_error"] = str(err)
    return out


def cmd_solve(args) -> int:
    cfg = resolve_config(args, ("solver",))
    problem, truth, params, _ = io.load_instance(args.instance)
    if args.params == "true":
        if params is None:
            raise SystemExit("instance header carries no parameters; use --params em")
        p0, solver = params, build_solver(cfg, args.seed)
    else:
        p0 = initial_params(problem)
        solver = dataclasses.replace(build_solver(cfg, args.seed), em_enabled=True)
    t0 = time.perf_counter()
    summary, diag, p_final = solve(problem, p0, solver)
    runtime = time.perf_counter() - t0
    out = Path(args.out)
    io.save_arrays(out, {"x_mean": summary.x_mean, "x_var": summary.x_var,
                         "s_post": summary.s_post, "theta_mean": summary.theta_mean,
                         "theta_var": summary.theta_var},
                   {"params": p_final.to_dict()})
    K = truth.K if truth is not None else None
    s_hat = estimate_support(summary, args.support_rule, K) if (
        truth is not None and truth.K > 0) else None
    metrics = {"runtime_s": runtime, **_metrics(truth, summary.x_mean, s_hat),
               "params": p_final.to_dict(), "support_rule": args.support_rule}
    _dump(out / "metrics.json", metrics)
    (out / "diagnostics.jsonl").write_text(diag.to_jsonl())
    print(json.dumps({k: v for k, v in metrics.items() if k != "params"}))
    return 0


def cmd_sks(args) -> int:
    problem, truth, params, _ = io.load_instance(args.instance)
    if truth is None or params is None:
        raise SystemExit("the smoother needs an instance with ground truth and parameters")
    t0 = time.perf_counter()
    res = sks_smooth(problem, truth.support, params)
    runtime = time.perf_counter() - t0
    out = Path(args.out)
    io.save_arrays(out, {"theta_hat": res.theta_hat, "theta_cov_diag": res.theta_cov_diag,
                         "x_hat": res.x_hat})
    metrics = {"runtime_s": runtime, **_metrics(truth, res.x_hat, None),
               "diagnostics": res.diagnostics}
    _dump(out / "metrics.json", metrics)
    print(json.dumps(metrics))
    return 0


def cmd_sweep(args) -> int:
    cfg = resolve_config(args, ("params", "gen", "solver", "sweep"))
    spec = SweepSpec(base=build_gen(cfg, 0), solver=build_solver(cfg), seed=args.seed,
                     **{k: (list(v) if k == "grid" else v) for k, v in cfg["sweep"].items()})

    def progress(done, total):
        if args.verbose:
            print(f"\r{done}/{total} trials", end="", file=sys.stderr, flush=True)

    result = run_sweep(spec, progress)
    if args.verbose:
        print(file=sys.stderr)
    write_sweep(result, args.out)
    for a in result.aggregate:
        print(f"{a['grid_value']:>8} {a['algorithm']:8s} TNMSE {a['tnmse_mean_db']:8.2f} dB  "
              f"NSER {a['nser_mean']:.3f}  failures {a['failures']}"
              + ("  FLAGGED" if a["flagged"] else ""))
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run_selftest
    ok = run_selftest(seed=args.seed, trials=args.trials, stream=sys.stdout)
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ampmmv", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="draw a synthetic instance into a directory")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--config")
    add_config_flags(p, ("params", "gen"))
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("solve", help="run AMP-MMV on an instance directory")
    p.add_argument("instance")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config")
    p.add_argument("--params", choices=("em", "true"), default="em",
                   help="learn parameters by EM from the default start, or use the stored ones")
    p.add_argument("--support-rule", default="posterior-threshold",
                   choices=("posterior-threshold", "k-largest"))
    add_config_flags(p, ("solver",))
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sks", help="support-aware smoother on an instance directory")
    p.add_argument("instance")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sks)

    p = sub.add_parser("sweep", help="run a seeded experiment sweep")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--config")
    add_config_flags(p, ("params", "gen", "solver", "sweep"))
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("selftest", help="oracle-equivalence checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=20)
    p.set_defaults(func=cmd_selftest)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
