"""Command-line entry points.

Exit codes: 0 when every contract checked by the subcommand passed, 1 on a
contract violation, 2 on a configuration error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import fields

from .harness import ExperimentConfig, run_experiment, write_outputs

_FRACTION_FIELDS = {"delta_skip"}


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="bvextend",
        description="Stopping-time approximation experiments on truncated dyadic half-spaces")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key = value config file; flags override it")
        p.add_argument("--seed", type=int)
        p.add_argument("--dim", type=int, dest="n")
        p.add_argument("--depth", type=int, dest="J")
        p.add_argument("--p", type=float)
        p.add_argument("--eps", type=float)
        p.add_argument("--trials", type=int)
        p.add_argument("--input-class", dest="input_class",
                       choices=("haar", "random-smooth", "spike", "lacunary"))
        p.add_argument("--out", dest="out_dir")

    pe = sub.add_parser("extend", help="stopping-time approximant and its measured ratios")
    common(pe)
    pe.add_argument("--iterate", action="store_true",
                    help="iterate on residuals (the exact-extension construction)")
    pe.add_argument("--iters", type=int, dest="K")

    pt = sub.add_parser("trace", help="boundary trace of the dyadic average extension")
    common(pt)

    ps = sub.add_parser("square", help="stopped square function sweeps")
    common(ps)
    ps.add_argument("--lambdas", help="comma-separated level-set heights")

    pc = sub.add_parser("counterexample", help="lacunary growth table")
    common(pc)
    pc.add_argument("--k", dest="k_range", help="range of generations, e.g. 2..8")

    pl = sub.add_parser("elliptic", help="solution approximation pipeline")
    common(pl)
    pl.add_argument("--backend", choices=("poisson", "fd"))
    pl.add_argument("--delta-skip", dest="delta_skip",
                    help="skip-grid scale ratio, a negative power of 2 (e.g. 1/16)")
    pl.add_argument("--a-thresh", type=float, dest="A_thresh")

    pf = sub.add_parser("functionals", help="aperture and dyadic-vs-nondyadic ratio reports")
    common(pf)
    pf.add_argument("--aperture", type=float)
    pf.add_argument("--aperture-beta", type=float, dest="aperture_beta")

    pv = sub.add_parser("verify", help="fast property-suite cross-section")
    common(pv)
    return ap


def _parse_delta_skip(text: str) -> int:
    """delta as 1/2^N (accepts '1/16' or '0.0625'); returns N."""
    if "/" in text:
        num, _, den = text.partition("/")
        val = float(num) / float(den)
    else:
        val = float(text)
    if val <= 0 or val >= 1:
        raise ValueError(f"delta-skip must lie in (0,1), got {text}")
    n = round(math.log2(1 / val))
    if abs(2.0 ** (-n) - val) > 1e-12:
        raise ValueError(f"delta-skip must be a negative power of 2, got {text}")
    return int(n)


def main(argv=None) -> int:
    ap = _build_parser()
    args = ap.parse_args(argv)
    try:
        cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
        field_names = {f.name for f in fields(ExperimentConfig)}
        for key, value in vars(args).items():
            if key in field_names and value is not None:
                setattr(cfg, key, value)
        if getattr(args, "delta_skip", None):
            cfg.N_skip = _parse_delta_skip(args.delta_skip)
        errs = cfg.validate()
        if errs:
            for e in errs:
                print(f"config error: {e}", file=sys.stderr)
            return 2
        command = args.command
        if command == "extend" and getattr(args, "iterate", False):
            command = "extend-iterate"
    except (ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    rows, summary, ok = run_experiment(command, cfg)
    paths = write_outputs(command, cfg, rows, summary, ok)
    print(json.dumps({"experiment": command, "contracts_ok": bool(ok),
                      "config_hash": cfg.digest(), **paths}, sort_keys=True))
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
