"""Command-line entry point.

Exit codes: 0 success, 2 config error, 3 numerical failure, 4 stale or
corrupted pipeline outputs. ``repro`` exits 1 when it completes but an
acceptance verdict fails.
"""
from __future__ import annotations

import argparse
import logging
import sys

from . import __version__
from .config import SOURCES, resolve_config
from .errors import ConfigError, DimensionError, NumericalError, StaleManifestError

EXIT_OK, EXIT_VERDICT, EXIT_CONFIG, EXIT_NUMERIC, EXIT_STALE = 0, 1, 2, 3, 4
REPRO_STAGES = ("gen", "label", "train_tail", "train_nnilc", "eval")


def build_parser():
    p = argparse.ArgumentParser(prog="taililc", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--config", default="desk", help="config JSON path or bundled name (desk, full_scale)")
    p.add_argument("--jobs", type=int, default=1, help="worker threads within a stage")
    p.add_argument("--force", action="store_true", help="replace outputs made from a different config")
    p.add_argument("--out", default=None, help="output directory (overrides the config)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)
    sub.add_parser("gen", help="generate the trajectory class")
    sub.add_parser("label", help="run the expert ILC on every trajectory")
    t = sub.add_parser("train", help="train a student policy")
    t.add_argument("--which", choices=("tail", "nnilc"), required=True)
    e = sub.add_parser("eval", help="closed-loop evaluation and report")
    e.add_argument("--sources", nargs="+", choices=SOURCES, default=None)
    r = sub.add_parser("repro", help="run the pipeline end to end and print acceptance verdicts")
    r.add_argument("--stage", choices=REPRO_STAGES, default="gen", help="resume from this stage")
    r.add_argument("--timing-repeats", type=int, default=0,
                   help="retrain students this many times for the timing verdict (0: use recorded times)")
    return p


def _report(res):
    print(f"{res.stage}: {res.status}")
    for k, v in res.info.items():
        if not isinstance(v, (dict, list)):
            print(f"  {k}: {v}")


def _label_summary(pipe):
    from . import io

    s = io.read_json(pipe.root / "data" / "label_summary.json")
    print(f"  convergence margin: {s['margin']:.6f}")
    counts = sorted(s["trials"].items(), key=lambda kv: int(kv[0]))
    print("  trials per trajectory: " + ", ".join(f"{k}:{v}" for k, v in counts))


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        from .pipeline import Pipeline

        cfg = resolve_config(args.config)
        pipe = Pipeline(cfg, jobs=args.jobs, force=args.force, out_dir=args.out)
        if args.cmd == "gen":
            _report(pipe.run_stage("gen"))
        elif args.cmd == "label":
            _report(pipe.run_stage("label"))
            _label_summary(pipe)
        elif args.cmd == "train":
            _report(pipe.run_stage(f"train_{args.which}"))
        elif args.cmd == "eval":
            res = pipe.run_stage("eval", sources=args.sources)
            _report(res)
            print(f"  report: {pipe.root / 'report'}")
        elif args.cmd == "repro":
            from .acceptance import run_checks

            for res in pipe.repro(args.stage):
                _report(res)
            verdicts = run_checks(pipe, timing_repeats=args.timing_repeats)
            for v in verdicts:
                print(v.line())
            print("criterion 8 determinism: run repro twice into separate --out directories and compare manifests")
            return EXIT_OK if all(v.ok for v in verdicts) else EXIT_VERDICT
        return EXIT_OK
    except (ConfigError, DimensionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except StaleManifestError as exc:
        print(f"stale or corrupted outputs: {exc}", file=sys.stderr)
        return EXIT_STALE


if __name__ == "__main__":
    sys.exit(main())
