"""Command-line entry point ``irl``."""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

log = logging.getLogger("scenario_irl")


def _bench_run(args) -> int:
    from .bench import ExperimentConfig, emit_outputs, run_sweep

    cfg = ExperimentConfig.load(args.config)
    if args.paper_scale:
        cfg = cfg.paper_scale()
    if args.repetitions is not None:
        cfg.repetitions = args.repetitions
    if args.workers is not None:
        cfg.workers = args.workers
    if args.out is not None:
        cfg.output_dir = args.out

    def progress(done, total):
        print(f"\rrepetition {done}/{total}", end="", file=sys.stderr, flush=True)

    result = run_sweep(cfg, progress=None if args.quiet else progress)
    if not args.quiet:
        print(file=sys.stderr)
    for f in emit_outputs(result, cfg):
        print(f)
    return 0


def _bench_confidence(args) -> int:
    from .bench import empirical_confidence, read_records

    path = Path(args.results)
    if path.is_dir():
        path = path / "records.csv"
    records = read_records(path)
    settings = sorted({(int(r["N"]), int(r["k"])) for r in records})
    if args.N is not None:
        settings = [s for s in settings if s[0] == args.N and (args.k is None or s[1] == args.k)]
        if not settings:
            raise ValueError(f"no records for N={args.N}")
    kind = "certified" if args.certified else "member"
    print("N,k,eps,fraction,successes,repetitions,wilson_low,wilson_high")
    for s in settings:
        c = empirical_confidence(records, s, args.eps, kind)
        print(f"{c['N']},{c['k']},{c['eps']:g},{c['fraction']:.6g},{c['successes']},{c['repetitions']},"
              f"{c['wilson_low']:.6g},{c['wilson_high']:.6g}")
    return 0


def _certify(args) -> int:
    from .bench import ExperimentConfig, certify_report

    cfg = ExperimentConfig.load(args.config)
    if args.paper_scale:
        cfg = cfg.paper_scale()
    table = certify_report(cfg, args.eps)
    width = max(len(k) for k in table)
    for key, val in table.items():
        print(f"{key:<{width}} = {val}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["key", "value"])
    for key, val in table.items():
        w.writerow([key, repr(val) if isinstance(val, float) else val])
    if args.csv:
        Path(args.csv).write_text(buf.getvalue())
        print(f"wrote {args.csv}")
    else:
        print()
        print(buf.getvalue(), end="")
    return 0


def _tabular_fuzz(args) -> int:
    from .tabular import fuzz

    res = fuzz(args.seeds, args.max_states, args.max_actions, args.gamma, args.workers)
    print(f"instances={res['instances']} agree={res['agree']} feasible={res['feasible']}")
    for m in res["mismatches"]:
        print(f"mismatch seed={m['seed']} S={m['S']} A={m['A']} kind={m['kind']} "
              f"lp={m['lp']} brute_force={m['brute_force']}")
    return 0 if not res["mismatches"] else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="irl", description="Scenario-based inverse optimal control tools.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    bench = sub.add_parser("bench", help="run experiment sweeps")
    bsub = bench.add_subparsers(dest="bench_command", required=True)
    run = bsub.add_parser("run", help="run a sweep from a TOML config and write CSV/SVG outputs")
    run.add_argument("config")
    run.add_argument("--paper-scale", action="store_true", help="gamma=0.99 and 1000 repetitions")
    run.add_argument("--repetitions", type=int)
    run.add_argument("--workers", type=int)
    run.add_argument("--out", help="output directory (overrides the config)")
    run.add_argument("-q", "--quiet", action="store_true")
    run.set_defaults(func=_bench_run)

    conf = bsub.add_parser("confidence", help="empirical confidence with Wilson 95%% intervals")
    conf.add_argument("results", help="records.csv or the directory holding it")
    conf.add_argument("--eps", type=float, required=True)
    conf.add_argument("--N", type=int)
    conf.add_argument("--k", type=int)
    conf.add_argument("--certified", action="store_true", help="use the optimality-gap verdicts")
    conf.set_defaults(func=_bench_confidence)

    cert = sub.add_parser("certify", help="print certificate constants and sample sizes")
    cert.add_argument("config")
    cert.add_argument("--eps", type=float, help="accuracy (defaults to campi_eps of the config)")
    cert.add_argument("--paper-scale", action="store_true")
    cert.add_argument("--csv", help="write the CSV table here instead of stdout")
    cert.set_defaults(func=_certify)

    tab = sub.add_parser("tabular", help="finite-MDP checks")
    tsub = tab.add_subparsers(dest="tabular_command", required=True)
    fz = tsub.add_parser("fuzz", help="LP verdict against enumeration on random instances")
    fz.add_argument("--seeds", type=int, required=True)
    fz.add_argument("--max-states", type=int, default=5)
    fz.add_argument("--max-actions", type=int, default=3)
    fz.add_argument("--gamma", type=float, default=0.9)
    fz.add_argument("--workers", type=int, default=1)
    fz.set_defaults(func=_tabular_fuzz)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"irl: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
