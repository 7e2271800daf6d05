"""Command-line entry point: ``replaybench run | summarize | gen-data``."""
import argparse
import configparser
import csv
from dataclasses import fields, replace
import logging
from pathlib import Path
import sys

from . import data
from .config import RunConfig, StreamConfig
from .errors import PlanError
from .runner import (accuracy_curves, execute, load_rows, parse_plan, render_table, summarize,
                     write_curves, write_summary)


def _defaults_epilog():
    run = [f"  {f.name} = {f.default!r}" for f in fields(RunConfig)
           if f.name not in ("strategy", "mode", "replay_kind", "seed", "order", "stream")]
    stream = [f"  {f.name} = {f.default!r}" for f in fields(StreamConfig)]
    return "\n".join([
        "plan file sections and defaults:",
        "[plan]",
        "  strategies = random   (random, entropy, confidence, margin, bald, kmeans, coreset, mir)",
        "  modes = simple        (simple, difficult)",
        "  seeds = <required>    (comma-separated non-negative ints)",
        "  replay_kinds = experience   (experience, generative, none)",
        "  orders = identity     (identity, easy_first, hard_first, or a permutation like '2 0 1')",
        "  parallel = 1",
        "  out = results",
        "[train]", *run,
        "[stream]", *stream,
        "",
        "MNIST files are read from $REPLAYBENCH_DATA (default ./data/mnist-5k).",
    ])


def _seed_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None


def build_parser():
    p = argparse.ArgumentParser(prog="replaybench", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter,
                                epilog=_defaults_epilog())
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="execute an experiment plan",
                       formatter_class=argparse.RawDescriptionHelpFormatter, epilog=_defaults_epilog())
    r.add_argument("plan", type=Path)
    r.add_argument("--out", type=Path, help="results directory (overrides the plan's out)")
    r.add_argument("--parallel", type=int, help="worker processes (overrides the plan)")
    r.add_argument("--resume", action="store_true", help="skip runs whose fingerprint is already in runs.csv")
    r.add_argument("--seed", type=_seed_list, help="comma-separated seeds replacing the plan's list")
    r.add_argument("--downscale", action="store_true", default=None, help="mean-pool MNIST to 14x14")

    s = sub.add_parser("summarize", help="tabulate a results directory")
    s.add_argument("results", type=Path)

    g = sub.add_parser("gen-data", help="dump a synthetic stream as CSV files")
    g.add_argument("spec", type=Path, help="INI file with a [stream] section")
    g.add_argument("--out", type=Path, default=Path("synthetic"))
    g.add_argument("--seed", type=int, help="overrides data_seed")
    return p


def cmd_run(args):
    plan = parse_plan(args.plan, seeds=args.seed, downscale=args.downscale)
    results = execute(plan, out=args.out, parallel=args.parallel, resume=args.resume)
    out = args.out or plan.out or Path("results")
    rows = load_rows(out)
    if rows:
        print(render_table(summarize(rows)))
    print(f"{len(results)} run(s) completed, {len(rows)} row(s) in {out / 'runs.csv'}")
    recorded = {r["config_fingerprint"] for r in rows}
    missing = [r.run_id for r in plan.runs if r.config.fingerprint() not in recorded]
    if missing:
        print(f"{len(missing)} run(s) failed; see {out / 'failures.csv'}", file=sys.stderr)
        return 1
    return 0


def cmd_summarize(args):
    rows = load_rows(args.results)
    summary = summarize(rows)
    write_summary(args.results / "summary.csv", summary)
    write_curves(args.results / "curves.csv", accuracy_curves(args.results, rows))
    print(render_table(summary))
    return 0


def cmd_gen_data(args):
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    parser.read(args.spec, encoding="utf-8")
    if "stream" not in parser:
        raise PlanError(f"{args.spec}: missing [stream] section")
    from .runner import _coerce
    names = {f.name for f in fields(StreamConfig)}
    kw = {}
    for k, v in parser["stream"].items():
        if k not in names:
            raise PlanError(f"unknown key {k!r} in [stream]")
        kw[k] = _coerce(StreamConfig, k, v)
    cfg = StreamConfig(**{**kw, "dataset": "synthetic"})
    if args.seed is not None:
        cfg = replace(cfg, data_seed=args.seed)
    stream = data.synth_stream(cfg.synth_spec(), cfg.data_seed)
    args.out.mkdir(parents=True, exist_ok=True)
    for task in stream.tasks:
        for split in ("train", "test"):
            b = getattr(task, split)
            with open(args.out / f"task{task.task_id}_{split}.csv", "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["label", *(f"x{i}" for i in range(b.dim))])
                for x, y in zip(b.features, b.labels):
                    w.writerow([int(y), *(repr(float(v)) for v in x)])
    print(f"wrote {len(stream)} task(s) to {args.out}")
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": cmd_run, "summarize": cmd_summarize, "gen-data": cmd_gen_data}[args.command]
    try:
        return handler(args)
    except (PlanError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
