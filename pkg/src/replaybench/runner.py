"""Experiment plans: parsing, execution with resume, and summary tables.

A plan is an INI file::

    [plan]
    strategies = random, entropy
    modes = simple
    seeds = 1, 2, 3
    replay_kinds = experience
    orders = identity
    parallel = 2

    [train]
    epochs = 5

    [stream]
    dataset = mnist

``[plan]`` lists are expanded as a cartesian product; ``[train]`` and
``[stream]`` set RunConfig / StreamConfig fields shared by every run.
"""
from concurrent.futures import ProcessPoolExecutor, as_completed
import configparser
import csv
from dataclasses import dataclass, fields, replace
from functools import lru_cache
import logging
from pathlib import Path
import statistics
import traceback

import numpy as np

from . import engine
from .config import REPLAY_KINDS, RUN_FIELDS, STREAM_FIELDS, RunConfig, StreamConfig, build_stream
from .errors import PlanError
from .metrics import average_time
from .strategies import MODES, STRATEGIES

log = logging.getLogger(__name__)

CSV_HEADER = ["run_id", "strategy", "mode", "replay_kind", "scenario", "seed",
              "accuracy", "forgetting_rate", "wall_time_s", "config_fingerprint"]
PLAN_KEYS = {"strategies", "modes", "seeds", "replay_kinds", "orders", "parallel", "out"}
# plan-level keys that the [plan] section may omit
PLAN_DEFAULTS = {"modes": "simple", "replay_kinds": "experience", "orders": "identity", "parallel": "1"}
TRAIN_KEYS = set(RUN_FIELDS) - {"strategy", "mode", "replay_kind", "seed", "order"}


@dataclass(frozen=True)
class PlannedRun:
    run_id: str
    config: RunConfig


@dataclass(frozen=True)
class ExperimentPlan:
    runs: tuple
    out: Path | None = None
    parallel: int = 1

    def __len__(self):
        return len(self.runs)


# --- parsing -------------------------------------------------------------------

def _split(value):
    return [v.strip() for v in value.replace("\n", ",").split(",") if v.strip()]


def _coerce(cls, name, raw):
    default = next(f.default for f in fields(cls) if f.name == name)
    raw = raw.strip()
    try:
        if name in ("buffer_capacity", "per_task_train_cap"):
            return None if raw.lower() in ("none", "unbounded", "") else int(raw)
        if name == "hidden":
            return tuple(int(v) for v in _split(raw))
        if name == "difficulty":
            return tuple(_split(raw))
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise PlanError(f"invalid value {raw!r} for {name}") from None


def _parse_order(token):
    if token in ("identity", "easy_first", "hard_first"):
        return token
    try:
        return tuple(int(v) for v in token.split())
    except ValueError:
        raise PlanError(f"invalid order {token!r}: use identity, easy_first, hard_first "
                        "or a space-separated permutation") from None


def _order_label(order):
    return order if isinstance(order, str) else "p" + ".".join(map(str, order))


def run_id_for(cfg):
    return f"{cfg.replay_kind}-{cfg.label}-{cfg.mode}-{_order_label(cfg.order)}-s{cfg.seed}"


def parse_plan(path, seeds=None, downscale=None):
    """Read a plan file and expand it into individual runs.

    ``seeds`` and ``downscale`` override the file (used by CLI flags).
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as e:
        raise PlanError(f"{path}: {e}") from None

    known = {"plan": PLAN_KEYS, "train": TRAIN_KEYS, "stream": set(STREAM_FIELDS)}
    for section in parser.sections():
        if section not in known:
            raise PlanError(f"unknown section [{section}]; expected one of {sorted(known)}")
        for key in parser[section]:
            if key not in known[section]:
                raise PlanError(f"unknown key {key!r} in [{section}]")
    if "plan" not in parser:
        raise PlanError("missing [plan] section")

    plan = {**PLAN_DEFAULTS, **dict(parser["plan"])}
    strategies = _split(plan.get("strategies", "random"))
    bad = [s for s in strategies if s not in STRATEGIES]
    if bad:
        raise PlanError(f"unknown strategy {bad[0]!r}; valid ids: {', '.join(STRATEGIES)}")
    modes = _split(plan["modes"])
    if not modes or any(m not in MODES for m in modes):
        raise PlanError(f"modes must be drawn from {MODES}")
    kinds = _split(plan["replay_kinds"])
    if not kinds or any(k not in REPLAY_KINDS for k in kinds):
        raise PlanError(f"replay_kinds must be drawn from {REPLAY_KINDS}")
    if seeds is None:
        seeds = [_coerce(RunConfig, "seed", s) for s in _split(plan.get("seeds", ""))]
    if not seeds:
        raise PlanError("seeds list is empty")
    if any(s < 0 for s in seeds):
        raise PlanError("seeds must be non-negative")
    orders = [_parse_order(o) for o in _split(plan["orders"])]

    train = {k: _coerce(RunConfig, k, v) for k, v in parser["train"].items()} if "train" in parser else {}
    stream_kw = {k: _coerce(StreamConfig, k, v) for k, v in parser["stream"].items()} if "stream" in parser else {}
    if downscale is not None:
        stream_kw["downscale"] = downscale
    try:
        stream = StreamConfig(**stream_kw)
    except (TypeError, ValueError) as e:
        raise PlanError(f"[stream]: {e}") from None

    runs = []
    for kind in kinds:
        combos = [(s, m) for s in strategies for m in modes] if kind == "experience" else [(None, "simple")]
        for strategy, mode in combos:
            for order in orders:
                for seed in seeds:
                    cfg = RunConfig(strategy=strategy, mode=mode, replay_kind=kind, seed=seed,
                                    order=order, stream=stream, **train)
                    try:
                        cfg.validate()
                    except ValueError as e:
                        raise PlanError(f"invalid run configuration: {e}") from None
                    runs.append(PlannedRun(run_id_for(cfg), cfg))
    ids = [r.run_id for r in runs]
    if len(set(ids)) != len(ids):
        raise PlanError("plan expands to duplicate runs (repeated list entries?)")
    out = Path(plan["out"]) if plan.get("out") else None
    try:
        parallel = int(plan["parallel"])
    except ValueError:
        raise PlanError(f"invalid value {plan['parallel']!r} for parallel") from None
    if parallel < 1:
        raise PlanError("parallel must be at least 1")
    return ExperimentPlan(tuple(runs), out, parallel)


# --- execution -----------------------------------------------------------------

@lru_cache(maxsize=8)
def _stream(stream_cfg, data_root):
    return build_stream(stream_cfg, data_root)


def _execute_one(run_id, cfg_dict, data_root):
    cfg = RunConfig.from_dict(cfg_dict)
    result = engine.run(cfg, _stream(cfg.stream, data_root))
    return run_id, result


def result_row(run_id, result):
    cfg = result.config
    return {
        "run_id": run_id,
        "strategy": cfg.label,
        "mode": cfg.mode,
        "replay_kind": cfg.replay_kind,
        "scenario": cfg.stream.scenario,
        "seed": str(cfg.seed),
        "accuracy": repr(float(result.accuracy)),
        "forgetting_rate": repr(float(result.forgetting_rate)),
        "wall_time_s": f"{result.wall_time_seconds:.6f}",
        "config_fingerprint": result.fingerprint,
    }


def write_matrix(path, task_ids, R):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["after_task", *task_ids])
        for tid, row in zip(task_ids, R):
            w.writerow([tid, *(repr(float(v)) for v in row)])


def read_matrix(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    task_ids = [int(v) for v in rows[0][1:]]
    return task_ids, np.array([[float(v) for v in r[1:]] for r in rows[1:]])


def _completed(out):
    path = out / "runs.csv"
    if not path.exists():
        return {}
    with open(path, newline="", encoding="utf-8") as fh:
        return {r["config_fingerprint"]: r for r in csv.DictReader(fh)}


def execute(plan, out=None, parallel=None, resume=False, data_root=None):
    """Run every planned configuration and persist rows as they finish.

    Returns the list of ``RunResult`` for runs executed in this call (resumed
    runs are skipped, not reloaded). Failed runs go to ``failures.csv``.
    """
    out = Path(out or plan.out or "results")
    parallel = parallel or plan.parallel
    (out / "matrices").mkdir(parents=True, exist_ok=True)
    runs_csv = out / "runs.csv"

    done = _completed(out) if resume else {}
    todo = [r for r in plan.runs if r.config.fingerprint() not in done]
    if done:
        log.info("resume: skipping %d completed runs", len(plan.runs) - len(todo))
    if not resume or not runs_csv.exists():
        with open(runs_csv, "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh, lineterminator="\n").writerow(CSV_HEADER)

    results, failures = {}, []

    def record(run_id, result):
        write_matrix(out / "matrices" / f"{run_id}.csv", result.task_ids, result.accuracy_matrix)
        with open(runs_csv, "a", newline="", encoding="utf-8") as fh:
            csv.DictWriter(fh, CSV_HEADER, lineterminator="\n").writerow(result_row(run_id, result))
        results[run_id] = result
        log.info("%s: accuracy=%.3f forgetting=%.3f (%.1fs)", run_id, result.accuracy,
                 result.forgetting_rate, result.wall_time_seconds)

    def fail(run, exc):
        failures.append((run, exc))
        log.error("%s failed: %s", run.run_id, exc)

    if parallel == 1:
        for run in todo:
            try:
                record(*_execute_one(run.run_id, run.config.to_dict(), data_root))
            except Exception as exc:  # per-run isolation
                fail(run, exc)
    else:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            futures = {pool.submit(_execute_one, r.run_id, r.config.to_dict(), data_root): r for r in todo}
            for fut in as_completed(futures):
                try:
                    record(*fut.result())
                except Exception as exc:
                    fail(futures[fut], exc)

    if failures:
        with open(out / "failures.csv", "a", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            for run, exc in failures:
                w.writerow([run.run_id, run.config.fingerprint(), type(exc).__name__, str(exc),
                            "".join(traceback.format_exception_only(type(exc), exc)).strip()])
    return [results[r.run_id] for r in todo if r.run_id in results]


# --- summaries -----------------------------------------------------------------

@dataclass(frozen=True)
class SummaryRow:
    strategy: str
    mode: str
    replay_kind: str
    order: str
    n_runs: int
    accuracy_mean: float
    accuracy_std: float
    forgetting_mean: float
    forgetting_std: float
    average_time: float


def _std(values):
    return statistics.stdev(values) if len(values) > 1 else 0.0


def _as_row(item):
    if isinstance(item, dict):
        return item
    run_id = run_id_for(item.config)
    return result_row(run_id, item)


def _order_of(run_id):
    # run ids end in -<order>-s<seed>; order labels never contain "-"
    return run_id.rsplit("-", 2)[1]


def summarize(results):
    """Group runs by (replay kind, strategy, mode, order); mean and sample std."""
    rows = [_as_row(r) for r in results]
    if not rows:
        raise ValueError("nothing to summarize")
    groups = {}
    for r in rows:
        key = (r["replay_kind"], r["strategy"], r["mode"], _order_of(r["run_id"]))
        groups.setdefault(key, []).append(r)
    out = []
    for (kind, strategy, mode, order), members in groups.items():
        acc = [float(m["accuracy"]) for m in members]
        fgt = [float(m["forgetting_rate"]) for m in members]
        total = sum(float(m["wall_time_s"]) for m in members)
        out.append(SummaryRow(strategy, mode, kind, order, len(members),
                              statistics.fmean(acc), _std(acc), statistics.fmean(fgt), _std(fgt),
                              average_time(total, len(members))))
    return out


def pm(mean, std):
    return f"{mean:.3f} +/- {std:.3f}"


def render_table(summary):
    header = ["replay", "strategy", "mode", "order", "runs", "accuracy", "forgetting rate", "avg time (s)"]
    body = [[s.replay_kind, s.strategy, s.mode, s.order, str(s.n_runs), pm(s.accuracy_mean, s.accuracy_std),
             pm(s.forgetting_mean, s.forgetting_std), f"{s.average_time:.3f}"] for s in summary]
    widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]
    line = lambda r: "  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip()
    return "\n".join([line(header), line(["-" * w for w in widths]), *map(line, body)])


SUMMARY_HEADER = ["replay_kind", "strategy", "mode", "order", "n_runs", "accuracy_mean", "accuracy_std",
                  "forgetting_mean", "forgetting_std", "average_time_s"]


def write_summary(path, summary):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for s in summary:
            w.writerow([s.replay_kind, s.strategy, s.mode, s.order, s.n_runs, f"{s.accuracy_mean:.6f}",
                        f"{s.accuracy_std:.6f}", f"{s.forgetting_mean:.6f}", f"{s.forgetting_std:.6f}",
                        f"{s.average_time:.6f}"])


def load_rows(results_dir):
    with open(Path(results_dir) / "runs.csv", newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def accuracy_curves(results_dir, rows):
    """Mean accuracy per (group, after_task, task_id) across seeds, plot-ready."""
    groups = {}
    for r in rows:
        path = Path(results_dir) / "matrices" / f"{r['run_id']}.csv"
        if not path.exists():
            continue
        task_ids, R = read_matrix(path)
        key = (r["replay_kind"], r["strategy"], r["mode"], _order_of(r["run_id"]), tuple(task_ids))
        groups.setdefault(key, []).append(R)
    out = []
    for (kind, strategy, mode, order, task_ids), mats in groups.items():
        mean = np.mean(mats, axis=0)
        for i, after in enumerate(task_ids):
            for j, tid in enumerate(task_ids):
                out.append([kind, strategy, mode, order, after, tid, f"{mean[i, j]:.6f}", len(mats)])
    return out


def write_curves(path, curves):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replay_kind", "strategy", "mode", "order", "after_task", "task_id", "mean_accuracy", "n_runs"])
        w.writerows(curves)
