"""Command-line pipeline: simulate -> extract -> train -> evaluate.

Exit status is 0 on success, 2 for configuration errors, 3 for data
errors and 4 for training failures.  Outputs are written under a
temporary name and renamed into place on success, so a failed run leaves
nothing behind.  ``simulate --resume`` picks up an interrupted run from
its temporary file.
"""
from __future__ import annotations

import argparse
import json
import logging
import multiprocessing
import os
import shutil
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Callable, Iterator, Optional

import numpy as np
import yaml

from . import stats
from .config import ScenarioConfig, load_scenario
from .datagen import (FEATURES, dump_record, extract_samples, read_header, read_records, read_samples,
                      record_header, simulate_race, split_dataset, to_arrays, write_samples)
from .errors import BetsimError, ConfigError, DataError
from .gbt import BoostedModel, TrainConfig, evaluate_classifier, grid_search_cv, train_boosted

log = logging.getLogger("betsim")

JOBS_ENV = "BETSIM_JOBS"
GRID_VERSION = 1
_GRID_KEYS = {"version", "folds", "grid", "base", "cv", "validation_fraction"}
_CV_KEYS = {"max_rows", "n_estimators", "early_stopping_rounds"}


# -- worker pool ----------------------------------------------------------------

_worker: dict = {}


def _init_worker(scenario: ScenarioConfig, model_path: Optional[str]) -> None:
    _worker["scenario"] = scenario
    _worker["population"] = scenario.bettors()
    _worker["model"] = BoostedModel.load(model_path) if model_path else None


def _run_race(index: int):
    sc = _worker["scenario"]
    return simulate_race(index, sc.race, _worker["population"], sc.seed, sc.commission_rate,
                         _worker["model"], sc.price_improvement)


def _simulate_text(index: int) -> str:
    return dump_record(_run_race(index))


@contextmanager
def _mapper(jobs: int, initializer=None, initargs=()) -> Iterator[Callable]:
    """Ordered map over a process pool, or plain ``map`` for a single job."""
    if jobs <= 1:
        if initializer is not None:
            initializer(*initargs)
        yield map
        return
    with multiprocessing.get_context("spawn").Pool(jobs, initializer, initargs) as pool:
        yield lambda fn, items: pool.imap(fn, items, chunksize=1)


def default_jobs() -> int:
    raw = os.environ.get(JOBS_ENV, "1")
    try:
        jobs = int(raw)
    except ValueError:
        raise ConfigError(JOBS_ENV, f"expected an integer, got {raw!r}") from None
    if jobs < 1:
        raise ConfigError(JOBS_ENV, "must be >= 1")
    return jobs


# -- atomic outputs -------------------------------------------------------------------

def _partial(path: Path) -> Path:
    return path.with_name(path.name + ".partial")


@contextmanager
def _atomic(path: Path, keep_on_interrupt: bool = False) -> Iterator[Path]:
    """Yield a temporary sibling path; rename onto ``path`` on success, delete on failure."""
    tmp = _partial(path)
    try:
        yield tmp
    except KeyboardInterrupt:
        if not keep_on_interrupt:
            _remove(tmp)
        raise
    except BaseException:
        _remove(tmp)
        raise
    if path.is_dir():
        shutil.rmtree(path)
    os.replace(tmp, path)


def _remove(path: Path) -> None:
    if path.is_dir():
        shutil.rmtree(path, ignore_errors=True)
    elif path.exists():
        path.unlink()


# -- simulate -------------------------------------------------------------------------

def _resume_point(path: Path, header_line: str) -> int:
    """Truncate ``path`` after its last complete race; return the number of races kept."""
    with open(path, "rb") as fh:
        data = fh.read()
    lines = data.split(b"\n")
    if not lines or lines[0].decode("utf-8", "replace") != header_line.rstrip("\n"):
        raise DataError(f"{path}: cannot resume, the file was written with different settings")
    keep, races, offset = len(lines[0]) + 1, 0, len(lines[0]) + 1
    for raw in lines[1:]:
        end = offset + len(raw) + 1
        if end > len(data) or not raw:
            break  # unterminated or empty trailing line
        try:
            ev = json.loads(raw)
        except json.JSONDecodeError:
            break
        if ev.get("kind") == "settled":
            if ev.get("race") != races:
                raise DataError(f"{path}: races out of order, cannot resume")
            keep, races = end, races + 1
        offset = end
    with open(path, "r+b") as fh:
        fh.truncate(keep)
    return races


def cmd_simulate(args) -> int:
    scenario = load_scenario(args.config, races=args.races, seed=args.seed)
    out = Path(args.out)
    population = scenario.bettors()
    if scenario.needs_model and not args.model:
        raise ConfigError("population", "MODEL bettors need --model")
    header = record_header(population, {"scenario": scenario.to_dict()})
    header_line = json.dumps(header, separators=(",", ":"), sort_keys=True) + "\n"
    if str(out).endswith(".gz"):
        raise ConfigError("--out", "record files are written uncompressed")
    tmp = _partial(out)
    start = 0
    if args.resume and tmp.exists():
        start = _resume_point(tmp, header_line)
        log.info("resuming %s after %d complete races", tmp, start)
    with _atomic(out, keep_on_interrupt=True) as tmp:
        mode = "a" if start else "w"
        with open(tmp, mode, encoding="utf-8", newline="\n") as fh:
            if not start:
                fh.write(header_line)
            with _mapper(args.jobs, _init_worker, (scenario, args.model)) as pmap:
                for i, text in enumerate(pmap(_simulate_text, range(start, scenario.races)), start=start):
                    fh.write(text)
                    fh.flush()
                    if (i + 1) % 100 == 0:
                        log.info("race %d/%d", i + 1, scenario.races)
    log.info("wrote %d races to %s", scenario.races, out)
    return 0


# -- extract --------------------------------------------------------------------------

def cmd_extract(args) -> int:
    if not 0 < args.quantile <= 1:
        raise ConfigError("--quantile", "must lie in (0, 1]")
    if not 0 < args.split < 1:
        raise ConfigError("--split", "must lie in (0, 1)")
    header = read_header(args.inp)
    seed = args.seed if args.seed is not None else int(header.get("scenario", {}).get("seed", 0))
    samples = extract_samples(read_records(args.inp), args.quantile, per_race=not args.pooled)
    train, hold = split_dataset(samples, args.split, seed)
    out = Path(args.out)
    with _atomic(out) as tmp:
        tmp.mkdir(parents=True, exist_ok=True)
        write_samples(tmp / "train.csv", train)
        write_samples(tmp / "holdout.csv", hold)
        backs = sum(s.label for s in samples)
        meta = {"source": str(args.inp), "quantile": args.quantile, "split": args.split, "seed": seed,
                "samples": len(samples), "backs": backs, "lays": len(samples) - backs,
                "train": len(train), "holdout": len(hold)}
        (tmp / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    log.info("%d samples (%d back, %d lay) -> %s", len(samples), backs, len(samples) - backs, out)
    return 0


# -- train ----------------------------------------------------------------------------

def load_grid(path) -> dict:
    """Read a tuning file (YAML) and validate its keys."""
    try:
        data = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(str(path), f"not valid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("<root>", "tuning file must be a mapping")
    for key in data:
        if key not in _GRID_KEYS:
            raise ConfigError(key, "unknown key")
    if data.get("version") != GRID_VERSION:
        raise ConfigError("version", f"expected {GRID_VERSION}")
    grid = data.get("grid")
    if not isinstance(grid, dict) or not grid:
        raise ConfigError("grid", "expected a nonempty mapping of parameter -> list of values")
    for name, values in grid.items():
        if not isinstance(values, list) or not values:
            raise ConfigError(f"grid.{name}", "expected a nonempty list")
    base = TrainConfig.from_dict(data.get("base", {}) or {})
    for name in grid:
        try:
            base.with_params(**{name: grid[name][0]})
        except ConfigError as exc:
            raise ConfigError(f"grid.{exc.field}", str(exc).split(": ", 1)[-1]) from None
    cv = data.get("cv", {}) or {}
    for key in cv:
        if key not in _CV_KEYS:
            raise ConfigError(f"cv.{key}", "unknown key")
    frac = float(data.get("validation_fraction", 0.1))
    if not 0 <= frac < 1:
        raise ConfigError("validation_fraction", "must lie in [0, 1)")
    return {"grid": grid, "base": base, "folds": data.get("folds"), "cv": cv, "validation_fraction": frac}


def _report_text(report, best: TrainConfig, results, history) -> str:
    lines = ["Confusion matrix (holdout)", report.confusion_table(), "",
             "Classification report (holdout)", report.classification_table(), "",
             f"logloss {report.logloss:.6f}", "",
             "Feature F-scores (split counts)"]
    for name, score in sorted(report.feature_scores.items(), key=lambda kv: (-kv[1], kv[0])):
        lines.append(f"  {name:<10}{score:>8d}")
    lines += ["", f"boosting rounds run {len(history.train_logloss)}, best round {history.best_round}", "",
              "Selected parameters"]
    lines += [f"  {k} = {v}" for k, v in sorted(vars(best).items())]
    lines += ["", "Grid search (mean / std accuracy)"]
    for r in results:
        params = ", ".join(f"{k}={v}" for k, v in r.params.items())
        lines.append(f"  {r.mean_accuracy:.4f} {r.std_accuracy:.4f}  {params}")
    return "\n".join(lines) + "\n"


def cmd_train(args) -> int:
    spec = load_grid(args.grid)
    folds = args.folds if args.folds is not None else int(spec["folds"] or 5)
    data_dir = Path(args.inp)
    train = read_samples(data_dir / "train.csv")
    hold = read_samples(data_dir / "holdout.csv")
    X, y = to_arrays(train)
    Xh, yh = to_arrays(hold)
    base: TrainConfig = spec["base"]

    cv_base = base.with_params(**{k: spec["cv"][k] for k in ("n_estimators", "early_stopping_rounds")
                                  if k in spec["cv"]})
    cv_rows = np.arange(len(y))
    max_rows = spec["cv"].get("max_rows")
    if max_rows and max_rows < len(y):
        cv_rows = np.sort(np.random.Generator(np.random.PCG64(base.seed)).choice(len(y), max_rows, replace=False))
    log.info("grid search: %d rows, %d folds", len(cv_rows), folds)
    with _mapper(args.jobs) as pmap:
        best, results = grid_search_cv(X[cv_rows], y[cv_rows], spec["grid"], folds, cv_base,
                                       progress=lambda r: log.info("cv %.4f %s", r.mean_accuracy, r.params),
                                       mapper=pmap)
    final = base.with_params(**{name: getattr(best, name) for name in spec["grid"]})

    n_valid = int(round(spec["validation_fraction"] * len(y)))
    if n_valid > 0:
        model, history = train_boosted(X[:-n_valid], y[:-n_valid], final, X[-n_valid:], y[-n_valid:], FEATURES)
    else:
        model, history = train_boosted(X, y, final, feature_names=FEATURES)
    report = evaluate_classifier(model, Xh, yh)
    out, rep = Path(args.out), Path(args.report)
    rep_json = rep.with_name(rep.name + ".json")
    with _atomic(out) as tmp_model, _atomic(rep) as tmp_rep, _atomic(rep_json) as tmp_json:
        model.save(tmp_model)
        tmp_rep.write_text(_report_text(report, final, results, history))
        tmp_json.write_text(json.dumps({
            "report": report.to_dict(),
            "selected": vars(final),
            "grid": [{"params": r.params, "mean_accuracy": r.mean_accuracy, "std_accuracy": r.std_accuracy,
                      "fold_accuracies": list(r.fold_accuracies)} for r in results],
            "train_logloss": history.train_logloss,
            "valid_logloss": history.valid_logloss,
            "best_round": history.best_round,
        }, indent=1, sort_keys=True) + "\n")
    log.info("best round %d, holdout accuracy %.4f", history.best_round, report.accuracy)
    return 0


# -- evaluate -------------------------------------------------------------------------

def cmd_evaluate(args) -> int:
    scenario = load_scenario(args.scenario, races=args.races, seed=args.seed)
    if not scenario.needs_model:
        raise ConfigError("population", "scenario has no MODEL bettors to evaluate")
    model_path = Path(args.model)
    if not model_path.exists():
        raise DataError(f"{model_path}: no such model file")
    try:
        BoostedModel.load(model_path)
    except (ValueError, KeyError) as exc:
        raise DataError(f"{model_path}: unreadable model ({exc})") from None
    if scenario.races < 3:
        raise ConfigError("races", "need at least 3 races for the profit statistics")
    with _mapper(args.jobs, _init_worker, (scenario, str(model_path))) as pmap:
        recs = list(pmap(_run_race, range(scenario.races)))
    series = stats.profit_series(recs)
    totals = stats.agent_totals(recs)
    samples = {k: s.per_race for k, s in series.items()} if args.unit == "race_mean" else totals
    comparisons = stats.compare_types(samples, "MODEL", args.alpha)
    out = Path(args.out)
    with _atomic(out) as tmp:
        tmp.mkdir(parents=True, exist_ok=True)
        stats.write_profit_series(tmp / "profit_series.csv", series)
        stats.write_kde(tmp / "kde.csv", samples)
        stats.write_box(tmp / "box.csv", samples)
        stats.write_normality(tmp / "normality.csv", samples)
        stats.write_comparisons(tmp / "tests.csv", comparisons)
        (tmp / "summary.txt").write_text(_summary_text(samples, comparisons, args.unit))
    for c in comparisons:
        log.info("MODEL > %s: U=%.1f p=%.4g", c.other, c.U, c.p_greater)
    return 0


def _summary_text(samples, comparisons, unit: str) -> str:
    lines = [f"unit: {unit}", "", f"{'type':<8}{'n':>6}{'mean':>12}{'median':>12}"]
    for k in sorted(samples):
        v = np.asarray(samples[k])
        lines.append(f"{k:<8}{v.size:>6d}{v.mean():>12.2f}{np.median(v):>12.2f}")
    lines += ["", f"{'pairing':<16}{'U':>10}{'p':>12}{'p_reverse':>12}  reject"]
    for c in comparisons:
        lines.append(f"{'MODEL > ' + c.other:<16}{c.U:>10.1f}{c.p_greater:>12.4g}{c.p_less:>12.4g}  {c.reject}")
    return "\n".join(lines) + "\n"


# -- entry point ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="betsim", description="In-play betting simulator and learned bettor pipeline.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run races and write race records")
    s.add_argument("--config", required=True)
    s.add_argument("--races", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--model", help="model file for MODEL bettors in the population")
    s.add_argument("--resume", action="store_true", help="continue an interrupted run")
    s.add_argument("--jobs", type=int)
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("extract", help="turn race records into labelled train/holdout tables")
    e.add_argument("--in", dest="inp", required=True)
    e.add_argument("--quantile", type=float, default=0.2)
    e.add_argument("--split", type=float, default=0.8)
    e.add_argument("--seed", type=int)
    e.add_argument("--pooled", action="store_true", help="pick top bettors on session totals, not per race")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_extract)

    t = sub.add_parser("train", help="grid-search, fit and report a boosted classifier")
    t.add_argument("--in", dest="inp", required=True)
    t.add_argument("--grid", required=True)
    t.add_argument("--folds", type=int)
    t.add_argument("--out", required=True)
    t.add_argument("--report", required=True)
    t.add_argument("--jobs", type=int)
    t.set_defaults(func=cmd_train)

    v = sub.add_parser("evaluate", help="run a scenario with MODEL bettors and test their profits")
    v.add_argument("--scenario", required=True)
    v.add_argument("--model", required=True)
    v.add_argument("--out", required=True)
    v.add_argument("--races", type=int)
    v.add_argument("--seed", type=int)
    v.add_argument("--unit", choices=("race_mean", "agent_total"), default="race_mean")
    v.add_argument("--alpha", type=float, default=0.05)
    v.add_argument("--jobs", type=int)
    v.set_defaults(func=cmd_evaluate)
    return p


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if hasattr(args, "jobs"):
            if args.jobs is None:
                args.jobs = default_jobs()
            elif args.jobs < 1:
                raise ConfigError("--jobs", "must be >= 1")
        return args.func(args)
    except BetsimError as exc:
        print(f"betsim {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
