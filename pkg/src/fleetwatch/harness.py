"""Experiment orchestration: schedule strategy and pair runs, then persist the results.

Every CSV written here depends only on the configuration and the seed. Wall
times are the one exception and live in their own ``timings.csv``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .dataset import UnitSeries, format_time, load_fleet
from .helm import HelmEnsemble, HelmParams
from .strategies import (
    PAIR_METHODS,
    STRATEGIES,
    DetectionReport,
    failed_report,
    helm_pair_report,
    run_strategy,
    source_candidates,
    train_ufan_pair,
    ufan_pair_report,
)
from .ufan import TrainConfig, UfanModel, write_training_curve

log = logging.getLogger(__name__)

REPORT_COLUMNS = ["unit_id", "strategy", "source_unit_id", "fp_percent", "detected", "valid", "error"]
PAIR_COLUMNS = ["unit_id", "method", "source_unit_id", "fp_percent", "detected", "valid", "adversarial", "error"]
SWEEP_THRESHOLDS = tuple(range(1, 26))


@dataclass
class RunResult:
    reports: list[DetectionReport] = field(default_factory=list)
    pairs: list[DetectionReport] = field(default_factory=list)
    curves: dict[tuple[str, str], UfanModel] = field(default_factory=dict)

    @property
    def all_failed(self) -> bool:
        every = self.reports + self.pairs
        return bool(every) and all(r.error is not None for r in every)


# -- tasks (module level so they pickle into worker processes) ---------------


def _ufan_task(target: UnitSeries, source: UnitSeries, cfg: TrainConfig):
    try:
        return train_ufan_pair(target, source, cfg)
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        log.warning("UFAN training failed for %s <- %s: %s", target.unit_id, source.unit_id, exc)
        return exc


def _strategy_task(name, target, fleet, seed, params, ufan_cfg, models, r_grid, sliding):
    try:
        return run_strategy(name, target, fleet, seed, params, ufan_cfg, models, r_grid, sliding)
    except Exception as exc:  # recorded in the summary, never fatal
        log.warning("%s failed on %s: %s", name, target.unit_id, exc)
        return failed_report(target.unit_id, name, None, exc)


def _pair_task(method, target, source, seed, params, ufan_cfg, model):
    try:
        if method == "helm":
            return helm_pair_report(target, source, "H-H", seed, params)
        if isinstance(model, Exception):
            raise model
        return ufan_pair_report(target, source, model, seed, params, ufan_cfg)
    except Exception as exc:
        return failed_report(target.unit_id, PAIR_METHODS[method], source.unit_id, exc)


def _map(workers: int, fn, arg_lists: list[tuple]) -> list:
    if workers <= 1 or len(arg_lists) <= 1:
        return [fn(*args) for args in arg_lists]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, *args) for args in arg_lists]
        return [f.result() for f in futures]


# -- orchestration ------------------------------------------------------------


def select_targets(fleet: list[UnitSeries], wanted: list[str]) -> list[UnitSeries]:
    by_id = {u.unit_id: u for u in fleet}
    if wanted:
        missing = [w for w in wanted if w not in by_id]
        if missing:
            raise ValueError(f"unknown target units {missing}")
        return [by_id[w] for w in wanted]
    targets = [u for u in fleet if u.fault_time is not None]
    if not targets:
        raise ValueError("no unit in the manifest has a fault time; name targets explicitly")
    return targets


def run_experiment(cfg: ExperimentConfig, fleet: list[UnitSeries] | None = None) -> RunResult:
    fleet = fleet if fleet is not None else load_fleet(cfg.manifest)
    targets = select_targets(fleet, cfg.targets)
    params: HelmParams = cfg.helm
    ufan_cfg = cfg.ufan
    result = RunResult()

    # UFAN pairs are shared between the UFA selection and the all-pairs run
    models: dict[str, dict[str, UfanModel | Exception]] = {t.unit_id: {} for t in targets}
    if "UFA" in cfg.strategies or "ufan" in cfg.all_pairs:
        jobs = [(t, c) for t in targets for c in source_candidates(t, fleet)]
        trained = _map(cfg.workers, _ufan_task, [(t, c, ufan_cfg) for t, c in jobs])
        for (t, c), m in zip(jobs, trained):
            models[t.unit_id][c.unit_id] = m
            if isinstance(m, UfanModel):
                result.curves[(t.unit_id, c.unit_id)] = m

    ok_models = {t: {c: m for c, m in d.items() if isinstance(m, UfanModel)} for t, d in models.items()}
    strategy_jobs = [
        (name, t, fleet, cfg.seed, params, ufan_cfg, ok_models[t.unit_id], cfg.r_grid, cfg.sliding)
        for t in targets
        for name in STRATEGIES
        if name in cfg.strategies
    ]
    pair_jobs = [
        (method, t, c, cfg.seed, params, ufan_cfg, models[t.unit_id].get(c.unit_id))
        for t in targets
        for method in ("helm", "ufan")
        if method in cfg.all_pairs
        for c in source_candidates(t, fleet)
    ]
    result.reports = _map(cfg.workers, _strategy_task, strategy_jobs)
    result.pairs = _map(cfg.workers, _pair_task, pair_jobs)
    return result


# -- persistence ---------------------------------------------------------------


def _fmt(x: float) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.4f}"


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _report_row(r: DetectionReport) -> list:
    return [r.unit_id, r.strategy, r.source_unit_id or "", _fmt(r.fp_percent), int(r.detected), int(r.valid),
            r.error or ""]


def _model_doc(r: DetectionReport) -> dict | None:
    model = r.extra.get("model")
    if isinstance(model, HelmEnsemble):
        return model.to_dict()
    if isinstance(model, UfanModel):
        return {"kind": "ufan_pair", "ufan": model.to_dict(), "occ": r.extra["occ"].to_dict()}
    return None


def summary_rows(reports: list[DetectionReport], pairs: list[DetectionReport], strategies: list[str],
                 threshold: float = 15.0) -> tuple[list[str], list[list]]:
    """Per-target table: fp% per strategy, best pair and all-pairs counts per method."""
    header = ["unit_id", *strategies, "best_helm", "best_ufan", "n_valid_helm", "n_valid_ufan", "mean_fp_helm",
              "mean_fp_ufan"]
    units = sorted({r.unit_id for r in reports + pairs})
    by_key = {(r.unit_id, r.strategy): r for r in reports}
    rows = []
    for u in units:
        row = [u]
        for s in strategies:
            r = by_key.get((u, s))
            row.append("" if r is None else ("error" if r.error else _fmt(r.fp_percent)))
        for strategy in ("H-H", "UFA"):
            valid = [p.fp_percent for p in pairs if p.unit_id == u and p.strategy == strategy and p.valid_at(threshold)]
            row.append(_fmt(min(valid)) if valid else "")
        counts, means = [], []
        for strategy in ("H-H", "UFA"):
            mine = [p for p in pairs if p.unit_id == u and p.strategy == strategy]
            valid = [p.fp_percent for p in mine if p.valid_at(threshold)]
            counts.append(str(len(valid)) if mine else "")
            means.append(_fmt(float(np.mean(valid))) if valid else "")
        rows.append(row + counts + means)
    totals = ["n_valid"]
    for s in strategies:
        totals.append(str(sum(1 for r in reports if r.strategy == s and r.valid)))
    totals += ["", ""]
    for strategy in ("H-H", "UFA"):
        totals.append(str(sum(1 for p in pairs if p.strategy == strategy and p.valid_at(threshold))))
    for strategy in ("H-H", "UFA"):
        valid = [p.fp_percent for p in pairs if p.strategy == strategy and p.valid_at(threshold)]
        totals.append(_fmt(float(np.mean(valid))) if valid else "")
    rows.append(totals)
    return header, rows


def write_outputs(result: RunResult, cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "reports.csv", REPORT_COLUMNS, [_report_row(r) for r in result.reports])
    pair_rows = []
    for p in result.pairs:
        method = "helm" if p.strategy == "H-H" else "ufan"
        adv = p.extra.get("adversarial")
        # full precision so that sweeps re-threshold exactly
        pair_rows.append([p.unit_id, method, p.source_unit_id or "", repr(float(p.fp_percent)), int(p.detected),
                          int(p.valid), "" if adv is None else repr(float(adv)), p.error or ""])
    _write_csv(out / "pairs.csv", PAIR_COLUMNS, pair_rows)
    header, rows = summary_rows(result.reports, result.pairs, [s for s in STRATEGIES if s in cfg.strategies])
    _write_csv(out / "summary.csv", header, rows)
    _write_csv(
        out / "timings.csv",
        ["unit_id", "strategy", "source_unit_id", "wall_time_s"],
        [[r.unit_id, r.strategy, r.source_unit_id or "", f"{r.wall_time:.3f}"] for r in result.reports + result.pairs],
    )

    flags_dir = out / "flags"
    flags_dir.mkdir(exist_ok=True)
    for r in result.reports:
        if r.error is None:
            _write_csv(
                flags_dir / f"{r.unit_id}__{r.strategy}.csv",
                ["timestamp", "magnification", "flagged"],
                [[format_time(t), repr(float(s)), int(f)] for t, s, f in zip(r.timestamps, r.scores, r.flagged)],
            )
    curves_dir = out / "curves"
    if result.curves:
        curves_dir.mkdir(exist_ok=True)
    for (t, s), model in sorted(result.curves.items()):
        write_training_curve(model, curves_dir / f"{t}__{s}.csv")
    if cfg.save_models:
        models_dir = out / "models"
        models_dir.mkdir(exist_ok=True)
        for r in result.reports:
            doc = _model_doc(r)
            if doc is not None:
                with open(models_dir / f"{r.unit_id}__{r.strategy}.json", "w") as fh:
                    json.dump(doc, fh)
    return out


# -- sweep ----------------------------------------------------------------------


def read_pairs(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def sweep_rows(pairs: list[dict], thresholds=SWEEP_THRESHOLDS) -> list[list]:
    """Valid-pair count per (unit, method, threshold); valid = detected and fp below the threshold."""
    keys = sorted({(p["unit_id"], p["method"]) for p in pairs})
    rows = []
    for unit, method in keys:
        mine = [p for p in pairs if p["unit_id"] == unit and p["method"] == method and not p["error"]]
        for th in thresholds:
            n = sum(1 for p in mine if p["detected"] == "1" and float(p["fp_percent"]) < th)
            rows.append([unit, method, f"{th:g}", n])
    return rows


def write_sweep(out_dir: str | Path, thresholds=SWEEP_THRESHOLDS) -> Path:
    out_dir = Path(out_dir)
    pairs_path = out_dir / "pairs.csv"
    if not pairs_path.is_file():
        raise FileNotFoundError(f"{pairs_path} missing: run the experiment with all_pairs enabled first")
    path = out_dir / "sweep.csv"
    _write_csv(path, ["unit_id", "method", "threshold", "n_valid"], sweep_rows(read_pairs(pairs_path), thresholds))
    return path
