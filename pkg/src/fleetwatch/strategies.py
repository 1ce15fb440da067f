"""The six monitoring strategies and the detection/validity evaluation protocol.

Single-unit: ``H-9m``, ``H-2m`` and ``H-Inc`` (incremental retraining).
Pairwise, with a healthy source unit chosen from the fleet: ``H-H`` (HELM
magnification similarity), ``H-M`` (chunked MMD) and ``UFA`` (adversarial
feature alignment).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import (
    MONTH,
    STEP,
    TRAIN_SPAN,
    DataError,
    SplitSpec,
    UnitSeries,
    normalize,
    prepare_training,
    split,
    time_mask,
)
from .helm import HelmParams, ensemble_score, train_helm_ensemble, train_occ_ensemble
from .similarity import rank_by_distance, rank_sources
from .ufan import TrainConfig, UfanModel, adversarial_score, encode, train_ufan

STRATEGIES = ("H-9m", "H-2m", "H-Inc", "H-H", "H-M", "UFA")
PAIR_METHODS = {"helm": "H-H", "mmd": "H-M", "ufan": "UFA"}
VALID_FP = 15.0
R_GRID = (0.05, 0.10, 0.15, 0.20, 0.25)


@dataclass(frozen=True)
class DetectionReport:
    """Outcome of monitoring one target unit with one strategy.

    ``timestamps``/``scores``/``flagged`` cover every row after the training
    window (healthy, blackout and fault windows alike); only healthy and fault
    rows enter ``fp_percent`` and ``detected``.
    """

    unit_id: str
    strategy: str
    timestamps: np.ndarray
    scores: np.ndarray
    flagged: np.ndarray
    fp_percent: float
    detected: bool
    valid: bool
    source_unit_id: str | None = None
    wall_time: float = 0.0
    error: str | None = None
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not 0.0 <= self.fp_percent <= 100.0:
            raise ValueError(f"fp_percent out of range: {self.fp_percent}")
        if self.valid and not (self.detected and self.fp_percent < VALID_FP):
            raise ValueError("a valid report must detect the fault with fp_percent below 15")

    def valid_at(self, threshold: float) -> bool:
        return self.error is None and self.detected and self.fp_percent < threshold


def failed_report(unit_id: str, strategy: str, source: str | None, exc: Exception, wall_time: float = 0.0):
    """Placeholder for a run that raised: counted as invalid with 100% false positives."""
    empty = np.zeros(0)
    return DetectionReport(unit_id, strategy, empty.astype("datetime64[s]"), empty, empty.astype(bool), 100.0,
                           False, False, source, wall_time, error=f"{type(exc).__name__}: {exc}")


def evaluate(flags: np.ndarray, timestamps: np.ndarray, spec: SplitSpec) -> tuple[float, bool, bool]:
    """``(fp_percent, detected, valid)``; blackout and training rows are ignored."""
    flags = np.asarray(flags, dtype=bool)
    masks = spec.masks(timestamps)
    healthy = masks["healthy"]
    n_healthy = int(np.count_nonzero(healthy))
    if n_healthy == 0:
        raise DataError("empty healthy evaluation window")
    fp = 100.0 * np.count_nonzero(flags & healthy) / n_healthy
    detected = bool(np.any(flags & masks["fault"]))
    return float(fp), detected, bool(detected and fp < VALID_FP)


def _report(unit, strategy, spec, ts, scores, source=None, t0=None, **extra) -> DetectionReport:
    flagged = scores > 1.0
    fp, det, valid = evaluate(flagged, ts, spec)
    wall = 0.0 if t0 is None else time.perf_counter() - t0
    return DetectionReport(unit.unit_id, strategy, ts, scores, flagged, fp, det, valid, source, wall, extra=extra)


def _eval_rows(unit: UnitSeries, train_end) -> UnitSeries:
    return unit.window(train_end, None)


def _spec(unit: UnitSeries, train_end) -> SplitSpec:
    base = split(unit)
    return replace(base, train_end=train_end)


# -- single-unit strategies --------------------------------------------------


def baseline_train_end(unit: UnitSeries, train_months: int) -> np.datetime64:
    """End of the baseline training window.

    Two months means the standard 61-day window. Longer windows are clipped so
    at least one 14-day step of healthy evaluation precedes the blackout.
    """
    if train_months == 2:
        return unit.start + TRAIN_SPAN
    end = unit.start + train_months * MONTH
    spec = split(unit)
    limit = (spec.blackout_start if spec.blackout_start is not None else spec.end) - STEP
    return max(min(end, limit), unit.start + TRAIN_SPAN)


def run_baseline(unit: UnitSeries, train_months: int = 2, seed: int = 0,
                 params: HelmParams | None = None) -> DetectionReport:
    if train_months not in (2, 9):
        raise ValueError("train_months must be 2 or 9")
    t0 = time.perf_counter()
    train_end = baseline_train_end(unit, train_months)
    norm, train = prepare_training(unit, end=train_end)
    ens = train_helm_ensemble(train.values, params, seed)
    rows = _eval_rows(unit, train_end)
    scores = ensemble_score(ens, normalize(rows, norm).values)
    return _report(unit, f"H-{train_months}m", _spec(unit, train_end), rows.timestamps, scores, t0=t0,
                   n_train=len(train), model=ens)


@dataclass(frozen=True)
class IncrementalConfig:
    step: np.timedelta64 = STEP
    r: float = 0.1
    sliding: bool = False

    def __post_init__(self):
        if not 0.0 <= self.r <= 1.0:
            raise ValueError(f"ratio r must lie in [0, 1], got {self.r}")
        if not self.step > np.timedelta64(0, "s"):
            raise ValueError("step must be positive")


@dataclass(frozen=True)
class IncrementalStep:
    block_start: np.datetime64
    block_end: np.datetime64
    flagged_fraction: float
    absorbed: bool
    n_train_raw: int
    n_train: int


def run_incremental(unit: UnitSeries, cfg: IncrementalConfig | None = None, seed: int = 0,
                    params: HelmParams | None = None) -> DetectionReport:
    """Score 14-day blocks in turn and absorb those with a flagged fraction below ``r``.

    ``r = 1`` absorbs every block whatever its flags.

    A block's flags come from the model in force before that block is
    absorbed. Each retrain re-fits the normaliser and the thresholds on the
    grown training set.
    """
    cfg = cfg or IncrementalConfig()
    t0 = time.perf_counter()
    spec = split(unit)
    train_end = unit.start + TRAIN_SPAN
    healthy_end = spec.blackout_start if spec.blackout_start is not None else None
    rows = _eval_rows(unit, train_end)
    ts = rows.timestamps

    def fit(train_start, train_stop):
        raw = unit.window(train_start, train_stop)
        norm, train = prepare_training(raw, end=train_stop)
        ens = train_helm_ensemble(train.values, params, seed)
        return ensemble_score(ens, normalize(rows, norm).values), len(raw), len(train)

    train_start = unit.start
    current, n_raw, n_train = fit(train_start, train_end)
    scores = np.empty(len(rows))
    history = []
    block_start = train_end
    last = healthy_end if healthy_end is not None else unit.end + np.timedelta64(1, "s")
    while block_start < last:
        block_end = min(block_start + cfg.step, last)
        in_block = time_mask(ts, block_start, block_end)
        scores[in_block] = current[in_block]
        n_block = int(np.count_nonzero(in_block))
        frac = float(np.count_nonzero(current[in_block] > 1.0) / n_block) if n_block else 1.0
        # r = 1 absorbs every block, r = 0 none
        absorbed = n_block > 0 and (frac < cfg.r or cfg.r >= 1.0)
        if absorbed:
            if cfg.sliding:
                train_start = train_start + cfg.step
            current, n_raw, n_train = fit(train_start, block_end)
        history.append(IncrementalStep(block_start, block_end, frac, absorbed, n_raw, n_train))
        block_start = block_end
    rest = ts >= last
    scores[rest] = current[rest]
    return _report(unit, "H-Inc", spec, ts, scores, t0=t0, r=cfg.r, history=history)


def run_incremental_best(unit: UnitSeries, seed: int = 0, params: HelmParams | None = None,
                         grid: tuple[float, ...] = R_GRID, sliding: bool = False) -> DetectionReport:
    """Best report over the ``r`` grid: valid first, then lowest fp, then smallest r."""
    t0 = time.perf_counter()
    reports = [run_incremental(unit, IncrementalConfig(r=r, sliding=sliding), seed, params) for r in grid]
    best = min(reports, key=lambda rep: (not rep.valid, rep.fp_percent, rep.extra["r"]))
    return replace(best, wall_time=time.perf_counter() - t0)


# -- pairwise strategies -----------------------------------------------------


def source_candidates(target: UnitSeries, fleet: list[UnitSeries]) -> list[UnitSeries]:
    """Healthy fleet units other than the target, ordered by unit id."""
    cands = [u for u in fleet if u.unit_id != target.unit_id and u.fault_time is None]
    if not cands:
        raise ValueError(f"no healthy source candidate for {target.unit_id}")
    return sorted(cands, key=lambda u: u.unit_id)


def pair_data(target: UnitSeries, source: UnitSeries):
    """Target's normaliser, its filtered training rows and the source's filtered full year.

    Each unit is normalised with the normaliser fitted on its own first 61 days.
    """
    norm, target_train = prepare_training(target)
    _, source_all = prepare_training(source, whole=True)
    return norm, target_train.values, source_all.values


def train_ufan_pair(target: UnitSeries, source: UnitSeries, cfg: TrainConfig | None = None) -> UfanModel:
    _, tgt, src = pair_data(target, source)
    return train_ufan(src, tgt, cfg)


def helm_pair_report(target: UnitSeries, source: UnitSeries, strategy: str, seed: int = 0,
                     params: HelmParams | None = None) -> DetectionReport:
    t0 = time.perf_counter()
    norm, tgt, src = pair_data(target, source)
    ens = train_helm_ensemble(np.vstack([tgt, src]), params, seed)
    train_end = target.start + TRAIN_SPAN
    rows = _eval_rows(target, train_end)
    scores = ensemble_score(ens, normalize(rows, norm).values)
    return _report(target, strategy, _spec(target, train_end), rows.timestamps, scores, source.unit_id, t0,
                   model=ens)


def ufan_pair_report(target: UnitSeries, source: UnitSeries, model: UfanModel | None = None, seed: int = 0,
                     params: HelmParams | None = None, cfg: TrainConfig | None = None) -> DetectionReport:
    """One-class ELM ensemble on the aligned features of both units."""
    t0 = time.perf_counter()
    norm, tgt, src = pair_data(target, source)
    if model is None:
        model = train_ufan(src, tgt, cfg)
    occ = train_occ_ensemble(encode(model, np.vstack([tgt, src])), params, seed)
    train_end = target.start + TRAIN_SPAN
    rows = _eval_rows(target, train_end)
    scores = occ.score(encode(model, normalize(rows, norm).values))
    return _report(target, "UFA", _spec(target, train_end), rows.timestamps, scores, source.unit_id, t0,
                   adversarial=adversarial_score(model), model=model, occ=occ)


def ufan_models(target: UnitSeries, candidates: list[UnitSeries],
                cfg: TrainConfig | None = None) -> dict[str, UfanModel]:
    return {c.unit_id: train_ufan_pair(target, c, cfg) for c in candidates}


def select_ufan_source(models: dict[str, UfanModel]) -> str:
    """Candidate with the lowest final ``L_F - alpha * L_D`` (ties by unit id)."""
    return rank_by_distance("", "ufan", {k: adversarial_score(m) for k, m in models.items()}).best


def run_pairwise(target: UnitSeries, fleet: list[UnitSeries], method: str, seed: int = 0,
                 params: HelmParams | None = None, cfg: TrainConfig | None = None,
                 models: dict[str, UfanModel] | None = None) -> DetectionReport:
    """Pick the closest healthy source by ``method`` and monitor the target with the pair.

    ``models`` may carry already trained UFAN pairs keyed by source id.
    """
    if method not in PAIR_METHODS:
        raise ValueError(f"unknown pairwise method {method!r}")
    t0 = time.perf_counter()
    cands = source_candidates(target, fleet)
    by_id = {c.unit_id: c for c in cands}
    if method == "ufan":
        cfg = cfg or TrainConfig(seed=seed)
        models = models if models is not None else ufan_models(target, cands, cfg)
        best = select_ufan_source({k: models[k] for k in by_id})
        rep = ufan_pair_report(target, by_id[best], models[best], seed, params)
    else:
        best = rank_sources(target, cands, method, params, seed).best
        rep = helm_pair_report(target, by_id[best], PAIR_METHODS[method], seed, params)
    return replace(rep, wall_time=time.perf_counter() - t0)


def run_all_pairs(target: UnitSeries, fleet: list[UnitSeries], method: str, seed: int = 0,
                  params: HelmParams | None = None, cfg: TrainConfig | None = None,
                  models: dict[str, UfanModel] | None = None) -> list[DetectionReport]:
    """One report per healthy candidate; a failing pair is recorded as an invalid report."""
    if method not in ("helm", "ufan"):
        raise ValueError("all-pairs runs support the helm and ufan methods")
    out = []
    for cand in source_candidates(target, fleet):
        t0 = time.perf_counter()
        try:
            if method == "helm":
                out.append(helm_pair_report(target, cand, "H-H", seed, params))
            else:
                model = None if models is None else models.get(cand.unit_id)
                out.append(ufan_pair_report(target, cand, model, seed, params, cfg or TrainConfig(seed=seed)))
        except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            out.append(failed_report(target.unit_id, PAIR_METHODS[method], cand.unit_id, exc,
                                     time.perf_counter() - t0))
    return out


@dataclass(frozen=True)
class PairSummary:
    n_pairs: int
    n_valid: int
    mean_fp_valid: float  # nan when no pair is valid


def summarize_pairs(reports: list[DetectionReport], threshold: float = VALID_FP) -> PairSummary:
    valid = [r for r in reports if r.valid_at(threshold)]
    mean = float(np.mean([r.fp_percent for r in valid])) if valid else float("nan")
    return PairSummary(len(reports), len(valid), mean)


def run_strategy(name: str, target: UnitSeries, fleet: list[UnitSeries], seed: int = 0,
                 params: HelmParams | None = None, cfg: TrainConfig | None = None,
                 models: dict[str, UfanModel] | None = None, r_grid: tuple[float, ...] = R_GRID,
                 sliding: bool = False) -> DetectionReport:
    if name == "H-9m":
        return run_baseline(target, 9, seed, params)
    if name == "H-2m":
        return run_baseline(target, 2, seed, params)
    if name == "H-Inc":
        return run_incremental_best(target, seed, params, r_grid, sliding)
    method = {v: k for k, v in PAIR_METHODS.items()}.get(name)
    if method is None:
        raise ValueError(f"unknown strategy {name!r}; expected one of {STRATEGIES}")
    return run_pairwise(target, fleet, method, seed, params, cfg, models)
