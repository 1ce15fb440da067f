"""Dataset similarity between fleet units and source ranking."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from .dataset import MONTH, UnitSeries, normalize, prepare_training
from .helm import HelmEnsemble, HelmParams, ensemble_score, train_helm_ensemble

DEFAULT_WIDTHS = (0.05, 0.1, 0.2, 0.5, 1.0, 2.0)
CHUNK_CAP = 10_000
MIN_CHUNK_ROWS = 10
_BLOCK_ROWS = 1024


@dataclass(frozen=True)
class KernelBank:
    """Gaussian kernels ``exp(-||a-b||^2 / (2 w^2))`` for each width ``w``."""

    widths: tuple[float, ...] = DEFAULT_WIDTHS

    def __post_init__(self):
        widths = tuple(float(w) for w in self.widths)
        if not widths or any(not w > 0 for w in widths):
            raise ValueError(f"kernel widths must be a nonempty list of positives, got {self.widths}")
        object.__setattr__(self, "widths", widths)


@dataclass(frozen=True)
class SimilarityRanking:
    target_id: str
    method: str
    candidates: tuple[tuple[str, float], ...] = field(default_factory=tuple)

    @property
    def best(self) -> str:
        return self.candidates[0][0]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["target_id", "candidate_id", "method", "distance", "rank"])
            for rank, (cid, dist) in enumerate(self.candidates, start=1):
                w.writerow([self.target_id, cid, self.method, repr(dist), rank])


def rank_by_distance(target_id: str, method: str, distances: dict[str, float]) -> SimilarityRanking:
    """Ascending by distance, ties broken by unit id."""
    ordered = sorted(distances.items(), key=lambda kv: (kv[1], kv[0]))
    return SimilarityRanking(target_id, method, tuple((k, float(v)) for k, v in ordered))


# -- HELM distance -----------------------------------------------------------


def helm_distance(target_ensemble: HelmEnsemble, candidate: np.ndarray) -> float:
    """Mean ensemble magnification of the candidate's rows under the target's model."""
    return float(np.mean(ensemble_score(target_ensemble, candidate)))


# -- MMD ---------------------------------------------------------------------


def _kernel_means(X: np.ndarray, Y: np.ndarray, widths: tuple[float, ...]) -> np.ndarray:
    """Mean of ``k_w(x, y)`` over all pairs, one entry per width (row-blocked)."""
    scales = np.array([-0.5 / (w * w) for w in widths])
    total = np.zeros(len(widths))
    for i in range(0, X.shape[0], _BLOCK_ROWS):
        d2 = cdist(X[i:i + _BLOCK_ROWS], Y, "sqeuclidean")
        for k, s in enumerate(scales):
            total[k] += np.exp(s * d2).sum()
    return total / (X.shape[0] * Y.shape[0])


def _canonical(X: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # fixed argument order for the cross term makes the estimate exactly symmetric
    kx = (X.shape, X.tobytes())
    ky = (Y.shape, Y.tobytes())
    return (X, Y) if kx <= ky else (Y, X)


def mmd_squared(X: np.ndarray, Y: np.ndarray, bank: KernelBank | None = None, *, unbiased: bool = False,
                _self_terms: tuple[np.ndarray, np.ndarray] | None = None) -> float:
    """Squared MMD summed over the kernel bank.

    Biased V-statistic by default: ``mean k(x,x') + mean k(y,y') - 2 mean k(x,y)``
    with the diagonal included. ``unbiased=True`` drops the diagonals.
    """
    bank = bank or KernelBank()
    X = np.ascontiguousarray(X, dtype=np.float64)
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape} vs {Y.shape}")
    if X.shape[0] < 1 or Y.shape[0] < 1:
        raise ValueError("both samples need at least one row")
    if _self_terms is None:
        kxx = _self_kernel_mean(X, bank, unbiased)
        kyy = _self_kernel_mean(Y, bank, unbiased)
    else:
        kxx, kyy = _self_terms
    A, B = _canonical(X, Y)
    kxy = _kernel_means(A, B, bank.widths)
    return float(np.sum(kxx + kyy - 2.0 * kxy))


def _self_kernel_mean(X: np.ndarray, bank: KernelBank, unbiased: bool) -> np.ndarray:
    means = _kernel_means(X, X, bank.widths)
    if not unbiased:
        return means
    n = X.shape[0]
    if n < 2:
        raise ValueError("the unbiased estimator needs at least 2 rows per sample")
    # every k(x, x) = 1 on the diagonal
    return (means * n * n - n) / (n * (n - 1))


def month_chunks(series: UnitSeries, chunk: np.timedelta64 = MONTH) -> list[np.ndarray]:
    """Consecutive ``chunk``-long row blocks from the series start.

    A trailing remainder shorter than ``chunk`` is merged into the last block.
    """
    ts = series.timestamps
    n_chunks = max(int((ts[-1] - ts[0]) // chunk), 1)
    edges = [ts[0] + k * chunk for k in range(1, n_chunks)]
    bounds = np.searchsorted(ts, edges, side="left")
    return [series.values[a:b] for a, b in zip([0, *bounds], [*bounds, len(ts)])]


def _cap_rows(X: np.ndarray, cap: int | None, seed: int) -> np.ndarray:
    if cap is None or X.shape[0] <= cap:
        return X
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(X.shape[0], size=cap, replace=False))
    return X[idx]


def mmd_chunked(
    X: UnitSeries,
    Y: UnitSeries,
    bank: KernelBank | None = None,
    chunk: np.timedelta64 = MONTH,
    cap: int | None = CHUNK_CAP,
    min_rows: int = MIN_CHUNK_ROWS,
    seed: int = 0,
) -> float:
    """Mean squared MMD over every (X-chunk, Y-chunk) pair of month-long chunks.

    Chunks with fewer than ``min_rows`` rows are skipped; chunks above ``cap``
    rows are uniformly subsampled with a fixed seed.
    """
    bank = bank or KernelBank()
    xs = [_cap_rows(c, cap, seed) for c in month_chunks(X, chunk) if c.shape[0] >= min_rows]
    ys = [_cap_rows(c, cap, seed) for c in month_chunks(Y, chunk) if c.shape[0] >= min_rows]
    if not xs or not ys:
        raise ValueError(f"no chunk with >= {min_rows} rows in {X.unit_id if not xs else Y.unit_id}")
    sx = [_self_kernel_mean(c, bank, False) for c in xs]
    sy = [_self_kernel_mean(c, bank, False) for c in ys]
    vals = [
        mmd_squared(a, b, bank, _self_terms=(ka, kb))
        for a, ka in zip(xs, sx)
        for b, kb in zip(ys, sy)
    ]
    return float(np.mean(vals))


def rank_sources(
    target: UnitSeries,
    fleet: list[UnitSeries],
    method: str,
    params: HelmParams | None = None,
    seed: int = 0,
    bank: KernelBank | None = None,
    cap: int | None = CHUNK_CAP,
) -> SimilarityRanking:
    """Rank fleet units by closeness to the target's 61-day training window.

    ``helm``: mean magnification of each candidate (normalised with the
    target's normaliser) under an ensemble trained on the target.
    ``mmd``: chunked MMD between the target's training data and each
    candidate's full series, each normalised and filtered with its own
    training-window normaliser.
    """
    if not fleet:
        raise ValueError("empty fleet")
    norm, target_train = prepare_training(target)
    distances: dict[str, float] = {}
    if method == "helm":
        ens = train_helm_ensemble(target_train.values, params, seed)
        for cand in fleet:
            distances[cand.unit_id] = helm_distance(ens, normalize(cand, norm).values)
    elif method == "mmd":
        for cand in fleet:
            _, cand_all = prepare_training(cand, whole=True)
            distances[cand.unit_id] = mmd_chunked(target_train, cand_all, bank, cap=cap, seed=seed)
    else:
        raise ValueError(f"unknown similarity method {method!r}")
    return rank_by_distance(target.unit_id, method, distances)
