"""Hierarchical ELM: sparse compressive autoencoder feeding a one-class ELM.

Scores are ``|1 - y|`` of the one-class output; the decision threshold is
``gamma * percentile_p`` of the training scores and a point's magnification is
its score over that threshold (flagged when > 1). An ensemble averages the
per-model magnifications.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .elm import (
    OutputWeights,
    RandomLayer,
    derive_seed,
    hidden,
    make_random_layer,
    solve_lasso_fista,
    solve_ridge,
)


@dataclass(frozen=True)
class HelmParams:
    n_features: int = 10
    lam: float = 1e-3
    n_neurons: int = 200
    C: float = 1e-5
    p: float = 99.5
    gamma: float = 1.2
    k: int = 8
    fista_max_iters: int = 5000
    fista_tol: float = 1e-8


def percentile(x: np.ndarray, p: float) -> float:
    """Percentile with linear interpolation between order statistics."""
    return float(np.percentile(np.asarray(x, dtype=np.float64), p))


def calibrate_threshold(train_scores: np.ndarray, gamma: float = 1.2, p: float = 99.5) -> float:
    """Decision threshold ``gamma * percentile_p(train_scores)``."""
    if not 1.0 <= gamma <= 2.0:
        raise ValueError(f"gamma must lie in [1, 2], got {gamma}")
    if not 95.0 <= p <= 100.0:
        raise ValueError(f"p must lie in [95, 100], got {p}")
    return gamma * percentile(train_scores, p)


@dataclass(frozen=True)
class AutoencoderElm:
    layer: RandomLayer
    beta: OutputWeights

    @property
    def n_features(self) -> int:
        return self.layer.n_neurons

    def features(self, X: np.ndarray) -> np.ndarray:
        return hidden(self.layer, X)

    def reconstruct(self, X: np.ndarray) -> np.ndarray:
        return self.features(X) @ self.beta.beta

    def to_dict(self) -> dict:
        return {"layer": self.layer.to_dict(), "beta": self.beta.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "AutoencoderElm":
        return cls(RandomLayer.from_dict(d["layer"]), OutputWeights.from_dict(d["beta"]))


@dataclass(frozen=True)
class OneClassElm:
    layer: RandomLayer
    beta: OutputWeights
    threshold: float

    def scores(self, F: np.ndarray) -> np.ndarray:
        """Distance-like score ``|1 - y|`` per row."""
        return np.abs(1.0 - (hidden(self.layer, F) @ self.beta.beta)[:, 0])

    def to_dict(self) -> dict:
        return {"layer": self.layer.to_dict(), "beta": self.beta.to_dict(), "threshold": self.threshold}

    @classmethod
    def from_dict(cls, d: dict) -> "OneClassElm":
        return cls(RandomLayer.from_dict(d["layer"]), OutputWeights.from_dict(d["beta"]), float(d["threshold"]))


@dataclass(frozen=True)
class HelmModel:
    ae: AutoencoderElm
    occ: OneClassElm
    seed: int

    def magnification(self, X: np.ndarray) -> np.ndarray:
        return magnification(self.occ, self.ae.features(X))


@dataclass(frozen=True)
class HelmEnsemble:
    models: tuple[HelmModel, ...]
    params: HelmParams = field(default_factory=HelmParams)

    def __post_init__(self):
        if not self.models:
            raise ValueError("an ensemble needs at least one model")
        seeds = [m.seed for m in self.models]
        if len(set(seeds)) != len(seeds):
            raise ValueError(f"ensemble seeds must be distinct, got {seeds}")

    def to_dict(self) -> dict:
        return {
            "kind": "helm_ensemble",
            "params": asdict(self.params),
            "models": [{"seed": m.seed, "ae": m.ae.to_dict(), "occ": m.occ.to_dict()} for m in self.models],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HelmEnsemble":
        models = tuple(
            HelmModel(AutoencoderElm.from_dict(m["ae"]), OneClassElm.from_dict(m["occ"]), int(m["seed"]))
            for m in d["models"]
        )
        return cls(models, HelmParams(**d["params"]))

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path: str | Path) -> "HelmEnsemble":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def train_autoencoder(
    X_train: np.ndarray,
    n_features: int = 10,
    lam: float = 1e-3,
    seed: int = 0,
    max_iters: int = 5000,
    tol: float = 1e-8,
) -> AutoencoderElm:
    """Random sigmoid encoder with an L1-sparse linear decoder solved by FISTA."""
    X_train = np.asarray(X_train, dtype=np.float64)
    if X_train.ndim != 2 or X_train.shape[0] < 2:
        raise ValueError("autoencoder training needs at least 2 rows")
    if not n_features < X_train.shape[1]:
        raise ValueError(f"n_features={n_features} must be below the input dimension {X_train.shape[1]}")
    layer = make_random_layer(seed, X_train.shape[1], n_features)
    beta = solve_lasso_fista(hidden(layer, X_train), X_train, lam, max_iters=max_iters, tol=tol)
    return AutoencoderElm(layer, beta)


def reconstruction_residuals(ae: AutoencoderElm, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return ae.reconstruct(X) - X


def train_occ(
    F_train: np.ndarray,
    C: float = 1e-5,
    n_neurons: int = 200,
    seed: int = 0,
    gamma: float = 1.2,
    p: float = 99.5,
) -> OneClassElm:
    """Ridge one-class ELM with unit target; threshold ``gamma * percentile_p`` of train scores."""
    F_train = np.asarray(F_train, dtype=np.float64)
    if F_train.ndim != 2 or F_train.shape[0] < 10:
        raise ValueError("one-class training needs at least 10 rows")
    layer = make_random_layer(seed, F_train.shape[1], n_neurons)
    H = hidden(layer, F_train)
    beta = solve_ridge(H, np.ones((H.shape[0], 1)), C)
    scores = np.abs(1.0 - (H @ beta.beta)[:, 0])
    threshold = calibrate_threshold(scores, gamma, p)
    if not threshold > 0.0:
        raise ValueError("degenerate feature matrix: training scores are all zero")
    return OneClassElm(layer, beta, float(threshold))


def magnify(scores: np.ndarray, threshold: float) -> np.ndarray:
    """Score over threshold; a row is flagged exactly when this exceeds 1."""
    if not threshold > 0.0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    return np.asarray(scores, dtype=np.float64) / threshold


def magnification(occ: OneClassElm, F: np.ndarray) -> np.ndarray:
    return magnify(occ.scores(F), occ.threshold)


def occ_seed(model_seed: int) -> int:
    """Seed of the one-class layer of the HELM member seeded ``model_seed``."""
    return derive_seed(model_seed, 1)


def train_helm(X_train: np.ndarray, params: HelmParams, seed: int) -> HelmModel:
    ae = train_autoencoder(
        X_train, params.n_features, params.lam, seed, max_iters=params.fista_max_iters, tol=params.fista_tol
    )
    occ = train_occ(ae.features(X_train), params.C, params.n_neurons, occ_seed(seed), params.gamma, params.p)
    return HelmModel(ae, occ, seed)


def train_helm_ensemble(X_train: np.ndarray, params: HelmParams | None = None, base_seed: int = 0) -> HelmEnsemble:
    """Train ``params.k`` members seeded ``base_seed .. base_seed + k - 1``."""
    params = params or HelmParams()
    if params.k < 1:
        raise ValueError("ensemble size k must be >= 1")
    X_train = np.asarray(X_train, dtype=np.float64)
    models = tuple(train_helm(X_train, params, base_seed + i) for i in range(params.k))
    return HelmEnsemble(models, params)


def member_magnifications(ens: HelmEnsemble, X: np.ndarray) -> np.ndarray:
    """(k, n) magnification of every member."""
    X = np.asarray(X, dtype=np.float64)
    return np.stack([m.magnification(X) for m in ens.models])


def ensemble_score(ens: HelmEnsemble, X: np.ndarray) -> np.ndarray:
    """Mean member magnification per row; a row is flagged when this exceeds 1."""
    return member_magnifications(ens, X).mean(axis=0)


def flags(scores: np.ndarray) -> np.ndarray:
    return np.asarray(scores) > 1.0


@dataclass(frozen=True)
class OccEnsemble:
    """One-class ELMs on an externally supplied feature map (UFAN features)."""

    members: tuple[OneClassElm, ...]

    def score(self, F: np.ndarray) -> np.ndarray:
        return np.mean([magnification(m, F) for m in self.members], axis=0)

    def to_dict(self) -> dict:
        return {"kind": "occ_ensemble", "members": [m.to_dict() for m in self.members]}

    @classmethod
    def from_dict(cls, d: dict) -> "OccEnsemble":
        return cls(tuple(OneClassElm.from_dict(m) for m in d["members"]))


def train_occ_ensemble(F_train: np.ndarray, params: HelmParams | None = None, base_seed: int = 0) -> OccEnsemble:
    params = params or HelmParams()
    return OccEnsemble(
        tuple(
            train_occ(F_train, params.C, params.n_neurons, occ_seed(base_seed + i), params.gamma, params.p)
            for i in range(params.k)
        )
    )
