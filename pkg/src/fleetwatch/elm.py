"""Randomised single-hidden-layer networks and their regularised output solvers.

Every ELM-based model in the package is built from the pieces here: a frozen
random layer ``H = sigmoid(X @ A + B)`` and an output matrix ``beta`` solved
either in closed form (ridge) or with FISTA (L1 / LASSO).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import expit

POWER_ITERATIONS = 30
LIPSCHITZ_SAFETY = 1.01
# consecutive small-change iterations required before stopping
STOP_PATIENCE = 5
# plain proximal steps run after FISTA stops, until the iterate stops moving
POLISH_STEPS = 200
POLISH_TOL = 1e-13


class SingularSystemError(np.linalg.LinAlgError):
    """Raised when an unregularised normal-equation system is not invertible."""


def derive_seed(seed: int, stream: int) -> int:
    """Map ``(seed, stream)`` to an independent 63-bit integer seed."""
    state = np.random.SeedSequence([int(seed), int(stream)]).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class RandomLayer:
    """Frozen input weights ``A`` (in_dim x n_neurons) and biases ``B``."""

    weights: np.ndarray
    biases: np.ndarray
    seed: int
    activation: str = "sigmoid"

    @property
    def in_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def n_neurons(self) -> int:
        return self.weights.shape[1]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "activation": self.activation,
            "weights": self.weights.tolist(),
            "biases": self.biases.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RandomLayer":
        return cls(
            weights=_frozen(np.asarray(d["weights"], dtype=np.float64).reshape(-1, len(d["biases"]))),
            biases=_frozen(d["biases"]),
            seed=int(d["seed"]),
            activation=d.get("activation", "sigmoid"),
        )


@dataclass(frozen=True)
class OutputWeights:
    """Solved output matrix ``beta`` (n_neurons x out_dim).

    ``converged`` and ``n_iter`` are only meaningful for iterative solves.
    """

    beta: np.ndarray
    converged: bool = True
    n_iter: int = 0

    def to_dict(self) -> dict:
        return {"beta": self.beta.tolist(), "converged": self.converged, "n_iter": self.n_iter}

    @classmethod
    def from_dict(cls, d: dict) -> "OutputWeights":
        beta = np.asarray(d["beta"], dtype=np.float64)
        if beta.ndim == 1:
            beta = beta.reshape(-1, 1)
        return cls(beta=_frozen(beta), converged=bool(d["converged"]), n_iter=int(d["n_iter"]))


def make_random_layer(seed: int, in_dim: int, n_neurons: int) -> RandomLayer:
    """Draw ``A`` then ``B`` i.i.d. uniform on [-1, 1] from a PCG64 stream seeded by ``seed``."""
    if in_dim < 1 or n_neurons < 1:
        raise ValueError(f"layer dimensions must be >= 1, got in_dim={in_dim}, n_neurons={n_neurons}")
    rng = np.random.Generator(np.random.PCG64(seed))
    weights = rng.uniform(-1.0, 1.0, size=(in_dim, n_neurons))
    biases = rng.uniform(-1.0, 1.0, size=n_neurons)
    return RandomLayer(weights=_frozen(weights), biases=_frozen(biases), seed=int(seed))


def hidden(layer: RandomLayer, X: np.ndarray) -> np.ndarray:
    """Hidden activations ``sigmoid(X @ A + B)``, shape (n, n_neurons)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != layer.in_dim:
        raise ValueError(f"expected input with {layer.in_dim} columns, got shape {X.shape}")
    return expit(X @ layer.weights + layer.biases)


def solve_ridge(H: np.ndarray, T: np.ndarray, C: float) -> OutputWeights:
    """Solve ``(C*I + H^T H) beta = H^T T`` by Cholesky factorisation.

    This is the minimiser of ``||H beta - T||^2 + C ||beta||^2``.
    """
    H = np.asarray(H, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    if T.ndim == 1:
        T = T[:, None]
    if H.ndim != 2 or H.shape[0] < 1 or H.shape[0] != T.shape[0]:
        raise ValueError(f"incompatible shapes H={H.shape}, T={T.shape}")
    if C < 0:
        raise ValueError(f"C must be non-negative, got {C}")
    gram = H.T @ H
    gram[np.diag_indices_from(gram)] += C
    rhs = H.T @ T
    try:
        factor = scipy.linalg.cho_factor(gram, lower=False, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"normal equations are singular (C={C})") from exc
    beta = scipy.linalg.cho_solve(factor, rhs)
    if not np.all(np.isfinite(beta)):
        raise SingularSystemError(f"normal equations are singular (C={C})")
    return OutputWeights(beta=_frozen(beta))


def soft_threshold(x: np.ndarray, amount: float) -> np.ndarray:
    return np.sign(x) * np.maximum(np.abs(x) - amount, 0.0)


def lasso_objective(H: np.ndarray, X: np.ndarray, beta: np.ndarray, lam: float) -> float:
    """``||H beta - X||_F^2 + lam * sum|beta|``."""
    r = H @ beta - X
    return float(np.sum(r * r) + lam * np.sum(np.abs(beta)))


def largest_eigenvalue(M: np.ndarray, n_iter: int = POWER_ITERATIONS) -> float:
    """Power-iteration estimate of the top eigenvalue of a symmetric PSD matrix."""
    v = np.ones(M.shape[0]) / np.sqrt(M.shape[0])
    est = 0.0
    for _ in range(n_iter):
        w = M @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        est = float(v @ w)
        v = w / norm
    return max(est, float(v @ (M @ v)))


def solve_lasso_fista(
    H: np.ndarray,
    X_target: np.ndarray,
    lam: float,
    max_iters: int = 5000,
    tol: float = 1e-8,
) -> OutputWeights:
    """Minimise ``||H beta - X||^2 + lam * ||beta||_1`` with FISTA.

    The smooth part has gradient ``2 H^T (H beta - X)`` whose Lipschitz constant
    ``L`` is the top eigenvalue of ``2 H^T H`` (power iteration, times 1.01).
    With step ``1/L`` the proximal step soft-thresholds by ``lam / L``; for
    ``H = I`` this gives the closed form ``soft(x, lam / 2)``.

    Momentum is reset whenever a step would increase the objective, so the
    accepted iterates are monotone. Stops once the relative change of the
    objective stays below ``tol`` for ``STOP_PATIENCE`` consecutive steps,
    then takes momentum-free proximal steps (at most ``POLISH_STEPS``) while
    the iterate still moves, since the objective cannot resolve the last digits
    of ``beta``. Hitting ``max_iters`` is not fatal: the result has
    ``converged=False``.
    """
    H = np.asarray(H, dtype=np.float64)
    X_target = np.asarray(X_target, dtype=np.float64)
    if X_target.ndim == 1:
        X_target = X_target[:, None]
    if lam <= 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    if not (np.all(np.isfinite(H)) and np.all(np.isfinite(X_target))):
        raise ValueError("non-finite values in LASSO inputs")
    if H.shape[0] != X_target.shape[0]:
        raise ValueError(f"incompatible shapes H={H.shape}, X={X_target.shape}")

    # The problem only touches H through these; n drops out of the loop.
    gram = 2.0 * (H.T @ H)
    cross = 2.0 * (H.T @ X_target)
    const = float(np.sum(X_target * X_target))
    L = largest_eigenvalue(gram) * LIPSCHITZ_SAFETY
    beta = np.zeros((H.shape[1], X_target.shape[1]))
    if L == 0.0:
        return OutputWeights(beta=_frozen(beta), converged=True, n_iter=0)
    step = 1.0 / L
    shrink = lam * step

    def objective(b: np.ndarray) -> float:
        # ||Hb - X||^2 expanded through the precomputed Gram terms
        quad = 0.5 * np.sum(b * (gram @ b)) - np.sum(b * cross) + const
        return float(quad + lam * np.sum(np.abs(b)))

    y = beta.copy()
    t = 1.0
    f_prev = objective(beta)
    converged = False
    calm = 0
    n_iter = 0
    for n_iter in range(1, max_iters + 1):
        beta_next = soft_threshold(y - step * (gram @ y - cross), shrink)
        f = objective(beta_next)
        small = abs(f_prev - f) <= tol * max(abs(f), np.finfo(float).tiny)
        calm = calm + 1 if small else 0
        if f > f_prev:
            # momentum overshot: restart from the last accepted iterate
            t = 1.0
            y = beta.copy()
        else:
            t_next = (1.0 + np.sqrt(1.0 + 4.0 * t * t)) / 2.0
            y = beta_next + ((t - 1.0) / t_next) * (beta_next - beta)
            beta, t = beta_next, t_next
            f_prev = f
        if calm >= STOP_PATIENCE:
            converged = True
            break
    if converged:
        for _ in range(POLISH_STEPS):
            nxt = soft_threshold(beta - step * (gram @ beta - cross), shrink)
            # step <= 1/L, so plain proximal steps never increase the objective
            moved = np.max(np.abs(nxt - beta))
            beta = nxt
            if moved <= POLISH_TOL * max(1.0, float(np.max(np.abs(beta)))):
                break
    return OutputWeights(beta=_frozen(beta), converged=converged, n_iter=n_iter)
