"""Unsupervised feature alignment network.

A dense encoder maps both units into a 10-d feature space. A discriminator
tries to tell source rows (label 1) from target rows (label 0). The encoder
is trained to keep pairwise distances homothetic to the input space while a
gradient reversal layer makes it *maximise* the discriminator loss.

Everything is plain numpy with hand-written backprop so that the gradient
algebra is directly inspectable (see :func:`ufan_gradients`).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import expit

ENCODER_WIDTHS = (15, 10)
DISCRIMINATOR_WIDTHS = (10, 5, 1)
PROB_CLAMP = 1e-7


class FeatureCollapseError(ValueError):
    """All pairwise feature distances vanished; no homothety factor exists."""


class DivergenceError(FloatingPointError):
    """A training loss became non-finite."""


_ACTIVATIONS = {
    "tanh": (np.tanh, lambda out: 1.0 - out * out),
    "sigmoid": (expit, lambda out: out * (1.0 - out)),
    "linear": (lambda z: z, lambda out: np.ones_like(out)),
}


@dataclass
class DenseLayer:
    weights: np.ndarray  # (in, out)
    bias: np.ndarray  # (out,)
    activation: str = "tanh"


@dataclass
class DenseNet:
    layers: list[DenseLayer]

    @property
    def in_dim(self) -> int:
        return self.layers[0].weights.shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weights.shape[1]

    def forward(self, X: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Return the output and the list of layer inputs/outputs for backprop."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.in_dim:
            raise ValueError(f"expected input with {self.in_dim} columns, got shape {X.shape}")
        outs = [X]
        for layer in self.layers:
            act, _ = _ACTIVATIONS[layer.activation]
            outs.append(act(outs[-1] @ layer.weights + layer.bias))
        return outs[-1], outs

    def backward(
        self, outs: list[np.ndarray], grad_out: np.ndarray, *, pre_activation: bool = False
    ) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
        """Backprop ``grad_out`` (w.r.t. the net output) to parameters and input.

        With ``pre_activation=True`` the incoming gradient is taken w.r.t. the
        last layer's pre-activation instead (used for the logistic head).
        """
        grads: list[tuple[np.ndarray, np.ndarray]] = []
        g = grad_out
        for k in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[k]
            if not (pre_activation and k == len(self.layers) - 1):
                g = g * _ACTIVATIONS[layer.activation][1](outs[k + 1])
            grads.append((outs[k].T @ g, g.sum(axis=0)))
            g = g @ layer.weights.T
        grads.reverse()
        return grads, g

    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in (layer.weights, layer.bias)]

    def copy(self) -> "DenseNet":
        return DenseNet([DenseLayer(l.weights.copy(), l.bias.copy(), l.activation) for l in self.layers])

    def to_dict(self) -> dict:
        return {
            "layers": [
                {"weights": l.weights.tolist(), "bias": l.bias.tolist(), "activation": l.activation}
                for l in self.layers
            ]
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DenseNet":
        layers = []
        for l in d["layers"]:
            bias = np.asarray(l["bias"], dtype=np.float64)
            weights = np.asarray(l["weights"], dtype=np.float64).reshape(-1, bias.shape[0])
            layers.append(DenseLayer(weights, bias, l["activation"]))
        return cls(layers)


def glorot_net(rng: np.random.Generator, in_dim: int, widths: tuple[int, ...], activations: list[str]) -> DenseNet:
    """Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases."""
    layers = []
    fan_in = in_dim
    for width, act in zip(widths, activations):
        limit = math.sqrt(6.0 / (fan_in + width))
        layers.append(DenseLayer(rng.uniform(-limit, limit, size=(fan_in, width)), np.zeros(width), act))
        fan_in = width
    return DenseNet(layers)


@dataclass
class TrainConfig:
    batch_size: int = 150
    epochs: int = 100
    learning_rate: float = 1e-4
    alpha: float = 1.0
    seed: int = 0
    optimizer: str = "adam"  # "adam" | "sgd"
    loss_reading: str = "squared"  # "squared" | "absolute"

    def __post_init__(self):
        if self.batch_size < 2 or self.epochs < 1 or self.learning_rate <= 0:
            raise ValueError("batch_size >= 2, epochs >= 1 and learning_rate > 0 are required")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.loss_reading not in ("squared", "absolute"):
            raise ValueError(f"unknown loss reading {self.loss_reading!r}")


@dataclass
class EpochRecord:
    L_F: float
    L_D: float
    adversarial: float


@dataclass
class UfanModel:
    encoder: DenseNet
    discriminator: DenseNet
    alpha: float
    eta: float = float("nan")
    config: TrainConfig = field(default_factory=TrainConfig)
    history: list[EpochRecord] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "encoder": self.encoder.to_dict(),
            "discriminator": self.discriminator.to_dict(),
            "alpha": self.alpha,
            "eta": self.eta,
            "config": vars(self.config).copy(),
            "history": [vars(h).copy() for h in self.history],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UfanModel":
        return cls(
            encoder=DenseNet.from_dict(d["encoder"]),
            discriminator=DenseNet.from_dict(d["discriminator"]),
            alpha=float(d["alpha"]),
            eta=float(d["eta"]),
            config=TrainConfig(**d["config"]),
            history=[EpochRecord(**h) for h in d["history"]],
        )


def init_model(in_dim: int, cfg: TrainConfig, rng: np.random.Generator | None = None) -> UfanModel:
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    encoder = glorot_net(rng, in_dim, ENCODER_WIDTHS, ["tanh", "tanh"])
    discriminator = glorot_net(rng, ENCODER_WIDTHS[-1], DISCRIMINATOR_WIDTHS, ["tanh", "tanh", "sigmoid"])
    return UfanModel(encoder=encoder, discriminator=discriminator, alpha=cfg.alpha, config=cfg)


def encode(model: UfanModel, X: np.ndarray) -> np.ndarray:
    """Feature matrix (n, 10)."""
    return model.encoder.forward(X)[0]


def discriminate(model: UfanModel, F: np.ndarray) -> np.ndarray:
    """Probability that each feature row comes from the source unit."""
    return model.discriminator.forward(F)[0][:, 0]


# -- losses ------------------------------------------------------------------


def _weighted_median(values: np.ndarray, weights: np.ndarray) -> float:
    order = np.argsort(values, kind="stable")
    v, w = values[order], weights[order]
    cum = np.cumsum(w)
    return float(v[np.searchsorted(cum, 0.5 * cum[-1])])


def optimal_eta(dX: np.ndarray, dF: np.ndarray, weights: np.ndarray | None = None, reading: str = "squared") -> float:
    """Scale ``eta`` minimising ``sum w * |dX - eta*dF|^q`` (q=2 squared, q=1 absolute).

    Squared: ``eta = sum(w dX dF) / sum(w dF^2)``. Absolute: the weighted
    median of ``dX/dF`` with weights ``w dF``.
    """
    dX = np.asarray(dX, dtype=np.float64).ravel()
    dF = np.asarray(dF, dtype=np.float64).ravel()
    w = np.ones_like(dX) if weights is None else np.asarray(weights, dtype=np.float64).ravel()
    if not dX.shape == dF.shape == w.shape:
        raise ValueError("dX, dF and weights must have matching lengths")
    denom = float(np.sum(w * dF * dF))
    if not denom > 0.0:
        raise FeatureCollapseError("all pairwise feature distances are zero")
    if reading == "squared":
        return float(np.sum(w * dX * dF)) / denom
    keep = dF > 0
    return _weighted_median(dX[keep] / dF[keep], (w * dF)[keep])


def _pair_distances(Z: np.ndarray) -> np.ndarray:
    sq = np.einsum("ij,ij->i", Z, Z)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (Z @ Z.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(d2)


def _homothety(X_src, F_src, X_tgt, F_tgt, reading: str, with_grad: bool):
    # Full symmetric distance matrices with zero diagonals; every sum over
    # unordered pairs is half the full-matrix sum.
    terms = []
    for X, F in ((X_src, F_src), (X_tgt, F_tgt)):
        n = X.shape[0]
        if n < 2:
            raise ValueError("each domain batch needs at least 2 rows")
        terms.append((_pair_distances(X), _pair_distances(F), 2.0 / (n * (n - 1))))
    if reading == "squared":
        num = sum(w * np.sum(dX * dF) for dX, dF, w in terms)
        den = sum(w * np.sum(dF * dF) for _, dF, w in terms)
        if not den > 0.0:
            raise FeatureCollapseError("all pairwise feature distances are zero")
        eta = float(num / den)
        loss = 0.5 * sum(w * np.sum((dX - eta * dF) ** 2) for dX, dF, w in terms)
    else:
        iu = [np.triu_indices(dX.shape[0], k=1) for dX, _, _ in terms]
        eta = optimal_eta(
            np.concatenate([t[0][i] for t, i in zip(terms, iu)]),
            np.concatenate([t[1][i] for t, i in zip(terms, iu)]),
            np.concatenate([np.full(len(i[0]), t[2]) for t, i in zip(terms, iu)]),
            reading,
        )
        loss = 0.5 * sum(w * np.sum(np.abs(dX - eta * dF)) for dX, dF, w in terms)
    loss = float(loss)
    if not with_grad:
        return loss, eta, None
    grads = []
    for (dX, dF, w), F in zip(terms, (F_src, F_tgt)):
        e = dX - eta * dF
        # dL/d(dF_ij) with eta held fixed (it is the exact argmin)
        g = -2.0 * w * eta * e if reading == "squared" else -w * eta * np.sign(e)
        with np.errstate(divide="ignore", invalid="ignore"):
            G = np.where(dF > 0, g / dF, 0.0)
        # each unordered pair appears once per endpoint row
        grads.append(G.sum(axis=1)[:, None] * F - G @ F)
    return loss, eta, grads


def homothety_loss(X_src, F_src, X_tgt, F_tgt, reading: str = "squared") -> tuple[float, float]:
    """Homothetic conservation loss over within-domain pairs and its optimal ``eta``.

    ``L_F = sum_S 1/|P_S| sum_{(i,j) in P_S} r(||X_i - X_j|| - eta ||F_i - F_j||)``
    with ``r(e) = e^2`` (default) or ``|e|``, ``P_S`` all unordered pairs of the
    domain's batch.
    """
    loss, eta, _ = _homothety(X_src, F_src, X_tgt, F_tgt, reading, with_grad=False)
    return loss, eta


def bce_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean binary cross-entropy with probabilities clamped to [1e-7, 1 - 1e-7]."""
    probs = np.asarray(probs, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=np.float64).ravel()
    if probs.shape != labels.shape:
        raise ValueError(f"length mismatch: {probs.shape} vs {labels.shape}")
    p = np.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(np.mean(-(labels * np.log(p) + (1.0 - labels) * np.log1p(-p))))


# -- gradients ---------------------------------------------------------------


@dataclass
class StepGradients:
    """All gradients of one adversarial step, kept separate for inspection.

    ``encoder`` is the update direction actually applied to the encoder:
    ``encoder_LF - alpha * encoder_LD`` (the reversal layer's contribution).
    """

    L_F: float
    L_D: float
    eta: float
    encoder_LF: list[np.ndarray]
    encoder_LD: list[np.ndarray]
    encoder: list[np.ndarray]
    discriminator: list[np.ndarray]


def _flat(grads: list[tuple[np.ndarray, np.ndarray]]) -> list[np.ndarray]:
    return [p for pair in grads for p in pair]


def ufan_gradients(
    model: UfanModel, X_src: np.ndarray, X_tgt: np.ndarray, alpha: float | None = None, *, separate: bool = True
) -> StepGradients:
    """Gradients of one adversarial step on a (source, target) batch pair.

    With ``separate=False`` the two encoder terms are merged before backprop
    (one pass instead of two) and ``encoder_LF``/``encoder_LD`` are left empty.
    """
    alpha = model.alpha if alpha is None else alpha
    reading = model.config.loss_reading
    ns = X_src.shape[0]
    X = np.vstack([X_src, X_tgt])
    F, enc_outs = model.encoder.forward(X)
    F_src, F_tgt = F[:ns], F[ns:]

    L_F, eta, (gFs, gFt) = _homothety(X_src, F_src, X_tgt, F_tgt, reading, with_grad=True)
    grad_F_LF = np.vstack([gFs, gFt])

    # reversal layer is the identity going forward
    probs, disc_outs = model.discriminator.forward(F)
    probs = probs[:, 0]
    labels = np.concatenate([np.ones(ns), np.zeros(X_tgt.shape[0])])
    L_D = bce_loss(probs, labels)
    inside = (probs > PROB_CLAMP) & (probs < 1.0 - PROB_CLAMP)
    g_logit = np.where(inside, (probs - labels) / len(labels), 0.0)[:, None]
    disc_grads, grad_F_LD = model.discriminator.backward(disc_outs, g_logit, pre_activation=True)

    if not separate:
        enc, _ = model.encoder.backward(enc_outs, grad_F_LF - alpha * grad_F_LD)
        return StepGradients(L_F, L_D, eta, [], [], _flat(enc), _flat(disc_grads))
    enc_LF, _ = model.encoder.backward(enc_outs, grad_F_LF)
    enc_LD, _ = model.encoder.backward(enc_outs, grad_F_LD)
    enc_LF, enc_LD = _flat(enc_LF), _flat(enc_LD)
    return StepGradients(
        L_F=L_F,
        L_D=L_D,
        eta=eta,
        encoder_LF=enc_LF,
        encoder_LD=enc_LD,
        encoder=[a - alpha * b for a, b in zip(enc_LF, enc_LD)],
        discriminator=_flat(disc_grads),
    )


# -- training ----------------------------------------------------------------


class _Adam:
    def __init__(self, params: list[np.ndarray], lr: float, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class _SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        for p, g in zip(params, grads):
            p -= self.lr * g


def _optimizer(cfg: TrainConfig, params: list[np.ndarray]):
    return _Adam(params, cfg.learning_rate) if cfg.optimizer == "adam" else _SGD(cfg.learning_rate)


def train_ufan(source: np.ndarray, target_train: np.ndarray, cfg: TrainConfig | None = None) -> UfanModel:
    """Adversarially train encoder and discriminator on a (source, target) pair.

    An epoch is one pass over the target rows, ``ceil(n_tgt / batch_size)``
    steps; each step takes the next ``batch_size`` rows of an epoch-wise
    permutation of each domain (the source permutation is cycled if short). Discriminator and encoder are updated
    simultaneously from the same forward pass.
    """
    cfg = cfg or TrainConfig()
    source = np.asarray(source, dtype=np.float64)
    target_train = np.asarray(target_train, dtype=np.float64)
    if source.ndim != 2 or target_train.ndim != 2 or source.shape[1] != target_train.shape[1]:
        raise ValueError(f"source/target shape mismatch: {source.shape} vs {target_train.shape}")
    ns, nt = source.shape[0], target_train.shape[0]
    if ns < 2 or nt < 2:
        raise ValueError("both domains need at least 2 rows")

    rng = np.random.default_rng(cfg.seed)
    model = init_model(source.shape[1], cfg, rng)
    enc_params = model.encoder.params()
    disc_params = model.discriminator.params()
    enc_opt = _optimizer(cfg, enc_params)
    disc_opt = _optimizer(cfg, disc_params)

    bs, bt = min(cfg.batch_size, ns), min(cfg.batch_size, nt)
    n_steps = math.ceil(nt / cfg.batch_size)
    for epoch in range(cfg.epochs):
        idx_s = np.resize(rng.permutation(ns), n_steps * bs)
        idx_t = np.resize(rng.permutation(nt), n_steps * bt)
        sums = np.zeros(2)
        for step in range(n_steps):
            xs = source[idx_s[step * bs:(step + 1) * bs]]
            xt = target_train[idx_t[step * bt:(step + 1) * bt]]
            g = ufan_gradients(model, xs, xt, separate=False)
            if not (math.isfinite(g.L_F) and math.isfinite(g.L_D)):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, step {step}: L_F={g.L_F}, L_D={g.L_D}"
                )
            disc_opt.step(disc_params, g.discriminator)
            enc_opt.step(enc_params, g.encoder)
            sums += (g.L_F, g.L_D)
            model.eta = g.eta
        L_F, L_D = sums / n_steps
        model.history.append(EpochRecord(L_F=L_F, L_D=L_D, adversarial=L_F - cfg.alpha * L_D))
    return model


def adversarial_score(model: UfanModel) -> float:
    """Final-epoch ``L_F - alpha * L_D`` (lower = better aligned pair)."""
    if not model.history:
        raise ValueError("model has not been trained")
    return model.history[-1].adversarial


def discriminator_accuracy(model: UfanModel, X_src: np.ndarray, X_tgt: np.ndarray) -> float:
    """Fraction of rows whose origin the discriminator gets right (threshold 0.5)."""
    p_src = discriminate(model, encode(model, X_src))
    p_tgt = discriminate(model, encode(model, X_tgt))
    correct = np.count_nonzero(p_src > 0.5) + np.count_nonzero(p_tgt <= 0.5)
    return correct / (len(p_src) + len(p_tgt))


def write_training_curve(model: UfanModel, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "L_F", "L_D", "adversarial"])
        for k, h in enumerate(model.history, start=1):
            w.writerow([k, repr(h.L_F), repr(h.L_D), repr(h.adversarial)])


def with_alpha(cfg: TrainConfig, alpha: float) -> TrainConfig:
    return replace(cfg, alpha=alpha)
