"""Dense ReLU layers trained with the Forward-Forward objective.

Everything a single layer needs lives here: forward pass, goodness, the
logistic pair loss, its analytic gradient, and Adam. Collaboration between
layers enters only as a per-sample additive offset on the goodness, so the
same gradient routine serves the baseline and the collaborative trainers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple

import numpy as np

from .errors import ContractError, NumericError
from .mathcore import as_matrix, matmul_nt, row_l2_normalize, sigmoid, softplus

NORM_EPS = 1e-8
REDUCTIONS = ("mean", "sum")


@dataclass
class GoodnessConfig:
    theta: float = 2.0
    # "mean" of squared activations trains stably at lr=0.03, theta=2;
    # "sum" is kept for experiments.
    reduction: str = "mean"

    def __post_init__(self):
        if not np.isfinite(self.theta):
            raise ContractError(f"theta must be finite, got {self.theta}")
        if self.reduction not in REDUCTIONS:
            raise ContractError(f"reduction must be one of {REDUCTIONS}")


@dataclass
class AdamConfig:
    lr: float = 0.03
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.lr > 0:
            raise ContractError(f"lr must be > 0, got {self.lr}")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ContractError("beta1 and beta2 must lie in (0, 1)")
        if not self.eps > 0:
            raise ContractError(f"eps must be > 0, got {self.eps}")


class GoodnessPair(NamedTuple):
    g_pos: float
    g_neg: float


@dataclass
class DenseLayer:
    W: np.ndarray
    b: np.ndarray
    m_W: np.ndarray = None
    v_W: np.ndarray = None
    m_b: np.ndarray = None
    v_b: np.ndarray = None
    step_count: int = 0

    def __post_init__(self):
        self.W = as_matrix(self.W, "W").copy()
        self.b = np.array(self.b, dtype=np.float64).reshape(-1)
        if self.b.shape[0] != self.W.shape[0]:
            raise ContractError(f"bias length {self.b.shape[0]} != {self.W.shape[0]} units")
        for name, like in (("m_W", self.W), ("v_W", self.W), ("m_b", self.b), ("v_b", self.b)):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros_like(like))

    @classmethod
    def init(cls, n_in, n_out, rng):
        """Uniform(-1/sqrt(n_in), 1/sqrt(n_in)) weights, zero bias."""
        bound = 1.0 / np.sqrt(n_in)
        return cls(rng.uniform(-bound, bound, (n_out, n_in)), np.zeros(n_out))

    @property
    def n_in(self):
        return self.W.shape[1]

    @property
    def n_out(self):
        return self.W.shape[0]

    def copy(self):
        return DenseLayer(
            self.W.copy(), self.b.copy(), self.m_W.copy(), self.v_W.copy(),
            self.m_b.copy(), self.v_b.copy(), self.step_count,
        )


def layer_forward(layer, X):
    """Return ``(pre, act)`` with ``pre = X W^T + b`` and ``act = relu(pre)``."""
    X = as_matrix(X, "X")
    if X.shape[1] != layer.n_in:
        raise ContractError(
            f"layer expects {layer.n_in} inputs, batch has shape {X.shape}"
        )
    pre = matmul_nt(X, layer.W) + layer.b
    return pre, np.maximum(pre, 0.0)


def goodness(act, reduction="mean"):
    """Per-row squared activation, summed or averaged over units."""
    act = as_matrix(act, "act")
    sq = np.einsum("ij,ij->i", act, act)
    if reduction == "sum":
        return sq
    if reduction == "mean":
        return sq / act.shape[1]
    raise ContractError(f"unknown goodness reduction {reduction!r}")


def _goodness_scale(reduction, n_out):
    # d goodness / d act = scale * act
    return 2.0 if reduction == "sum" else 2.0 / n_out


def goodness_probability(g, cfg):
    """Probability that a sample with goodness ``g`` is positive data."""
    return sigmoid(g - cfg.theta)


def pair_loss(margin_pos, margin_neg):
    """Elementwise 0.5 * [softplus(-margin_pos) + softplus(margin_neg)]."""
    return 0.5 * (softplus(-np.asarray(margin_pos)) + softplus(np.asarray(margin_neg)))


def ff_loss(gp, cfg):
    """Loss for one positive/negative goodness pair, margins measured from theta."""
    return float(pair_loss(gp.g_pos - cfg.theta, gp.g_neg - cfg.theta))


class LayerGrads(NamedTuple):
    dW: np.ndarray
    db: np.ndarray
    loss: float
    margin_pos: np.ndarray
    margin_neg: np.ndarray


def layer_loss_grads(layer, x_pos, x_neg, cfg, offset_pos=0.0, offset_neg=0.0):
    """Batch-mean loss and its gradient w.r.t. the layer's W and b.

    ``offset_pos``/``offset_neg`` are per-sample constants added to the
    layer's own goodness before the threshold (0 for plain FF). They carry no
    gradient.
    """
    x_pos = as_matrix(x_pos, "x_pos")
    x_neg = as_matrix(x_neg, "x_neg")
    if x_pos.shape != x_neg.shape:
        raise ContractError(f"x_pos {x_pos.shape} and x_neg {x_neg.shape} differ in shape")
    _, act_pos = layer_forward(layer, x_pos)
    _, act_neg = layer_forward(layer, x_neg)
    m_pos = goodness(act_pos, cfg.reduction) + offset_pos - cfg.theta
    m_neg = goodness(act_neg, cfg.reduction) + offset_neg - cfg.theta
    n = x_pos.shape[0]
    scale = _goodness_scale(cfg.reduction, layer.n_out)
    # dloss_i/dg: -0.5*sigmoid(-m+) on positives, 0.5*sigmoid(m-) on negatives
    d_pre_pos = act_pos * (scale * -0.5 * sigmoid(-m_pos))[:, None]
    d_pre_neg = act_neg * (scale * 0.5 * sigmoid(m_neg))[:, None]
    dW = (d_pre_pos.T @ x_pos + d_pre_neg.T @ x_neg) / n
    db = (d_pre_pos.sum(axis=0) + d_pre_neg.sum(axis=0)) / n
    loss = float(np.mean(pair_loss(m_pos, m_neg)))
    return LayerGrads(dW, db, loss, m_pos, m_neg)


def adam_step(layer, dW, db, cfg):
    """One bias-corrected Adam update, applied in place. Returns ``layer``."""
    dW = np.asarray(dW, dtype=np.float64)
    db = np.asarray(db, dtype=np.float64)
    if dW.shape != layer.W.shape or db.shape != layer.b.shape:
        raise ContractError(
            f"gradient shapes {dW.shape}/{db.shape} do not match "
            f"parameters {layer.W.shape}/{layer.b.shape}"
        )
    if not (np.all(np.isfinite(dW)) and np.all(np.isfinite(db))):
        raise NumericError("non-finite gradient passed to adam_step")
    t = layer.step_count + 1
    c1 = 1.0 - cfg.beta1**t
    c2 = 1.0 - cfg.beta2**t
    for p, g, m, v in ((layer.W, dW, layer.m_W, layer.v_W), (layer.b, db, layer.m_b, layer.v_b)):
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        p -= cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    layer.step_count = t
    return layer


def epoch_mean(values):
    return float(np.mean(values)) if len(values) else float("nan")


def train_layer_baseline(
    layer: DenseLayer,
    input_source: Callable[[int], Iterable[tuple]],
    epochs: int,
    gcfg: GoodnessConfig,
    acfg: AdamConfig,
):
    """Plain FF training of one layer.

    ``input_source(epoch)`` yields ``(h_pos, h_neg)`` minibatches that are
    already label-embedded and propagated (and normalized) through the
    previously trained layers. Returns ``(layer, losses)`` with one mean loss
    per epoch.
    """
    if epochs < 0:
        raise ContractError(f"epochs must be >= 0, got {epochs}")
    trace = []
    for epoch in range(epochs):
        losses = []
        for h_pos, h_neg in input_source(epoch):
            grads = layer_loss_grads(layer, h_pos, h_neg, gcfg)
            adam_step(layer, grads.dW, grads.db, acfg)
            losses.append(grads.loss)
        loss = epoch_mean(losses)
        if not np.isfinite(loss):
            raise NumericError(f"non-finite loss at epoch {epoch}")
        trace.append(loss)
    return layer, trace


class LayerPass(NamedTuple):
    inputs: np.ndarray
    act: np.ndarray
    goodness: np.ndarray


def layer_input(net, h, index):
    """Input fed to layer ``index`` given the previous layer's output ``h``."""
    if index > 0 or net.normalize_first:
        return row_l2_normalize(h, NORM_EPS)
    return as_matrix(h)


def forward_all(net, X, upto=None):
    """Run ``X`` through the first ``upto`` layers (all by default).

    Each layer sees the L2-normalized output of the one before it; goodness
    is taken on the layer's own un-normalized activations.
    """
    X = as_matrix(X, "X")
    layers = net.layers if upto is None else net.layers[:upto]
    if layers and X.shape[1] != layers[0].n_in:
        raise ContractError(f"network expects {layers[0].n_in} inputs, got shape {X.shape}")
    passes = []
    h = X
    for i, layer in enumerate(layers):
        inp = layer_input(net, h, i)
        _, act = layer_forward(layer, inp)
        passes.append(LayerPass(inp, act, goodness(act, net.goodness_cfg.reduction)))
        h = act
    return passes


def inputs_to_layer(net, X, index):
    """Normalized input that layer ``index`` receives for network input ``X``."""
    if index == 0:
        return layer_input(net, X, 0)
    return layer_input(net, forward_all(net, X, upto=index)[-1].act, index)


def train_baseline(net, ds, epochs_per_layer, acfg, rng, batch_size=0):
    """Greedy layer-by-layer FF training with no inter-layer coupling.

    Layer ``l`` is trained on inputs propagated through the already trained
    layers ``0..l-1``. Returns one loss trace per layer.
    """
    from .dataio import epoch_batches

    traces = []
    for l, layer in enumerate(net.layers):

        def source(epoch, l=l):
            for batch in epoch_batches(ds, batch_size, rng):
                yield inputs_to_layer(net, batch.x_pos, l), inputs_to_layer(net, batch.x_neg, l)

        _, trace = train_layer_baseline(layer, source, epochs_per_layer, net.goodness_cfg, acfg)
        traces.append(trace)
    return traces
