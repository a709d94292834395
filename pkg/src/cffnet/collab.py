"""Collaborative Forward-Forward: inter-layer goodness coupling.

Layer ``l`` trains on the margin ``G_l + gamma_l * S_l - theta`` where
``S_l = sum_{k != l} alpha[l, k] * G_k``. The context ``S_l`` is computed
with the current weights of every layer but treated as a constant: no
gradient flows into other layers, so training stays forward-only and local.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .dataio import epoch_batches
from .errors import ContractError, NumericError
from .ffcore import (
    AdamConfig,
    DenseLayer,
    GoodnessConfig,
    adam_step,
    epoch_mean,
    ff_loss,
    forward_all,
    layer_loss_grads,
)
from .mathcore import sigmoid

VARIANTS = ("baseline", "fcff", "acff")
ALPHA_MODES = ("ones", "row-normalized")


def alpha_matrix(n_layers, mode="ones"):
    """Pairwise coupling weights with a zero diagonal."""
    if mode not in ALPHA_MODES:
        raise ContractError(f"alpha mode must be one of {ALPHA_MODES}, got {mode!r}")
    alpha = np.ones((n_layers, n_layers))
    if mode == "row-normalized":
        alpha = alpha / max(n_layers - 1, 1)
    np.fill_diagonal(alpha, 0.0)
    return alpha


@dataclass
class CollabParams:
    gamma: np.ndarray
    alpha: np.ndarray
    learnable: bool = False
    gamma_lr: float = 0.01

    def __post_init__(self):
        self.gamma = np.array(self.gamma, dtype=np.float64).reshape(-1)
        self.alpha = np.array(self.alpha, dtype=np.float64)
        n = self.gamma.shape[0]
        if self.alpha.shape != (n, n):
            raise ContractError(f"alpha must be {n}x{n}, got {self.alpha.shape}")
        if not (np.all(np.isfinite(self.gamma)) and np.all(np.isfinite(self.alpha))):
            raise ContractError("gamma and alpha must be finite")

    @classmethod
    def for_variant(cls, variant, n_layers, gamma_init=1.0, gamma_lr=0.01, alpha_mode="ones"):
        if variant not in VARIANTS:
            raise ContractError(f"variant must be one of {VARIANTS}, got {variant!r}")
        g0 = 0.0 if variant == "baseline" else gamma_init
        return cls(
            gamma=np.full(n_layers, g0),
            alpha=alpha_matrix(n_layers, alpha_mode),
            learnable=variant == "acff",
            gamma_lr=gamma_lr,
        )

    def copy(self):
        return CollabParams(self.gamma.copy(), self.alpha.copy(), self.learnable, self.gamma_lr)


@dataclass
class NetworkState:
    layers: list
    collab: CollabParams
    goodness_cfg: GoodnessConfig = field(default_factory=GoodnessConfig)
    normalize_first: bool = True

    def __post_init__(self):
        for i in range(1, len(self.layers)):
            if self.layers[i].n_in != self.layers[i - 1].n_out:
                raise ContractError(
                    f"layer {i} takes {self.layers[i].n_in} inputs but layer {i - 1} "
                    f"produces {self.layers[i - 1].n_out}"
                )
        if self.collab.gamma.shape[0] != len(self.layers):
            raise ContractError(
                f"{self.collab.gamma.shape[0]} gamma values for {len(self.layers)} layers"
            )

    @property
    def widths(self):
        return [self.layers[0].n_in] + [layer.n_out for layer in self.layers]

    def copy(self):
        return NetworkState(
            [layer.copy() for layer in self.layers], self.collab.copy(),
            GoodnessConfig(self.goodness_cfg.theta, self.goodness_cfg.reduction),
            self.normalize_first,
        )


def build_network(widths, rng, collab, goodness_cfg=None, normalize_first=True):
    """Fresh network with layer sizes ``widths`` (input width first)."""
    if len(widths) < 2 or any(int(w) < 1 for w in widths):
        raise ContractError(f"need an input width and at least one layer, got {widths}")
    layers = [DenseLayer.init(int(a), int(b), rng) for a, b in zip(widths[:-1], widths[1:])]
    return NetworkState(layers, collab, goodness_cfg or GoodnessConfig(), normalize_first)


def context_sum(goodness_per_layer, l, alpha):
    """``sum_{k != l} alpha[l, k] * G_k``, per sample."""
    n = len(goodness_per_layer)
    if not 0 <= l < n:
        raise ContractError(f"layer index {l} out of range for {n} layers")
    out = np.zeros_like(np.asarray(goodness_per_layer[l], dtype=np.float64))
    for k, g in enumerate(goodness_per_layer):
        if k == l:
            continue
        g = np.asarray(g, dtype=np.float64)
        if g.shape != out.shape:
            raise ContractError("goodness vectors differ in length")
        out = out + alpha[l][k] * g
    return out


def collab_goodness(g_l, s_l, gamma_l):
    g_l = np.asarray(g_l, dtype=np.float64)
    s_l = np.asarray(s_l, dtype=np.float64)
    if g_l.shape != s_l.shape:
        raise ContractError(f"goodness {g_l.shape} and context {s_l.shape} differ in shape")
    return g_l + gamma_l * s_l


def collab_loss(gp_collab, cfg):
    """Same logistic pair loss as plain FF, on collaborative goodness values."""
    return ff_loss(gp_collab, cfg)


def gamma_grad(gp_collab, s_pos, s_neg, cfg):
    """d(collab_loss)/d(gamma) for one pair whose contexts are ``s_pos``/``s_neg``."""
    m_pos = gp_collab.g_pos - cfg.theta
    m_neg = gp_collab.g_neg - cfg.theta
    return float(gamma_grad_batch(np.array([m_pos]), np.array([m_neg]), np.array([s_pos]), np.array([s_neg])))


def gamma_grad_batch(margin_pos, margin_neg, s_pos, s_neg):
    """Batch mean of ``0.5 * [-sigmoid(-m+) * S+ + sigmoid(m-) * S-]``."""
    per_sample = 0.5 * (-sigmoid(-margin_pos) * s_pos + sigmoid(margin_neg) * s_neg)
    return float(np.mean(per_sample))


def update_gamma(params, l, grad):
    """Gradient-descent step on ``gamma[l]``; only legal for learnable params."""
    if not params.learnable:
        raise ContractError("gamma is fixed for this network (learnable=False)")
    if not np.isfinite(grad):
        raise NumericError(f"non-finite gamma gradient for layer {l}")
    if not 0 <= l < params.gamma.shape[0]:
        raise ContractError(f"layer index {l} out of range")
    params.gamma[l] = params.gamma[l] - params.gamma_lr * grad
    return params


@dataclass(frozen=True)
class GammaRecord:
    layer: int
    epoch: int
    gamma_before: float
    grad: float
    gamma_after: float


@dataclass
class GammaTrace:
    records: list = field(default_factory=list)

    def for_layer(self, l):
        return [r for r in self.records if r.layer == l]

    def values(self, l):
        return [r.gamma_after for r in self.for_layer(l)]


@dataclass
class TrainResult:
    loss_traces: list
    gamma_trace: GammaTrace
    seconds_per_layer: list


@dataclass
class StepResult:
    loss: float
    gamma_grad: float


def collab_step(net, l, batch, adam_cfg):
    """One weight update of layer ``l`` on one positive/negative batch."""
    cfg = net.goodness_cfg
    passes_pos = forward_all(net, batch.x_pos)
    passes_neg = forward_all(net, batch.x_neg)
    alpha = net.collab.alpha
    s_pos = context_sum([p.goodness for p in passes_pos], l, alpha)
    s_neg = context_sum([p.goodness for p in passes_neg], l, alpha)
    gamma = net.collab.gamma[l]
    grads = layer_loss_grads(
        net.layers[l], passes_pos[l].inputs, passes_neg[l].inputs, cfg,
        gamma * s_pos, gamma * s_neg,
    )
    g_gamma = gamma_grad_batch(grads.margin_pos, grads.margin_neg, s_pos, s_neg)
    adam_step(net.layers[l], grads.dW, grads.db, adam_cfg)
    return StepResult(grads.loss, g_gamma)


def check_variant(collab, variant):
    if variant not in VARIANTS:
        raise ContractError(f"variant must be one of {VARIANTS}, got {variant!r}")
    if variant == "baseline" and (collab.learnable or np.any(collab.gamma != 0.0)):
        raise ContractError("baseline variant needs gamma == 0 and learnable=False")
    if variant == "fcff" and collab.learnable:
        raise ContractError("fcff variant needs learnable=False")
    if variant == "acff" and not collab.learnable:
        raise ContractError("acff variant needs learnable=True")


def train_network(net, ds, variant, epochs_per_layer, adam_cfg, rng, batch_size=0, on_epoch=None):
    """Train all layers in order, each for ``epochs_per_layer`` epochs.

    Every step runs the full current network on the positive and negative
    batch so that all layers contribute context. For ``acff`` gamma of the
    layer in training takes one step per epoch, on the epoch's mean gamma
    gradient. ``on_epoch(layer, epoch, loss, gamma)`` is called after each
    epoch. Mutates and returns ``net`` alongside the training record.
    """
    check_variant(net.collab, variant)
    if epochs_per_layer < 0:
        raise ContractError(f"epochs_per_layer must be >= 0, got {epochs_per_layer}")
    traces = []
    gamma_trace = GammaTrace()
    seconds = []
    for l in range(len(net.layers)):
        t0 = time.perf_counter()
        trace = []
        for epoch in range(epochs_per_layer):
            steps = [collab_step(net, l, batch, adam_cfg) for batch in epoch_batches(ds, batch_size, rng)]
            loss = epoch_mean([s.loss for s in steps])
            grad = epoch_mean([s.gamma_grad for s in steps])
            if not (np.isfinite(loss) and np.isfinite(grad)):
                raise NumericError(f"non-finite loss or gamma gradient in layer {l} at epoch {epoch}")
            before = float(net.collab.gamma[l])
            if variant == "acff":
                update_gamma(net.collab, l, grad)
            after = float(net.collab.gamma[l])
            if not np.isfinite(after):
                raise NumericError(f"gamma of layer {l} became non-finite at epoch {epoch}")
            gamma_trace.records.append(GammaRecord(l, epoch, before, grad, after))
            trace.append(loss)
            if on_epoch is not None:
                on_epoch(l, epoch, loss, after)
        traces.append(trace)
        seconds.append(time.perf_counter() - t0)
    return net, TrainResult(traces, gamma_trace, seconds)
