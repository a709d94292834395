"""Finite-difference oracles for the analytic layer and gamma gradients.

The conformance target is the *detached* convention used in training: the
collaborative context of the layer under test is frozen at its unperturbed
value. A second, informational number re-propagates the whole network for
each perturbation and shows how much gradient the detachment leaves out.

Relative error is ``|a - n| / max(|a|, |n|, REL_FLOOR)``, so at the default
tolerance 1e-4 any absolute error below 1e-6 passes.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .collab import CollabParams, NetworkState, context_sum, gamma_grad_batch
from .dataio import PosNegBatch
from .errors import ContractError, NumericError
from .ffcore import DenseLayer, GoodnessConfig, forward_all, goodness, layer_forward, layer_loss_grads, pair_loss
from .mathcore import Rng

REL_FLOOR = 1e-2
MAX_PERTURBED = 10_000
MAX_EXCLUDED_FRACTION = 0.2


def relative_error(analytic, numeric):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), REL_FLOOR)


def finite_diff_scalar(f, x, h=1e-5):
    """Central difference ``(f(x + h) - f(x - h)) / 2h``."""
    if not h > 0:
        raise ContractError(f"step h must be > 0, got {h}")
    hi, lo = f(x + h), f(x - h)
    if not (np.isfinite(hi) and np.isfinite(lo)):
        raise NumericError(f"oracle: f is not finite at {x} +/- {h}")
    return (hi - lo) / (2.0 * h)


@dataclass
class GradCheckReport:
    max_relative_error: float
    worst_parameter_index: tuple
    cases_run: int
    passed: bool
    tol: float
    checked: int = 0
    excluded: int = 0
    full_mode_max_relative_error: float = float("nan")

    @property
    def excluded_fraction(self):
        total = self.checked + self.excluded
        return self.excluded / total if total else 0.0


def _context(net, batch, l):
    passes_pos = forward_all(net, batch.x_pos)
    passes_neg = forward_all(net, batch.x_neg)
    alpha = net.collab.alpha
    s_pos = context_sum([p.goodness for p in passes_pos], l, alpha)
    s_neg = context_sum([p.goodness for p in passes_neg], l, alpha)
    return passes_pos, passes_neg, s_pos, s_neg


def network_layer_loss(net, batch, l):
    """Layer ``l``'s collaborative loss with everything recomputed from scratch."""
    passes_pos, passes_neg, s_pos, s_neg = _context(net, batch, l)
    gamma, theta = net.collab.gamma[l], net.goodness_cfg.theta
    m_pos = passes_pos[l].goodness + gamma * s_pos - theta
    m_neg = passes_neg[l].goodness + gamma * s_neg - theta
    return float(np.mean(pair_loss(m_pos, m_neg)))


def _frozen_loss(layer, in_pos, in_neg, cfg, off_pos, off_neg):
    pre_pos, act_pos = layer_forward(layer, in_pos)
    pre_neg, act_neg = layer_forward(layer, in_neg)
    m_pos = goodness(act_pos, cfg.reduction) + off_pos - cfg.theta
    m_neg = goodness(act_neg, cfg.reduction) + off_neg - cfg.theta
    mask = np.concatenate([pre_pos > 0, pre_neg > 0])
    return float(np.mean(pair_loss(m_pos, m_neg))), mask


def grad_check_layer(net, batch, l, h=1e-5, tol=1e-4):
    """Compare ``layer_loss_grads`` for layer ``l`` against central differences.

    Coordinates whose +/-h perturbation flips any ReLU of the layer are
    skipped and counted in ``excluded``.
    """
    if not h > 0:
        raise ContractError(f"step h must be > 0, got {h}")
    layer = net.layers[l]
    if layer.W.size + layer.b.size > MAX_PERTURBED:
        raise ContractError(
            f"layer {l} has {layer.W.size + layer.b.size} parameters; "
            f"grad checks are limited to {MAX_PERTURBED}"
        )
    cfg = net.goodness_cfg
    passes_pos, passes_neg, s_pos, s_neg = _context(net, batch, l)
    gamma = net.collab.gamma[l]
    in_pos, in_neg = passes_pos[l].inputs, passes_neg[l].inputs
    off_pos, off_neg = gamma * s_pos, gamma * s_neg
    grads = layer_loss_grads(layer, in_pos, in_neg, cfg, off_pos, off_neg)
    _, mask0 = _frozen_loss(layer, in_pos, in_neg, cfg, off_pos, off_neg)

    worst, worst_idx, worst_full = 0.0, None, 0.0
    checked = excluded = 0
    for name, param, analytic in (("W", layer.W, grads.dW), ("b", layer.b, grads.db)):
        for idx in np.ndindex(param.shape):
            orig = param[idx]
            param[idx] = orig + h
            hi, mask_hi = _frozen_loss(layer, in_pos, in_neg, cfg, off_pos, off_neg)
            hi_full = network_layer_loss(net, batch, l)
            param[idx] = orig - h
            lo, mask_lo = _frozen_loss(layer, in_pos, in_neg, cfg, off_pos, off_neg)
            lo_full = network_layer_loss(net, batch, l)
            param[idx] = orig
            if not (np.array_equal(mask_hi, mask0) and np.array_equal(mask_lo, mask0)):
                excluded += 1
                continue
            checked += 1
            a = float(analytic[idx])
            err = relative_error(a, (hi - lo) / (2.0 * h))
            worst_full = max(worst_full, relative_error(a, (hi_full - lo_full) / (2.0 * h)))
            if err > worst or worst_idx is None:
                worst, worst_idx = err, (l, name) + tuple(int(i) for i in idx)
    return GradCheckReport(worst, worst_idx, 1, worst <= tol, tol, checked, excluded, worst_full)


def grad_check_gamma(net, batch, l, h=1e-5, tol=1e-4, grad_fn=gamma_grad_batch):
    """Compare the closed-form gamma gradient of layer ``l`` with a central difference."""
    cfg = net.goodness_cfg
    passes_pos, passes_neg, s_pos, s_neg = _context(net, batch, l)
    g_pos, g_neg = passes_pos[l].goodness, passes_neg[l].goodness

    def loss_at(gamma):
        return float(np.mean(pair_loss(g_pos + gamma * s_pos - cfg.theta, g_neg + gamma * s_neg - cfg.theta)))

    gamma = float(net.collab.gamma[l])
    analytic = grad_fn(g_pos + gamma * s_pos - cfg.theta, g_neg + gamma * s_neg - cfg.theta, s_pos, s_neg)
    err = relative_error(analytic, finite_diff_scalar(loss_at, gamma, h))
    # gamma moves no goodness, so both modes coincide
    return GradCheckReport(err, (l, "gamma"), 1, err <= tol, tol, checked=1, full_mode_max_relative_error=err)


def random_tiny_case(rng, widths=(6, 5, 4, 3), batch=4, theta=2.0, alpha_mode="ones", reduction="mean"):
    """Random network with gamma ~ U(-2, 2) per layer plus a random batch."""
    layers = [
        DenseLayer(rng.uniform(-1.0, 1.0, (b, a)), rng.uniform(-0.5, 0.5, b))
        for a, b in zip(widths[:-1], widths[1:])
    ]
    n = len(layers)
    collab = CollabParams.for_variant("acff", n, alpha_mode=alpha_mode)
    collab.gamma = rng.uniform(-2.0, 2.0, n)
    net = NetworkState(layers, collab, GoodnessConfig(theta, reduction))
    x = rng.uniform(0.0, 1.0, (2 * batch, widths[0]))
    labels = np.zeros(batch, dtype=np.int64)
    return net, PosNegBatch(x[:batch], x[batch:], labels, labels + 1)


@dataclass
class CheckSummary:
    report: GradCheckReport
    gamma_report: GradCheckReport
    layer_reports: list = field(default_factory=list)
    redrawn: int = 0
    seconds: float = 0.0

    @property
    def passed(self):
        return self.report.passed and self.gamma_report.passed


def _merge(reports, tol, cases):
    worst = max(reports, key=lambda r: r.max_relative_error)
    max_err = worst.max_relative_error
    return GradCheckReport(
        max_err,
        worst.worst_parameter_index,
        cases,
        max_err <= tol,
        tol,
        sum(r.checked for r in reports),
        sum(r.excluded for r in reports),
        max(r.full_mode_max_relative_error for r in reports),
    )


def run_check_suite(cases=100, seed=0, h=1e-5, tol=1e-4, theta=2.0, widths=(6, 5, 4, 3), batch=4,
                    gamma_grad_fn=gamma_grad_batch, max_redraws=1000):
    """Grad-check ``cases`` random tiny networks, alternating both alpha modes
    and both goodness reductions. Cases where more than 20% of a layer's
    coordinates sit on a ReLU kink are redrawn."""
    if cases < 1:
        raise ContractError("cases must be >= 1")
    t0 = time.perf_counter()
    rng = Rng(seed, stream=7)
    layer_reports, gamma_reports = [], []
    redrawn = 0
    for case in range(cases):
        alpha_mode = ("ones", "row-normalized")[case % 2]
        reduction = ("mean", "sum")[(case // 2) % 2]
        while True:
            net, pn = random_tiny_case(rng, widths, batch, theta, alpha_mode, reduction)
            reports = [grad_check_layer(net, pn, l, h, tol) for l in range(len(net.layers))]
            if all(r.excluded_fraction < MAX_EXCLUDED_FRACTION for r in reports):
                break
            redrawn += 1
            if redrawn > max_redraws:
                raise NumericError("too many random cases landed on ReLU kinks")
        for r in reports:
            r.worst_parameter_index = (case,) + tuple(r.worst_parameter_index or ())
        layer_reports.extend(reports)
        for l in range(len(net.layers)):
            g = grad_check_gamma(net, pn, l, h, tol, gamma_grad_fn)
            g.worst_parameter_index = (case,) + g.worst_parameter_index
            gamma_reports.append(g)
    return CheckSummary(
        _merge(layer_reports, tol, cases),
        _merge(gamma_reports, tol, cases),
        layer_reports,
        redrawn,
        time.perf_counter() - t0,
    )
