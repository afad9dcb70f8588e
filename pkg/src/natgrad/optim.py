"""Optimizers: plain SGD, a second-moment adaptive baseline, and the
Kronecker-factored natural-gradient family (tikhonov-damped, norm-scaled
damping, and explicit gradient-norm regularization).

The natural-gradient step for layer i applies
W_i <- W_i - (alpha / L) * gamma_inv G_i lambda_inv, with factors
refreshed from model-distribution samples every skip_frequency steps and
first-order-corrected in between. A ratio-test damping controller adapts
rho after every step.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import model
from .errors import NonFiniteLossError, PerturbationTooLargeError
from .fisher import (
    DampingMode,
    estimate_factors,
    lazy_refresh,
    natural_direction,
    regularize_and_invert,
)
from .linalg import NewtonConfig

ALGORITHMS = ("sgd", "adaptive-baseline", "ngd", "ring", "reng")

# Damping variant per algorithm name.
_VARIANTS = {"ngd": "tikhonov", "ring": "ring", "reng": "reng"}

# Damping defaults that behave well at fine-tuning scale. Desk-scale toy
# problems move much faster per step and usually need heavier damping;
# the bench grid carries its own settings.
PAPER_SCALE_RHO = {"ngd": 1e-6, "ring": 1e-4, "reng": 1e-4}

LM_CLAMP = (1e-10, 1e2)
LM_GOOD_RATIO = 0.75
LM_BAD_RATIO = 0.25


@dataclass(frozen=True)
class OptimizerConfig:
    algorithm: str = "ring"
    learning_rate: float = 1.0
    rho: float = 1e-4
    lm_discount: float = 0.995  # phi; 1.0 freezes the damping controller
    skip_frequency: int = 4
    grad_reg_coeff: float = 0.01
    newton: NewtonConfig = field(default_factory=NewtonConfig)
    seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.rho < 0:
            raise ValueError("rho must be nonnegative")
        if not 0 < self.lm_discount <= 1:
            raise ValueError("lm_discount must lie in (0, 1]")
        if self.skip_frequency < 1:
            raise ValueError("skip_frequency must be >= 1")
        if self.grad_reg_coeff < 0:
            raise ValueError("grad_reg_coeff must be nonnegative")


@dataclass
class StepReport:
    iteration: int
    loss: float
    grad_norm: float
    damping: float
    refreshed: bool
    duration_ms: float = field(default=0.0, compare=False)


def lm_damping_update(lam, loss_before, loss_after, predicted_reduction, phi):
    """Ratio-test damping adaptation.

    r = actual / predicted reduction; r > 0.75 shrinks lam by phi,
    r < 0.25 grows it by 1/phi, anything between leaves it alone. The
    result is clamped to [1e-10, 1e2].
    """
    if predicted_reduction <= 0:
        raise ValueError("predicted_reduction must be positive")
    ratio = (loss_before - loss_after) / predicted_reduction
    if ratio > LM_GOOD_RATIO:
        lam = phi * lam
    elif ratio < LM_BAD_RATIO:
        lam = lam / phi
    return float(min(max(lam, LM_CLAMP[0]), LM_CLAMP[1]))


def _grad_norm(grads):
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def _check_finite(value):
    if not np.isfinite(value):
        raise NonFiniteLossError(f"loss became non-finite ({value})")
    return float(value)


class SgdOptimizer:
    """W <- W - alpha * grad, nothing else."""

    def __init__(self, net, config):
        self.net = net
        self.config = config
        self.iteration = 0

    def step(self, x, y):
        t0 = time.perf_counter()
        pred, cache = model.forward(self.net, x)
        loss = _check_finite(model.loss(pred, y))
        grads, _ = model.backward(self.net, cache, pred, y)
        for layer, g in zip(self.net.layers, grads):
            layer.weight -= self.config.learning_rate * g
        report = StepReport(
            self.iteration, loss, _grad_norm(grads), 0.0, False,
            (time.perf_counter() - t0) * 1e3,
        )
        self.iteration += 1
        return report


class AdaptiveOptimizer:
    """Per-parameter second-moment scaling, no bias correction or warmup.

    Sanity baseline only; not a faithful reproduction of any published
    adaptive method.
    """

    decay = 0.999
    eps = 1e-8

    def __init__(self, net, config):
        self.net = net
        self.config = config
        self.iteration = 0
        self.second_moment = [np.zeros_like(l.weight) for l in net.layers]

    def step(self, x, y):
        t0 = time.perf_counter()
        pred, cache = model.forward(self.net, x)
        loss = _check_finite(model.loss(pred, y))
        grads, _ = model.backward(self.net, cache, pred, y)
        for layer, g, v in zip(self.net.layers, grads, self.second_moment):
            v *= self.decay
            v += (1.0 - self.decay) * g * g
            layer.weight -= self.config.learning_rate * g / (np.sqrt(v) + self.eps)
        report = StepReport(
            self.iteration, loss, _grad_norm(grads), 0.0, False,
            (time.perf_counter() - t0) * 1e3,
        )
        self.iteration += 1
        return report


class NaturalGradientOptimizer:
    """Factored natural gradient with lazy inverse maintenance.

    Refresh steps (iteration % skip_frequency == 0) sample outputs from
    the model distribution, re-estimate both factors and invert them at
    the current damping; other steps only correct the inverses for the
    damping drift. The reng algorithm additionally augments the data
    gradient with the double-backprop gradient-norm penalty every step.
    """

    def __init__(self, net, config):
        if config.algorithm not in _VARIANTS:
            raise ValueError(f"{config.algorithm!r} is not a natural-gradient algorithm")
        self.net = net
        self.config = config
        self.variant = _VARIANTS[config.algorithm]
        self.rho = config.rho
        self.rng = np.random.default_rng(config.seed)
        self.factors = None
        self.iteration = 0

    def effective_gradient(self, x, y):
        """Data-batch gradient, plus the penalty term for reng."""
        pred, cache = model.forward(self.net, x)
        loss = _check_finite(model.loss(pred, y))
        grads, _ = model.backward(self.net, cache, pred, y)
        if self.config.algorithm == "reng" and self.config.grad_reg_coeff > 0:
            penalty = model.grad_norm_penalty_grad(
                self.net, x, y, self.config.grad_reg_coeff
            )
            grads = [g + p for g, p in zip(grads, penalty)]
        return loss, grads, pred, cache

    def _mode(self):
        return DampingMode(self.variant, self.rho)

    def _refresh(self, pred, cache):
        sampled = model.sample_outputs(pred, self.net.head, self.rng)
        _, sampled_cache = model.backward(self.net, cache, pred, sampled)
        factors = estimate_factors(sampled_cache)
        regularize_and_invert(
            factors, self._mode(), self.config.newton,
            max_staleness=self.config.skip_frequency,
        )
        self.factors = factors

    def _predicted_reduction(self, grads, directions, scale):
        """Decrease promised by the local damped quadratic model."""
        linear = 0.0
        quad = 0.0
        for lf, g, d in zip(self.factors.layers, grads, directions):
            linear += float(np.sum(g * d))
            lam_reg = lf.lambda_mat + lf.lambda_damping * np.eye(lf.lambda_mat.shape[0])
            gam_reg = lf.gamma_mat + lf.gamma_damping * np.eye(lf.gamma_mat.shape[0])
            quad += float(np.sum(d * (gam_reg @ d @ lam_reg)))
        return scale * linear - 0.5 * scale * scale * quad

    def step(self, x, y):
        t0 = time.perf_counter()
        loss_before, grads, pred, cache = self.effective_gradient(x, y)
        refreshed = False
        if self.factors is None or self.iteration % self.config.skip_frequency == 0:
            self._refresh(pred, cache)
            refreshed = True
        else:
            try:
                lazy_refresh(self.factors, self._mode().base_damping())
            except PerturbationTooLargeError:
                self._refresh(pred, cache)
                refreshed = True
        directions = [
            natural_direction(g, self.factors, i) for i, g in enumerate(grads)
        ]
        scale = self.config.learning_rate / self.net.n_layers
        predicted = self._predicted_reduction(grads, directions, scale)
        for layer, d in zip(self.net.layers, directions):
            layer.weight -= scale * d
        if self.config.lm_discount < 1.0 and predicted > 0:
            after_pred, _ = model.forward(self.net, x)
            loss_after = model.loss(after_pred, y)
            if np.isfinite(loss_after):
                self.rho = lm_damping_update(
                    self.rho, loss_before, loss_after, predicted,
                    self.config.lm_discount,
                )
        report = StepReport(
            self.iteration, loss_before, _grad_norm(grads), self.rho, refreshed,
            (time.perf_counter() - t0) * 1e3,
        )
        self.iteration += 1
        return report


def make_optimizer(net, config):
    if config.algorithm == "sgd":
        return SgdOptimizer(net, config)
    if config.algorithm == "adaptive-baseline":
        return AdaptiveOptimizer(net, config)
    return NaturalGradientOptimizer(net, config)
