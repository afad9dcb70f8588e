"""Diagonal-covariance Bayesian trainer with a regularized gain.

One sample at a time: predict, linearize, refresh the observation-noise
estimate by exponential averaging, apply the gain
K = diag(sigma) H^T (H diag(sigma) H^T + R (I + rho R)^-1)^-1,
then update the mean and the per-coordinate variances. The full
covariance never exists; everything n-sized is a vector.
"""

import time
from dataclasses import dataclass

import numpy as np

from . import backend, model
from .errors import (
    CovarianceCollapseError,
    DimensionMismatchError,
    NonFiniteLossError,
    SingularInnovationError,
)
from .linalg import exact_inverse
from .optim import StepReport
from .oracle import full_cov_kalman_step

SIGMA_FLOOR = 1e-12
NEUMANN_MODES = ("exact", "first-order")


@dataclass
class GaussianPosterior:
    mu: np.ndarray  # (n,)
    sigma: np.ndarray  # (n,) diagonal covariance, strictly positive


@dataclass
class ObservationNoise:
    r_mat: np.ndarray  # (d_o, d_o) symmetric PSD
    beta: float  # forgetting factor in (0, 1]


@dataclass(frozen=True)
class KalmanConfig:
    rho: float = 0.0  # gain regularizer
    beta: float = 0.98
    sigma0: float = 0.1
    q: float = 0.0  # process noise added per prediction
    neumann: str = "exact"

    def __post_init__(self):
        if self.sigma0 <= 0:
            raise ValueError("sigma0 must be positive")
        if not 0 < self.beta <= 1:
            raise ValueError("beta must lie in (0, 1]")
        if self.rho < 0 or self.q < 0:
            raise ValueError("rho and q must be nonnegative")
        if self.neumann not in NEUMANN_MODES:
            raise ValueError(f"neumann must be one of {NEUMANN_MODES}")


def predict(post, q):
    """Covariance-form prediction: mu unchanged, sigma grows by q."""
    q_vec = np.asarray(q, dtype=np.float64)
    if np.any(q_vec < 0):
        raise ValueError("process noise must be nonnegative")
    return GaussianPosterior(post.mu.copy(), post.sigma + q_vec)


def jacobian(net, x, mu=None):
    """(d_o, n) Jacobian of the head outputs at one sample.

    Row j holds the gradient of output j with respect to every
    parameter, computed by d_o backward passes with unit output seeds.
    When mu is given the network weights are set to it first.
    """
    if mu is not None:
        net.set_flat_weights(mu)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[0] != 1:
        raise DimensionMismatchError("jacobian linearizes one sample at a time")
    pred, cache = model.forward(net, x)
    return model.output_jacobian(net, pred, cache)


def estimate_r(y, y_hat, h, sigma_prior, noise):
    """Exponential-average observation noise refresh.

    R_new = beta R + (1 - beta) ((y - y_hat)(y - y_hat)^T + H S H^T) with
    the diagonal prior S applied by row scaling; the result is
    symmetrized to cancel asymmetric rounding drift.
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    y_hat = np.asarray(y_hat, dtype=np.float64).reshape(-1)
    d_o = h.shape[0]
    if y.shape[0] != d_o or y_hat.shape[0] != d_o:
        raise DimensionMismatchError("observation size does not match the Jacobian")
    if sigma_prior.shape[0] != h.shape[1]:
        raise DimensionMismatchError("prior size does not match the Jacobian")
    resid = y - y_hat
    sample = np.outer(resid, resid) + (h * sigma_prior) @ h.T
    r_new = noise.beta * noise.r_mat + (1.0 - noise.beta) * sample
    return ObservationNoise(0.5 * (r_new + r_new.T), noise.beta)


def regularized_gain(sigma_prior, h, noise, rho, neumann="exact"):
    """Gain with the regularized innovation noise R (I + rho R)^-1.

    neumann "first-order" replaces the inner inverse by I - rho R. With
    rho = 0 both modes reduce exactly (same code path, identity algebra)
    to the standard gain. The diag(sigma) H^T product is row-scaled, so
    nothing n x n is ever formed.

    Softmax observation models are rank-deficient by construction (the
    probabilities, their residuals, and hence the innovation all
    annihilate the all-ones direction); a singular solve is retried once
    with trace-scaled diagonal jitter, which acts as a pseudo-inverse in
    the information-free direction, before raising.
    """
    if neumann not in NEUMANN_MODES:
        raise ValueError(f"neumann must be one of {NEUMANN_MODES}")
    d_o = h.shape[0]
    eye = np.eye(d_o)
    r = noise.r_mat
    if neumann == "first-order":
        r_tilde = r @ (eye - rho * r)
    else:
        r_tilde = r @ exact_inverse(eye + rho * r)
    gain, status = backend.kalman_gain_core(h, sigma_prior, r_tilde)
    if status != 0:
        scale = float(np.trace((h * sigma_prior) @ h.T + r_tilde)) / d_o
        if scale > 0:
            jitter = 1e-10 * scale
            gain, status = backend.kalman_gain_core(h, sigma_prior,
                                                    r_tilde + jitter * eye)
    if status != 0:
        raise SingularInnovationError("innovation system is singular")
    return gain


def update(prior, gain, h, residual):
    """Mean and diagonal-covariance update.

    mu += K residual; sigma_i <- sigma_i (1 - sum_j K_ij H_ji), floored
    at 1e-12. A coordinate that would land more than 10x below the floor
    signals a modeling inconsistency and raises instead of flooring.
    """
    residual = np.asarray(residual, dtype=np.float64).reshape(-1)
    if gain.shape != (prior.mu.shape[0], residual.shape[0]):
        raise DimensionMismatchError("gain shape does not match state/observation")
    mu = prior.mu + gain @ residual
    contraction = backend.diag_cov_scale(gain, h)
    sigma = prior.sigma * (1.0 - contraction)
    if np.any(sigma < SIGMA_FLOOR / 10.0):
        worst = float(sigma.min())
        raise CovarianceCollapseError(
            f"variance would fall to {worst:.3e}, more than 10x below the "
            f"{SIGMA_FLOOR} floor"
        )
    return GaussianPosterior(mu, np.maximum(sigma, SIGMA_FLOOR))


class RKalmanOptimizer:
    """Streaming one-sample trainer around a diagonal Gaussian posterior."""

    def __init__(self, net, config: KalmanConfig):
        self.net = net
        self.config = config
        n = net.parameter_count()
        self.posterior = GaussianPosterior(
            net.flat_weights(), np.full(n, config.sigma0)
        )
        d_o = net.output_dim
        self.noise = ObservationNoise(np.zeros((d_o, d_o)), config.beta)
        self.iteration = 0

    def save(self, path):
        save_posterior(path, self.posterior, self.noise, self.config)

    @classmethod
    def resume(cls, net, path):
        """Rebuild the trainer from a checkpoint, mean written into net."""
        posterior, noise, config = load_posterior(path)
        opt = cls(net, config)
        opt.posterior = posterior
        opt.noise = noise
        net.set_flat_weights(posterior.mu)
        return opt

    def step(self, x, y):
        t0 = time.perf_counter()
        cfg = self.config
        prior = predict(self.posterior, cfg.q)
        self.net.set_flat_weights(prior.mu)
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[0] != 1:
            raise DimensionMismatchError("the streaming trainer takes one sample")
        pred, cache = model.forward(self.net, x)
        y_hat = pred.outputs[0]
        d_o = pred.outputs.shape[1]
        y_arr = np.asarray(y)
        if self.net.head == "categorical" and y_arr.size == 1:
            y_vec = model.one_hot(y_arr.reshape(1), d_o)[0]
        else:
            y_vec = y_arr.astype(np.float64).reshape(-1)
        loss = float(model.loss(pred, y_vec[None, :]))
        if not np.isfinite(loss):
            raise NonFiniteLossError(f"loss became non-finite ({loss})")
        h = model.output_jacobian(self.net, pred, cache)
        self.noise = estimate_r(y_vec, y_hat, h, prior.sigma, self.noise)
        gain = regularized_gain(prior.sigma, h, self.noise, cfg.rho, cfg.neumann)
        residual = y_vec - y_hat
        self.posterior = update(prior, gain, h, residual)
        self.net.set_flat_weights(self.posterior.mu)
        grad_norm = float(np.linalg.norm(h.T @ residual))
        report = StepReport(
            self.iteration, loss, grad_norm, cfg.rho, False,
            (time.perf_counter() - t0) * 1e3,
        )
        self.iteration += 1
        return report


@dataclass
class LinearGaussianInstance:
    """Fully specified single-observation linear-Gaussian problem for the
    equivalence diagnostic: known Jacobian, noise, full prior covariance."""

    h: np.ndarray  # (d_o, n)
    r: np.ndarray  # (d_o, d_o) SPD
    sigma_prior: np.ndarray  # (n, n) SPD
    mu_prior: np.ndarray  # (n,)
    y: np.ndarray  # (d_o,)
    y_hat: np.ndarray  # (d_o,)


@dataclass
class EquivalenceReport:
    mean_identity_deviation: float  # max |(mu' - mu) + Sigma' grad|
    precision_identity_deviation: float  # max |dPrecision - H^T R^-1 H|


def kalman_ngd_equivalence_check(instance):
    """Numerically verify the two filter/natural-gradient identities.

    (a) the mean update equals -Sigma_post grad with
        grad = H^T R^-1 (y_hat - y);
    (b) the posterior precision increment equals H^T R^-1 H.
    Runs on the full-covariance oracle path with an unregularized gain;
    returns the max absolute deviation of each identity.
    """
    res = full_cov_kalman_step(
        instance.mu_prior, instance.sigma_prior, instance.h, instance.r,
        instance.y, instance.y_hat, rho=0.0,
    )
    r_inv = exact_inverse(instance.r)
    grad = instance.h.T @ r_inv @ (instance.y_hat - instance.y)
    mean_dev = float(np.max(np.abs((res.mu - instance.mu_prior) + res.sigma @ grad)))
    precision_increment = exact_inverse(res.sigma) - exact_inverse(instance.sigma_prior)
    prec_dev = float(
        np.max(np.abs(precision_increment - instance.h.T @ r_inv @ instance.h))
    )
    return EquivalenceReport(mean_dev, prec_dev)


def save_posterior(path, posterior, noise, config):
    """Flat text checkpoint: config header, then mu, sigma, R."""
    lines = [
        "posterior 1",
        f"rho {config.rho:.17g}",
        f"beta {config.beta:.17g}",
        f"sigma0 {config.sigma0:.17g}",
        f"q {config.q:.17g}",
        f"neumann {config.neumann}",
        f"n {posterior.mu.shape[0]}",
        f"d_o {noise.r_mat.shape[0]}",
        "mu " + " ".join(f"{v:.17g}" for v in posterior.mu),
        "sigma " + " ".join(f"{v:.17g}" for v in posterior.sigma),
    ]
    for row in noise.r_mat:
        lines.append("r " + " ".join(f"{v:.17g}" for v in row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_posterior(path):
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != "posterior 1":
        raise ValueError(f"{path} is not a posterior checkpoint")
    fields = dict(ln.split(None, 1) for ln in lines[1:7])
    config = KalmanConfig(
        rho=float(fields["rho"]),
        beta=float(fields["beta"]),
        sigma0=float(fields["sigma0"]),
        q=float(fields["q"]),
        neumann=fields["neumann"],
    )
    mu = np.array([float(v) for v in lines[8].split()[1:]])
    sigma = np.array([float(v) for v in lines[9].split()[1:]])
    r_rows = [[float(v) for v in ln.split()[1:]] for ln in lines[10:]]
    noise = ObservationNoise(np.array(r_rows), config.beta)
    return GaussianPosterior(mu, sigma), noise, config
