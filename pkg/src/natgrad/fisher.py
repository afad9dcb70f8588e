"""Per-layer Kronecker curvature factors.

Each layer's curvature block is approximated by the Kronecker product of
an activation second moment (lambda_mat) and an error second moment
(gamma_mat), estimated from model-distribution samples. Damping adds a
scaled identity to each factor before inversion; between full refreshes
the inverses track damping changes to first order instead of being
recomputed.

Vec convention (column-major, matching linalg.kron_matvec): the
vectorized natural direction (lambda (x) gamma + damping)^-1 vec(G)
equals gamma_inv @ G @ lambda_inv, with gamma on the left because G has
shape (out, in) and vec stacks columns.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import backend, linalg
from .errors import (
    DivergenceError,
    EmptyBatchError,
    InversionFailedError,
    PerturbationTooLargeError,
    SingularMatrixError,
    StaleFactorsError,
    ZeroMatrixError,
)

DAMPING_VARIANTS = ("tikhonov", "ring", "reng")

# Inverses must satisfy ||M Minv - I||_F below this at every full refresh.
INVERSE_GATE = 1e-4

# Default |d_lambda| cap for the first-order update, as a fraction of the
# stored damping.
SAFE_PERTURBATION = 0.5


@dataclass(frozen=True)
class DampingMode:
    variant: str
    rho: float

    def __post_init__(self):
        if self.variant not in DAMPING_VARIANTS:
            raise ValueError(f"variant must be one of {DAMPING_VARIANTS}")
        if not math.isfinite(self.rho) or self.rho < 0:
            raise ValueError("rho must be finite and nonnegative")

    def base_damping(self):
        """The scalar the LM scheme adapts: rho itself for tikhonov,
        sqrt(rho) for the norm-scaled and plain variants."""
        return self.rho if self.variant == "tikhonov" else math.sqrt(self.rho)

    def factor_damping(self, spectral):
        """Damping added to one factor's diagonal."""
        if self.variant == "ring":
            return math.sqrt(self.rho) * spectral
        if self.variant == "reng":
            return math.sqrt(self.rho)
        return self.rho


@dataclass
class LayerFactors:
    lambda_mat: np.ndarray  # (in, in) activation second moment
    gamma_mat: np.ndarray  # (out, out) error second moment
    lambda_inv: np.ndarray = None
    gamma_inv: np.ndarray = None
    lambda_damping: float = 0.0
    gamma_damping: float = 0.0
    lambda_norm: float = 1.0  # spectral norms frozen at refresh (ring scaling)
    gamma_norm: float = 1.0


@dataclass
class FisherFactors:
    layers: list
    mode: DampingMode = None
    staleness: int = 0
    max_staleness: int = None
    safe_bound: float = SAFE_PERTURBATION
    batch_size: int = 0


def estimate_factors(cache):
    """Second moments of cached inputs and errors, batch-averaged.

    The cache must carry errors from a backward pass against sampled
    outputs; factors built from data-label errors estimate the empirical
    rather than the model Fisher.
    """
    if cache.errors is None:
        raise ValueError("cache has no errors; run backward before estimating factors")
    if cache.batch_size < 1:
        raise EmptyBatchError("cannot estimate factors from an empty batch")
    m = cache.batch_size
    layers = []
    for x, e in zip(cache.inputs, cache.errors):
        layers.append(LayerFactors(x.T @ x / m, e.T @ e / m))
    return FisherFactors(layers, batch_size=m)


def _spectral_or_zero(mat):
    try:
        return linalg.spectral_norm(mat)
    except ZeroMatrixError:
        return 0.0


def _invert_gated(mat, inverter):
    """Invert with the configured method, falling back to elimination once."""
    if inverter is not None:
        try:
            result = linalg.newton_schulz_inverse(mat, inverter)
            if result.residual <= INVERSE_GATE:
                return result.inverse
        except (DivergenceError, ZeroMatrixError):
            pass
    try:
        inv = linalg.exact_inverse(mat)
    except SingularMatrixError as exc:
        raise InversionFailedError(str(exc)) from exc
    if backend.frobenius(mat @ inv - np.eye(mat.shape[0])) > INVERSE_GATE:
        raise InversionFailedError("inverse residual above the refresh gate")
    return inv


def regularize_and_invert(factors, mode, inverter=None, max_staleness=None):
    """Damp each factor per the mode and store fresh inverses.

    Damping per factor: sqrt(rho) * ||factor||_2 for ring, sqrt(rho) for
    reng, rho for tikhonov. inverter is a NewtonConfig or None for exact
    elimination; a diverging or insufficient Newton run falls back to
    elimination once before InversionFailedError.
    """
    ring = mode.variant == "ring"
    for lf in factors.layers:
        # only the norm-scaled variant consumes the spectral norms
        lf.lambda_norm = _spectral_or_zero(lf.lambda_mat) if ring else 1.0
        lf.gamma_norm = _spectral_or_zero(lf.gamma_mat) if ring else 1.0
        lf.lambda_damping = mode.factor_damping(lf.lambda_norm)
        lf.gamma_damping = mode.factor_damping(lf.gamma_norm)
        eye_in = np.eye(lf.lambda_mat.shape[0])
        eye_out = np.eye(lf.gamma_mat.shape[0])
        lf.lambda_inv = _invert_gated(lf.lambda_mat + lf.lambda_damping * eye_in, inverter)
        lf.gamma_inv = _invert_gated(lf.gamma_mat + lf.gamma_damping * eye_out, inverter)
    factors.mode = mode
    factors.staleness = 0
    if max_staleness is not None:
        factors.max_staleness = max_staleness
    return factors


def natural_direction(grad, factors, layer_index):
    """Preconditioned direction gamma_inv @ G @ lambda_inv for one layer.

    Vectorized (column-major) this equals
    (lambda_tilde (x) gamma_tilde)^-1 vec(G). Learning-rate and 1/L
    scaling belong to the optimizer, not here.
    """
    if factors.max_staleness is not None and factors.staleness > factors.max_staleness:
        raise StaleFactorsError(
            f"factors are {factors.staleness} steps old, cap is {factors.max_staleness}"
        )
    lf = factors.layers[layer_index]
    if lf.lambda_inv is None or lf.gamma_inv is None:
        raise InversionFailedError("factors have not been inverted yet")
    grad = np.asarray(grad, dtype=np.float64)
    return backend.sandwich(lf.gamma_inv, grad, lf.lambda_inv)


def lazy_refresh(factors, new_damping):
    """First-order inverse correction toward a new damping level.

    new_damping is the mode's base scalar (rho for tikhonov, sqrt(rho)
    otherwise); ring rescales it by each factor's frozen spectral norm.
    Raises PerturbationTooLargeError, before touching anything, when any
    factor's |d_lambda| exceeds safe_bound times its stored damping; a
    stored damping of zero accepts any step, since there is no scale yet
    to protect.
    """
    if factors.mode is None:
        raise ValueError("factors must be regularized before lazy refreshes")
    ring = factors.mode.variant == "ring"
    planned = []
    for lf in factors.layers:
        for side in ("lambda", "gamma"):
            old = getattr(lf, f"{side}_damping")
            norm = getattr(lf, f"{side}_norm") if ring else 1.0
            new = new_damping * norm
            d_lambda = new - old
            if old > 0.0 and abs(d_lambda) > factors.safe_bound * old:
                raise PerturbationTooLargeError(
                    f"|d_lambda| = {abs(d_lambda):.3e} exceeds "
                    f"{factors.safe_bound} * {old:.3e}; full refresh required"
                )
            planned.append((lf, side, new, d_lambda))
    for lf, side, new, d_lambda in planned:
        inv = getattr(lf, f"{side}_inv")
        setattr(lf, f"{side}_inv", linalg.lazy_inverse_update(inv, d_lambda))
        setattr(lf, f"{side}_damping", new)
    factors.staleness += 1
    return factors
