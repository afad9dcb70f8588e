"""Dense small-matrix routines: exact elimination, residual-driven
iterative inversion, first-order inverse perturbation, spectral norm
estimation, and the mixed Kronecker matrix-vector product.

All matrices are 2-D float64 ndarrays. The Kronecker convention is
column-major throughout: vec stacks columns, so
(A (x) B) vec(C) = vec(B C A^T).
"""

from dataclasses import dataclass

import numpy as np

from . import backend
from .errors import (
    DimensionMismatchError,
    DivergenceError,
    SingularMatrixError,
    ZeroMatrixError,
)

NEWTON_ORDERS = (2, 3, 4)
ALPHA_MODES = ("trace", "norm-product")


@dataclass(frozen=True)
class NewtonConfig:
    """Settings for the iterative inverse.

    order is the per-step convergence order (2, 3 or 4), max_iters the
    iteration cap, residual_tol the Frobenius residual target, and
    alpha_mode picks the start scaling: X0 = A^T / tr(A^T A) for "trace",
    X0 = A^T / (||A||_2 ||A||_inf) for "norm-product".
    """

    order: int = 3
    max_iters: int = 30
    residual_tol: float = 1e-6
    alpha_mode: str = "trace"

    def __post_init__(self):
        if self.order not in NEWTON_ORDERS:
            raise ValueError(f"order must be one of {NEWTON_ORDERS}, got {self.order}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.residual_tol <= 0:
            raise ValueError("residual_tol must be positive")
        if self.alpha_mode not in ALPHA_MODES:
            raise ValueError(f"alpha_mode must be one of {ALPHA_MODES}")


@dataclass(frozen=True)
class NewtonResult:
    inverse: np.ndarray
    iterations: int
    residual: float
    residuals: np.ndarray  # ||A X_k - I||_F for k = 0 .. iterations


def _as_square(a, op):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatchError(f"{op} needs a square matrix, got shape {a.shape}")
    return a


def exact_inverse(a):
    """Invert by Gaussian elimination with scaled partial pivoting.

    Raises SingularMatrixError when a pivot falls below 1e-12 times its
    row scale.
    """
    a = _as_square(a, "exact_inverse")
    inv, status = backend.ge_inverse(a)
    if status != 0:
        raise SingularMatrixError("pivot underflow during elimination")
    return inv


def newton_schulz_inverse(a, cfg: NewtonConfig = NewtonConfig()):
    """Iterative inverse from a scaled-transpose start.

    Runs the order-psi recurrence (order 3 is
    X_{k+1} = X_k (3I - 3 A X_k + (A X_k)^2)) until the Frobenius
    residual meets cfg.residual_tol or the cap is hit; the residual
    history rides along in the result. Raises DivergenceError when the
    residual grows past 10x its initial value, which flags a matrix
    outside the convergence basin.
    """
    a = _as_square(a, "newton_schulz_inverse")
    if cfg.alpha_mode == "trace":
        denom = float(np.trace(a.T @ a))
        if denom == 0.0:
            raise ZeroMatrixError("cannot scale the start iterate of a zero matrix")
        alpha = 1.0 / denom
    else:
        norm_inf = float(np.max(np.sum(np.abs(a), axis=1)))
        if norm_inf == 0.0:
            raise ZeroMatrixError("cannot scale the start iterate of a zero matrix")
        alpha = 1.0 / (spectral_norm(a) * norm_inf)
    x0 = alpha * a.T
    x, iters, residuals, status = backend.newton_schulz(
        a, x0, cfg.order, cfg.max_iters, cfg.residual_tol
    )
    if status == 2:
        raise DivergenceError(
            f"residual {residuals[-1]:.3e} exceeded 10x its initial value "
            f"{residuals[0]:.3e} after {iters} iterations"
        )
    return NewtonResult(x, iters, float(residuals[-1]), residuals)


def lazy_inverse_update(a_inv, d_lambda):
    """First-order inverse of (A + d_lambda I) given A^-1.

    Applies A^-1 - d_lambda A^-1 A^-1; the error versus the exact
    inverse is O(d_lambda^2), so the caller owns keeping d_lambda small.
    """
    a_inv = _as_square(a_inv, "lazy_inverse_update")
    if d_lambda == 0.0:
        return a_inv
    return backend.lazy_inverse(a_inv, float(d_lambda))


def spectral_norm(a, max_iters=50, tol=1e-8):
    """Largest singular value via power iteration on A^T A.

    Deterministic all-ones start vector. Raises ZeroMatrixError for an
    all-zero input.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionMismatchError(f"spectral_norm needs a matrix, got shape {a.shape}")
    if not np.any(a):
        raise ZeroMatrixError("spectral norm of the zero matrix is undefined here")
    lam = backend.power_iteration_sq(a.T @ a, int(max_iters), float(tol))
    return float(np.sqrt(max(lam, 0.0)))


def kron_matvec(a, b, c):
    """(A (x) B) vec(C) without forming the Kronecker product.

    Column-major vec: requires C of shape (cols(B), cols(A)) and returns
    B @ C @ A^T of shape (rows(B), rows(A)).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or c.ndim != 2:
        raise DimensionMismatchError("kron_matvec operates on matrices")
    if c.shape != (b.shape[1], a.shape[1]):
        raise DimensionMismatchError(
            f"C must be {(b.shape[1], a.shape[1])} for A {a.shape} and B {b.shape}, "
            f"got {c.shape}"
        )
    return b @ c @ a.T
