"""Pure-numpy implementations of the hot numeric kernels.

Every function here has a signature-identical twin in ``_kernels_numba``;
``backend`` picks one module at import time. Status codes instead of
exceptions keep the two implementations interchangeable: 0 means success,
1 means a singular system, 2 means a diverged iteration.
"""

import numpy as np

PIVOT_RTOL = 1e-12


def ge_solve(a, b):
    """Solve a @ x = b by Gaussian elimination with scaled partial pivoting.

    b may be a vector or a matrix of right-hand sides. Returns (x, status).
    """
    n = a.shape[0]
    rhs = b.reshape(n, -1)
    aug = np.concatenate([a, rhs], axis=1).astype(np.float64)
    scale = np.max(np.abs(a), axis=1)
    if np.any(scale == 0.0):
        return np.zeros_like(rhs, dtype=np.float64), 1
    for k in range(n):
        ratios = np.abs(aug[k:, k]) / scale[k:]
        r = k + int(np.argmax(ratios))
        if np.abs(aug[r, k]) <= PIVOT_RTOL * scale[r]:
            return np.zeros_like(rhs, dtype=np.float64), 1
        if r != k:
            aug[[k, r]] = aug[[r, k]]
            scale[[k, r]] = scale[[r, k]]
        factors = aug[k + 1:, k] / aug[k, k]
        aug[k + 1:, k:] -= factors[:, None] * aug[k, k:]
    x = np.zeros((n, rhs.shape[1]))
    for k in range(n - 1, -1, -1):
        x[k] = (aug[k, n:] - aug[k, k + 1: n] @ x[k + 1:]) / aug[k, k]
    return x, 0


def ge_inverse(a):
    """Invert a square matrix via ge_solve against the identity."""
    inv, status = ge_solve(a, np.eye(a.shape[0]))
    return inv, status


def frobenius(a):
    return float(np.sqrt(np.sum(a * a)))


def newton_schulz(a, x0, order, max_iters, tol):
    """Iterate the order-2/3/4 inverse recurrence from the start iterate x0.

    Returns (x, iterations_used, residuals, status) where residuals[k] is
    ||A X_k - I||_F including the start iterate, and status is 0 when the
    tolerance was met, 1 at the iteration cap, 2 on divergence (residual
    above 10x its initial value or non-finite).
    """
    n = a.shape[0]
    eye = np.eye(n)
    x = x0.astype(np.float64).copy()
    residuals = np.empty(max_iters + 1)
    r0 = frobenius(a @ x - eye)
    residuals[0] = r0
    if r0 <= tol:
        return x, 0, residuals[:1], 0
    iters = 0
    status = 1
    for k in range(1, max_iters + 1):
        ax = a @ x
        if order == 2:
            x = x @ (2.0 * eye - ax)
        elif order == 3:
            x = x @ (3.0 * eye - 3.0 * ax + ax @ ax)
        else:
            x = x @ (4.0 * eye - ax @ (6.0 * eye - ax @ (4.0 * eye - ax)))
        r = frobenius(a @ x - eye)
        residuals[k] = r
        iters = k
        if not np.isfinite(r) or r > 10.0 * r0:
            status = 2
            break
        if r <= tol:
            status = 0
            break
    return x, iters, residuals[: iters + 1], status


def _power_iterate(b, v, max_iters, tol):
    """Rayleigh-quotient power iteration on symmetric PSD b from start v.

    Returns (eigenvalue_estimate, collapsed) where collapsed flags a start
    vector annihilated by b. Convergence is never accepted on the first
    iteration: a start vector orthogonal to the dominant eigenvector makes
    the first Rayleigh quotient an exact zero that matches the
    initializer.
    """
    lam = 0.0
    for it in range(max_iters):
        w = b @ v
        new_lam = float(v @ w)
        norm_w = float(np.sqrt(w @ w))
        if norm_w <= 1e-300:
            return new_lam, True
        v = w / norm_w
        if it > 0 and abs(new_lam - lam) <= tol * max(abs(new_lam), 1e-300):
            return new_lam, False
        lam = new_lam
    return lam, False


def power_iteration_sq(b, max_iters, tol):
    """Largest eigenvalue of a symmetric PSD matrix, all-ones start vector.

    Falls back to cycling basis vectors when the ones vector lies in the
    null space; the basis spans, so the maximum over starts is sound.
    """
    n = b.shape[0]
    v = np.ones(n) / np.sqrt(n)
    lam, collapsed = _power_iterate(b, v, max_iters, tol)
    if not collapsed:
        return max(lam, 0.0)
    best = max(lam, 0.0)
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        lam, _ = _power_iterate(b, e, max_iters, tol)
        best = max(best, lam)
    return best


def lazy_inverse(a_inv, d_lambda):
    """First-order inverse of (A + d_lambda I) from the inverse of A."""
    return a_inv - d_lambda * (a_inv @ a_inv)


def sandwich(gamma_inv, g, lambda_inv):
    """Two-sided factor product gamma_inv @ g @ lambda_inv."""
    return gamma_inv @ g @ lambda_inv


def kalman_gain_core(h, sigma, r_tilde):
    """Gain diag(sigma) H^T (H diag(sigma) H^T + r_tilde)^-1, row-scaled.

    Never materializes an n x n matrix. Returns (gain, status).
    """
    pht = sigma[:, None] * h.T
    s = h @ pht + r_tilde
    gain_t, status = ge_solve(s.T.copy(), pht.T.copy())
    return gain_t.T, status


def diag_cov_scale(gain, h):
    """Per-coordinate contraction c_i = sum_j gain[i, j] * h[j, i]."""
    return np.einsum("ij,ji->i", gain, h)
