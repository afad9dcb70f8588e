"""Numba-jitted twins of the kernels in ``_kernels_numpy``.

Import fails when numba is missing; ``backend`` catches that and falls
back. Compiled artifacts are cached on disk, so only the first call in a
fresh environment pays the compile cost.
"""

import numpy as np
from numba import njit

PIVOT_RTOL = 1e-12


@njit(cache=True)
def ge_solve(a, b):
    n = a.shape[0]
    rhs = b.reshape(n, -1)
    m = rhs.shape[1]
    aug = np.empty((n, n + m))
    scale = np.empty(n)
    for i in range(n):
        row_max = 0.0
        for j in range(n):
            aug[i, j] = a[i, j]
            av = abs(a[i, j])
            if av > row_max:
                row_max = av
        for j in range(m):
            aug[i, n + j] = rhs[i, j]
        if row_max == 0.0:
            return np.zeros((n, m)), 1
        scale[i] = row_max
    for k in range(n):
        r = k
        best = abs(aug[k, k]) / scale[k]
        for i in range(k + 1, n):
            ratio = abs(aug[i, k]) / scale[i]
            if ratio > best:
                best = ratio
                r = i
        if abs(aug[r, k]) <= PIVOT_RTOL * scale[r]:
            return np.zeros((n, m)), 1
        if r != k:
            for j in range(n + m):
                tmp = aug[k, j]
                aug[k, j] = aug[r, j]
                aug[r, j] = tmp
            tmp = scale[k]
            scale[k] = scale[r]
            scale[r] = tmp
        for i in range(k + 1, n):
            factor = aug[i, k] / aug[k, k]
            for j in range(k, n + m):
                aug[i, j] -= factor * aug[k, j]
    x = np.zeros((n, m))
    for k in range(n - 1, -1, -1):
        for j in range(m):
            acc = aug[k, n + j]
            for i in range(k + 1, n):
                acc -= aug[k, i] * x[i, j]
            x[k, j] = acc / aug[k, k]
    return x, 0


@njit(cache=True)
def ge_inverse(a):
    return ge_solve(a, np.eye(a.shape[0]))


@njit(cache=True)
def frobenius(a):
    s = 0.0
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            s += a[i, j] * a[i, j]
    return np.sqrt(s)


@njit(cache=True)
def _residual(a, x):
    r = a @ x
    for i in range(r.shape[0]):
        r[i, i] -= 1.0
    return frobenius(r)


@njit(cache=True)
def newton_schulz(a, x0, order, max_iters, tol):
    n = a.shape[0]
    eye = np.eye(n)
    x = x0.copy()
    residuals = np.empty(max_iters + 1)
    r0 = _residual(a, x)
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
        r = _residual(a, x)
        residuals[k] = r
        iters = k
        if not np.isfinite(r) or r > 10.0 * r0:
            status = 2
            break
        if r <= tol:
            status = 0
            break
    return x, iters, residuals[: iters + 1], status


@njit(cache=True)
def _power_iterate(b, v, max_iters, tol):
    # first-iteration convergence is never accepted: a start vector
    # orthogonal to the dominant eigenvector yields an exact-zero Rayleigh
    # quotient that matches the initializer
    lam = 0.0
    for it in range(max_iters):
        w = b @ v
        new_lam = 0.0
        norm_sq = 0.0
        for i in range(w.shape[0]):
            new_lam += v[i] * w[i]
            norm_sq += w[i] * w[i]
        norm_w = np.sqrt(norm_sq)
        if norm_w <= 1e-300:
            return new_lam, True
        v = w / norm_w
        ref = abs(new_lam)
        if ref < 1e-300:
            ref = 1e-300
        if it > 0 and abs(new_lam - lam) <= tol * ref:
            return new_lam, False
        lam = new_lam
    return lam, False


@njit(cache=True)
def power_iteration_sq(b, max_iters, tol):
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
        if lam > best:
            best = lam
    return best


@njit(cache=True)
def lazy_inverse(a_inv, d_lambda):
    return a_inv - d_lambda * (a_inv @ a_inv)


@njit(cache=True)
def sandwich(gamma_inv, g, lambda_inv):
    return gamma_inv @ g @ lambda_inv


@njit(cache=True)
def kalman_gain_core(h, sigma, r_tilde):
    d_o = h.shape[0]
    n = h.shape[1]
    pht = np.empty((n, d_o))
    for i in range(n):
        for j in range(d_o):
            pht[i, j] = sigma[i] * h[j, i]
    s = h @ pht + r_tilde
    gain_t, status = ge_solve(s.T.copy(), pht.T.copy())
    return gain_t.T.copy(), status


@njit(cache=True)
def diag_cov_scale(gain, h):
    n = gain.shape[0]
    d_o = gain.shape[1]
    c = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for j in range(d_o):
            acc += gain[i, j] * h[j, i]
        c[i] = acc
    return c
