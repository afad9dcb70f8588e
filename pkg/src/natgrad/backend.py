"""Kernel backend selection.

The hot numeric kernels exist twice: a numba-jitted version and a pure
numpy fallback. The jitted path is the default whenever numba imports;
set ``NATGRAD_BACKEND=numpy`` to force the fallback, ``NATGRAD_BACKEND=numba``
to require the jitted path (raises if numba is absent).
"""

import os

_FLAG = os.environ.get("NATGRAD_BACKEND", "auto").strip().lower()

if _FLAG in ("", "auto"):
    try:
        from . import _kernels_numba as _impl
        BACKEND = "numba"
    except ImportError:
        from . import _kernels_numpy as _impl
        BACKEND = "numpy"
elif _FLAG == "numba":
    from . import _kernels_numba as _impl
    BACKEND = "numba"
elif _FLAG == "numpy":
    from . import _kernels_numpy as _impl
    BACKEND = "numpy"
else:
    raise ValueError(
        f"NATGRAD_BACKEND={_FLAG!r} not understood; use 'auto', 'numba' or 'numpy'"
    )

ge_solve = _impl.ge_solve
ge_inverse = _impl.ge_inverse
frobenius = _impl.frobenius
newton_schulz = _impl.newton_schulz
power_iteration_sq = _impl.power_iteration_sq
lazy_inverse = _impl.lazy_inverse
sandwich = _impl.sandwich
kalman_gain_core = _impl.kalman_gain_core
diag_cov_scale = _impl.diag_cov_scale


def warmup():
    """Touch every kernel once so jit compilation happens up front."""
    import numpy as np

    a = np.array([[2.0, 0.1], [0.1, 1.0]])
    ge_inverse(a)
    ge_solve(a, np.ones(2))
    newton_schulz(a, a.T / np.trace(a.T @ a), 3, 5, 1e-12)
    power_iteration_sq(a.T @ a, 10, 1e-8)
    lazy_inverse(a, 0.01)
    sandwich(a, a, a)
    kalman_gain_core(np.ones((1, 2)), np.ones(2), np.eye(1))
    diag_cov_scale(np.ones((2, 1)), np.ones((1, 2)))
    frobenius(a)
