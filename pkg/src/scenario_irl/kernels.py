"""Kernel dispatch: the compiled extension when built, numpy otherwise.

Set ``SCENARIO_IRL_PURE=1`` to force the numpy path.
"""

import os

import numpy as np

from . import _kernels_py

BACKEND = "numpy"
_impl = _kernels_py
if os.environ.get("SCENARIO_IRL_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py


def bellman_backup(cost, ev, row_index, gamma):
    """Return ``(V, greedy_index)`` for one Bellman optimality sweep."""
    if BACKEND == "cython":
        return _impl.bellman_backup(np.ascontiguousarray(cost, dtype=np.float64),
                                    np.ascontiguousarray(ev, dtype=np.float64),
                                    np.ascontiguousarray(row_index, dtype=np.int64), float(gamma))
    return _impl.bellman_backup(cost, ev, row_index, gamma)


def sup_diff(x, y) -> float:
    if BACKEND == "cython":
        return _impl.sup_diff(np.ascontiguousarray(x, dtype=np.float64), np.ascontiguousarray(y, dtype=np.float64))
    return _impl.sup_diff(x, y)


def lqg_residuals(pts, cost_exp, alpha, value_exp, beta, A, B, mu, sigma, L, gamma) -> np.ndarray:
    """Pointwise ``c - T*u`` for monomial bases under the truncated LQG kernel."""
    args = (np.ascontiguousarray(pts, dtype=np.float64), np.ascontiguousarray(cost_exp, dtype=np.int64),
            np.ascontiguousarray(alpha, dtype=np.float64), np.ascontiguousarray(value_exp, dtype=np.int64),
            np.ascontiguousarray(beta, dtype=np.float64))
    return _impl.lqg_residuals(*args, float(A), float(B), float(mu), float(sigma), float(L), float(gamma))
