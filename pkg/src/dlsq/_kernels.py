"""Numeric kernels shared by all solvers.

Every kernel has one source body written so that numba can compile it
unchanged. Backend selection:

* ``DLSQ_BACKEND=numpy``  force the plain interpreted path
* ``DLSQ_BACKEND=numba``  require numba (ImportError if missing)
* unset                   numba when importable, numpy otherwise

``RAW`` keeps the uncompiled functions so the benchmark can time both
paths in one process.
"""
from __future__ import annotations

import os

import numpy as np


def _agent_gradient(A, AT, b, x):
    # AT is a contiguous copy of A.T; numba's np.dot wants contiguous args.
    return np.dot(AT, np.dot(A, x) - b)


def _agent_r_matrix(A, AT, K, inv_m):
    R = np.dot(AT, np.dot(A, K))
    # subtract inv_m * I without allocating an identity
    d = R.shape[0]
    R.ravel()[:: d + 1] -= inv_m
    return R


def _apc_agent_update(P, x_i, xbar, gamma):
    return x_i + gamma * np.dot(P, xbar - x_i)


def _bfgs_update(M, s, y, sy):
    # (I - r s y^T) M (I - r y s^T) + r s s^T, expanded for general M
    r = 1.0 / sy
    My = np.dot(M, y)
    yM = np.dot(y, M)
    yMy = np.dot(yM, y)
    ss = s.reshape(-1, 1) * s.reshape(1, -1)
    sYM = s.reshape(-1, 1) * yM.reshape(1, -1)
    Mys = My.reshape(-1, 1) * s.reshape(1, -1)
    return M - r * (sYM + Mys) + (r * r * yMy + r) * ss


def _roundoff(v, scale):
    # round half away from zero at the quantum 1/scale
    return np.copysign(np.floor(np.abs(v) * scale + 0.5), v) / scale


RAW = {
    "agent_gradient": _agent_gradient,
    "agent_r_matrix": _agent_r_matrix,
    "apc_agent_update": _apc_agent_update,
    "bfgs_update": _bfgs_update,
    "roundoff": _roundoff,
}

_requested = os.environ.get("DLSQ_BACKEND", "").strip().lower()
if _requested not in ("", "numpy", "numba"):
    raise ValueError(f"DLSQ_BACKEND must be 'numpy' or 'numba', got {_requested!r}")

_have_numba = False
if _requested != "numpy":
    try:
        import numba as _numba

        _have_numba = True
    except ImportError:
        if _requested == "numba":
            raise

BACKEND = "numba" if _have_numba else "numpy"

if BACKEND == "numba":
    _jit = _numba.njit(cache=True, fastmath=False)
    agent_gradient = _jit(_agent_gradient)
    agent_r_matrix = _jit(_agent_r_matrix)
    apc_agent_update = _jit(_apc_agent_update)
    bfgs_update = _jit(_bfgs_update)
    roundoff = _jit(_roundoff)
else:
    agent_gradient = _agent_gradient
    agent_r_matrix = _agent_r_matrix
    apc_agent_update = _apc_agent_update
    bfgs_update = _bfgs_update
    roundoff = _roundoff
