"""Backend selection for the hot kernels.

The compiled extension ``pmpkit._kernels`` is used when it imports; otherwise
(or when ``PMPKIT_PURE_PYTHON=1``) the numpy implementations in
:mod:`pmpkit._fallback` are used.  Both raise the same exceptions.
"""

import os

import numpy as np

from . import _fallback

_compiled = None
if os.environ.get("PMPKIT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _fallback


def backends():
    """Available kernel modules keyed by name (used by tests and benchmarks)."""
    out = {"python": _fallback}
    if _compiled is not None:
        out["compiled"] = _compiled
    return out


def eval_program(prog, X):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if prog.count == 0 or X.shape[0] == 0:
        return np.zeros((X.shape[0], prog.count))
    return _impl.eval_program(prog, X)


def eval_program_grad(prog, X):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if prog.count == 0 or X.shape[0] == 0:
        return np.zeros((X.shape[0], prog.count)), np.zeros((X.shape[0], prog.count, prog.dim))
    return _impl.eval_program_grad(prog, X)


def rk4_forward(prog, q0, nodes, ucells, blowup):
    return _impl.rk4_forward(prog, np.asarray(q0, dtype=np.float64), nodes, ucells, float(blowup))


def rk4_matrix(A_left, A_mid, A_right, nodes):
    return _impl.rk4_matrix(A_left, A_mid, A_right, nodes)
