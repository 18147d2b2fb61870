"""Pure numpy implementations of the hot kernels.

Same signatures and error behaviour as the compiled ``_kernels`` module; used
when the extension is not built or ``PMPKIT_PURE_PYTHON=1`` is set.
"""

import numpy as np

from .errors import BlowUp, DomainError, NonFiniteValue
from .expr import (
    OP_ADD,
    OP_CONST,
    OP_COS,
    OP_DIV,
    OP_EXP,
    OP_LOG,
    OP_MUL,
    OP_NEG,
    OP_POW,
    OP_SIN,
    OP_SQRT,
    OP_SUB,
    OP_TANH,
    OP_VAR,
)


def _check_pow(a, b):
    bad = (a < 0) & (b != np.floor(b))
    if np.any(bad):
        raise DomainError("negative base with non-integer exponent")


def _run(ops, args, consts, X):
    stack = []
    for op, arg in zip(ops, args):
        if op == OP_CONST:
            stack.append(np.full(X.shape[0], consts[arg]))
        elif op == OP_VAR:
            stack.append(X[:, arg])
        elif op == OP_NEG:
            stack.append(-stack.pop())
        elif op >= OP_SIN:
            x = stack.pop()
            if op == OP_LOG:
                if np.any(x <= 0):
                    raise DomainError("log of nonpositive value")
                stack.append(np.log(x))
            elif op == OP_SQRT:
                if np.any(x < 0):
                    raise DomainError("sqrt of negative value")
                stack.append(np.sqrt(x))
            elif op == OP_SIN:
                stack.append(np.sin(x))
            elif op == OP_COS:
                stack.append(np.cos(x))
            elif op == OP_EXP:
                stack.append(np.exp(x))
            else:
                stack.append(np.tanh(x))
        else:
            b = stack.pop()
            a = stack.pop()
            if op == OP_ADD:
                stack.append(a + b)
            elif op == OP_SUB:
                stack.append(a - b)
            elif op == OP_MUL:
                stack.append(a * b)
            elif op == OP_DIV:
                if np.any(b == 0):
                    raise NonFiniteValue("division by zero")
                stack.append(a / b)
            else:
                _check_pow(a, b)
                stack.append(np.power(a, b))
    return stack.pop()


def eval_program(prog, X):
    """Evaluate every expression of ``prog`` at each row of ``X``.

    Returns an array of shape ``(len(X), prog.count)``.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    out = np.empty((X.shape[0], prog.count))
    with np.errstate(all="ignore"):
        for i in range(prog.count):
            lo, hi = prog.offsets[i], prog.offsets[i + 1]
            out[:, i] = _run(prog.ops[lo:hi], prog.args[lo:hi], prog.consts, X)
    if not np.all(np.isfinite(out)):
        raise NonFiniteValue("expression evaluated to a non-finite value")
    return out


def _run_grad(ops, args, consts, X):
    K, dim = X.shape
    stack = []
    for op, arg in zip(ops, args):
        if op == OP_CONST:
            stack.append((np.full(K, consts[arg]), np.zeros((K, dim))))
        elif op == OP_VAR:
            g = np.zeros((K, dim))
            g[:, arg] = 1.0
            stack.append((X[:, arg].copy(), g))
        elif op == OP_NEG:
            v, g = stack.pop()
            stack.append((-v, -g))
        elif op >= OP_SIN:
            x, g = stack.pop()
            if op == OP_LOG:
                if np.any(x <= 0):
                    raise DomainError("log of nonpositive value")
                v, d = np.log(x), 1.0 / x
            elif op == OP_SQRT:
                if np.any(x < 0):
                    raise DomainError("sqrt of negative value")
                v = np.sqrt(x)
                d = 0.5 / v
            elif op == OP_SIN:
                v, d = np.sin(x), np.cos(x)
            elif op == OP_COS:
                v, d = np.cos(x), -np.sin(x)
            elif op == OP_EXP:
                v = np.exp(x)
                d = v
            else:
                v = np.tanh(x)
                d = 1.0 - v * v
            stack.append((v, g * d[:, None]))
        else:
            b, gb = stack.pop()
            a, ga = stack.pop()
            if op == OP_ADD:
                stack.append((a + b, ga + gb))
            elif op == OP_SUB:
                stack.append((a - b, ga - gb))
            elif op == OP_MUL:
                stack.append((a * b, ga * b[:, None] + gb * a[:, None]))
            elif op == OP_DIV:
                if np.any(b == 0):
                    raise NonFiniteValue("division by zero")
                stack.append((a / b, (ga * b[:, None] - gb * a[:, None]) / (b * b)[:, None]))
            else:
                _check_pow(a, b)
                v = np.power(a, b)
                coef = np.where(b == 0, 0.0, b * np.power(a, b - 1))
                g = ga * coef[:, None]
                varying = np.any(gb != 0, axis=1)
                if np.any(varying):
                    if np.any(a[varying] <= 0):
                        raise DomainError("variable exponent requires a positive base")
                    with np.errstate(all="ignore"):
                        logs = np.where(varying, np.log(np.where(a > 0, a, 1.0)), 0.0)
                    g = g + gb * (v * logs)[:, None]
                stack.append((v, g))
    return stack.pop()


def eval_program_grad(prog, X):
    """Values ``(K, count)`` and gradients ``(K, count, dim)`` at each row of ``X``."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    K = X.shape[0]
    vals = np.empty((K, prog.count))
    grads = np.empty((K, prog.count, prog.dim))
    with np.errstate(all="ignore"):
        for i in range(prog.count):
            lo, hi = prog.offsets[i], prog.offsets[i + 1]
            v, g = _run_grad(prog.ops[lo:hi], prog.args[lo:hi], prog.consts, X)
            vals[:, i] = v
            grads[:, i, :] = g
    if not (np.all(np.isfinite(vals)) and np.all(np.isfinite(grads))):
        raise NonFiniteValue("non-finite value or derivative")
    return vals, grads


def rk4_forward(prog, q0, nodes, ucells, blowup):
    """Classical RK4 for ``q' = f(q, u_k, t)`` with ``u`` constant per cell.

    Returns node states of shape ``(N+1, n)``.  Raises :class:`BlowUp` at the
    start time of the first cell whose stages leave ``|q|_inf <= blowup``.
    """
    n = len(q0)
    m = ucells.shape[1]
    N = len(nodes) - 1
    Q = np.empty((N + 1, n))
    Q[0] = q0
    x = np.empty((1, 1 + n + m))
    q = np.array(q0, dtype=np.float64)

    def f(state, t):
        if not np.all(np.isfinite(state)) or np.max(np.abs(state)) > blowup:
            raise _Escape
        x[0, 0] = t
        x[0, 1 : 1 + n] = state
        return eval_program(prog, x)[0]

    for k in range(N):
        t0, h = nodes[k], nodes[k + 1] - nodes[k]
        x[0, 1 + n :] = ucells[k]
        try:
            k1 = f(q, t0)
            k2 = f(q + 0.5 * h * k1, t0 + 0.5 * h)
            k3 = f(q + 0.5 * h * k2, t0 + 0.5 * h)
            k4 = f(q + h * k3, t0 + h)
            q = q + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(q)) or np.max(np.abs(q)) > blowup:
                raise _Escape
        except _Escape:
            raise BlowUp(t0, float(np.max(np.abs(q)))) from None
        Q[k + 1] = q
    return Q


class _Escape(Exception):
    pass


def rk4_matrix(A_left, A_mid, A_right, nodes):
    """RK4 for ``Z' = A(t) Z``, ``Z(0) = I`` with ``A`` sampled per cell.

    ``A`` is given at the left end, midpoint and right end of every cell.
    Returns ``Z`` at the nodes ``(N+1, n, n)`` and at cell midpoints
    ``(N, n, n)``; the midpoint value comes from an RK4 half step.
    """
    N, n, _ = A_left.shape
    Z = np.empty((N + 1, n, n))
    Zm = np.empty((N, n, n))
    Z[0] = np.eye(n)
    for k in range(N):
        h = nodes[k + 1] - nodes[k]
        a0, am, a1 = A_left[k], A_mid[k], A_right[k]
        z = Z[k]
        k1 = a0 @ z
        k2 = am @ (z + 0.5 * h * k1)
        k3 = am @ (z + 0.5 * h * k2)
        k4 = a1 @ (z + h * k3)
        Z[k + 1] = z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        aq = 0.375 * a0 + 0.75 * am - 0.125 * a1
        g = 0.5 * h
        j1 = k1
        j2 = aq @ (z + 0.5 * g * j1)
        j3 = aq @ (z + 0.5 * g * j2)
        j4 = am @ (z + g * j3)
        Zm[k] = z + (g / 6.0) * (j1 + 2 * j2 + 2 * j3 + j4)
    return Z, Zm
