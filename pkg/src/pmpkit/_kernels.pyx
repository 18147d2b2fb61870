# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: postfix expression evaluation and fixed-step RK4.

Mirrors :mod:`pmpkit._fallback` function for function.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, exp, log, sqrt, tanh, pow, floor, fabs, isfinite, INFINITY

from .errors import BlowUp, DomainError, NonFiniteValue

cnp.import_array()

cdef enum:
    OP_CONST = 0
    OP_VAR = 1
    OP_ADD = 2
    OP_SUB = 3
    OP_MUL = 4
    OP_DIV = 5
    OP_POW = 6
    OP_NEG = 7
    OP_SIN = 8
    OP_COS = 9
    OP_EXP = 10
    OP_LOG = 11
    OP_SQRT = 12
    OP_TANH = 13

cdef enum:
    OK = 0
    ERR_DOMAIN = 1
    ERR_NONFINITE = 2
    ERR_BLOWUP = 3



cdef int run(const int* ops, const int* args, const double* consts,
             int lo, int hi, const double* x, double* stack, double* out) noexcept nogil:
    cdef int sp = 0
    cdef int i, op
    cdef double a, b
    for i in range(lo, hi):
        op = ops[i]
        if op == OP_CONST:
            stack[sp] = consts[args[i]]
            sp += 1
        elif op == OP_VAR:
            stack[sp] = x[args[i]]
            sp += 1
        elif op == OP_NEG:
            stack[sp - 1] = -stack[sp - 1]
        elif op >= OP_SIN:
            a = stack[sp - 1]
            if op == OP_SIN:
                stack[sp - 1] = sin(a)
            elif op == OP_COS:
                stack[sp - 1] = cos(a)
            elif op == OP_EXP:
                stack[sp - 1] = exp(a)
            elif op == OP_LOG:
                if a <= 0:
                    return ERR_DOMAIN
                stack[sp - 1] = log(a)
            elif op == OP_SQRT:
                if a < 0:
                    return ERR_DOMAIN
                stack[sp - 1] = sqrt(a)
            else:
                stack[sp - 1] = tanh(a)
        else:
            b = stack[sp - 1]
            a = stack[sp - 2]
            sp -= 1
            if op == OP_ADD:
                stack[sp - 1] = a + b
            elif op == OP_SUB:
                stack[sp - 1] = a - b
            elif op == OP_MUL:
                stack[sp - 1] = a * b
            elif op == OP_DIV:
                if b == 0:
                    return ERR_NONFINITE
                stack[sp - 1] = a / b
            else:
                if a < 0 and b != floor(b):
                    return ERR_DOMAIN
                stack[sp - 1] = pow(a, b)
    out[0] = stack[0]
    if not isfinite(out[0]):
        return ERR_NONFINITE
    return OK


cdef int run_grad(const int* ops, const int* args, const double* consts,
                  int lo, int hi, int dim, const double* x,
                  double* sv, double* sg, double* out, double* gout) noexcept nogil:
    cdef int sp = 0
    cdef int i, j, op
    cdef double a, b, v, d, c
    cdef double* ga
    cdef double* gb
    cdef bint varying
    for i in range(lo, hi):
        op = ops[i]
        if op == OP_CONST or op == OP_VAR:
            for j in range(dim):
                sg[sp * dim + j] = 0.0
            if op == OP_CONST:
                sv[sp] = consts[args[i]]
            else:
                sv[sp] = x[args[i]]
                sg[sp * dim + args[i]] = 1.0
            sp += 1
        elif op == OP_NEG:
            sv[sp - 1] = -sv[sp - 1]
            for j in range(dim):
                sg[(sp - 1) * dim + j] = -sg[(sp - 1) * dim + j]
        elif op >= OP_SIN:
            a = sv[sp - 1]
            if op == OP_SIN:
                v = sin(a)
                d = cos(a)
            elif op == OP_COS:
                v = cos(a)
                d = -sin(a)
            elif op == OP_EXP:
                v = exp(a)
                d = v
            elif op == OP_LOG:
                if a <= 0:
                    return ERR_DOMAIN
                v = log(a)
                d = 1.0 / a
            elif op == OP_SQRT:
                if a < 0:
                    return ERR_DOMAIN
                v = sqrt(a)
                d = 0.5 / v if v > 0 else INFINITY
            else:
                v = tanh(a)
                d = 1.0 - v * v
            sv[sp - 1] = v
            for j in range(dim):
                sg[(sp - 1) * dim + j] *= d
        else:
            b = sv[sp - 1]
            a = sv[sp - 2]
            gb = sg + (sp - 1) * dim
            ga = sg + (sp - 2) * dim
            sp -= 1
            if op == OP_ADD:
                sv[sp - 1] = a + b
                for j in range(dim):
                    ga[j] += gb[j]
            elif op == OP_SUB:
                sv[sp - 1] = a - b
                for j in range(dim):
                    ga[j] -= gb[j]
            elif op == OP_MUL:
                sv[sp - 1] = a * b
                for j in range(dim):
                    ga[j] = ga[j] * b + gb[j] * a
            elif op == OP_DIV:
                if b == 0:
                    return ERR_NONFINITE
                sv[sp - 1] = a / b
                for j in range(dim):
                    ga[j] = (ga[j] * b - gb[j] * a) / (b * b)
            else:
                if a < 0 and b != floor(b):
                    return ERR_DOMAIN
                v = pow(a, b)
                c = 0.0 if b == 0 else b * pow(a, b - 1)
                varying = False
                for j in range(dim):
                    if gb[j] != 0:
                        varying = True
                if varying and a <= 0:
                    return ERR_DOMAIN
                d = v * log(a) if varying else 0.0
                for j in range(dim):
                    ga[j] = ga[j] * c + gb[j] * d
                sv[sp - 1] = v
    out[0] = sv[0]
    if not isfinite(out[0]):
        return ERR_NONFINITE
    for j in range(dim):
        gout[j] = sg[j]
        if not isfinite(gout[j]):
            return ERR_NONFINITE
    return OK


cdef _raise(int status):
    if status == ERR_DOMAIN:
        raise DomainError("expression evaluated outside its domain")
    raise NonFiniteValue("expression evaluated to a non-finite value")


def eval_program(prog, X):
    cdef const int[::1] ops = np.ascontiguousarray(prog.ops, dtype=np.intc)
    cdef const int[::1] args = np.ascontiguousarray(prog.args, dtype=np.intc)
    cdef const double[::1] consts = np.ascontiguousarray(prog.consts, dtype=np.float64)
    cdef const int[::1] offsets = np.ascontiguousarray(prog.offsets, dtype=np.intc)
    cdef double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef Py_ssize_t K = x.shape[0]
    cdef int count = prog.count
    out_arr = np.empty((K, count))
    cdef double[:, ::1] out = out_arr
    cdef double[::1] stack = np.empty(prog.depth + 1)
    cdef Py_ssize_t r
    cdef int i, status = OK
    with nogil:
        for r in range(K):
            for i in range(count):
                status = run(&ops[0], &args[0], &consts[0], offsets[i], offsets[i + 1],
                             &x[r, 0], &stack[0], &out[r, i])
                if status != OK:
                    break
            if status != OK:
                break
    if status != OK:
        _raise(status)
    return out_arr


def eval_program_grad(prog, X):
    cdef const int[::1] ops = np.ascontiguousarray(prog.ops, dtype=np.intc)
    cdef const int[::1] args = np.ascontiguousarray(prog.args, dtype=np.intc)
    cdef const double[::1] consts = np.ascontiguousarray(prog.consts, dtype=np.float64)
    cdef const int[::1] offsets = np.ascontiguousarray(prog.offsets, dtype=np.intc)
    cdef double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef Py_ssize_t K = x.shape[0]
    cdef int count = prog.count
    cdef int dim = prog.dim
    vals_arr = np.empty((K, count))
    grads_arr = np.empty((K, count, dim))
    cdef double[:, ::1] vals = vals_arr
    cdef double[:, :, ::1] grads = grads_arr
    cdef double[::1] sv = np.empty(prog.depth + 1)
    cdef double[::1] sg = np.empty((prog.depth + 1) * dim)
    cdef Py_ssize_t r
    cdef int i, status = OK
    with nogil:
        for r in range(K):
            for i in range(count):
                status = run_grad(&ops[0], &args[0], &consts[0], offsets[i], offsets[i + 1],
                                  dim, &x[r, 0], &sv[0], &sg[0], &vals[r, i], &grads[r, i, 0])
                if status != OK:
                    break
            if status != OK:
                break
    if status != OK:
        _raise(status)
    return vals_arr, grads_arr


cdef inline bint escaped(const double* q, int n, double bound) noexcept nogil:
    cdef int i
    for i in range(n):
        if not isfinite(q[i]) or fabs(q[i]) > bound:
            return True
    return False


cdef int rhs(const int* ops, const int* args, const double* consts, const int* offsets,
             int n, double* x, const double* state, double t, double bound,
             double* stack, double* out) noexcept nogil:
    cdef int i, status
    if escaped(state, n, bound):
        return ERR_BLOWUP
    x[0] = t
    for i in range(n):
        x[1 + i] = state[i]
    for i in range(n):
        status = run(ops, args, consts, offsets[i], offsets[i + 1], x, stack, &out[i])
        if status != OK:
            return status
    return OK


def rk4_forward(prog, q0, nodes, ucells, double blowup):
    cdef const int[::1] ops = np.ascontiguousarray(prog.ops, dtype=np.intc)
    cdef const int[::1] args = np.ascontiguousarray(prog.args, dtype=np.intc)
    cdef const double[::1] consts = np.ascontiguousarray(prog.consts, dtype=np.float64)
    cdef const int[::1] offsets = np.ascontiguousarray(prog.offsets, dtype=np.intc)
    cdef const double[::1] tn = np.ascontiguousarray(nodes, dtype=np.float64)
    cdef const double[:, ::1] uc = np.ascontiguousarray(ucells, dtype=np.float64)
    cdef int n = len(q0)
    cdef int m = uc.shape[1]
    cdef Py_ssize_t N = tn.shape[0] - 1
    Q_arr = np.empty((N + 1, n))
    cdef double[:, ::1] Q = Q_arr
    cdef double[::1] x = np.empty(1 + n + m)
    cdef double[::1] stack = np.empty(prog.depth + 1)
    cdef double[:, ::1] kk = np.empty((4, n))
    cdef double[::1] q = np.ascontiguousarray(q0, dtype=np.float64).copy()
    cdef double[::1] tmp = np.empty(n)
    cdef Py_ssize_t k
    cdef int i, j, status = OK
    cdef double t0 = 0.0, h
    cdef double norm = 0.0
    for i in range(n):
        Q[0, i] = q[i]
    with nogil:
        for k in range(N):
            t0 = tn[k]
            h = tn[k + 1] - t0
            for j in range(m):
                x[1 + n + j] = uc[k, j]
            status = rhs(&ops[0], &args[0], &consts[0], &offsets[0], n, &x[0], &q[0],
                         t0, blowup, &stack[0], &kk[0, 0])
            if status != OK:
                break
            for i in range(n):
                tmp[i] = q[i] + 0.5 * h * kk[0, i]
            status = rhs(&ops[0], &args[0], &consts[0], &offsets[0], n, &x[0], &tmp[0],
                         t0 + 0.5 * h, blowup, &stack[0], &kk[1, 0])
            if status != OK:
                break
            for i in range(n):
                tmp[i] = q[i] + 0.5 * h * kk[1, i]
            status = rhs(&ops[0], &args[0], &consts[0], &offsets[0], n, &x[0], &tmp[0],
                         t0 + 0.5 * h, blowup, &stack[0], &kk[2, 0])
            if status != OK:
                break
            for i in range(n):
                tmp[i] = q[i] + h * kk[2, i]
            status = rhs(&ops[0], &args[0], &consts[0], &offsets[0], n, &x[0], &tmp[0],
                         t0 + h, blowup, &stack[0], &kk[3, 0])
            if status != OK:
                break
            for i in range(n):
                tmp[i] = q[i] + (h / 6.0) * (kk[0, i] + 2.0 * kk[1, i] + 2.0 * kk[2, i] + kk[3, i])
            if escaped(&tmp[0], n, blowup):
                status = ERR_BLOWUP
                break
            for i in range(n):
                q[i] = tmp[i]
                Q[k + 1, i] = q[i]
    if status == ERR_BLOWUP:
        for i in range(n):
            if fabs(q[i]) > norm:
                norm = fabs(q[i])
        raise BlowUp(t0, norm)
    if status != OK:
        _raise(status)
    return Q_arr


cdef inline void matmul(const double* a, const double* b, double* out, int n) noexcept nogil:
    cdef int i, j, l
    cdef double s
    for i in range(n):
        for j in range(n):
            s = 0.0
            for l in range(n):
                s += a[i * n + l] * b[l * n + j]
            out[i * n + j] = s


cdef void rk4_step(const double* a0, const double* am, const double* a1, const double* z,
                   double h, int n, double* k1, double* k2, double* k3, double* k4,
                   double* tmp, double* out) noexcept nogil:
    cdef int i
    cdef int nn = n * n
    matmul(a0, z, k1, n)
    for i in range(nn):
        tmp[i] = z[i] + 0.5 * h * k1[i]
    matmul(am, tmp, k2, n)
    for i in range(nn):
        tmp[i] = z[i] + 0.5 * h * k2[i]
    matmul(am, tmp, k3, n)
    for i in range(nn):
        tmp[i] = z[i] + h * k3[i]
    matmul(a1, tmp, k4, n)
    for i in range(nn):
        out[i] = z[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])


def rk4_matrix(A_left, A_mid, A_right, nodes):
    cdef const double[:, :, ::1] al = np.ascontiguousarray(A_left, dtype=np.float64)
    cdef const double[:, :, ::1] am = np.ascontiguousarray(A_mid, dtype=np.float64)
    cdef const double[:, :, ::1] ar = np.ascontiguousarray(A_right, dtype=np.float64)
    cdef const double[::1] tn = np.ascontiguousarray(nodes, dtype=np.float64)
    cdef Py_ssize_t N = al.shape[0]
    cdef int n = al.shape[1]
    Z_arr = np.empty((N + 1, n, n))
    Zm_arr = np.empty((N, n, n))
    cdef double[:, :, ::1] Z = Z_arr
    cdef double[:, :, ::1] Zm = Zm_arr
    cdef double[:, ::1] work = np.empty((6, n * n))
    cdef double[::1] aq = np.empty(n * n)
    cdef Py_ssize_t k
    cdef int i, j
    cdef double h
    for i in range(n):
        for j in range(n):
            Z[0, i, j] = 1.0 if i == j else 0.0
    with nogil:
        for k in range(N):
            h = tn[k + 1] - tn[k]
            rk4_step(&al[k, 0, 0], &am[k, 0, 0], &ar[k, 0, 0], &Z[k, 0, 0], h, n,
                     &work[0, 0], &work[1, 0], &work[2, 0], &work[3, 0], &work[4, 0],
                     &Z[k + 1, 0, 0])
            for i in range(n * n):
                aq[i] = 0.375 * (&al[k, 0, 0])[i] + 0.75 * (&am[k, 0, 0])[i] - 0.125 * (&ar[k, 0, 0])[i]
            rk4_step(&al[k, 0, 0], &aq[0], &am[k, 0, 0], &Z[k, 0, 0], 0.5 * h, n,
                     &work[0, 0], &work[1, 0], &work[2, 0], &work[3, 0], &work[4, 0],
                     &Zm[k, 0, 0])
    return Z_arr, Zm_arr
