"""Optimal control problem definition and config loading.

A config is a mapping (usually YAML or JSON text) with the keys::

    n: 1            # state dimension
    m: 1            # control dimension
    j: 0            # number of running constraints (optional, = len(G))
    f: ["u1"]       # dynamics, one expression per state
    psi: "q1"       # terminal cost, no control allowed
    G: []           # running constraints G_i(q, t) <= 0, no control allowed
    omega: {type: box, lo: [-1], hi: [1]}
    q0: [0]
    T: 1

``omega`` is one of ``{type: box, lo, hi}``, ``{type: finite, points}`` or
``{type: ball, center, radius}``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import kernels
from .errors import (
    ConfigError,
    ConstraintUsesControl,
    DimensionMismatch,
    MissingField,
    ParseError,
)
from .expr import compile_program, parse_expression, pretty_print, uses_control


# --------------------------------------------------------------------------
# Control sets
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        if len(self.lo) != len(self.hi):
            raise DimensionMismatch("box bounds have different lengths")
        if any(a > b for a, b in zip(self.lo, self.hi)):
            raise ConfigError("box requires lo <= hi componentwise")

    @property
    def dim(self):
        return len(self.lo)

    def center(self):
        return (np.asarray(self.lo) + np.asarray(self.hi)) / 2.0

    def corners(self):
        return np.array(list(itertools.product(*zip(self.lo, self.hi))), dtype=float)

    def contains(self, v, tol=1e-12):
        v = np.asarray(v, dtype=float)
        return bool(np.all(v >= np.asarray(self.lo) - tol) and np.all(v <= np.asarray(self.hi) + tol))

    def to_dict(self):
        return {"type": "box", "lo": list(self.lo), "hi": list(self.hi)}


@dataclass(frozen=True)
class FiniteSet:
    points: tuple

    def __post_init__(self):
        if len(self.points) == 0:
            raise ConfigError("finite control set must be nonempty")
        if len({len(p) for p in self.points}) != 1:
            raise DimensionMismatch("finite control set points have mixed dimensions")

    @property
    def dim(self):
        return len(self.points[0])

    def center(self):
        return np.mean(np.asarray(self.points, dtype=float), axis=0)

    def corners(self):
        return np.asarray(self.points, dtype=float)

    def contains(self, v, tol=1e-12):
        v = np.asarray(v, dtype=float)
        return bool(np.any(np.all(np.abs(np.asarray(self.points) - v) <= tol, axis=1)))

    def to_dict(self):
        return {"type": "finite", "points": [list(p) for p in self.points]}


@dataclass(frozen=True)
class Ball:
    center_: tuple
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ConfigError("ball radius must be positive")

    @property
    def dim(self):
        return len(self.center_)

    def center(self):
        return np.asarray(self.center_, dtype=float)

    def corners(self):
        c = self.center()
        eye = np.eye(self.dim) * self.radius
        return np.vstack([c + eye, c - eye])

    def contains(self, v, tol=1e-12):
        return bool(np.linalg.norm(np.asarray(v, dtype=float) - self.center()) <= self.radius + tol)

    def to_dict(self):
        return {"type": "ball", "center": list(self.center_), "radius": self.radius}


def omega_from_config(cfg, m):
    if not isinstance(cfg, dict) or "type" not in cfg:
        raise MissingField("omega.type")
    kind = str(cfg["type"]).lower()
    try:
        if kind == "box":
            omega = Box(tuple(float(x) for x in cfg["lo"]), tuple(float(x) for x in cfg["hi"]))
        elif kind == "finite":
            omega = FiniteSet(tuple(tuple(float(x) for x in p) for p in cfg["points"]))
        elif kind == "ball":
            omega = Ball(tuple(float(x) for x in cfg["center"]), float(cfg["radius"]))
        else:
            raise ConfigError(f"unknown omega type {cfg['type']!r}")
    except KeyError as exc:
        raise MissingField(f"omega.{exc.args[0]}") from None
    if omega.dim != m:
        raise DimensionMismatch(f"omega has dimension {omega.dim}, expected m={m}")
    return omega


# --------------------------------------------------------------------------
# Problem
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Problem:
    """Mayer problem ``min psi(q(T))`` with running constraints ``G(q,t) <= 0``."""

    n: int
    m: int
    f: tuple
    psi: object
    G: tuple
    omega: object
    q0: np.ndarray
    T: float
    _f_prog: object = field(init=False, repr=False, compare=False)
    _psi_prog: object = field(init=False, repr=False, compare=False)
    _G_prog: object = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.f) != self.n:
            raise DimensionMismatch(f"f has {len(self.f)} components, expected n={self.n}")
        if not self.T > 0:
            raise ConfigError("horizon T must be positive")
        if uses_control(self.psi):
            raise ConstraintUsesControl("psi must not depend on the control")
        for i, g in enumerate(self.G):
            if uses_control(g):
                raise ConstraintUsesControl(f"G[{i}] must not depend on the control")
        q0 = np.asarray(self.q0, dtype=np.float64)
        if q0.shape != (self.n,):
            raise DimensionMismatch(f"q0 has shape {q0.shape}, expected ({self.n},)")
        q0.setflags(write=False)
        object.__setattr__(self, "q0", q0)
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "_f_prog", compile_program(self.f, self.n, self.m))
        object.__setattr__(self, "_psi_prog", compile_program([self.psi], self.n, self.m))
        object.__setattr__(self, "_G_prog", compile_program(self.G, self.n, self.m))

    @property
    def j(self):
        return len(self.G)

    # -- batched evaluation ---------------------------------------------------

    def _points(self, t, q, u=None):
        q = np.atleast_2d(np.asarray(q, dtype=np.float64))
        K = q.shape[0]
        X = np.zeros((K, 1 + self.n + self.m))
        X[:, 0] = np.broadcast_to(np.asarray(t, dtype=np.float64), (K,))
        X[:, 1 : 1 + self.n] = q
        if u is not None:
            X[:, 1 + self.n :] = np.broadcast_to(np.asarray(u, dtype=np.float64), (K, self.m))
        return X

    def dynamics(self, t, q, u):
        """``f(q, u, t)`` for a batch of points, shape ``(K, n)``."""
        return kernels.eval_program(self._f_prog, self._points(t, q, u))

    def dynamics_jacobians(self, t, q, u):
        """Values ``(K, n)``, state Jacobians ``(K, n, n)``, control Jacobians ``(K, n, m)``."""
        vals, grads = kernels.eval_program_grad(self._f_prog, self._points(t, q, u))
        return vals, grads[:, :, 1 : 1 + self.n], grads[:, :, 1 + self.n :]

    def terminal_cost(self, q):
        return float(kernels.eval_program(self._psi_prog, self._points(self.T, q))[0, 0])

    def terminal_gradient(self, q):
        _, grads = kernels.eval_program_grad(self._psi_prog, self._points(self.T, q))
        return grads[0, 0, 1 : 1 + self.n]

    def constraints(self, t, q):
        """``G(q, t)`` for a batch of points, shape ``(K, j)``."""
        return kernels.eval_program(self._G_prog, self._points(t, q))

    def constraint_jacobians(self, t, q):
        vals, grads = kernels.eval_program_grad(self._G_prog, self._points(t, q))
        return vals, grads[:, :, 1 : 1 + self.n]

    # -- serialization --------------------------------------------------------

    def to_dict(self):
        return {
            "n": self.n,
            "m": self.m,
            "j": self.j,
            "f": [pretty_print(e) for e in self.f],
            "psi": pretty_print(self.psi),
            "G": [pretty_print(e) for e in self.G],
            "omega": self.omega.to_dict(),
            "q0": [float(x) for x in self.q0],
            "T": self.T,
        }


_REQUIRED = ("n", "m", "f", "psi", "omega", "q0", "T")


def _parse_field(text, n, m, label):
    if not isinstance(text, str):
        raise ConfigError(f"{label} must be a string expression")
    try:
        return parse_expression(text, n, m)
    except ParseError as exc:
        err = type(exc)(f"{label}: {exc.args[0]}")
        err.offset, err.token = exc.offset, exc.token
        raise err from None


def load_problem(config):
    """Build a :class:`Problem` from a mapping or YAML/JSON text.

    Raises
    ------
    MissingField, DimensionMismatch, ConstraintUsesControl, ParseError
    """
    if isinstance(config, (str, bytes)):
        try:
            config = yaml.safe_load(config)
        except yaml.YAMLError as exc:
            raise ConfigError(f"config is not valid YAML/JSON: {exc}") from None
    if not isinstance(config, dict):
        raise ConfigError("config must be a mapping")
    for key in _REQUIRED:
        if key not in config:
            raise MissingField(f"missing field {key!r}")
    n, m = int(config["n"]), int(config["m"])
    if n < 1 or m < 1:
        raise ConfigError("n and m must be at least 1")
    f_text = list(config["f"])
    g_text = list(config.get("G") or [])
    if len(f_text) != n:
        raise DimensionMismatch(f"f has {len(f_text)} components, expected n={n}")
    if "j" in config and int(config["j"]) != len(g_text):
        raise DimensionMismatch(f"G has {len(g_text)} components, expected j={config['j']}")
    f = tuple(_parse_field(s, n, m, f"f[{i}]") for i, s in enumerate(f_text))
    psi = _parse_field(config["psi"], n, m, "psi")
    if uses_control(psi):
        raise ConstraintUsesControl("psi must not depend on the control")
    G = tuple(_parse_field(s, n, m, f"G[{i}]") for i, s in enumerate(g_text))
    for i, g in enumerate(G):
        if uses_control(g):
            raise ConstraintUsesControl(f"G[{i}] must not depend on the control")
    omega = omega_from_config(config["omega"], m)
    q0 = [float(x) for x in config["q0"]]
    if len(q0) != n:
        raise DimensionMismatch(f"q0 has {len(q0)} entries, expected n={n}")
    return Problem(n=n, m=m, f=f, psi=psi, G=G, omega=omega, q0=np.array(q0), T=float(config["T"]))


def load_problem_file(path):
    return load_problem(Path(path).read_text(encoding="utf-8"))
