"""Lipschitz basis families, quadrature rules and the adjoint Bellman operator."""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .mdp_core import ControlModel, _as_points


# ---------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray  # (n, dim)
    weights: np.ndarray  # (n,)
    order: int  # polynomial degree per axis integrated exactly
    lo: np.ndarray = field(default=None)
    hi: np.ndarray = field(default=None)

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim == 1:
            nodes = nodes[:, None]
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        if np.any(self.weights <= 0):
            raise ValueError("quadrature weights must be positive")
        if self.lo is not None:
            lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
            hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
            object.__setattr__(self, "lo", lo)
            object.__setattr__(self, "hi", hi)
            vol = float(np.prod(hi - lo))
            if abs(self.weights.sum() - vol) > 1e-9 * max(1.0, vol):
                raise ValueError(f"weights sum to {self.weights.sum()}, box volume is {vol}")
            self._verify_exactness()

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))

    def _verify_exactness(self):
        # per-axis monomials up to `order`, other axes held at degree 0
        vol = float(np.prod(self.hi - self.lo))
        for axis in range(self.dim):
            lo, hi = self.lo[axis], self.hi[axis]
            other = vol / (hi - lo)
            for k in range(self.order + 1):
                exact = (hi ** (k + 1) - lo ** (k + 1)) / (k + 1) * other
                got = self.integrate(self.nodes[:, axis] ** k)
                scale = max(1.0, abs(exact), other * max(abs(lo), abs(hi)) ** k * (hi - lo))
                if abs(got - exact) > 1e-9 * scale:
                    raise ValueError(f"rule is not exact for degree {k} on axis {axis}")


def gauss_legendre_box(lo, hi, points_per_panel: int, panels=1) -> QuadratureRule:
    """Tensorized composite Gauss-Legendre rule on a box.

    ``points_per_panel`` nodes per panel make the rule exact for polynomials
    of degree ``2 * points_per_panel - 1`` in each coordinate.
    """
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    panels = np.broadcast_to(np.asarray(panels, dtype=int), lo.shape)
    t, w = np.polynomial.legendre.leggauss(points_per_panel)
    axes_nodes, axes_weights = [], []
    for l, h, p in zip(lo, hi, panels):
        edges = np.linspace(l, h, p + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        axes_nodes.append((mid[:, None] + half[:, None] * t[None, :]).ravel())
        axes_weights.append((half[:, None] * w[None, :]).ravel())
    grids = np.meshgrid(*axes_nodes, indexing="ij")
    wgrids = np.meshgrid(*axes_weights, indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1)
    weights = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    return QuadratureRule(nodes, weights, 2 * points_per_panel - 1, lo, hi)


def simpson_box(lo, hi, intervals: int) -> QuadratureRule:
    """Tensorized composite Simpson rule (``intervals`` must be even)."""
    if intervals % 2:
        raise ValueError("Simpson's rule needs an even number of intervals")
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    axes_nodes, axes_weights = [], []
    base = np.ones(intervals + 1)
    base[1:-1:2], base[2:-1:2] = 4.0, 2.0
    for l, h in zip(lo, hi):
        step = (h - l) / intervals
        axes_nodes.append(np.linspace(l, h, intervals + 1))
        axes_weights.append(base * step / 3.0)
    grids = np.meshgrid(*axes_nodes, indexing="ij")
    wgrids = np.meshgrid(*axes_weights, indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1)
    weights = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    return QuadratureRule(nodes, weights, 3, lo, hi)


def default_state_quadrature(model: ControlModel) -> QuadratureRule:
    # width-1/2 panels resolve unit-scale Gaussian kernels far below 1e-10
    panels = np.maximum(4, np.ceil((model.state_hi - model.state_lo) * 2).astype(int))
    return gauss_legendre_box(model.state_lo, model.state_hi, 6, panels)


def default_joint_quadrature(model: ControlModel) -> QuadratureRule:
    panels = np.maximum(4, np.ceil((model.hi - model.lo) * 2).astype(int))
    return gauss_legendre_box(model.lo, model.hi, 3, panels)


# ---------------------------------------------------------------------------
# basis functions


def _monomial_sup(expo, lo, hi) -> float:
    out = 1.0
    for k, l, h in zip(expo, lo, hi):
        if k:
            out *= max(abs(l), abs(h)) ** k
    return out


@dataclass(frozen=True)
class BasisFunction:
    func: Callable
    lip_const: float
    sup_norm: float
    kind: str = "cost"  # "cost": f(x, a); "value": f(x)
    name: str = ""
    exponents: Optional[tuple] = None
    constant: Optional[float] = None

    def __call__(self, *args):
        return self.func(*args)

    @property
    def is_constant_one(self) -> bool:
        return self.constant is not None and self.constant == 1.0


def monomial(exponents: Sequence[int], lo, hi, kind: str, dx: int, name: str = "") -> BasisFunction:
    """Monomial on a box with closed-form sup-norm and Lipschitz constant.

    The Lipschitz constant refers to ``||x - y||_2 + ||a - b||_2`` and uses the
    per-coordinate derivative sup-norms, which sit at box endpoints.
    """
    expo = tuple(int(e) for e in exponents)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    sup = float(_monomial_sup(expo, lo, hi))
    grads = []
    for i, k in enumerate(expo):
        if k == 0:
            grads.append(0.0)
            continue
        d = list(expo)
        d[i] -= 1
        grads.append(k * _monomial_sup(d, lo, hi))
    grads = np.asarray(grads)
    lip = float(np.linalg.norm(grads[:dx]))
    if kind == "cost":
        lip = max(lip, float(np.linalg.norm(grads[dx:])))
    expo_arr = np.asarray(expo)

    if kind == "cost":
        def func(x, a, _e=expo_arr):
            x = np.asarray(x, float).reshape(-1, dx)
            a = np.asarray(a, float).reshape(x.shape[0], -1)
            return np.prod(np.concatenate([x, a], axis=1) ** _e, axis=1)
    else:
        def func(x, _e=expo_arr):
            z = np.asarray(x, float).reshape(-1, dx)
            return np.prod(z ** _e, axis=1)

    const = 1.0 if not any(expo) else None
    if not name:
        var = [f"x{i}" for i in range(dx)] + [f"a{i}" for i in range(len(expo) - dx)]
        name = "*".join(f"{v}^{k}" if k > 1 else v for v, k in zip(var, expo) if k) or "1"
    return BasisFunction(func, lip, sup, kind, name, expo, const)


def empirical_basis(func: Callable, kind: str, model: ControlModel, name: str = "",
                    grid_points: int = 101) -> BasisFunction:
    """Wrap a user function, estimating sup-norm and Lipschitz constant on a grid (+5%)."""
    lo = model.state_lo if kind == "value" else model.lo
    hi = model.state_hi if kind == "value" else model.hi
    axes = [np.linspace(l, h, grid_points) for l, h in zip(lo, hi)]
    mesh = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    shape = (grid_points,) * len(lo)
    vals = (func(mesh) if kind == "value" else func(mesh[:, :model.dx], mesh[:, model.dx:]))
    vals = np.asarray(vals, dtype=float).reshape(shape)
    sup = float(np.max(np.abs(vals))) * 1.05
    slopes = []
    for i, ax in enumerate(axes):
        step = ax[1] - ax[0]
        slopes.append(np.max(np.abs(np.diff(vals, axis=i))) / step if step > 0 else 0.0)
    slopes = np.asarray(slopes)
    if kind == "value":
        lip = float(np.linalg.norm(slopes))
    else:
        lip = max(float(np.linalg.norm(slopes[:model.dx])), float(np.linalg.norm(slopes[model.dx:])))
    return BasisFunction(func, lip * 1.05, sup, kind, name or getattr(func, "__name__", "f"))


@dataclass(frozen=True)
class BasisSet:
    functions: tuple
    theta: float
    kind: str  # "cost" | "value"
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "functions", tuple(self.functions))
        if len(self.functions) < 1:
            raise ValueError("basis set needs at least one function")
        if self.theta <= 0:
            raise ValueError("theta must be positive")
        if any(f.kind != self.kind for f in self.functions):
            raise ValueError("basis function kinds do not match the set kind")

    def __len__(self):
        return len(self.functions)

    def __iter__(self):
        return iter(self.functions)

    def __getitem__(self, i):
        return self.functions[i]

    @property
    def K_inf(self) -> float:
        return max(f.sup_norm for f in self.functions)

    @property
    def L_max(self) -> float:
        return max(f.lip_const for f in self.functions)

    @property
    def names(self):
        return [f.name for f in self.functions]

    def matrix(self, *args) -> np.ndarray:
        """Evaluate every basis function; returns ``(n_points, len(self))``."""
        n = np.atleast_1d(np.asarray(args[0])).shape[0]
        return np.stack([np.broadcast_to(np.asarray(f(*args), float), (n,)) for f in self.functions], axis=1)

    def with_theta(self, theta: float) -> "BasisSet":
        return BasisSet(self.functions, theta, self.kind, self.name)


def lqg_value_basis(L: float = 10.0, theta: float = 1.0) -> BasisSet:
    """``u_i(x) = x^(i-1)`` for ``i = 1, 2, 3``."""
    fs = [monomial((k,), [-L], [L], "value", 1) for k in range(3)]
    return BasisSet(fs, theta, "value", "lqg_poly_u3")


LQG_COST_EXPONENTS = [(0, 0), (1, 0), (0, 1), (1, 1), (2, 0), (0, 2), (2, 1), (1, 2), (2, 2)]


def lqg_cost_basis(L: float = 10.0, theta: float = 1.0) -> BasisSet:
    """The nine products ``1, x, a, xa, x^2, a^2, x^2 a, x a^2, x^2 a^2``."""
    fs = [monomial(e, [-L, -L], [L, L], "cost", 1) for e in LQG_COST_EXPONENTS]
    return BasisSet(fs, theta, "cost", "lqg_poly_c9")


def monomial_value_basis(model: ControlModel, degree: int, theta: float) -> BasisSet:
    """All state monomials of total degree <= ``degree``, constant first."""
    expos = [e for e in itertools.product(range(degree + 1), repeat=model.dx) if sum(e) <= degree]
    expos.sort(key=lambda e: (sum(e), [-v for v in e]))
    fs = [monomial(e, model.state_lo, model.state_hi, "value", model.dx) for e in expos]
    return BasisSet(fs, theta, "value", f"monomial_u{degree}")


def monomial_cost_basis(model: ControlModel, deg_x: int, deg_a: int, theta: float) -> BasisSet:
    """Products of state monomials (degree <= deg_x) and action monomials (degree <= deg_a)."""
    ex = [e for e in itertools.product(range(deg_x + 1), repeat=model.dx) if sum(e) <= deg_x]
    ea = [e for e in itertools.product(range(deg_a + 1), repeat=model.da) if sum(e) <= deg_a]
    expos = sorted((x + a for x in ex for a in ea), key=lambda e: (sum(e), [-v for v in e]))
    fs = [monomial(e, model.lo, model.hi, "cost", model.dx) for e in expos]
    return BasisSet(fs, theta, "cost", f"monomial_c{deg_x}{deg_a}")


def basis_from_spec(spec, model: ControlModel, theta: float, kind: str) -> BasisSet:
    """Resolve a config entry: a known name or ``{"degree": ...}``."""
    L = float(model.state_hi[0])
    if isinstance(spec, str):
        if spec == "lqg_poly_u3":
            return lqg_value_basis(L, theta)
        if spec == "lqg_poly_c9":
            return lqg_cost_basis(L, theta)
        raise KeyError(f"unknown basis {spec!r}")
    deg = spec["degree"]
    if kind == "value":
        return monomial_value_basis(model, int(deg), theta)
    dx_deg, da_deg = (deg, deg) if isinstance(deg, int) else deg
    return monomial_cost_basis(model, int(dx_deg), int(da_deg), theta)


# ---------------------------------------------------------------------------
# operators


def expected_next(model: ControlModel, funcs, x, a, quad: QuadratureRule, chunk: int = 2048) -> np.ndarray:
    """``int u(y) P(dy|x,a)`` for each value function in ``funcs``; shape ``(n, len(funcs))``."""
    if quad.dim != model.dx:
        raise ValueError(f"quadrature dimension {quad.dim} does not match state dimension {model.dx}")
    x = _as_points(x, model.dx)
    a = _as_points(a, model.da)
    U = np.stack([np.broadcast_to(np.asarray(u(quad.nodes), float), (quad.nodes.shape[0],)) for u in funcs], axis=1)
    WU = quad.weights[:, None] * U  # (q, k)
    out = np.empty((x.shape[0], len(funcs)))
    y = quad.nodes[None, :, :]
    for s in range(0, x.shape[0], chunk):
        xs = x[s:s + chunk, None, :]
        as_ = a[s:s + chunk, None, :]
        dens = model.transition_density(y, xs, as_)  # (c, q)
        out[s:s + chunk] = dens @ WU
    return out


def _lqg_moment_route(model: ControlModel, funcs) -> bool:
    return (model.params.get("kind") == "truncated_lqg"
            and all(isinstance(f, BasisFunction) and f.exponents is not None and sum(f.exponents) <= 2
                    for f in funcs))


def adjoint_apply_lqg(model: ControlModel, funcs, x, a) -> np.ndarray:
    """Closed-form adjoint of monomials of degree <= 2 under the truncated LQG kernel.

    Uses the exact first and second moments of the next state.
    """
    from .mdp_core import lqg_next_state_moments

    x = _as_points(x, 1)
    a = _as_points(a, 1)
    ey, ey2 = lqg_next_state_moments(model, x, a)
    moments = {0: np.ones_like(ey), 1: ey, 2: ey2}
    out = np.empty((x.shape[0], len(funcs)))
    for j, f in enumerate(funcs):
        k = f.exponents[0]
        out[:, j] = x[:, 0] ** k - model.gamma * moments[k]
    return out


def adjoint_apply(model: ControlModel, u, x, a, quad: QuadratureRule) -> np.ndarray:
    """``u(x) - gamma int u(y) p(y|x,a) dy`` at each ``(x, a)``.

    ``u`` may be a single value-kind basis function or a sequence of them; in
    the second case the result has one column per function.
    """
    single = callable(u)
    funcs = [u] if single else list(u)
    for f in funcs:
        if isinstance(f, BasisFunction) and f.kind != "value":
            raise ValueError("adjoint_apply needs value-kind basis functions")
    x = _as_points(x, model.dx)
    a = _as_points(a, model.da)
    ev = expected_next(model, funcs, x, a, quad)
    ux = np.stack([np.broadcast_to(np.asarray(f(x), float), (x.shape[0],)) for f in funcs], axis=1)
    out = ux - model.gamma * ev
    return out[:, 0] if single else out


def adjoint_values(model: ControlModel, funcs, x, a, quad: Optional[QuadratureRule] = None,
                   route: str = "auto") -> np.ndarray:
    """Adjoint of several value functions, ``(n, len(funcs))``.

    ``route="auto"`` takes the closed form when the model and basis allow it
    and quadrature otherwise; ``"quadrature"`` and ``"closed"`` force a route.
    """
    funcs = list(funcs)
    if route == "closed" or (route == "auto" and _lqg_moment_route(model, funcs)):
        if not _lqg_moment_route(model, funcs):
            raise ValueError("closed-form adjoint needs a truncated LQG model and monomials of degree <= 2")
        return adjoint_apply_lqg(model, funcs, x, a)
    return adjoint_apply(model, funcs, x, a, quad or default_state_quadrature(model))


def adjoint_apply_empirical(u, x, a, next_samples, gamma: float) -> np.ndarray:
    """``u(x) - gamma * mean_i u(y_i)`` with ``next_samples`` of shape ``(N, k, dx)``.

    The discount factor multiplies the sample average so that the estimator is
    unbiased for the exact adjoint.
    """
    ys = np.asarray(next_samples, dtype=float)
    x = np.asarray(x, dtype=float)
    if x.ndim <= 1:
        x = x.reshape(-1, 1) if ys.ndim < 2 or ys.shape[-1] == 1 else x.reshape(1, -1)
    if ys.ndim == 1:
        ys = ys.reshape(1, -1, 1)
    elif ys.ndim == 2:
        ys = ys.reshape(x.shape[0], -1, x.shape[1])
    N, k, dx = ys.shape
    if k < 1:
        raise ValueError("need at least one next-state sample")
    single = callable(u)
    funcs = [u] if single else list(u)
    out = np.empty((N, len(funcs)))
    for j, f in enumerate(funcs):
        uy = np.broadcast_to(np.asarray(f(ys.reshape(N * k, dx)), float), (N * k,)).reshape(N, k)
        out[:, j] = np.broadcast_to(np.asarray(f(x), float), (N,)) - gamma * uy.mean(axis=1)
    return out[:, 0] if single else out


def normalization_row(model: ControlModel, cost_set: BasisSet, value_set: BasisSet,
                      quad: Optional[QuadratureRule] = None,
                      state_quad: Optional[QuadratureRule] = None) -> np.ndarray:
    """Coefficients ``(int c_i, -int T*u_j)`` of the normalization constraint.

    ``quad`` integrates over the joint box; ``state_quad`` is the inner rule
    used by the adjoint.
    """
    quad = quad or default_joint_quadrature(model)
    state_quad = state_quad or default_state_quadrature(model)
    if quad.dim != model.dx + model.da:
        raise ValueError("joint quadrature has the wrong dimension")
    x, a = quad.nodes[:, :model.dx], quad.nodes[:, model.dx:]
    C = cost_set.matrix(x, a)
    T = adjoint_apply(model, list(value_set), x, a, state_quad)
    return np.concatenate([quad.weights @ C, -(quad.weights @ T)])


def evaluate_combination(bset: BasisSet, weights, *point) -> np.ndarray:
    """``sum_i w_i f_i(point)``; warns (never rejects) when ``||w||_1 > theta``."""
    w = np.asarray(weights, dtype=float)
    if w.shape != (len(bset),):
        raise ValueError(f"expected {len(bset)} weights, got shape {w.shape}")
    l1 = float(np.abs(w).sum())
    if l1 > bset.theta:
        warnings.warn(f"||weights||_1 = {l1:.3g} exceeds theta = {bset.theta:.3g}", stacklevel=2)
    return bset.matrix(*point) @ w
