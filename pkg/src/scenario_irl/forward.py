"""Grid value iteration, policy evaluation and the expert optimality certificate."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import kernels
from .mdp_core import ControlModel, Policy, _as_points, discount_weights, make_rng, split_seed


@dataclass(frozen=True)
class Grid:
    """Uniform tensor grids over the state and action boxes."""

    state_axes: tuple
    action_axes: tuple

    @classmethod
    def uniform(cls, model: ControlModel, n_state: int = 201, n_action: int = 201) -> "Grid":
        if n_state < 2 or n_action < 2:
            raise ValueError("need at least two nodes per axis")
        sx = tuple(np.linspace(l, h, n_state) for l, h in zip(model.state_lo, model.state_hi))
        ax = tuple(np.linspace(l, h, n_action) for l, h in zip(model.action_lo, model.action_hi))
        return cls(sx, ax)

    @staticmethod
    def _mesh(axes):
        return np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)

    @property
    def states(self) -> np.ndarray:
        return self._mesh(self.state_axes)

    @property
    def actions(self) -> np.ndarray:
        return self._mesh(self.action_axes)

    @property
    def h_x(self) -> float:
        return max(float(a[1] - a[0]) for a in self.state_axes)

    @property
    def h_a(self) -> float:
        return max(float(a[1] - a[0]) for a in self.action_axes)

    @property
    def state_shape(self):
        return tuple(a.size for a in self.state_axes)

    def state_weights(self) -> np.ndarray:
        """Tensor trapezoid weights on the state nodes."""
        ws = []
        for a in self.state_axes:
            w = np.full(a.size, a[1] - a[0])
            w[0] = w[-1] = 0.5 * (a[1] - a[0])
            ws.append(w)
        return np.prod(self._mesh(ws), axis=1)


@dataclass
class DiscreteModel:
    """Grid-discretized kernel with deduplicated transition rows.

    ``rows[row_index[s, a]]`` is the next-state distribution from state node
    ``s`` under action node ``a``.  Kernels that depend on ``(x, a)`` through a
    low-dimensional statistic collapse to few distinct rows, which makes the
    expectation step a small matrix-vector product.
    """

    model: ControlModel
    grid: Grid
    rows: np.ndarray  # (K, S)
    row_index: np.ndarray  # (S, A) int64
    nu0: np.ndarray  # (S,) probability weights of the initial law

    @classmethod
    def build(cls, model: ControlModel, grid: Grid, chunk: int = 4096, decimals: int = 14) -> "DiscreteModel":
        X, U = grid.states, grid.actions
        S, A = X.shape[0], U.shape[0]
        w = grid.state_weights()
        xi = np.repeat(np.arange(S), A)
        ai = np.tile(np.arange(A), S)
        uniq: dict = {}
        rows = []
        row_index = np.empty(S * A, dtype=np.int64)
        for s0 in range(0, S * A, chunk):
            sl = slice(s0, s0 + chunk)
            dens = model.transition_density(X[None, :, :], X[xi[sl], None, :], U[ai[sl], None, :])
            P = dens * w[None, :]
            tot = P.sum(axis=1, keepdims=True)
            if np.any(tot <= 0):
                raise ValueError("transition density has no mass on the state grid; refine the grid")
            P = P / tot
            keys = np.round(P, decimals)
            for j in range(P.shape[0]):
                k = keys[j].tobytes()
                idx = uniq.get(k)
                if idx is None:
                    idx = uniq[k] = len(rows)
                    rows.append(P[j])
                row_index[s0 + j] = idx
        if model.initial_density is not None:
            nu0 = model.initial_density(X) * w
        else:
            nu0 = w.copy()
        nu0 = nu0 / nu0.sum()
        return cls(model, grid, np.array(rows), row_index.reshape(S, A), nu0)

    @property
    def num_states(self) -> int:
        return self.row_index.shape[0]

    def cost_table(self, cost: Callable) -> np.ndarray:
        X, U = self.grid.states, self.grid.actions
        S, A = X.shape[0], U.shape[0]
        C = np.asarray(cost(np.repeat(X, A, axis=0), np.tile(U, (S, 1))), dtype=float)
        C = np.broadcast_to(C, (S * A,)).reshape(S, A)
        if not np.all(np.isfinite(C)):
            raise ValueError("cost is not finite on the grid")
        return np.ascontiguousarray(C)

    def policy_matrix(self, action_idx) -> np.ndarray:
        return self.rows[self.row_index[np.arange(self.num_states), action_idx]]


@dataclass(frozen=True)
class ValueFunction:
    grid: Grid
    values: np.ndarray  # (S,)

    def __call__(self, x) -> np.ndarray:
        x = _as_points(x, len(self.grid.state_axes))
        f = RegularGridInterpolator(self.grid.state_axes, self.values.reshape(self.grid.state_shape),
                                    method="linear", bounds_error=False, fill_value=None)
        return f(x)

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def to_csv(self, path) -> Path:
        path = Path(path)
        X = self.grid.states
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i}" for i in range(X.shape[1])] + ["value"])
            for xs, v in zip(X, self.values):
                w.writerow([f"{c:.10g}" for c in xs] + [f"{v:.17g}"])
        return path


@dataclass(frozen=True)
class GridPolicy:
    """Deterministic policy given by action-node indices, interpolated between state nodes."""

    grid: Grid
    action_idx: np.ndarray  # (S,)

    @property
    def table(self) -> np.ndarray:
        return self.grid.actions[self.action_idx]

    def act(self, x, rng=None) -> np.ndarray:
        x = _as_points(x, len(self.grid.state_axes))
        tab = self.table
        if len(self.grid.state_axes) == 1:
            ax = self.grid.state_axes[0]
            return np.stack([np.interp(x[:, 0], ax, tab[:, j]) for j in range(tab.shape[1])], axis=1)
        out = np.empty((x.shape[0], tab.shape[1]))
        for j in range(tab.shape[1]):
            f = RegularGridInterpolator(self.grid.state_axes, tab[:, j].reshape(self.grid.state_shape),
                                        method="linear", bounds_error=False, fill_value=None)
            out[:, j] = f(x)
        return out

    def as_policy(self) -> Policy:
        return Policy(self.act, "deterministic-map")

    def to_csv(self, path) -> Path:
        path = Path(path)
        X, T = self.grid.states, self.table
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i}" for i in range(X.shape[1])] + [f"a{i}" for i in range(T.shape[1])])
            for xs, a in zip(X, T):
                w.writerow([f"{c:.10g}" for c in xs] + [f"{v:.17g}" for v in a])
        return path


@dataclass
class VIResult:
    value: ValueFunction
    policy: GridPolicy
    iterations: int
    diffs: list = field(default_factory=list)  # sup-norm change per sweep
    sup_norms: list = field(default_factory=list)  # ||V_k|| per iterate
    converged: bool = True

    def initial_value(self, disc: DiscreteModel) -> float:
        return float(disc.nu0 @ self.value.values)


def value_iteration(model: ControlModel, cost: Callable, grid: Grid, tol: float = 1e-8,
                    disc: Optional[DiscreteModel] = None, max_iter: int = 100_000,
                    V0: Optional[np.ndarray] = None) -> VIResult:
    """Fixed-point iteration of the discretized Bellman optimality operator.

    Stops once the sup-change is at most ``tol (1 - gamma) / gamma``, so the
    returned values are within ``tol`` of the discrete fixed point.  Greedy
    actions break ties toward the lowest action index.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    disc = disc or DiscreteModel.build(model, grid)
    C = cost if isinstance(cost, np.ndarray) else disc.cost_table(cost)
    g = model.gamma
    V = np.zeros(disc.num_states) if V0 is None else np.asarray(V0, dtype=float).copy()
    stop = tol * (1 - g) / g
    diffs, sups = [], [float(np.max(np.abs(V)))]
    pol = np.zeros(disc.num_states, dtype=np.int64)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        ev = disc.rows @ V
        V_new, pol = kernels.bellman_backup(C, ev, disc.row_index, g)
        d = kernels.sup_diff(V_new, V)
        diffs.append(d)
        V = V_new
        sups.append(float(np.max(np.abs(V))))
        if d <= stop:
            converged = True
            break
    # greedy policy with respect to the final iterate
    _, pol = kernels.bellman_backup(C, disc.rows @ V, disc.row_index, g)
    return VIResult(ValueFunction(grid, V), GridPolicy(grid, pol), it, diffs, sups, converged)


def evaluate_on_grid(disc: DiscreteModel, cost: Callable, policy) -> np.ndarray:
    """Exact value of a stationary policy on the discretized model.

    ``policy`` is a :class:`GridPolicy` (actions on nodes, reusing the
    discretized rows) or any :class:`Policy`, whose actions at the state
    nodes are discretized with the same quadrature.
    """
    model, grid = disc.model, disc.grid
    X = grid.states
    S = X.shape[0]
    if isinstance(policy, GridPolicy):
        P = disc.policy_matrix(policy.action_idx)
        a = grid.actions[policy.action_idx]
    else:
        a = np.clip(policy(X, None), model.action_lo, model.action_hi)
        w = grid.state_weights()
        P = model.transition_density(X[None, :, :], X[:, None, :], a[:, None, :]) * w[None, :]
        P = P / P.sum(axis=1, keepdims=True)
    c = np.broadcast_to(np.asarray(cost(X, a), dtype=float), (S,))
    return np.linalg.solve(np.eye(S) - model.gamma * P, c)


def policy_value(model: ControlModel, cost: Callable, policy: Policy, nu0_samples, H: int,
                 reps: int, seed) -> float:
    """Monte Carlo average of truncated discounted returns.

    ``nu0_samples`` is an array of initial states or a count of draws from the
    initial law; each start is rolled out ``reps`` times.
    """
    streams = split_seed(seed, 2)
    if np.ndim(nu0_samples) == 0:
        x0 = model.initial_sampler(int(nu0_samples), make_rng(streams[0]))
    else:
        x0 = _as_points(nu0_samples, model.dx)
    rng = make_rng(streams[1])
    x = np.repeat(x0, reps, axis=0)
    w = discount_weights(model.gamma, H)
    ret = np.zeros(x.shape[0])
    for t in range(H + 1):
        a = np.clip(policy(x, rng), model.action_lo, model.action_hi)
        ret += w[t] * np.broadcast_to(np.asarray(cost(x, a), dtype=float), (x.shape[0],))
        if t < H:
            x = np.clip(model.transition_sampler(x, a, rng), model.state_lo, model.state_hi)
    return float(np.mean(ret))


@dataclass(frozen=True)
class Certificate:
    gap: float
    bound: float
    certified: bool
    expert_value: float
    optimal_value: float
    tolerance: float


def certify_eps_optimality(model: ControlModel, cost: Callable, expert, eps: float,
                           disc: DiscreteModel, vi_tol: float = 1e-8, num_tol: float = 1e-7,
                           vi_warm: Optional[np.ndarray] = None) -> Certificate:
    """Check that ``expert`` is ``(2 - gamma)/(1 - gamma) * eps`` optimal for ``cost``.

    Both values are computed on the discretized model: the optimal one by
    value iteration, the expert's by an exact linear solve.  The gap is
    compared with the bound plus ``vi_tol + num_tol``.
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    C = disc.cost_table(cost)
    vi = value_iteration(model, C, disc.grid, vi_tol, disc=disc, V0=vi_warm)
    v_opt = vi.initial_value(disc)
    v_exp = float(disc.nu0 @ evaluate_on_grid(disc, cost, expert))
    gap = v_exp - v_opt
    g = model.gamma
    bound = (2 - g) / (1 - g) * eps
    tol = vi_tol + num_tol * max(1.0, abs(v_opt))
    return Certificate(gap, bound, bool(gap <= bound + tol), v_exp, v_opt, tol)


def riccati_gain(A: float, B: float, Q: float, R: float, gamma: float, iters: int = 10_000) -> float:
    """Gain ``K`` of the discounted scalar LQR, with optimal action ``a = -K x``."""
    P = Q
    for _ in range(iters):
        P_new = Q + gamma * A * A * P - (gamma * A * B * P) ** 2 / (R + gamma * B * B * P)
        if abs(P_new - P) <= 1e-14 * max(1.0, abs(P)):
            P = P_new
            break
        P = P_new
    return gamma * A * B * P / (R + gamma * B * B * P)


def riccati_policy(model: ControlModel) -> Policy:
    p = model.params
    K = riccati_gain(p["A"], p["B"], p["Q"], p["R"], model.gamma)
    lo, hi = model.action_lo, model.action_hi
    return Policy(lambda x, rng=None: np.clip(-K * _as_points(x, 1), lo, hi))


def lqg_true_cost(model: ControlModel) -> Callable:
    Q, R = model.params["Q"], model.params["R"]

    def cost(x, a):
        x = _as_points(x, 1)
        a = _as_points(a, 1)
        return Q * x[:, 0] ** 2 + R * a[:, 0] ** 2
    return cost


def value_lipschitz_bound(L_c: float, c_sup: float, gamma: float, L_P: float) -> float:
    """``L_c + gamma ||c|| L_P / (1 - gamma)``."""
    return L_c + gamma * c_sup * L_P / (1 - gamma)
