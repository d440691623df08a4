"""Scenario inverse programs: assembly, two-phase solution and membership checks."""

from __future__ import annotations

import csv
import hashlib
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.optimize import linprog, minimize

from . import kernels
from .basis import (BasisSet, QuadratureRule, _lqg_moment_route, adjoint_apply, adjoint_apply_empirical,
                    adjoint_values, default_joint_quadrature, default_state_quadrature, gauss_legendre_box,
                    normalization_row)
from .complexity import theta_thresholds
from .mdp_core import (ControlModel, Policy, TrajectoryBatch, empirical_initial_pairing,
                       empirical_occupancy_pairing, initial_pairing_exact, nystrom_occupancy_pairing,
                       reference_occupancy_pairing)


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class ReferencePairings:
    """``<mu^{pi_E}, c_i>`` and ``<nu0, u_j>`` for every basis function."""

    occupancy: np.ndarray
    initial: np.ndarray
    occupancy_half_width: Optional[np.ndarray] = None
    source: str = "reference"

    def __post_init__(self):
        object.__setattr__(self, "occupancy", np.asarray(self.occupancy, dtype=float))
        object.__setattr__(self, "initial", np.asarray(self.initial, dtype=float))


def compute_reference_pairings(model: ControlModel, expert: Policy, cost_set: BasisSet,
                               value_set: BasisSet, tol=5e-4, seed=0,
                               state_quad: Optional[QuadratureRule] = None, method: str = "auto",
                               nystrom_panels: Optional[int] = None, **mc_kwargs) -> ReferencePairings:
    """Occupancy pairings of the expert and quadrature initial pairings.

    ``method="nystrom"`` solves the policy-evaluation equation on composite
    Gauss-Legendre nodes at two resolutions and reports their difference as
    the half-width; ``"monte-carlo"`` uses certified rollouts, where ``tol``
    is absolute per cost function or a scalar relative to
    ``sup|c_i| / (1 - gamma)``.  ``"auto"`` picks Nystrom for models with a
    kernel density on a one-dimensional state space.
    """
    sq = state_quad or default_state_quadrature(model)
    init = np.array([initial_pairing_exact(model, u, sq) for u in value_set])
    if method == "auto":
        method = "nystrom" if model.initial_density is not None and model.dx == 1 else "monte-carlo"
    if method == "nystrom":
        panels = nystrom_panels or int(np.ceil((model.state_hi - model.state_lo)[0] * 10))
        coarse, err = nystrom_occupancy_pairing(
            model, expert, list(cost_set), gauss_legendre_box(model.state_lo, model.state_hi, 4, panels))
        fine, err2 = nystrom_occupancy_pairing(
            model, expert, list(cost_set), gauss_legendre_box(model.state_lo, model.state_hi, 4, 2 * panels))
        if max(err, err2) > 1e-8:
            warnings.warn(f"Nystrom kernel mass error {max(err, err2):.2e}; refine nystrom_panels")
        return ReferencePairings(fine, init, np.abs(fine - coarse), "nystrom")
    if method != "monte-carlo":
        raise ValueError(f"unknown method {method!r}")
    tol = np.asarray(tol, dtype=float)
    if tol.ndim == 0:
        tol = tol * np.array([f.sup_norm for f in cost_set]) / (1 - model.gamma)
    est = reference_occupancy_pairing(model, expert, list(cost_set), tol, seed, **mc_kwargs)
    return ReferencePairings(np.array([e.value for e in est]), init,
                             np.array([e.half_width for e in est]), "monte-carlo")


# ---------------------------------------------------------------------------
# instances


@dataclass(frozen=True)
class ScenarioLPInstance:
    """Finite inverse LP in semantic form.

    Variables are ``(alpha, beta, eps)`` followed by the nonnegative split
    parts of ``alpha`` and ``beta`` used to encode the l1 balls.
    """

    num_cost: int
    num_value: int
    pairing_row: np.ndarray  # (n_c + n_u,)
    scenario_rows: np.ndarray  # (N, n_c + n_u)
    normalization_row: Optional[np.ndarray]
    theta: float
    sample_points: np.ndarray  # (N, dx + da)
    constraint_style: str = "l1"  # "l1" | "simplex"
    kind: str = "known-model"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.num_cost + self.num_value
        pr = np.asarray(self.pairing_row, dtype=float)
        sr = np.asarray(self.scenario_rows, dtype=float).reshape(-1, n)
        pts = np.asarray(self.sample_points, dtype=float)
        object.__setattr__(self, "pairing_row", pr)
        object.__setattr__(self, "scenario_rows", sr)
        object.__setattr__(self, "sample_points", pts.reshape(sr.shape[0], -1) if pts.size else pts.reshape(0, 0))
        if pr.shape != (n,):
            raise ValueError(f"pairing row must have {n} entries")
        if self.normalization_row is not None:
            object.__setattr__(self, "normalization_row", np.asarray(self.normalization_row, dtype=float))
            if self.normalization_row.shape != (n,):
                raise ValueError(f"normalization row must have {n} entries")
        if self.constraint_style not in ("l1", "simplex"):
            raise ValueError(f"unknown constraint style {self.constraint_style!r}")
        if not np.all(np.isfinite(sr)) or not np.all(np.isfinite(pr)):
            raise ValueError("non-finite LP coefficients")

    @property
    def N(self) -> int:
        return self.scenario_rows.shape[0]

    @property
    def num_structural(self) -> int:
        return self.num_cost + self.num_value + 1

    @property
    def num_variables(self) -> int:
        return self.num_structural + (2 * (self.num_cost + self.num_value) if self.constraint_style == "l1" else 0)

    def prefix(self, N: int) -> "ScenarioLPInstance":
        """Instance restricted to the first ``N`` scenarios (nested sets)."""
        return self.subset(np.arange(min(N, self.N)))

    def subset(self, idx) -> "ScenarioLPInstance":
        idx = np.asarray(idx, dtype=int)
        pts = self.sample_points[idx] if self.sample_points.size else self.sample_points
        return ScenarioLPInstance(self.num_cost, self.num_value, self.pairing_row, self.scenario_rows[idx],
                                  self.normalization_row, self.theta, pts, self.constraint_style,
                                  self.kind, dict(self.meta))

    def instance_hash(self) -> str:
        h = hashlib.sha256()
        for arr in (self.pairing_row, self.scenario_rows, self.sample_points):
            h.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
        if self.normalization_row is not None:
            h.update(self.normalization_row.tobytes())
        h.update(f"{self.num_cost},{self.num_value},{self.theta!r},{self.constraint_style}".encode())
        return h.hexdigest()[:16]

    # -- standard form -----------------------------------------------------

    def variable_names(self):
        names = [f"alpha{i}" for i in range(self.num_cost)] + [f"beta{j}" for j in range(self.num_value)] + ["eps"]
        if self.constraint_style == "l1":
            n = self.num_cost + self.num_value
            names += [f"{v}_pos" for v in names[:n]] + [f"{v}_neg" for v in names[:n]]
        return names

    def standard_form(self):
        """``(c, A_ub, b_ub, A_eq, b_eq, bounds, row_names_ub, row_names_eq)``."""
        nc, nu = self.num_cost, self.num_value
        n = nc + nu
        nv = self.num_variables
        e = n  # eps column
        ub_rows, ub_rhs, ub_names = [], [], []
        eq_rows, eq_rhs, eq_names = [], [], []

        row = np.zeros(nv)
        row[:n] = self.pairing_row
        row[e] = -1.0
        ub_rows.append(row); ub_rhs.append(0.0); ub_names.append("pairing")

        S = np.zeros((self.N, nv))
        S[:, :n] = -self.scenario_rows
        S[:, e] = -1.0

        if self.normalization_row is not None:
            row = np.zeros(nv)
            row[:n] = self.normalization_row
            eq_rows.append(row); eq_rhs.append(1.0); eq_names.append("normalization")

        bounds = [(None, None)] * n + [(0, None)]
        if self.constraint_style == "l1":
            bounds += [(0, None)] * (2 * n)
            for i in range(n):
                row = np.zeros(nv)
                row[i], row[e + 1 + i], row[e + 1 + n + i] = 1.0, -1.0, 1.0
                eq_rows.append(row); eq_rhs.append(0.0); eq_names.append(f"split{i}")
            for name, sl in (("l1_alpha", slice(0, nc)), ("l1_beta", slice(nc, n))):
                row = np.zeros(nv)
                idx = np.arange(n)[sl]
                row[e + 1 + idx] = 1.0
                row[e + 1 + n + idx] = 1.0
                ub_rows.append(row); ub_rhs.append(self.theta); ub_names.append(name)
        else:
            bounds = [(0, None)] * n + [(0, None)]
            for name, sl in (("simplex_alpha", slice(0, nc)), ("simplex_beta", slice(nc, n))):
                row = np.zeros(nv)
                row[sl] = 1.0
                eq_rows.append(row); eq_rhs.append(1.0); eq_names.append(name)

        A_ub = np.vstack([np.array(ub_rows[:1]), S, np.array(ub_rows[1:]).reshape(-1, nv)])
        b_ub = np.concatenate([[0.0], np.zeros(self.N), ub_rhs[1:]])
        names_ub = ["pairing"] + [f"s{l}" for l in range(self.N)] + ub_names[1:]
        A_eq = np.array(eq_rows).reshape(-1, nv)
        c = np.zeros(nv)
        c[e] = 1.0
        return c, A_ub, b_ub, A_eq, np.array(eq_rhs), bounds, names_ub, eq_names

    def to_lp_text(self) -> str:
        """CPLEX LP text format, readable by HiGHS, GLPK, CBC and others."""
        c, A_ub, b_ub, A_eq, b_eq, bounds, names_ub, names_eq = self.standard_form()
        var = self.variable_names()

        def expr(row):
            parts = []
            for j in np.flatnonzero(row):
                v = row[j]
                parts.append(f"{'-' if v < 0 else '+'} {abs(v):.17g} {var[j]}")
            s = " ".join(parts) or f"0 {var[0]}"
            return s[2:] if s.startswith("+ ") else s

        out = [f"\\ scenario inverse program, N={self.N}, hash={self.instance_hash()}",
               "Minimize", f" obj: {expr(c)}", "Subject To"]
        for nm, row, rhs in zip(names_ub, A_ub, b_ub):
            out.append(f" {nm}: {expr(row)} <= {rhs:.17g}")
        for nm, row, rhs in zip(names_eq, A_eq, b_eq):
            out.append(f" {nm}: {expr(row)} = {rhs:.17g}")
        out.append("Bounds")
        for v, (lo, hi) in zip(var, bounds):
            if lo is None and hi is None:
                out.append(f" {v} free")
            elif hi is None:
                out.append(f" {v} >= {lo:.17g}")
            else:
                out.append(f" {lo:.17g} <= {v} <= {hi:.17g}")
        out.append("End")
        return "\n".join(out) + "\n"

    def write_lp(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_lp_text())
        return path


def _check_theta(theta, gamma, leb):
    thr = theta_thresholds(gamma, 2, leb)["leb"]
    if theta <= thr:
        raise ConfigurationError(
            f"theta={theta} must exceed 1/((1-gamma) * leb(X x A)) = {thr:.6g}; below it the "
            "normalization row cannot be met inside the l1 balls (not even by a constant value function)")


def _check_value_set(value_set: BasisSet):
    if not value_set[0].is_constant_one:
        raise ConfigurationError("the value basis must start with the constant function 1")


def assemble_sip(model: ControlModel, cost_set: BasisSet, value_set: BasisSet,
                 reference_pairings: ReferencePairings, scenario_points, quad: Optional[QuadratureRule] = None,
                 state_quad: Optional[QuadratureRule] = None, constraint_style: str = "l1",
                 norm_row: Optional[np.ndarray] = None) -> ScenarioLPInstance:
    """Known-model scenario program with exact adjoint rows.

    ``quad`` is the joint state-action rule for the normalization integral and
    ``state_quad`` the state rule used inside the adjoint.  A precomputed
    normalization row may be passed to skip the integral.
    """
    _check_value_set(value_set)
    quad = quad or default_joint_quadrature(model)
    state_quad = state_quad or default_state_quadrature(model)
    theta = cost_set.theta
    if value_set.theta != theta:
        raise ConfigurationError("cost and value sets must share theta")
    leb = float(quad.weights.sum())
    if constraint_style == "l1":
        _check_theta(theta, model.gamma, leb)
    pts = np.asarray(scenario_points, dtype=float).reshape(-1, model.dx + model.da)
    if pts.size and (not np.all(model.in_state_box(pts[:, :model.dx]))
                     or not np.all(model.in_action_box(pts[:, model.dx:]))):
        raise ValueError("scenario point outside the state-action box")
    rows = scenario_rows_exact(model, cost_set, value_set, pts, state_quad)
    pairing = np.concatenate([reference_pairings.occupancy, -reference_pairings.initial])
    if norm_row is None and constraint_style == "l1":
        norm_row = normalization_row(model, cost_set, value_set, quad, state_quad)
    return ScenarioLPInstance(len(cost_set), len(value_set), pairing, rows,
                              norm_row if constraint_style == "l1" else None, theta, pts,
                              constraint_style, "known-model",
                              {"gamma": model.gamma, "leb": leb, "model_hash": model.model_hash()})


def scenario_rows_exact(model, cost_set, value_set, points, state_quad) -> np.ndarray:
    """Rows ``(c_i(x,a), -T*u_j(x,a))`` at each scenario point."""
    pts = np.asarray(points, dtype=float).reshape(-1, model.dx + model.da)
    if pts.shape[0] == 0:
        return np.zeros((0, len(cost_set) + len(value_set)))
    x, a = pts[:, :model.dx], pts[:, model.dx:]
    return np.hstack([cost_set.matrix(x, a), -adjoint_values(model, value_set, x, a, state_quad)])


def assemble_sip_sampled(batch: TrajectoryBatch, cost_set: BasisSet, value_set: BasisSet,
                         scenario_points, next_state_pools, quad: QuadratureRule, gamma: float,
                         constraint_style: str = "l1") -> ScenarioLPInstance:
    """Sample-based scenario program.

    Pairings come from the trajectory batch, scenario rows from the empirical
    adjoint on ``next_state_pools`` of shape ``(N, k, dx)``.  In the
    normalization row ``int c_i`` uses ``quad`` (the costs are known) while
    ``int T*u_j`` is estimated as ``leb`` times the scenario average of the
    empirical adjoint, since the kernel is not available.
    """
    _check_value_set(value_set)
    dx = batch.states.shape[2]
    pts = np.asarray(scenario_points, dtype=float)
    pts = pts.reshape(-1, quad.dim)
    pools = np.asarray(next_state_pools, dtype=float)
    if pools.ndim != 3 or pools.shape[0] != pts.shape[0] or pools.shape[1] < 1 or pools.shape[2] != dx:
        raise ValueError(f"next-state pools must have shape ({pts.shape[0]}, k>=1, {dx}), got {pools.shape}")
    theta = cost_set.theta
    leb = float(quad.weights.sum())
    if constraint_style == "l1":
        _check_theta(theta, gamma, leb)
    occ = np.array([empirical_occupancy_pairing(batch, c, gamma).value for c in cost_set])
    init = np.array([empirical_initial_pairing(batch, u).value for u in value_set])
    x, a = pts[:, :dx], pts[:, dx:]
    if pts.shape[0]:
        T = adjoint_apply_empirical(list(value_set), x, a, pools, gamma)
        rows = np.hstack([cost_set.matrix(x, a), -T])
    else:
        T = np.zeros((0, len(value_set)))
        rows = np.zeros((0, len(cost_set) + len(value_set)))
    norm = None
    if constraint_style == "l1":
        if pts.shape[0] == 0:
            raise ValueError("the sampled normalization row needs at least one scenario point")
        qx, qa = quad.nodes[:, :dx], quad.nodes[:, dx:]
        int_c = quad.weights @ cost_set.matrix(qx, qa)
        int_T = leb * T.mean(axis=0)
        norm = np.concatenate([int_c, -int_T])
    return ScenarioLPInstance(len(cost_set), len(value_set), np.concatenate([occ, -init]), rows, norm,
                              theta, pts, constraint_style, "sample-based",
                              {"gamma": gamma, "leb": leb, "m": batch.m, "n": batch.n,
                               "k": pools.shape[1], "H": batch.horizon})


# ---------------------------------------------------------------------------
# solution


@dataclass(frozen=True)
class InverseSolution:
    alpha: np.ndarray
    beta: np.ndarray
    eps_tilde: float
    status: str  # optimal | infeasible | unbounded | error
    diagnostics: dict = field(default_factory=dict)
    instance_hash: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["name", "value"])
            for i, v in enumerate(self.alpha):
                w.writerow([f"alpha{i}", repr(float(v))])
            for j, v in enumerate(self.beta):
                w.writerow([f"beta{j}", repr(float(v))])
            w.writerow(["eps_tilde", repr(float(self.eps_tilde))])
            w.writerow(["status", self.status])
            w.writerow(["instance_hash", self.instance_hash])
        return path


_STATUS = {0: "optimal", 2: "infeasible", 3: "unbounded"}
HIGHS_OPTIONS = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}


def _linprog(c, kw):
    # dual simplex occasionally stalls at these tolerances (status 4); the
    # interior-point method with crossover solves the same program
    res = linprog(c, **kw)
    res.method_used = kw["method"]
    if res.status == 4:
        res = linprog(c, **{**kw, "method": "highs-ipm"})
        res.method_used = "highs-ipm"
    return res


def _column_scales(A_ub, A_eq, n):
    # scale alpha/beta columns to unit max magnitude; eps and split parts follow alpha/beta
    mags = np.zeros(n)
    for A in (A_ub, A_eq):
        if A.size:
            mags = np.maximum(mags, np.abs(A[:, :n]).max(axis=0))
    mags[mags == 0] = 1.0
    return 1.0 / mags


def solve_lp(instance: ScenarioLPInstance, verify_tol: float = 1e-8, tie_break: bool = True) -> InverseSolution:
    """Minimize ``eps``; then, at fixed ``eps``, minimize ``||(alpha, beta)||_1``.

    The second phase picks a small-norm optimizer among the eps-optimal set,
    a linear stand-in for a minimum Euclidean norm selection.
    """
    c, A_ub, b_ub, A_eq, b_eq, bounds, names_ub, names_eq = instance.standard_form()
    n = instance.num_cost + instance.num_value
    nv = instance.num_variables
    s = np.ones(nv)
    s[:n] = _column_scales(A_ub, A_eq, n)
    if instance.constraint_style == "l1":
        s[n + 1:n + 1 + n] = s[:n]
        s[n + 1 + n:] = s[:n]
    A_ub_s, A_eq_s = A_ub * s, A_eq * s
    h = instance.instance_hash()
    nan_sol = dict(alpha=np.full(instance.num_cost, np.nan), beta=np.full(instance.num_value, np.nan),
                   eps_tilde=float("nan"), instance_hash=h)
    kw = dict(A_ub=A_ub_s, b_ub=b_ub, A_eq=A_eq_s if A_eq.size else None, b_eq=b_eq if A_eq.size else None,
              bounds=bounds, method="highs", options=HIGHS_OPTIONS)
    res = _linprog(c, kw)
    if res.status != 0:
        status = _STATUS.get(res.status, "error")
        return InverseSolution(status=status, diagnostics={"message": res.message, "phase": 1}, **nan_sol)
    # eps sits on its zero bound up to the solver's bound tolerance
    eps_raw = float(res.x[n])
    eps_star = max(eps_raw, 0.0)
    z = res.x
    iters = [int(getattr(res, "nit", 0))]
    phase2 = "skipped"
    if tie_break:
        # fix eps, minimize the l1 norm of (alpha, beta)
        cap = eps_star * (1 + 1e-9) + 1e-12
        bnd2 = list(bounds)
        bnd2[n] = (0, cap)
        c2 = np.zeros(nv)
        if instance.constraint_style == "l1":
            c2[n + 1:] = np.concatenate([s[:n], s[:n]])
        else:
            c2[:n] = s[:n]
        res2 = _linprog(c2, {**kw, "bounds": bnd2})
        iters.append(int(getattr(res2, "nit", 0)))
        if res2.status == 0:
            z = res2.x
            phase2 = "optimal"
        else:
            phase2 = f"failed: {res2.message}"
    x = z * s
    alpha, beta = x[:instance.num_cost], x[instance.num_cost:n]
    # residual check in original units against the phase-1 optimum
    x_chk = x.copy()
    x_chk[n] = max(x[n], eps_star)
    r_ub = A_ub @ x_chk - b_ub
    r_eq = A_eq @ x_chk - b_eq if A_eq.size else np.zeros(0)
    viol_ub = float(np.max(r_ub)) if r_ub.size else 0.0
    viol_eq = float(np.max(np.abs(r_eq))) if r_eq.size else 0.0
    scen = instance.scenario_rows @ x[:n] + eps_star if instance.N else np.zeros(0)
    active = np.flatnonzero(scen <= 1e-9 * max(1.0, eps_star)).tolist()
    methods = [res.method_used] + ([res2.method_used] if tie_break else [])
    diag = {"methods": methods, "max_ub_violation": viol_ub, "max_eq_violation": viol_eq, "iterations": iters,
            "phase2": phase2, "eps_raw": eps_raw, "active_rows": active[:64], "num_active": len(active),
            "eps_phase2": float(x[n]),
            "feasible_within_tol": bool(viol_ub <= verify_tol and viol_eq <= verify_tol),
            "l1_alpha": float(np.abs(alpha).sum()), "l1_beta": float(np.abs(beta).sum())}
    if not diag["feasible_within_tol"]:
        warnings.warn(f"solution violates rows by {max(viol_ub, viol_eq):.3g} > {verify_tol:g}")
    return InverseSolution(alpha.copy(), beta.copy(), eps_star, "optimal", diag, h)


# ---------------------------------------------------------------------------
# costs


@dataclass(frozen=True)
class LinearCost:
    """``sum_i alpha_i c_i``; callable as ``cost(x, a)``."""

    alpha: np.ndarray
    cost_set: BasisSet
    provenance: str = ""
    degenerate: bool = False

    def __post_init__(self):
        object.__setattr__(self, "alpha", np.asarray(self.alpha, dtype=float))
        if self.alpha.shape != (len(self.cost_set),):
            raise ValueError("alpha length does not match the cost basis")

    def __call__(self, x, a):
        return self.cost_set.matrix(x, a) @ self.alpha

    @property
    def sup_norm(self) -> float:
        return float(np.abs(self.alpha) @ np.array([f.sup_norm for f in self.cost_set]))

    @property
    def lip_const(self) -> float:
        return float(np.abs(self.alpha) @ np.array([f.lip_const for f in self.cost_set]))


def recovered_cost(sol: InverseSolution, cost_set: BasisSet) -> LinearCost:
    if not sol.optimal:
        raise ValueError(f"cannot extract a cost from a {sol.status} solution")
    degenerate = bool(np.all(np.abs(sol.alpha) <= 1e-14))
    if degenerate:
        warnings.warn("recovered cost is identically zero")
    return LinearCost(sol.alpha, cost_set, sol.instance_hash, degenerate)


# ---------------------------------------------------------------------------
# membership


@dataclass(frozen=True)
class MembershipTable:
    """Cost and adjoint basis values on a uniform grid of the state-action box."""

    points: np.ndarray
    cost_values: np.ndarray  # (G, n_c)
    adjoint_values: np.ndarray  # (G, n_u)
    grid_step: float

    @classmethod
    def build(cls, model: ControlModel, cost_set: BasisSet, value_set: BasisSet, grid_step: float,
              state_quad: Optional[QuadratureRule] = None) -> "MembershipTable":
        if grid_step <= 0:
            raise ValueError("grid_step must be positive")
        state_quad = state_quad or default_state_quadrature(model)
        axes = [np.linspace(l, h, int(np.ceil((h - l) / grid_step - 1e-9)) + 1) for l, h in zip(model.lo, model.hi)]
        mesh = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
        x, a = mesh[:, :model.dx], mesh[:, model.dx:]
        C = cost_set.matrix(x, a)
        T = adjoint_values(model, value_set, x, a, state_quad)
        step = max(float(ax[1] - ax[0]) if ax.size > 1 else 0.0 for ax in axes)
        return cls(mesh, C, T, step)


def row_lipschitz(cost: LinearCost, value_set: BasisSet, value_weights, model: ControlModel) -> float:
    """Lipschitz constant of ``c - T*u`` from basis metadata."""
    bw = np.abs(np.asarray(value_weights, dtype=float))
    lu = np.array([f.lip_const for f in value_set])
    return cost.lip_const + float(bw @ lu) * (1.0 + model.gamma * model.lip_P)


def check_membership(model: ControlModel, cost: LinearCost, value_weights, eps: float, grid_step: float,
                     reference_pairings: ReferencePairings, quad: Optional[QuadratureRule] = None,
                     value_set: Optional[BasisSet] = None, table: Optional[MembershipTable] = None,
                     tol: float = 1e-9, refine: int = 0) -> dict:
    """Grid check of both inequalities of eps-inverse feasibility.

    ``member`` is the verdict at ``eps`` on the grid (``tol`` absorbs
    floating-point noise).  A member is rigorously in the set at
    ``certified_eps = eps + L_row * grid_step``.  ``refine > 0`` polishes the
    lowest grid points with a bounded local search and reports the result.
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    if value_set is None:
        raise ValueError("value_set is required")
    bw = np.asarray(value_weights, dtype=float)
    if table is None or table.grid_step > grid_step * (1 + 1e-9):
        table = MembershipTable.build(model, cost.cost_set, value_set, grid_step, quad)
    vals = table.cost_values @ cost.alpha - table.adjoint_values @ bw
    i = int(np.argmin(vals))
    worst = float(vals[i])
    pairing = float(reference_pairings.occupancy @ cost.alpha - reference_pairings.initial @ bw)
    L_row = row_lipschitz(cost, value_set, bw, model)
    member = bool(pairing <= eps + tol and worst >= -eps - tol)
    report = {
        "member": member,
        "pairing_value": pairing,
        "pairing_margin": eps - pairing,
        "worst_pointwise": worst,
        "worst_point": table.points[i].tolist(),
        "pointwise_margin": worst + eps,
        "worst_margin": min(eps - pairing, worst + eps),
        "L_row": L_row,
        "grid_step": table.grid_step,
        "certified_eps": eps + L_row * table.grid_step,
    }
    if refine > 0:
        sq = quad or default_state_quadrature(model)
        lo, hi = model.lo, model.hi

        def g(z):
            x, a = z[None, :model.dx], z[None, model.dx:]
            return float(cost(x, a)[0] - adjoint_apply(model, list(value_set), x, a, sq)[0] @ bw)

        best = worst
        for j in np.argsort(vals)[:refine]:
            r = minimize(g, table.points[j], method="L-BFGS-B", bounds=list(zip(lo, hi)))
            best = min(best, float(r.fun))
        report["refined_worst_pointwise"] = best
    return report


# ---------------------------------------------------------------------------
# very large scenario sets


class ScenarioStream:
    """Reproducible uniform scenario points produced in fixed-size chunks.

    Chunk ``i`` has its own child seed, so any prefix of the stream can be
    regenerated without storing it and nested sample sizes share points.
    """

    def __init__(self, model: ControlModel, seed, chunk: int = 1 << 18):
        self.model = model
        self.chunk = int(chunk)
        self.root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)

    def _chunk(self, i: int) -> np.ndarray:
        child = np.random.SeedSequence(self.root.entropy, spawn_key=tuple(self.root.spawn_key) + (i,))
        rng = np.random.Generator(np.random.PCG64(child))
        return rng.uniform(self.model.lo, self.model.hi, size=(self.chunk, self.model.lo.size))

    def points(self, start: int, stop: int) -> np.ndarray:
        if stop <= start:
            return np.zeros((0, self.model.lo.size))
        first, last = start // self.chunk, (stop - 1) // self.chunk
        parts = [self._chunk(i) for i in range(first, last + 1)]
        block = np.vstack(parts)
        off = first * self.chunk
        return block[start - off:stop - off]

    def iter_chunks(self, N: int):
        """Yield ``(offset, points)`` covering the first ``N`` points."""
        for i in range((N + self.chunk - 1) // self.chunk):
            pts = self._chunk(i)
            off = i * self.chunk
            yield off, pts[:max(0, min(self.chunk, N - off))]


class ResidualEvaluator:
    """Scenario rows and pointwise residuals ``c - T*u`` for one basis pair."""

    def __init__(self, model: ControlModel, cost_set: BasisSet, value_set: BasisSet,
                 state_quad: Optional[QuadratureRule] = None):
        self.model = model
        self.cost_set = cost_set
        self.value_set = value_set
        self.state_quad = state_quad or default_state_quadrature(model)
        self.fast = (_lqg_moment_route(model, list(value_set))
                     and all(f.exponents is not None for f in cost_set) and model.dx == 1 and model.da == 1)
        if self.fast:
            self._cexp = np.array([f.exponents for f in cost_set], dtype=np.int64)
            self._vexp = np.array([f.exponents[0] for f in value_set], dtype=np.int64)

    def rows(self, pts) -> np.ndarray:
        return scenario_rows_exact(self.model, self.cost_set, self.value_set, pts, self.state_quad)

    def residuals(self, pts, alpha, beta) -> np.ndarray:
        if self.fast:
            p = self.model.params
            return kernels.lqg_residuals(pts, self._cexp, alpha, self._vexp, beta,
                                         p["A"], p["B"], p["mu"], p["sigma"], p["L"], self.model.gamma)
        return self.rows(pts) @ np.concatenate([alpha, beta])


def _worst_per_cell(pts, vals, lo, hi, bins):
    """Indices of the most violated point in each cell of a ``bins``-per-axis grid."""
    cell = np.floor((pts - lo) / (hi - lo) * bins).astype(np.int64)
    np.clip(cell, 0, bins - 1, out=cell)
    key = np.ravel_multi_index(cell.T, (bins,) * pts.shape[1])
    order = np.argsort(vals, kind="stable")
    _, first = np.unique(key[order], return_index=True)
    return order[first]


def solve_lp_streaming(template: ScenarioLPInstance, evaluator: ResidualEvaluator, stream: ScenarioStream,
                       N: int, initial: int = 1000, add_cap: int = 256, tol: float = 1e-10,
                       max_rounds: int = 200, bins: int = 64, stage_factor: int = 16) -> InverseSolution:
    """Solve the program over the first ``N`` stream points by constraint generation.

    Only a working set of scenario rows is materialized.  After each solve
    every stream point is checked; the most violated point of each cell of a
    ``bins``-per-axis grid is a candidate and the worst ``add_cap``
    candidates are added.  On exit the returned optimizer is feasible for
    all ``N`` rows up to ``tol`` (the LP feasibility tolerance), so the
    optimal value equals that of the full program.

    Scans first run over nested prefixes growing by ``stage_factor``, so
    the full pass mostly confirms a working set found cheaply.  Keep the
    working set small: the near-degenerate programs here take HiGHS
    minutes at 2e4 rows and well under a second at 1e3.
    """
    lo, hi = evaluator.model.lo, evaluator.model.hi
    idx = np.arange(min(N, initial))
    pts = stream.points(0, len(idx))
    rows = evaluator.rows(pts)
    seen = np.sort(idx)
    stages = []
    limit = N
    while limit > len(idx) * stage_factor:
        stages.append(limit)
        limit //= stage_factor
    stages = stages[::-1] or [N]
    rounds, scanned, stage = 0, 0, 0
    worst = np.nan
    while True:
        rounds += 1
        inst = ScenarioLPInstance(template.num_cost, template.num_value, template.pairing_row, rows,
                                  template.normalization_row, template.theta, pts, template.constraint_style,
                                  template.kind, dict(template.meta))
        sol = solve_lp(inst)
        if not sol.optimal or N <= len(seen):
            break
        worst = np.inf
        eps_used = max(sol.eps_tilde, sol.diagnostics["eps_phase2"])
        while True:
            cand_idx, cand_val, cand_pts = [], [], []
            for off, chunk in stream.iter_chunks(stages[stage]):
                r = evaluator.residuals(chunk, sol.alpha, sol.beta) + eps_used
                scanned += len(chunk)
                worst = min(worst, float(r.min()) if len(r) else np.inf)
                bad = np.flatnonzero(r < -tol)
                # rows already in the program can only be off by the solver tolerance
                bad = bad[~np.isin(bad + off, seen, assume_unique=True)]
                if bad.size:
                    keep = bad[_worst_per_cell(chunk[bad], r[bad], lo, hi, bins)]
                    cand_idx.append(keep + off)
                    cand_val.append(r[keep])
                    cand_pts.append(chunk[keep])
            if cand_idx or stage + 1 == len(stages):
                break
            stage += 1
        if not cand_idx:
            break
        ci = np.concatenate(cand_idx)
        cv = np.concatenate(cand_val)
        cp = np.vstack(cand_pts)
        best = _worst_per_cell(cp, cv, lo, hi, bins)
        fresh = best[np.argsort(cv[best], kind="stable")[:add_cap]]
        if rounds >= max_rounds:
            warnings.warn("constraint generation hit the round limit")
            break
        seen = np.union1d(seen, ci[fresh])
        pts = np.vstack([pts, cp[fresh]])
        rows = np.vstack([rows, evaluator.rows(cp[fresh])])
    diag = dict(sol.diagnostics)
    diag.update({"rounds": rounds, "working_rows": len(seen), "N": N, "points_scanned": scanned,
                 "stages": stages, "worst_residual": worst})
    return InverseSolution(sol.alpha, sol.beta, sol.eps_tilde, sol.status, diag, f"stream:{N}:{sol.instance_hash}")
