"""Finite-MDP inverse feasibility: an LP test, the Ng-Russell condition and an enumeration oracle."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.optimize import linprog

FEAS_TOL = 1e-8
ENUM_BUDGET = 10 ** 6


@dataclass(frozen=True)
class FiniteMDP:
    P: np.ndarray  # (S, A, S), P[x, a, y]
    gamma: float
    nu0: np.ndarray  # (S,)
    cost: Optional[np.ndarray] = None  # (S, A)

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        nu0 = np.asarray(self.nu0, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ValueError(f"P must have shape (S, A, S), got {P.shape}")
        if np.any(P < 0) or np.max(np.abs(P.sum(axis=2) - 1)) > 1e-12:
            raise ValueError("every P[x, a, :] must be a probability vector")
        if nu0.shape != (P.shape[0],) or np.any(nu0 < 0) or abs(nu0.sum() - 1) > 1e-12:
            raise ValueError("nu0 must be a probability vector over states")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "nu0", nu0)
        if self.cost is not None:
            object.__setattr__(self, "cost", _check_cost(self.cost, P.shape[0], P.shape[1]))

    @property
    def num_states(self) -> int:
        return self.P.shape[0]

    @property
    def num_actions(self) -> int:
        return self.P.shape[1]

    def policy_kernel(self, policy) -> np.ndarray:
        """State-to-state kernel ``P_pi[x, y] = sum_a pi(a|x) P[x, a, y]``."""
        return np.einsum("xa,xay->xy", policy, self.P)

    def policy_value(self, policy, cost) -> np.ndarray:
        pi = check_policy(policy, self.num_states, self.num_actions)
        c = _check_cost(cost, self.num_states, self.num_actions)
        S = self.num_states
        return np.linalg.solve(np.eye(S) - self.gamma * self.policy_kernel(pi), (pi * c).sum(axis=1))

    def shaping(self, u) -> np.ndarray:
        """``(T* u)(x, a) = u(x) - gamma sum_y P(y|x,a) u(y)``."""
        u = np.asarray(u, dtype=float)
        return u[:, None] - self.gamma * self.P @ u

    # -- CSV trio -----------------------------------------------------------

    @classmethod
    def from_csv(cls, p_path, nu0_path, gamma: float, cost_path=None) -> "FiniteMDP":
        """Load ``P`` from rows ``x,a,p_0..p_{S-1}`` and ``nu0`` from one probability per row."""
        rows = _read_numeric(p_path)
        if rows.shape[1] < 3:
            raise ValueError(f"{p_path}: expected columns x,a,p_0,...")
        S = rows.shape[1] - 2
        xs, acts = rows[:, 0].astype(int), rows[:, 1].astype(int)
        A = int(acts.max()) + 1
        P = np.full((S, A, S), np.nan)
        P[xs, acts] = rows[:, 2:]
        if np.isnan(P).any():
            raise ValueError(f"{p_path}: missing (x, a) rows")
        nu0 = _read_numeric(nu0_path).reshape(-1)
        cost = _read_numeric(cost_path) if cost_path is not None else None
        return cls(P, gamma, nu0, cost)

    def to_csv(self, p_path, nu0_path) -> tuple:
        S, A = self.num_states, self.num_actions
        with Path(p_path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "a"] + [f"p{y}" for y in range(S)])
            for x in range(S):
                for a in range(A):
                    w.writerow([x, a] + [repr(float(v)) for v in self.P[x, a]])
        _write_matrix(nu0_path, self.nu0[:, None], ["nu0"])
        return Path(p_path), Path(nu0_path)


def load_policy_csv(path, num_states: int, num_actions: int) -> np.ndarray:
    """Expert policy with one row per state and one column per action."""
    return check_policy(_read_numeric(path), num_states, num_actions)


def save_policy_csv(path, policy) -> Path:
    policy = np.asarray(policy, dtype=float)
    _write_matrix(path, policy, [f"a{j}" for j in range(policy.shape[1])])
    return Path(path)


def _read_numeric(path) -> np.ndarray:
    with Path(path).open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    try:
        float(rows[0][0])
    except ValueError:
        rows = rows[1:]
    return np.array([[float(v) for v in r] for r in rows], dtype=float)


def _write_matrix(path, M, header):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in M:
            w.writerow([repr(float(v)) for v in row])


def check_policy(policy, S: int, A: int) -> np.ndarray:
    pi = np.asarray(policy, dtype=float)
    if pi.shape != (S, A):
        raise ValueError(f"policy must have shape ({S}, {A}), got {pi.shape}")
    if np.any(pi < 0) or np.max(np.abs(pi.sum(axis=1) - 1)) > 1e-9:
        raise ValueError("policy rows must be probability vectors")
    return pi


def _check_cost(cost, S: int, A: int) -> np.ndarray:
    c = np.asarray(cost, dtype=float)
    if c.shape == (S,):
        c = np.repeat(c[:, None], A, axis=1)
    if c.shape != (S, A):
        raise ValueError(f"cost must have shape ({S}, {A}) or ({S},), got {c.shape}")
    if not np.all(np.isfinite(c)):
        raise ValueError("cost must be finite")
    return c


def deterministic_policy(actions, num_actions: int) -> np.ndarray:
    actions = np.asarray(actions, dtype=int)
    pi = np.zeros((actions.size, num_actions))
    pi[np.arange(actions.size), actions] = 1.0
    return pi


# ---------------------------------------------------------------------------
# verdicts


def feasibility_slack(mdp: FiniteMDP, expert, cost) -> tuple:
    """Smallest ``s`` for which some ``u`` has ``|c - T*u| <= s`` on the expert's support and ``c - T*u >= -s`` off it.

    Returns ``(s, u)``.  The cost is inverse feasible exactly when ``s`` is
    0; the LP form makes the verdict robust to floating-point noise.
    """
    S, A = mdp.num_states, mdp.num_actions
    pi = check_policy(expert, S, A)
    c = _check_cost(cost, S, A)
    # residual r(x,a) = c(x,a) - u(x) + gamma P[x,a] @ u = c + M @ u
    M = -np.repeat(np.eye(S), A, axis=0) + mdp.gamma * mdp.P.reshape(S * A, S)
    r0 = c.reshape(-1)
    support = pi.reshape(-1) > 0
    ones = np.ones((S * A, 1))
    # variables (u, s); rows:  -(c + M u) - s <= 0 everywhere,  (c + M u) - s <= 0 on the support
    A_ub = np.vstack([np.hstack([-M, -ones]), np.hstack([M[support], -ones[support]])])
    b_ub = np.concatenate([r0, -r0[support]])
    obj = np.zeros(S + 1)
    obj[-1] = 1.0
    bounds = [(None, None)] * S + [(0, None)]
    res = linprog(obj, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(f"feasibility LP failed: {res.message}")
    return float(res.x[-1]), res.x[:S]


def tabular_inverse_feasible(mdp: FiniteMDP, expert, cost, tol: float = FEAS_TOL) -> bool:
    """Whether ``cost`` makes the ``expert`` policy optimal, via the shaping-potential LP."""
    return feasibility_slack(mdp, expert, cost)[0] <= tol


def ng_russell_check(mdp: FiniteMDP, state_cost, expert_action: int = 0, tol: float = FEAS_TOL) -> bool:
    """Matrix condition ``(P_a1 - P_a) (I - gamma P_a1)^{-1} c <= 0`` for every ``a != a1``."""
    c = np.asarray(state_cost, dtype=float)
    S, A = mdp.num_states, mdp.num_actions
    if c.shape != (S,):
        raise ValueError("the condition needs a state-only cost of shape (S,)")
    P1 = mdp.P[:, expert_action, :]
    try:
        V = np.linalg.solve(np.eye(S) - mdp.gamma * P1, c)
    except np.linalg.LinAlgError as exc:  # impossible for gamma < 1
        raise RuntimeError("singular policy-evaluation system") from exc
    for a in range(A):
        if a != expert_action and np.any((P1 - mdp.P[:, a, :]) @ V > tol):
            return False
    return True


def optimal_value_by_enumeration(mdp: FiniteMDP, cost, budget: int = ENUM_BUDGET) -> tuple:
    """Minimum of ``<nu0, V^pi>`` over all deterministic stationary policies, with a minimizer."""
    S, A = mdp.num_states, mdp.num_actions
    if A ** S > budget:
        raise ValueError(f"{A}^{S} deterministic policies exceed the enumeration budget {budget}")
    c = _check_cost(cost, S, A)
    acts = np.array(np.meshgrid(*[np.arange(A)] * S, indexing="ij")).reshape(S, -1).T  # (A^S, S)
    rows = np.arange(S)
    Pp = mdp.P[rows, acts]  # (K, S, S)
    cp = c[rows, acts]  # (K, S)
    V = np.linalg.solve(np.eye(S) - mdp.gamma * Pp, cp[..., None])[..., 0]
    vals = V @ mdp.nu0
    k = int(np.argmin(vals))
    return float(vals[k]), acts[k]


def brute_force_inverse_feasible(mdp: FiniteMDP, expert, cost, tol: float = FEAS_TOL,
                                 budget: int = ENUM_BUDGET) -> bool:
    """Expert value against the best deterministic policy, by exhaustive enumeration."""
    pi = check_policy(expert, mdp.num_states, mdp.num_actions)
    best, _ = optimal_value_by_enumeration(mdp, cost, budget)
    v_exp = float(mdp.nu0 @ mdp.policy_value(pi, cost))
    return v_exp <= best + tol


# ---------------------------------------------------------------------------
# random instances


def random_mdp(rng, num_states: int, num_actions: int, gamma: float = 0.9, sparsity: float = 0.3) -> FiniteMDP:
    """Random kernel with some zero transitions and a full-support initial law."""
    P = rng.random((num_states, num_actions, num_states))
    P[rng.random(P.shape) < sparsity] = 0.0
    P[..., 0] += (P.sum(axis=2) == 0)
    P /= P.sum(axis=2, keepdims=True)
    nu0 = rng.dirichlet(np.ones(num_states))
    return FiniteMDP(P, gamma, nu0)


def random_expert(rng, num_states: int, num_actions: int, stochastic: float = 0.3) -> np.ndarray:
    pi = deterministic_policy(rng.integers(num_actions, size=num_states), num_actions)
    for x in range(num_states):
        if num_actions > 1 and rng.random() < stochastic:
            k = rng.integers(2, num_actions + 1)
            acts = rng.choice(num_actions, size=k, replace=False)
            pi[x] = 0.0
            pi[x, acts] = rng.dirichlet(np.ones(k))
    return pi


def random_instance(rng, max_states: int = 5, max_actions: int = 3, gamma: float = 0.9):
    """``(mdp, expert, cost, kind)`` with a balanced mix of feasible and infeasible costs.

    ``kind`` is ``"shaped"`` (feasible by construction: a shaping term plus a
    nonnegative margin off the expert's support), ``"perturbed"`` (a shaped
    cost with a random kick, usually infeasible) or ``"random"``.
    """
    S = int(rng.integers(1, max_states + 1))
    A = int(rng.integers(1, max_actions + 1))
    mdp = random_mdp(rng, S, A, gamma)
    expert = random_expert(rng, S, A)
    kind = ("shaped", "perturbed", "random")[int(rng.integers(3))]
    if kind == "random":
        cost = rng.normal(size=(S, A))
    else:
        margin = rng.exponential(size=(S, A)) * (rng.random((S, A)) < 0.7)
        cost = mdp.shaping(rng.normal(scale=3.0, size=S)) + np.where(expert > 0, 0.0, margin)
        if kind == "perturbed":
            cost = cost + rng.normal(scale=0.1, size=(S, A))
    return mdp, expert, cost, kind


def _fuzz_one(seed: int, max_states: int, max_actions: int, gamma: float) -> dict:
    rng = np.random.default_rng(seed)
    mdp, expert, cost, kind = random_instance(rng, max_states, max_actions, gamma)
    lp = tabular_inverse_feasible(mdp, expert, cost)
    bf = brute_force_inverse_feasible(mdp, expert, cost)
    return {"seed": seed, "S": mdp.num_states, "A": mdp.num_actions, "kind": kind, "lp": lp, "brute_force": bf}


def fuzz(seeds, max_states: int = 5, max_actions: int = 3, gamma: float = 0.9, workers: int = 1) -> dict:
    """Compare the LP verdict with enumeration on one random instance per seed."""
    seeds = list(range(seeds)) if np.ndim(seeds) == 0 else list(seeds)
    args = [(s, max_states, max_actions, gamma) for s in seeds]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            rows = list(pool.map(_fuzz_one, *zip(*args)))
    else:
        rows = [_fuzz_one(*a) for a in args]
    mismatches = [r for r in rows if r["lp"] != r["brute_force"]]
    return {"instances": len(rows), "agree": len(rows) - len(mismatches),
            "feasible": sum(r["lp"] for r in rows), "mismatches": mismatches, "rows": rows}
