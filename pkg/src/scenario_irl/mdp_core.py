"""Continuous control models, expert rollouts and pairing estimators.

States and actions are handled as 2-D arrays of shape ``(n, dim)``; every
callable stored on a :class:`ControlModel` is expected to broadcast over the
leading axes.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .complexity import lqg_constants


class DomainError(ValueError):
    """Raised when a state or action falls outside its box."""


# ---------------------------------------------------------------------------
# randomness


def split_seed(seed, count: int) -> list[np.random.SeedSequence]:
    """Derive ``count`` independent child streams from ``seed``.

    Children come from :meth:`numpy.random.SeedSequence.spawn`, so child ``i``
    is the same no matter how many workers later consume the list.
    """
    if isinstance(seed, np.random.SeedSequence):
        ss = seed
    else:
        ss = np.random.SeedSequence(seed)
    return ss.spawn(count)


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def _as_points(z, dim: int) -> np.ndarray:
    arr = np.asarray(z, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, dim) if dim > 1 else arr.reshape(-1, 1)
    if arr.shape[-1] != dim:
        raise ValueError(f"expected trailing dimension {dim}, got shape {arr.shape}")
    return arr


# ---------------------------------------------------------------------------
# model types


@dataclass(frozen=True)
class ControlModel:
    """Discounted continuous MDP on boxes, without a cost function."""

    state_lo: np.ndarray
    state_hi: np.ndarray
    action_lo: np.ndarray
    action_hi: np.ndarray
    gamma: float
    initial_sampler: Callable[[int, np.random.Generator], np.ndarray]
    transition_density: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    transition_sampler: Callable[[np.ndarray, np.ndarray, np.random.Generator], np.ndarray]
    lip_P: float
    initial_density: Optional[Callable[[np.ndarray], np.ndarray]] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("state_lo", "state_hi", "action_lo", "action_hi"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.state_lo.shape != self.state_hi.shape or np.any(self.state_lo > self.state_hi):
            raise ValueError("state box is empty or malformed")
        if self.action_lo.shape != self.action_hi.shape or np.any(self.action_lo > self.action_hi):
            raise ValueError("action box is empty or malformed")
        if self.lip_P < 0:
            raise ValueError("lip_P must be nonnegative")

    @property
    def dx(self) -> int:
        return self.state_lo.size

    @property
    def da(self) -> int:
        return self.action_lo.size

    @property
    def state_volume(self) -> float:
        return float(np.prod(self.state_hi - self.state_lo))

    @property
    def action_volume(self) -> float:
        return float(np.prod(self.action_hi - self.action_lo))

    @property
    def lo(self) -> np.ndarray:
        """Lower corner of the joint state-action box."""
        return np.concatenate([self.state_lo, self.action_lo])

    @property
    def hi(self) -> np.ndarray:
        return np.concatenate([self.state_hi, self.action_hi])

    def in_state_box(self, x, atol: float = 1e-12) -> np.ndarray:
        x = _as_points(x, self.dx)
        return np.all((x >= self.state_lo - atol) & (x <= self.state_hi + atol), axis=-1)

    def in_action_box(self, a, atol: float = 1e-12) -> np.ndarray:
        a = _as_points(a, self.da)
        return np.all((a >= self.action_lo - atol) & (a <= self.action_hi + atol), axis=-1)

    def model_hash(self) -> str:
        payload = {
            "state": [self.state_lo.tolist(), self.state_hi.tolist()],
            "action": [self.action_lo.tolist(), self.action_hi.tolist()],
            "gamma": self.gamma,
            "params": self.params,
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Policy:
    """Stationary Markov policy; ``act(x, rng)`` maps ``(n, dx)`` states to ``(n, da)`` actions."""

    act: Callable[[np.ndarray, Optional[np.random.Generator]], np.ndarray]
    kind: str = "deterministic-map"

    def __post_init__(self):
        if self.kind not in ("deterministic-map", "stochastic-kernel"):
            raise ValueError(f"unknown policy kind {self.kind!r}")

    def __call__(self, x, rng=None):
        return self.act(x, rng)


@dataclass(frozen=True)
class TrajectoryBatch:
    """``m`` truncated rollouts of horizon ``H`` plus an initial-state pool."""

    states: np.ndarray  # (m, H+1, dx)
    actions: np.ndarray  # (m, H+1, da)
    initial_samples: np.ndarray  # (n, dx)
    seed: int
    model_hash: str = ""

    def __post_init__(self):
        if self.states.ndim != 3 or self.actions.ndim != 3:
            raise ValueError("states/actions must have shape (m, H+1, dim)")
        if self.states.shape[:2] != self.actions.shape[:2]:
            raise ValueError("states and actions disagree on (m, H+1)")

    @property
    def m(self) -> int:
        return self.states.shape[0]

    @property
    def horizon(self) -> int:
        return self.states.shape[1] - 1

    @property
    def n(self) -> int:
        return self.initial_samples.shape[0]

    def trajectories(self):
        for j in range(self.m):
            yield list(zip(self.states[j], self.actions[j]))

    def to_csv(self, path) -> Path:
        """Write ``traj_id,t,x...,a...`` rows plus a ``.meta.json`` sidecar."""
        path = Path(path)
        dx, da = self.states.shape[2], self.actions.shape[2]
        header = ["traj_id", "t"] + [f"x{i}" for i in range(dx)] + [f"a{i}" for i in range(da)]
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for j in range(self.m):
                for t in range(self.horizon + 1):
                    w.writerow([j, t] + [repr(float(v)) for v in self.states[j, t]]
                               + [repr(float(v)) for v in self.actions[j, t]])
        init_path = path.with_suffix(".init.csv")
        with init_path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i}" for i in range(dx)])
            for row in self.initial_samples:
                w.writerow([repr(float(v)) for v in row])
        meta = {"seed": self.seed, "H": self.horizon, "m": self.m, "n": self.n,
                "dx": dx, "da": da, "model_hash": self.model_hash,
                "initial_samples": init_path.name}
        path.with_suffix(".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
        return path

    @classmethod
    def from_csv(cls, path) -> "TrajectoryBatch":
        path = Path(path)
        meta = json.loads(path.with_suffix(".meta.json").read_text())
        m, H, dx, da = meta["m"], meta["H"], meta["dx"], meta["da"]
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if rows.shape[0] != m * (H + 1):
            raise ValueError(f"{path}: expected {m * (H + 1)} rows, found {rows.shape[0]}")
        order = np.lexsort((rows[:, 1], rows[:, 0]))
        rows = rows[order]
        states = rows[:, 2:2 + dx].reshape(m, H + 1, dx)
        actions = rows[:, 2 + dx:2 + dx + da].reshape(m, H + 1, da)
        init = np.loadtxt(path.parent / meta["initial_samples"], delimiter=",", skiprows=1, ndmin=2)
        return cls(states, actions, init.reshape(-1, dx), meta["seed"], meta["model_hash"])


@dataclass(frozen=True)
class PairingEstimate:
    value: float
    kind: str  # "occupancy" | "initial"
    variance_hint: Optional[float] = None
    reference: bool = False
    half_width: Optional[float] = None
    horizon: Optional[int] = None
    count: Optional[int] = None

    def __float__(self):
        return float(self.value)


# ---------------------------------------------------------------------------
# generative oracle


def _check_boxes(model: ControlModel, x, a):
    x = _as_points(x, model.dx)
    a = _as_points(a, model.da)
    if not np.all(model.in_state_box(x)):
        raise DomainError("state outside the state box")
    if not np.all(model.in_action_box(a)):
        raise DomainError("action outside the action box")
    return x, a


def sample_transition(model: ControlModel, x, a, rng) -> np.ndarray:
    """Draw next states ``y ~ P(.|x, a)`` from the model's generative oracle."""
    x, a = _check_boxes(model, x, a)
    y = model.transition_sampler(x, a, make_rng(rng))
    return np.clip(y, model.state_lo, model.state_hi)


def transition_density(model: ControlModel, y, x, a) -> np.ndarray:
    y = _as_points(y, model.dx)
    x, a = _check_boxes(model, x, a)
    if not np.all(model.in_state_box(y)):
        raise DomainError("next state outside the state box")
    return model.transition_density(y, x, a)


# ---------------------------------------------------------------------------
# truncated LQG


def _noise_window(mean, mu, sigma, L, x_lo, x_hi):
    """Standardized window of the noise keeping ``y = mean + w`` inside ``[x_lo, x_hi]``."""
    w_lo = np.maximum(-L, x_lo - mean)
    w_hi = np.minimum(L, x_hi - mean)
    return (w_lo - mu) / sigma, (w_hi - mu) / sigma


def _ndtr_diff(alpha, beta):
    # Phi(beta) - Phi(alpha) without cancellation in the upper tail
    upper = alpha > 0
    return np.where(upper, ndtr(-alpha) - ndtr(-beta), ndtr(beta) - ndtr(alpha))


def truncnorm_ppf(q, alpha, beta):
    """Quantile of the standard normal truncated to ``[alpha, beta]``."""
    upper = alpha > 0
    # mirror upper-tail windows so the cdf differences stay well conditioned
    a = np.where(upper, -beta, alpha)
    b = np.where(upper, -alpha, beta)
    qq = np.where(upper, 1.0 - q, q)
    pa, pb = ndtr(a), ndtr(b)
    z = ndtri(pa + qq * (pb - pa))
    z = np.clip(z, a, b)
    return np.where(upper, -z, z)


@dataclass(frozen=True)
class LQGParams:
    A: float = -1.5
    B: float = 1.0
    Q: float = 1.0
    R: float = 1.0
    mu: float = 0.0
    sigma: float = 1.0
    L: float = 10.0


def truncated_lqg_model(params: LQGParams = LQGParams(), gamma: float = 0.9) -> ControlModel:
    """One-dimensional truncated LQG on ``X = A = [-L, L]``.

    The nominal next state ``A x + B a`` is clipped to the state box and the
    truncated-normal disturbance is restricted so the next state stays in the
    box.  Whenever ``A x + B a`` already lies in ``[-L, L]`` and the window
    ``[-L, L]`` of the disturbance fits, this coincides with the textbook
    density ``f(y - A x - B a)``.
    """
    A, B, mu, sigma, L = params.A, params.B, params.mu, params.sigma, params.L
    if sigma <= 0 or L <= 0:
        raise ValueError("sigma and L must be positive")

    def mean_of(x, a):
        return np.clip(A * x[..., 0] + B * a[..., 0], -L, L)

    def density(y, x, a):
        m = mean_of(x, a)
        alpha, beta = _noise_window(m, mu, sigma, L, -L, L)
        s = (y[..., 0] - m - mu) / sigma
        inside = (s >= alpha) & (s <= beta)
        z = _ndtr_diff(alpha, beta)
        pdf = np.exp(-0.5 * s * s) / (sigma * math.sqrt(2 * math.pi))
        return np.where(inside, pdf / z, 0.0)

    def sampler(x, a, rng):
        m = mean_of(x, a)
        alpha, beta = _noise_window(m, mu, sigma, L, -L, L)
        u = rng.random(m.shape)
        y = m + mu + sigma * truncnorm_ppf(u, alpha, beta)
        return np.clip(y, -L, L)[..., None]

    def init_sampler(n, rng):
        return rng.uniform(-L, L, size=(n, 1))

    def init_density(x):
        x = np.asarray(x)
        return np.where(np.all(np.abs(x) <= L, axis=-1), 1.0 / (2 * L), 0.0)

    consts = lqg_constants(A, B, params.Q, params.R, mu, sigma, L)
    return ControlModel(
        state_lo=[-L], state_hi=[L], action_lo=[-L], action_hi=[L], gamma=gamma,
        initial_sampler=init_sampler, transition_density=density, transition_sampler=sampler,
        lip_P=consts["L_P"], initial_density=init_density,
        params={"kind": "truncated_lqg", "A": A, "B": B, "Q": params.Q, "R": params.R,
                "mu": mu, "sigma": sigma, "L": L},
    )


def lqg_next_state_moments(model: ControlModel, x, a):
    """Exact mean and second moment of the next state of a truncated LQG model."""
    p = model.params
    A, B, mu, sigma, L = p["A"], p["B"], p["mu"], p["sigma"], p["L"]
    x = _as_points(x, 1)
    a = _as_points(a, 1)
    m = np.clip(A * x[:, 0] + B * a[:, 0], -L, L)
    alpha, beta = _noise_window(m, mu, sigma, L, -L, L)
    z = _ndtr_diff(alpha, beta)
    phi_a = np.exp(-0.5 * alpha ** 2) / math.sqrt(2 * math.pi)
    phi_b = np.exp(-0.5 * beta ** 2) / math.sqrt(2 * math.pi)
    ez = (phi_a - phi_b) / z
    ez2 = 1.0 + (alpha * phi_a - beta * phi_b) / z
    c = m + mu
    ey = c + sigma * ez
    ey2 = c * c + 2 * c * sigma * ez + sigma ** 2 * ez2
    return ey, ey2


# ---------------------------------------------------------------------------
# rollouts and estimators


def rollout_batch(model: ControlModel, policy: Policy, m: int, H: int, seed,
                  n_initial: Optional[int] = None) -> TrajectoryBatch:
    """Roll out ``m`` independent trajectories of horizon ``H``.

    Trajectory randomness and the extra ``nu0`` pool use separate child
    streams of ``seed``, so the pool does not perturb the trajectories.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if H < 0:
        raise ValueError("H must be >= 0")
    n_initial = m if n_initial is None else n_initial
    traj_ss, init_ss = split_seed(seed, 2)
    rng = make_rng(traj_ss)
    xs = np.empty((m, H + 1, model.dx))
    us = np.empty((m, H + 1, model.da))
    x = model.initial_sampler(m, rng)
    for t in range(H + 1):
        a = np.clip(policy(x, rng), model.action_lo, model.action_hi)
        xs[:, t] = x
        us[:, t] = a
        if t < H:
            x = np.clip(model.transition_sampler(x, a, rng), model.state_lo, model.state_hi)
    init = model.initial_sampler(n_initial, make_rng(init_ss)) if n_initial > 0 else np.empty((0, model.dx))
    seed_val = seed if isinstance(seed, (int, np.integer)) else -1
    return TrajectoryBatch(xs, us, init, int(seed_val), model.model_hash())


def discount_weights(gamma: float, H: int) -> np.ndarray:
    return gamma ** np.arange(H + 1)


def empirical_occupancy_pairing(batch: TrajectoryBatch, f, gamma: float,
                                horizon: Optional[int] = None) -> PairingEstimate:
    """``(1/m) sum_t sum_j gamma^t f(x_t^j, a_t^j)`` over the batch."""
    if batch.m == 0:
        raise ValueError("empty trajectory batch")
    if horizon is not None and horizon != batch.horizon:
        raise ValueError(f"horizon mismatch: batch has H={batch.horizon}, expected {horizon}")
    m, T = batch.states.shape[:2]
    vals = np.asarray(f(batch.states.reshape(m * T, -1), batch.actions.reshape(m * T, -1)), dtype=float)
    vals = np.broadcast_to(vals, (m * T,)).reshape(m, T)
    returns = vals @ discount_weights(gamma, T - 1)
    var = float(np.var(returns, ddof=1)) if m > 1 else None
    return PairingEstimate(float(np.mean(returns)), "occupancy", var, horizon=T - 1, count=m)


def empirical_initial_pairing(batch: TrajectoryBatch, u) -> PairingEstimate:
    if batch.n == 0:
        raise ValueError("empty initial-state pool")
    vals = np.broadcast_to(np.asarray(u(batch.initial_samples), dtype=float), (batch.n,))
    var = float(np.var(vals, ddof=1)) if batch.n > 1 else None
    return PairingEstimate(float(np.mean(vals)), "initial", var, count=batch.n)


def _probe_sup(model: ControlModel, f, rng, n_probe: int = 4096) -> float:
    lo, hi = model.lo, model.hi
    pts = rng.uniform(lo, hi, size=(n_probe, lo.size))
    corners = np.array(np.meshgrid(*[[l, h] for l, h in zip(lo, hi)], indexing="ij")).reshape(lo.size, -1).T
    pts = np.vstack([pts, corners])
    vals = np.asarray(f(pts[:, :model.dx], pts[:, model.dx:]), dtype=float)
    return float(np.max(np.abs(np.broadcast_to(vals, (pts.shape[0],)))))


def reference_occupancy_pairing(model: ControlModel, policy: Policy, f, tol, seed,
                                sup_cap: float = 1e12, chunk: int = 20000,
                                max_trajectories: int = 4_000_000):
    """Tolerance-certified Monte Carlo value of ``<mu^pi, f>``.

    Half of ``tol`` bounds the truncation tail ``gamma^(H+1) sup|f| / (1-gamma)``;
    the other half bounds the 95% normal half-width of the trajectory mean.
    ``f`` may be a single function or a sequence evaluated on common random
    numbers; ``tol`` may be a scalar or one value per function.

    Returns a :class:`PairingEstimate` (or a list of them).
    """
    single = callable(f)
    funcs = [f] if single else list(f)
    tols = np.broadcast_to(np.asarray(tol, dtype=float), (len(funcs),)).copy()
    if np.any(tols <= 0):
        raise ValueError("tol must be positive")
    probe_ss, roll_ss = split_seed(seed, 2)
    prng = make_rng(probe_ss)
    sups = np.array([_probe_sup(model, g, prng) for g in funcs]) * 1.05
    if np.any(sups > sup_cap):
        raise ValueError(f"function appears unbounded on the box (sup estimate {sups.max():.3g} > {sup_cap:g})")
    g = model.gamma
    H = 0
    for s, t in zip(sups, tols):
        if s > 0:
            need = math.log((t / 2) * (1 - g) / s) / math.log(g) - 1
            H = max(H, int(math.ceil(need)))
    w = discount_weights(g, H)

    k = len(funcs)
    count = 0
    mean = np.zeros(k)
    m2 = np.zeros(k)
    chunk_seeds = iter(split_seed(roll_ss, max_trajectories // chunk + 1))
    certified = False
    while count < max_trajectories:
        rng = make_rng(next(chunk_seeds))
        x = model.initial_sampler(chunk, rng)
        ret = np.zeros((k, chunk))
        for t in range(H + 1):
            a = np.clip(policy(x, rng), model.action_lo, model.action_hi)
            for i, fn in enumerate(funcs):
                ret[i] += w[t] * np.broadcast_to(np.asarray(fn(x, a), dtype=float), (chunk,))
            if t < H:
                x = np.clip(model.transition_sampler(x, a, rng), model.state_lo, model.state_hi)
        # Chan et al. parallel update of mean / M2
        c_mean = ret.mean(axis=1)
        c_m2 = ((ret - c_mean[:, None]) ** 2).sum(axis=1)
        delta = c_mean - mean
        tot = count + chunk
        mean = mean + delta * chunk / tot
        m2 = m2 + c_m2 + delta ** 2 * count * chunk / tot
        count = tot
        half = 1.96 * np.sqrt(m2 / (count - 1) / count)
        if np.all(half <= tols / 2):
            certified = True
            break
    if not certified:
        warnings.warn("reference pairing budget exhausted before reaching the requested tolerance")
    var = m2 / (count - 1)
    out = [PairingEstimate(float(mean[i]), "occupancy", float(var[i]), reference=True,
                           half_width=float(half[i]), horizon=H, count=count) for i in range(k)]
    return out[0] if single else out


def nystrom_occupancy_pairing(model: ControlModel, policy: Policy, funcs, quad) -> tuple:
    """Deterministic ``<mu^pi, f>`` for a deterministic policy with a known kernel density.

    The policy-evaluation equation ``V = f_pi + gamma P_pi V`` is collocated
    at the nodes of the state rule ``quad`` (Nystrom method) and
    ``<nu0, V>`` is integrated with the same rule.  Panels of ``quad``
    should be aligned with kinks of the policy.  Returns
    ``(values, kernel_mass_error)`` where the second entry is
    ``max_i |1 - sum_j w_j p(y_j | x_i, pi(x_i))|``, a direct gauge of the
    quadrature error.
    """
    if model.initial_density is None:
        raise ValueError("model has no initial density")
    funcs = [funcs] if callable(funcs) else list(funcs)
    X = quad.nodes
    w = quad.weights
    A = np.clip(policy(X, None), model.action_lo, model.action_hi)
    K = model.transition_density(X[None, :, :], X[:, None, :], A[:, None, :]) * w[None, :]
    mass_err = float(np.max(np.abs(1.0 - K.sum(axis=1))))
    F = np.column_stack([np.broadcast_to(np.asarray(f(X, A), dtype=float), (X.shape[0],)) for f in funcs])
    V = np.linalg.solve(np.eye(X.shape[0]) - model.gamma * K, F)
    vals = (w * model.initial_density(X)) @ V
    return vals, mass_err


def initial_pairing_exact(model: ControlModel, u, quad) -> float:
    """``<nu0, u>`` by quadrature against the initial density."""
    if model.initial_density is None:
        raise ValueError("model has no initial density")
    vals = np.asarray(u(quad.nodes), dtype=float) * model.initial_density(quad.nodes)
    return float(np.dot(quad.weights, vals))


def uniform_points(model: ControlModel, n: int, rng) -> np.ndarray:
    """``n`` i.i.d. uniform draws from the state-action box, shape ``(n, dx+da)``."""
    return make_rng(rng).uniform(model.lo, model.hi, size=(n, model.dx + model.da))


def next_state_pools(model: ControlModel, points: np.ndarray, k: int, rng) -> np.ndarray:
    """``k`` oracle draws per scenario point, shape ``(N, k, dx)``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = make_rng(rng)
    N = points.shape[0]
    x = np.repeat(points[:, :model.dx], k, axis=0)
    a = np.repeat(points[:, model.dx:], k, axis=0)
    y = np.clip(model.transition_sampler(x, a, rng), model.state_lo, model.state_hi)
    return y.reshape(N, k, model.dx)


def as_policy(fn: Callable, kind: str = "deterministic-map") -> Policy:
    return Policy(lambda x, rng=None: fn(x), kind)


def constant_policy(action: Sequence[float]) -> Policy:
    act = np.atleast_1d(np.asarray(action, dtype=float))
    return Policy(lambda x, rng=None: np.broadcast_to(act, (np.asarray(x).shape[0], act.size)).copy())
