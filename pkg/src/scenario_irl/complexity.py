"""Closed-form certificate constants and sample-size calculators.

All logarithms are natural logarithms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np
from scipy.special import gammaln, logsumexp, ndtr


@dataclass(frozen=True)
class CertificateInputs:
    n_c: int
    n_u: int
    theta: float
    gamma: float
    L_c: float
    L_u: float
    L_P: float
    K_c_inf: float
    K_u_inf: float
    d: int
    box_side: float
    epsilon: float
    delta: float
    k_constant: float = 1.0  # unnamed constant C of the k bound

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        for name in ("n_c", "n_u", "theta", "L_c", "L_u", "K_c_inf", "K_u_inf", "d", "box_side", "k_constant"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.L_P < 0:
            raise ValueError("L_P must be nonnegative")

    def as_dict(self):
        return asdict(self)


def _check_eps_delta(eps, delta):
    if not 0 < eps < 1:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")


def log_binomial_tail(N: int, n: int, eps: float) -> float:
    """``log sum_{i=0}^{n} C(N,i) eps^i (1-eps)^(N-i)``, evaluated in log space."""
    i = np.arange(0, min(n, N) + 1, dtype=float)
    terms = (gammaln(N + 1.0) - gammaln(i + 1.0) - gammaln(N - i + 1.0)
             + i * math.log(eps) + (N - i) * math.log1p(-eps))
    return float(logsumexp(terms))


def scenario_size_campi(n: int, eps: float, delta: float) -> int:
    """Closed-form upper bound ``(2/e) ln(1/d) + 2n + (2n/e) ln(2/e)``, rounded up."""
    _check_eps_delta(eps, delta)
    if n < 0:
        raise ValueError("n must be >= 0")
    val = 2.0 / eps * math.log(1.0 / delta) + 2.0 * n + 2.0 * n / eps * math.log(2.0 / eps)
    return int(math.ceil(val))


def scenario_size_exact(n: int, eps: float, delta: float) -> int:
    """Smallest ``N`` whose binomial tail of order ``n`` at ``eps`` is at most ``delta``.

    The tail is nonincreasing in ``N`` once ``N > n``, so the search brackets
    with the closed-form bound and bisects.
    """
    _check_eps_delta(eps, delta)
    if n < 0:
        raise ValueError("n must be >= 0")
    log_delta = math.log(delta)

    def ok(N):
        # for N <= n the tail is the full binomial sum, i.e. 1
        return N > n and log_binomial_tail(N, n, eps) <= log_delta + 1e-12

    lo = n  # tail(n) = 1 > delta
    hi = max(scenario_size_campi(n, eps, delta), n + 1)
    while not ok(hi):
        lo, hi = hi, 2 * hi
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def ball_lower_bound_g(r: float, d: int, box_side_lengths) -> float:
    """Worst-case (corner) mass of a radius-``r`` ball under uniform sampling.

    The norm is ``||x - y||_2 + ||a - b||_2``; the lower bound uses the
    corner orthant of the inscribed l1 ball, of volume ``r^d / d!``.
    """
    if r <= 0:
        raise ValueError("r must be positive")
    sides = np.broadcast_to(np.asarray(box_side_lengths, dtype=float), (d,))
    if r >= float(np.sum(sides)):
        return 1.0
    vol = float(np.prod(sides))
    return min(1.0, r ** d / math.factorial(d) / vol)


def ball_radius_for_mass(p: float, d: int, box_side_lengths) -> float:
    """Inverse of :func:`ball_lower_bound_g` on its strictly increasing branch."""
    sides = np.broadcast_to(np.asarray(box_side_lengths, dtype=float), (d,))
    return float((p * math.factorial(d) * np.prod(sides)) ** (1.0 / d))


def constraint_lipschitz(inputs: CertificateInputs) -> float:
    """``theta sqrt(n_c) L_c + theta sqrt(n_u) (L_u L_P + L_u)``."""
    t = inputs.theta
    return t * math.sqrt(inputs.n_c) * inputs.L_c + t * math.sqrt(inputs.n_u) * (inputs.L_u * inputs.L_P + inputs.L_u)


def _box_sides(inputs: CertificateInputs):
    return [2.0 * inputs.box_side] * inputs.d


def scenario_mass(inputs: CertificateInputs) -> float:
    """``g(eps / L_Lambda)`` for a uniform sampler on ``[-L, L]^d``."""
    return ball_lower_bound_g(inputs.epsilon / constraint_lipschitz(inputs), inputs.d, _box_sides(inputs))


def scenario_size_known_model(inputs: CertificateInputs, exact: bool = True) -> int:
    g = scenario_mass(inputs)
    if g >= 1 - 1e-12:
        raise ValueError("g(eps / L_Lambda) is 1: the ball covers the whole box")
    n = inputs.n_c + inputs.n_u + 1
    return scenario_size_exact(n, g, inputs.delta) if exact else scenario_size_campi(n, g, inputs.delta)


def horizon_bound(gamma: float, eps: float) -> int:
    return int(math.ceil(math.log(2.0 / eps) / (1.0 - gamma)))


def initial_pool_bound(K_u_inf, theta, n_u, delta, eps) -> int:
    return int(math.ceil(8 * K_u_inf ** 2 * theta ** 2 * n_u * math.log(8 * n_u / delta) / eps ** 2))


def trajectory_count_bound(K_c_inf, theta, n_c, delta, eps, gamma) -> int:
    return int(math.ceil(8 * K_c_inf ** 2 * theta ** 2 * n_c * math.log(8 * n_c / delta)
                         / ((1 - gamma) ** 2 * eps ** 2)))


def next_state_bound(C, n_u, theta, N, gamma, eps) -> int:
    return int(math.ceil(8 * C * n_u * theta ** 2 * math.log(4 * n_u * N / gamma) / eps ** 2))


def sample_sizes_sampled_model(inputs: CertificateInputs) -> dict:
    """Sample sizes ``N, m, n, k, H`` of the sample-based guarantee."""
    g = scenario_mass(inputs)
    if g >= 1 - 1e-12:
        raise ValueError("g(eps / L_Lambda) is 1: the ball covers the whole box")
    N = scenario_size_exact(inputs.n_c + inputs.n_u + 1, g, inputs.delta / 2)
    eps, delta = inputs.epsilon, inputs.delta
    return {
        "N": N,
        "m": trajectory_count_bound(inputs.K_c_inf, inputs.theta, inputs.n_c, delta, eps, inputs.gamma),
        "n": initial_pool_bound(inputs.K_u_inf, inputs.theta, inputs.n_u, delta, eps),
        "k": next_state_bound(inputs.k_constant, inputs.n_u, inputs.theta, N, inputs.gamma, eps),
        "H": horizon_bound(inputs.gamma, eps),
    }


def theta_thresholds(gamma: float, d: int, leb: float) -> dict:
    """The three regularization thresholds appearing in the guarantees."""
    return {
        "min1d": 1.0 / ((1 - gamma) * min(1, d)),
        "leb": 1.0 / ((1 - gamma) * leb),
        "dim": 1.0 / ((1 - gamma) * d),
    }


def eps_approx_bound(inputs: CertificateInputs, projection_residuals) -> float:
    """Approximation-error bound for given cost / value projection residuals."""
    res_c, res_u = projection_residuals
    if res_c < 0 or res_u < 0:
        raise ValueError("projection residuals must be nonnegative")
    g, t, d = inputs.gamma, inputs.theta, inputs.d
    thr = 1.0 / ((1 - g) * min(1, d))
    if t <= thr:
        raise ValueError(f"theta={t} must exceed 1/((1-gamma) min(1,d)) = {thr}")
    D = approx_dual_bound(inputs)
    return ((2 - g) / (1 - g) + D * (2 + g) * max(1.0, inputs.L_P, d)) * (res_c + res_u)


def approx_dual_bound(inputs: CertificateInputs) -> float:
    g, t, d = inputs.gamma, inputs.theta, inputs.d
    return 2 * t * (inputs.K_c_inf + inputs.K_u_inf) / ((1 - g) ** 2 * min(1, d) * t + g - 1)


def lqg_constants(A, B, Q, R, mu, sigma, L) -> dict:
    """Kernel and cost Lipschitz constants of the truncated LQG model.

    ``max{A, B}`` is taken over magnitudes.
    """
    if sigma <= 0 or L <= 0:
        raise ValueError("sigma and L must be positive")
    mass = ndtr((L - mu) / sigma) - ndtr((-L - mu) / sigma)
    L_P = 2 * L * max(abs(A), abs(B)) / (sigma ** 2 * math.sqrt(2 * math.pi) * mass)
    L_c = max(Q, R) * 2 * L
    return {"L_P": float(L_P), "L_c": float(L_c)}


def certificate_table(inputs: CertificateInputs, leb: float) -> dict:
    """Every constant and sample size for one configuration, as a flat dict."""
    out = dict(inputs.as_dict())
    out["L_Lambda"] = constraint_lipschitz(inputs)
    out["g"] = scenario_mass(inputs)
    n = inputs.n_c + inputs.n_u + 1
    out["N_exact"] = scenario_size_known_model(inputs, exact=True)
    out["N_campi"] = scenario_size_known_model(inputs, exact=False)
    sampled = sample_sizes_sampled_model(inputs)
    out.update({f"sampled_{k}": v for k, v in sampled.items()})
    for key, val in theta_thresholds(inputs.gamma, inputs.d, leb).items():
        out[f"theta_threshold_{key}"] = val
    thr = 1.0 / ((1 - inputs.gamma) * min(1, inputs.d))
    out["D_gamma_theta"] = approx_dual_bound(inputs) if inputs.theta > thr else float("nan")
    out["scenario_dimension"] = n
    return out
