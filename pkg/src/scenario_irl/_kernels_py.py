"""Pure numpy versions of the compiled kernels."""

import numpy as np


def bellman_backup(cost, ev, row_index, gamma):
    q = cost + gamma * ev[row_index]
    pol = np.argmin(q, axis=1)  # first minimizer, i.e. lowest action index
    return q[np.arange(q.shape[0]), pol], pol.astype(np.int64)


def sup_diff(x, y):
    return float(np.max(np.abs(x - y))) if len(x) else 0.0


def lqg_residuals(pts, cost_exp, alpha, value_exp, beta, A, B, mu, sigma, L, gamma):
    from scipy.special import ndtr

    x, a = pts[:, 0], pts[:, 1]
    c = np.zeros(len(x))
    for (ex, ea), w in zip(cost_exp, alpha):
        c += w * x ** ex * a ** ea
    m = np.clip(A * x + B * a, -L, L)
    lo = (np.maximum(-L, -L - m) - mu) / sigma
    hi = (np.minimum(L, L - m) - mu) / sigma
    upper = lo > 0
    z = np.where(upper, ndtr(-lo) - ndtr(-hi), ndtr(hi) - ndtr(lo))
    pa = np.exp(-0.5 * lo * lo) / np.sqrt(2 * np.pi)
    pb = np.exp(-0.5 * hi * hi) / np.sqrt(2 * np.pi)
    ez = (pa - pb) / z
    ez2 = 1.0 + (lo * pa - hi * pb) / z
    cc = m + mu
    moments = {0: np.ones_like(x), 1: cc + sigma * ez, 2: cc * cc + 2 * cc * sigma * ez + sigma ** 2 * ez2}
    t = np.zeros(len(x))
    for k, w in zip(value_exp, beta):
        t += w * (x ** k - gamma * moments[int(k)])
    return c - t
