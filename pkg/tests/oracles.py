"""Independent closed-form references used by the tests."""

import numpy as np


def kf_step(m, P, a, h, q, r, y):
    """One textbook Kalman predict + update."""
    mp = a @ m
    pp = a @ P @ a.T + q
    s = h @ pp @ h.T + r
    k = pp @ h.T @ np.linalg.inv(s)
    mu = mp + k @ (y - h @ mp)
    pu = pp - k @ s @ k.T
    return mp, pp, mu, 0.5 * (pu + pu.T)


def random_linear_system(rng, n, n_y):
    a = rng.standard_normal((n, n))
    a *= 0.95 / max(1e-9, np.max(np.abs(np.linalg.eigvals(a))))
    h = rng.standard_normal((n_y, n))
    bq = rng.standard_normal((n, n))
    br = rng.standard_normal((n_y, n_y))
    q = 0.1 * bq @ bq.T + 0.01 * np.eye(n)
    r = 0.1 * br @ br.T + 0.05 * np.eye(n_y)
    return a, h, q, r


def simulate_linear(rng, a, h, q, r, x0, steps):
    n, n_y = a.shape[0], h.shape[0]
    lq, lr = np.linalg.cholesky(q), np.linalg.cholesky(r)
    xs, ys = [np.asarray(x0, float)], [np.zeros(n_y)]
    for _ in range(steps):
        xs.append(a @ xs[-1] + lq @ rng.standard_normal(n))
        ys.append(h @ xs[-1] + lr @ rng.standard_normal(n_y))
    return np.array(xs), np.array(ys)
