"""Independent reference computations used to check the engine.

Nothing here imports the engine's linear algebra: designs are built densely
row by row, posteriors come from the information-form normal equations and
likelihoods from scipy's multivariate normal density.
"""

import numpy as np
from scipy import integrate, stats

from courtrate.observations import ObservationRow, ObservationSet


def dense_design(obs: ObservationSet, players):
    """Rows x (2 * players) with +1 on attacker alphas and -1 on defender betas."""
    col = {p: 2 * i for i, p in enumerate(players)}
    X = np.zeros((len(obs), 2 * len(players)))
    for k, row in enumerate(obs.rows()):
        for p in row.attackers:
            X[k, col[p]] += 1.0
        for p in row.defenders:
            X[k, col[p] + 1] -= 1.0
    offset = np.array([1.0 if r.home_attacking else -1.0 for r in obs.rows()])
    return X, offset


def normal_equations_posterior(m0, P0, X, y, offset, w, gamma, sigma):
    """Posterior mean and covariance via the precision (information) form."""
    prec0 = np.linalg.inv(P0)
    W = np.diag(w) / sigma**2
    prec = prec0 + X.T @ W @ X
    cov = np.linalg.inv(prec)
    mean = np.linalg.solve(prec, prec0 @ m0 + X.T @ W @ (y - gamma * offset))
    return mean, (cov + cov.T) / 2


def dense_loglik(m0, P0, X, y, offset, w, gamma, sigma):
    """log N(y; X m0 + gamma*offset, X P0 X' + sigma^2 diag(1/w))."""
    cov = X @ P0 @ X.T + sigma**2 * np.diag(1.0 / np.asarray(w))
    return float(stats.multivariate_normal(X @ m0 + gamma * offset, cov).logpdf(y))


def quad_prob_best(means, sds):
    """P(player i has the largest value) for independent normals, by 1-D quadrature."""
    means, sds = np.asarray(means, float), np.asarray(sds, float)
    out = []
    for i in range(len(means)):
        others = [j for j in range(len(means)) if j != i]

        def integrand(x):
            dens = stats.norm.pdf(x, means[i], sds[i])
            return dens * np.prod([stats.norm.cdf(x, means[j], sds[j]) for j in others])

        lo = means.min() - 12 * sds.max()
        hi = means.max() + 12 * sds.max()
        val, _ = integrate.quad(integrand, lo, hi, epsabs=1e-12, epsrel=1e-10, limit=200,
                                points=list(means))
        out.append(val)
    return np.array(out)


def ols_normal_equations(X, y, se):
    """WLS coefficients (intercept first) and covariance from (A'WA)^-1."""
    A = np.column_stack([np.ones(len(y)), X])
    W = np.diag(1.0 / np.asarray(se) ** 2)
    cov = np.linalg.inv(A.T @ W @ A)
    return cov @ A.T @ W @ y, cov


def random_toy(rng, n_players=None, n_rows=None, side=None):
    """Random observation set with 1..4 players per side (player ids sorted)."""
    n_players = n_players or int(rng.integers(2, 9))
    n_rows = n_rows or int(rng.integers(1, 61))
    players = [f"Q{i:02d}" for i in range(n_players)]
    rows = []
    for _ in range(n_rows):
        k = side or int(rng.integers(1, min(4, n_players // 2) + 1))
        pick = rng.permutation(n_players)[: 2 * k]
        w = float(rng.integers(1, 12))
        rows.append(ObservationRow(
            response=float(rng.uniform(0, 250)),
            weight=w,
            attackers=tuple(players[i] for i in pick[:k]),
            defenders=tuple(players[i] for i in pick[k:]),
            home_attacking=bool(rng.integers(2)),
        ))
    return ObservationSet.from_rows(rows, players)
