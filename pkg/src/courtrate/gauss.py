"""Exact conjugate Gaussian machinery for player abilities.

Coordinates are interleaved: player ``i`` of a belief owns ``alpha`` at ``2*i``
and ``beta`` at ``2*i + 1``.  For noise covariance ``D = sigma**2 / weight`` and
any square-root factor ``P = L L'`` of the prior covariance, conditioning uses

    M = I + L' G L,    G = X' D^-1 X,
    posterior cov = L M^-1 L',    log|X P X' + D| = log|D| + log|M|,

which needs no inverse of ``P`` and stays valid when ``P`` is singular.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg, optimize

from ._optim import ConvergenceError, covariance_from_hessian, initial_simplex, numerical_hessian
from .observations import ObservationSet
from .params import HyperParams

logger = logging.getLogger(__name__)

BELIEF_FORMAT_VERSION = "courtrate-belief/1"
LOG_2PI = math.log(2.0 * math.pi)


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True, eq=False)
class GaussianBelief:
    """Joint normal over (alpha_i, beta_i) for every indexed player."""

    players: Tuple[str, ...]
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        players = tuple(self.players)
        if len(set(players)) != len(players):
            raise ValueError("duplicate player ids in belief")
        mean = np.array(self.mean, dtype=float)
        cov = np.array(self.cov, dtype=float)
        dim = 2 * len(players)
        if mean.shape != (dim,) or cov.shape != (dim, dim):
            raise ValueError(f"belief over {len(players)} players needs a {dim}-vector and {dim}x{dim} matrix")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-9 * max(1.0, float(np.abs(cov).max(initial=0.0)))):
            raise ValueError("belief covariance is not symmetric")
        mean.flags.writeable = False
        cov.flags.writeable = False
        object.__setattr__(self, "players", players)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return 2 * len(self.players)

    @property
    def index(self) -> Dict[str, int]:
        """Player id -> alpha coordinate."""
        return {p: 2 * i for i, p in enumerate(self.players)}

    def __contains__(self, player: str) -> bool:
        return player in set(self.players)

    def coord(self, player: str) -> int:
        try:
            return 2 * self.players.index(player)
        except ValueError:
            raise KeyError(f"player {player!r} not in belief") from None

    def marginal(self, player: str) -> Tuple[np.ndarray, np.ndarray]:
        """(mean, 2x2 covariance) of (alpha, beta) for one player."""
        c = self.coord(player)
        return self.mean[c : c + 2].copy(), self.cov[c : c + 2, c : c + 2].copy()

    def combined(self, players: Optional[Sequence[str]] = None) -> Tuple[np.ndarray, np.ndarray]:
        """Mean and covariance of alpha_i + beta_i over ``players`` (default: all)."""
        players = self.players if players is None else tuple(players)
        idx = np.array([self.coord(p) for p in players], dtype=np.int64)
        a, b = idx, idx + 1
        mean = self.mean[a] + self.mean[b]
        cov = (
            self.cov[np.ix_(a, a)] + self.cov[np.ix_(b, b)] + self.cov[np.ix_(a, b)] + self.cov[np.ix_(b, a)]
        )
        return mean, cov

    def subset(self, players: Sequence[str]) -> "GaussianBelief":
        """Marginal belief over ``players`` (in the given order)."""
        idx = np.array([[self.coord(p), self.coord(p) + 1] for p in players], dtype=np.int64).reshape(-1)
        return GaussianBelief(tuple(players), self.mean[idx], self.cov[np.ix_(idx, idx)])

    def without(self, players: Iterable[str]) -> "GaussianBelief":
        drop = set(players)
        return self.subset([p for p in self.players if p not in drop])

    def min_eigenvalue_ratio(self) -> float:
        if self.dim == 0:
            return 0.0
        eig = np.linalg.eigvalsh(self.cov)
        top = max(abs(eig[-1]), np.finfo(float).tiny)
        return float(eig[0] / top)

    def is_psd(self, tol: float = 1e-8) -> bool:
        return self.dim == 0 or self.min_eigenvalue_ratio() >= -tol


def empty_belief() -> GaussianBelief:
    return GaussianBelief((), np.zeros(0), np.zeros((0, 0)))


def _prior_vectors(n_players: int, hyper: HyperParams) -> Tuple[np.ndarray, np.ndarray]:
    mean = np.tile([hyper.mu_alpha, hyper.mu_beta], n_players).astype(float)
    var = np.tile([hyper.sigma_alpha**2, hyper.sigma_beta**2], n_players).astype(float)
    return mean, var


def prior_belief(players: Sequence[str], hyper: HyperParams) -> GaussianBelief:
    """Independent population priors for every player."""
    players = tuple(players)
    if not players:
        raise ValueError("prior_belief needs at least one player")
    if len(set(players)) != len(players):
        raise ValueError("duplicate player ids")
    mean, var = _prior_vectors(len(players), hyper)
    return GaussianBelief(players, mean, np.diag(var))


# ---------------------------------------------------------------------- factorisation


def sqrt_factor(P: np.ndarray, what: str = "covariance") -> np.ndarray:
    """A matrix ``L`` with ``L @ L.T == P``.

    Cholesky first; on failure retries once with a ``1e-10 * trace / dim``
    diagonal jitter, then falls back to a clipped eigendecomposition for PSD
    but singular matrices.  Clearly indefinite input raises.
    """
    n = P.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    diag = np.diagonal(P)
    if np.count_nonzero(P - np.diag(diag)) == 0 and np.all(diag >= 0):
        return np.diag(np.sqrt(diag))
    try:
        return np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        pass
    jitter = 1e-10 * max(float(np.trace(P)), 0.0) / n
    if jitter > 0:
        try:
            L = np.linalg.cholesky(P + jitter * np.eye(n))
            logger.warning("%s needed diagonal jitter %.3g before factorisation", what, jitter)
            return L
        except np.linalg.LinAlgError:
            pass
    eig, vec = np.linalg.eigh(P)
    top = max(abs(eig[-1]), np.finfo(float).tiny)
    if eig[0] < -1e-8 * top:
        raise NotPositiveDefiniteError(f"{what} is not positive semi-definite (min eigenvalue {eig[0]:.3g})")
    logger.warning("%s is singular; using an eigendecomposition square root", what)
    return vec * np.sqrt(np.clip(eig, 0.0, None))


# ----------------------------------------------------------------------- conditioning


@dataclass
class Conditioned:
    mean: np.ndarray
    cov: Optional[np.ndarray]
    loglik: float


def condition(
    mean: np.ndarray,
    cov: np.ndarray,
    gram: np.ndarray,
    xwr: np.ndarray,
    rwr: float,
    n_rows: int,
    sum_log_weight: float,
    sigma2: float,
    want_cov: bool = True,
    factor: Optional[np.ndarray] = None,
) -> Conditioned:
    """Condition ``N(mean, cov)`` on rows ``r = X theta + noise`` with noise variance ``sigma2 / w``.

    ``gram = X'WX``, ``xwr = X'W(y - X mean - offset)`` and ``rwr`` is the
    matching weighted residual sum of squares, all unscaled by ``sigma2``.
    """
    L = sqrt_factor(cov, "prior covariance") if factor is None else factor
    n = len(mean)
    if L.shape == (n, n) and np.count_nonzero(L - np.diag(np.diagonal(L))) == 0:
        d = np.diagonal(L)
        LtGL = (d[:, None] * gram) * d[None, :]
    else:
        LtGL = L.T @ gram @ L
    M = LtGL / sigma2
    M[np.diag_indices_from(M)] += 1.0
    try:
        C = np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("implied response covariance is singular") from exc
    z = linalg.solve_triangular(C, L.T @ xwr / sigma2, lower=True, check_finite=False)
    logdet_noise = n_rows * math.log(sigma2) - sum_log_weight
    logdet_M = 2.0 * float(np.sum(np.log(np.diagonal(C))))
    quad = rwr / sigma2 - float(z @ z)
    loglik = -0.5 * (n_rows * LOG_2PI + logdet_noise + logdet_M + quad)
    if not math.isfinite(loglik):
        raise NotPositiveDefiniteError("marginal likelihood is not finite")
    post_mean = mean + L @ linalg.solve_triangular(C.T, z, lower=False, check_finite=False)
    post_cov = None
    if want_cov:
        K = linalg.solve_triangular(C, L.T, lower=True, check_finite=False)
        post_cov = K.T @ K
    return Conditioned(post_mean, post_cov, loglik)


def _stats(obs: ObservationSet, belief: GaussianBelief, mean: np.ndarray, gamma: float):
    coords = belief.index
    X = obs.design(coords, belief.dim)
    G = obs.gram(coords, belief.dim)
    r = obs.response - X @ mean - gamma * obs.offset_sign
    wr = obs.weight * r
    return G, X.T @ wr, float(r @ wr)


def update_with_loglik(
    prior: GaussianBelief, obs: ObservationSet, hyper: HyperParams, want_cov: bool = True
) -> Tuple[GaussianBelief, float]:
    """Posterior belief and the log marginal likelihood of ``obs`` under ``prior``."""
    hyper.require_positive()
    if len(obs) == 0:
        return prior, 0.0
    G, xwr, rwr = _stats(obs, prior, prior.mean, hyper.gamma)
    res = condition(
        prior.mean, prior.cov, G, xwr, rwr, len(obs), float(np.sum(np.log(obs.weight))),
        hyper.sigma**2, want_cov=want_cov,
    )
    cov = res.cov if want_cov else prior.cov
    return GaussianBelief(prior.players, res.mean, cov), res.loglik


def posterior_update(prior: GaussianBelief, obs: ObservationSet, hyper: HyperParams) -> GaussianBelief:
    """Exact posterior of the abilities given observation rows (gamma and sigma fixed)."""
    return update_with_loglik(prior, obs, hyper)[0]


def log_marginal_likelihood(
    hyper: HyperParams, obs: ObservationSet, prior: Optional[GaussianBelief] = None
) -> float:
    """log N(y; X m0 + gamma h, X P0 X' + sigma^2 W^-1) with the population prior by default."""
    hyper.require_positive()
    if len(obs) == 0:
        return 0.0
    if prior is None:
        prior = prior_belief(obs.players, hyper)
    G, xwr, rwr = _stats(obs, prior, prior.mean, hyper.gamma)
    return condition(
        prior.mean, prior.cov, G, xwr, rwr, len(obs), float(np.sum(np.log(obs.weight))),
        hyper.sigma**2, want_cov=False,
    ).loglik


# -------------------------------------------------------------- hyperparameter fitting


class _SeasonTerms:
    """Sufficient statistics of one observation set for the population-prior likelihood.

    With ``mu_alpha + mu_beta`` held at ``level`` the residual is linear in
    ``(mu_alpha, gamma)``: ``r = V @ (1, -mu_alpha, -gamma)`` with columns
    ``V = [y + level * n_def, n_att + n_def, h]``.
    """

    def __init__(self, obs: ObservationSet, level: float):
        n = len(obs)
        coords = {p: 2 * i for i, p in enumerate(obs.players)}
        X = obs.design(coords, 2 * len(obs.players))
        w = obs.weight
        n_att = np.diff(obs.att_ptr).astype(float)
        n_def = np.diff(obs.def_ptr).astype(float)
        V = np.column_stack([obs.response + level * n_def, n_att + n_def, obs.offset_sign])
        self.n = n
        self.sum_log_weight = float(np.sum(np.log(w)))
        self.G = obs.gram(coords, 2 * len(obs.players))
        self.F = np.asarray(X.T @ (V * w[:, None]))
        self.Q = V.T @ (V * w[:, None])
        self.alpha_mask = np.tile([True, False], len(obs.players))

    def reduce(self, sigma_alpha: float, sigma_beta: float, sigma: float) -> Tuple[float, np.ndarray]:
        """(log-det and constant part, 3x3 quadratic form) at the given scales."""
        s2 = sigma * sigma
        d = np.where(self.alpha_mask, sigma_alpha, sigma_beta)
        M = (d[:, None] * self.G) * d[None, :] / s2
        M[np.diag_indices_from(M)] += 1.0
        C = np.linalg.cholesky(M)
        Z = linalg.solve_triangular(C, d[:, None] * self.F / s2, lower=True, check_finite=False)
        S = self.Q / s2 - Z.T @ Z
        const = self.n * LOG_2PI + self.n * math.log(s2) - self.sum_log_weight
        const += 2.0 * float(np.sum(np.log(np.diagonal(C))))
        return const, S


@dataclass
class HyperFit:
    params: HyperParams
    stderr: Dict[str, float]
    loglik: float
    n_evals: int
    converged: bool
    # covariance over (mu_alpha, gamma, log sigma_alpha, log sigma_beta, log sigma)
    covariance: np.ndarray = field(repr=False, default=None)


FIT_COORDS = ("mu_alpha", "gamma", "log_sigma_alpha", "log_sigma_beta", "log_sigma")


def _profile_means(S: np.ndarray) -> np.ndarray:
    """Minimiser over (mu_alpha, gamma) of (1, -mu, -gamma) S (1, -mu, -gamma)'."""
    Szz = S[1:, 1:]
    try:
        v = -np.linalg.solve(Szz, S[1:, 0])
    except np.linalg.LinAlgError:
        raise ValueError("home advantage is not identifiable (need both home and away rows)") from None
    return -v


def fit_hyperparameters(
    obs_sets: Union[ObservationSet, Sequence[ObservationSet]],
    init: HyperParams,
    *,
    ftol: float = 1e-6,
    xtol: float = 1e-4,
    max_iter: int = 2000,
) -> HyperFit:
    """Maximum-likelihood (mu_alpha, sigma_alpha, mu_beta, sigma_beta, gamma, sigma).

    Each set gets its own independent population prior and the log marginal
    likelihoods are summed.  Only ``mu_alpha - mu_beta`` is identified, so
    ``mu_alpha + mu_beta`` is held at its value in ``init``.  The means and
    gamma are profiled out in closed form; the three scales are optimised on
    the log scale by Nelder-Mead.  Standard errors come from a finite-difference
    Hessian of the full negative log-likelihood.
    """
    if isinstance(obs_sets, ObservationSet):
        obs_sets = [obs_sets]
    sets = [o for o in obs_sets if len(o)]
    if not sets:
        raise ValueError("fit_hyperparameters needs at least one non-empty observation set")
    init.require_positive()
    level = init.mu_alpha + init.mu_beta
    terms = [_SeasonTerms(o, level) for o in sets]
    evals = 0

    def reduced(log_scales):
        nonlocal evals
        evals += 1
        sa, sb, s = np.exp(log_scales)
        const, S = 0.0, np.zeros((3, 3))
        for t in terms:
            c, St = t.reduce(sa, sb, s)
            const += c
            S += St
        return const, S

    def profiled(log_scales) -> float:
        if np.any(np.abs(log_scales) > 50):
            return np.inf
        try:
            const, S = reduced(log_scales)
        except np.linalg.LinAlgError:
            return np.inf
        theta = _profile_means(S)
        u = np.array([1.0, -theta[0], -theta[1]])
        return 0.5 * (const + float(u @ S @ u))

    x0 = np.log([init.sigma_alpha, init.sigma_beta, init.sigma])
    res = optimize.minimize(
        profiled, x0, method="Nelder-Mead",
        options={"xatol": xtol, "fatol": ftol, "maxiter": max_iter, "maxfev": 4 * max_iter,
                 "initial_simplex": initial_simplex(x0)},
    )
    const, S = reduced(res.x)
    mu_alpha, gamma = _profile_means(S)
    sa, sb, s = np.exp(res.x)
    best = HyperParams(float(mu_alpha), float(sa), float(level - mu_alpha), float(sb), float(gamma), float(s))
    if not res.success:
        raise ConvergenceError(f"hyperparameter fit did not converge: {res.message}", best, -res.fun)

    def full(theta) -> float:
        const, S = reduced(theta[2:])
        u = np.array([1.0, -theta[0], -theta[1]])
        return 0.5 * (const + float(u @ S @ u))

    theta_hat = np.array([mu_alpha, gamma, *res.x])
    H = numerical_hessian(full, theta_hat, [1e-2, 1e-2, 1e-3, 1e-3, 1e-3])
    cov = covariance_from_hessian(H)
    se = np.sqrt(np.diagonal(cov))
    stderr = {
        "mu_alpha": se[0],
        "mu_beta": se[0],
        "gamma": se[1],
        "sigma_alpha": sa * se[2],
        "sigma_beta": sb * se[3],
        "sigma": s * se[4],
    }
    return HyperFit(best, {k: float(v) for k, v in stderr.items()}, float(-res.fun), evals, True, cov)


def summed_log_marginal_likelihood(hyper: HyperParams, obs_sets: Sequence[ObservationSet]) -> float:
    return float(sum(log_marginal_likelihood(hyper, o) for o in obs_sets if len(o)))


# ------------------------------------------------------------------------ persistence


def save_belief(belief: GaussianBelief, target: Union[str, Path, BinaryIO]) -> None:
    """Binary dump (numpy .npz) of players, mean and the full covariance; path or binary file."""
    if isinstance(target, (str, Path)):
        with open(target, "wb") as fh:
            return save_belief(belief, fh)
    np.savez(
        target,
        format_version=np.array(BELIEF_FORMAT_VERSION),
        players=np.array(belief.players, dtype=str),
        mean=belief.mean,
        cov=belief.cov,
    )


def load_belief(path: Union[str, Path]) -> GaussianBelief:
    with np.load(Path(path), allow_pickle=False) as data:
        version = str(data["format_version"])
        if version != BELIEF_FORMAT_VERSION:
            raise ValueError(f"unsupported belief format {version!r}")
        return GaussianBelief(tuple(str(p) for p in data["players"]), data["mean"], data["cov"])
