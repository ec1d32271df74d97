"""Carrying abilities across seasons.

Between seasons every indexed player's abilities shrink toward the population
mean and pick up fresh noise::

    alpha' = p * alpha + (1 - p) * mu_alpha + s_alpha * eps

so a belief N(m, S) maps to N(p m + (1 - p) mu, p^2 S + diag(s^2)).  Players
first seen in a season join with the population prior.  Players missing for a
season stay in the belief and are transitioned unobserved.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize
from scipy.special import expit, logit

from ._optim import ConvergenceError, covariance_from_hessian, initial_simplex, numerical_hessian
from .gauss import (
    GaussianBelief,
    HyperFit,
    _prior_vectors,
    empty_belief,
    fit_hyperparameters,
    update_with_loglik,
)
from .observations import ObservationSet
from .params import HyperParams, TransitionParams

logger = logging.getLogger(__name__)

LOGIT_CAP = 12.0


class SeasonError(RuntimeError):
    """An engine failure while processing one season of a chain."""

    def __init__(self, season: str, cause: Exception):
        super().__init__(f"season {season}: {cause}")
        self.season = season
        self.cause = cause


def apply_transition(belief: GaussianBelief, tp: TransitionParams, hyper: HyperParams) -> GaussianBelief:
    mu, _ = _prior_vectors(len(belief.players), hyper)
    s2 = np.tile([tp.s_alpha**2, tp.s_beta**2], len(belief.players))
    mean = tp.p * belief.mean + (1.0 - tp.p) * mu
    cov = tp.p**2 * belief.cov
    cov[np.diag_indices_from(cov)] += s2
    return GaussianBelief(belief.players, mean, cov)


def inject_players(belief: GaussianBelief, players: Sequence[str], hyper: HyperParams) -> GaussianBelief:
    """Append independent population-prior coordinates for new players."""
    players = tuple(players)
    clash = set(players) & set(belief.players)
    if clash or len(set(players)) != len(players):
        raise ValueError(f"players already indexed or repeated: {sorted(clash) or list(players)}")
    if not players:
        return belief
    mu, var = _prior_vectors(len(players), hyper)
    n = belief.dim
    cov = np.zeros((n + len(var), n + len(var)))
    cov[:n, :n] = belief.cov
    cov[n:, n:] = np.diag(var)
    return GaussianBelief(belief.players + players, np.concatenate([belief.mean, mu]), cov)


@dataclass
class SeasonChainResult:
    labels: List[str]
    starts: List[GaussianBelief]
    ends: List[GaussianBelief]
    rookies: List[Tuple[str, ...]]
    # indexed at the start of the season but without a single observation row
    absent: List[Tuple[str, ...]]
    loglik: List[float]

    @property
    def final(self) -> GaussianBelief:
        return self.ends[-1]

    @property
    def total_loglik(self) -> float:
        return float(sum(self.loglik))

    def season(self, label: str) -> Tuple[GaussianBelief, GaussianBelief]:
        i = self.labels.index(str(label))
        return self.starts[i], self.ends[i]


def _season_label(obs: ObservationSet, i: int) -> str:
    labels = {str(s) for s in obs.season}
    return labels.pop() if len(labels) == 1 else str(i + 1)


def _next_prior(
    previous: Optional[GaussianBelief], obs: ObservationSet, hyper: HyperParams, tp: TransitionParams
) -> Tuple[GaussianBelief, Tuple[str, ...]]:
    if previous is None:
        base = empty_belief()
    else:
        base = apply_transition(previous, tp, hyper)
    known = set(base.players)
    rookies = tuple(sorted(p for p in obs.players if p not in known))
    return inject_players(base, rookies, hyper), rookies


def chain_fit(
    seasons: Sequence[ObservationSet],
    hyper: HyperParams,
    tp: TransitionParams,
    *,
    labels: Optional[Sequence[str]] = None,
    initial: Optional[GaussianBelief] = None,
) -> SeasonChainResult:
    """Season-by-season conjugate updates linked by the transition.

    ``initial`` is an end-of-season belief preceding ``seasons[0]``; chaining
    two lists this way reproduces the chain over their concatenation.
    """
    hyper.require_positive()
    labels = [str(l) for l in labels] if labels is not None else [_season_label(o, i) for i, o in enumerate(seasons)]
    if len(labels) != len(seasons):
        raise ValueError("one label per season is required")
    result = SeasonChainResult([], [], [], [], [], [])
    previous = initial
    for label, obs in zip(labels, seasons):
        prior, rookies = _next_prior(previous, obs, hyper, tp)
        try:
            post, ll = update_with_loglik(prior, obs, hyper)
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise SeasonError(label, exc) from exc
        seen = set(obs.players)
        result.labels.append(label)
        result.starts.append(prior)
        result.ends.append(post)
        result.rookies.append(rookies)
        result.absent.append(tuple(p for p in prior.players if p not in seen))
        result.loglik.append(ll)
        previous = post
    return result


# ------------------------------------------------------------------ transition fitting


@dataclass
class TransitionFit:
    params: TransitionParams
    stderr: Dict[str, float]
    loglik: float
    n_evals: int
    converged: bool
    message: str = ""
    # covariance over (logit p, log s_alpha, log s_beta)
    covariance: np.ndarray = field(repr=False, default=None)


def _to_params(x: np.ndarray) -> TransitionParams:
    return TransitionParams(float(expit(x[0])), float(math.exp(x[1])), float(math.exp(x[2])))


def _from_params(tp: TransitionParams) -> np.ndarray:
    p = min(max(tp.p, expit(-LOGIT_CAP)), expit(LOGIT_CAP))
    return np.array([logit(p), math.log(max(tp.s_alpha, 1e-6)), math.log(max(tp.s_beta, 1e-6))])


def chain_loglik(
    seasons: Sequence[ObservationSet],
    hyper: HyperParams,
    tp: TransitionParams,
    first: Optional[Tuple[GaussianBelief, float]] = None,
) -> float:
    """Predictive log-likelihood of the whole chain; ``first`` caches season one's (posterior, loglik)."""
    if first is None:
        prior, _ = _next_prior(None, seasons[0], hyper, tp)
        first = update_with_loglik(prior, seasons[0], hyper)
    belief, total = first
    last = len(seasons) - 1
    for t in range(1, len(seasons)):
        prior, _ = _next_prior(belief, seasons[t], hyper, tp)
        belief, ll = update_with_loglik(prior, seasons[t], hyper, want_cov=t < last)
        total += ll
    return float(total)


def fit_transition_params(
    seasons: Sequence[ObservationSet],
    hyper: HyperParams,
    init: TransitionParams = TransitionParams(0.8, 1.0, 1.0),
    *,
    ftol: float = 1e-6,
    xtol: float = 1e-4,
    max_iter: int = 1000,
) -> TransitionFit:
    """Maximum-likelihood (p, s_alpha, s_beta) given fixed hyperparameters.

    Optimised by Nelder-Mead on (logit p, log s_alpha, log s_beta).  A run that
    stops before meeting the tolerances returns its best point with
    ``converged=False`` rather than raising.
    """
    if len(seasons) < 2:
        raise ValueError("fitting the transition needs at least two seasons")
    hyper.require_positive()
    prior, _ = _next_prior(None, seasons[0], hyper, init)
    first = update_with_loglik(prior, seasons[0], hyper)
    evals = 0

    def objective(x) -> float:
        nonlocal evals
        evals += 1
        if abs(x[0]) > LOGIT_CAP or np.any(np.abs(x[1:]) > 20):
            return np.inf
        try:
            return -chain_loglik(seasons, hyper, _to_params(x), first)
        except (ValueError, np.linalg.LinAlgError):
            return np.inf

    x0 = _from_params(init)
    res = optimize.minimize(
        objective, x0, method="Nelder-Mead",
        options={"xatol": xtol, "fatol": ftol, "maxiter": max_iter, "maxfev": 4 * max_iter,
                 "initial_simplex": initial_simplex(x0)},
    )
    best = _to_params(res.x)
    if not res.success:
        logger.warning("transition fit did not converge: %s", res.message)
        return TransitionFit(best, {}, float(-res.fun), evals, False, str(res.message))

    H = numerical_hessian(objective, res.x, [1e-3, 1e-3, 1e-3])
    cov = covariance_from_hessian(H)
    se = np.sqrt(np.diagonal(cov))
    stderr = {
        "p": best.p * (1.0 - best.p) * se[0],
        "s_alpha": best.s_alpha * se[1],
        "s_beta": best.s_beta * se[2],
    }
    return TransitionFit(best, {k: float(v) for k, v in stderr.items()}, float(-res.fun), evals, True,
                         str(res.message), cov)


@dataclass
class ChainModelFit:
    hyper: HyperParams
    transition: TransitionParams
    loglik: float
    converged: bool
    order: str
    hyper_fit: Optional[HyperFit] = None
    transition_fit: Optional[TransitionFit] = None


def fit_chain_model(
    seasons: Sequence[ObservationSet],
    init_hyper: HyperParams,
    init_tp: TransitionParams,
    *,
    order: str = "sequential",
    max_iter: int = 4000,
) -> ChainModelFit:
    """Hyperparameters and transition together.

    ``sequential`` fits the population prior on every season independently and
    then the transition with those values held fixed.  ``joint`` maximises the
    chain likelihood over all eight free parameters at once (``mu_alpha + mu_beta``
    held at its initial value, as in the single-stage fit).
    """
    if order == "sequential":
        hfit = fit_hyperparameters(seasons, init_hyper)
        tfit = fit_transition_params(seasons, hfit.params, init_tp)
        return ChainModelFit(hfit.params, tfit.params, tfit.loglik, hfit.converged and tfit.converged,
                             order, hfit, tfit)
    if order != "joint":
        raise ValueError(f"order must be 'sequential' or 'joint', got {order!r}")
    level = init_hyper.mu_alpha + init_hyper.mu_beta

    def unpack(x) -> Tuple[HyperParams, TransitionParams]:
        ma, g, lsa, lsb, ls = x[:5]
        h = HyperParams(ma, math.exp(lsa), level - ma, math.exp(lsb), g, math.exp(ls))
        return h, _to_params(x[5:])

    def objective(x) -> float:
        if abs(x[5]) > LOGIT_CAP or np.any(np.abs(x[[2, 3, 4, 6, 7]]) > 20):
            return np.inf
        h, tp = unpack(x)
        try:
            return -chain_loglik(seasons, h, tp)
        except (ValueError, np.linalg.LinAlgError):
            return np.inf

    h0 = init_hyper
    x0 = np.concatenate([
        [h0.mu_alpha, h0.gamma, math.log(h0.sigma_alpha), math.log(h0.sigma_beta), math.log(h0.sigma)],
        _from_params(init_tp),
    ])
    res = optimize.minimize(objective, x0, method="Nelder-Mead",
                            options={"xatol": 1e-4, "fatol": 1e-6, "maxiter": max_iter, "maxfev": 4 * max_iter,
                                     "adaptive": True, "initial_simplex": initial_simplex(x0, [0.5, 0.5] + [0.2] * 6)})
    h, tp = unpack(res.x)
    if not res.success:
        raise ConvergenceError(f"joint fit did not converge: {res.message}", (h, tp), -res.fun)
    return ChainModelFit(h, tp, float(-res.fun), True, order)


# ------------------------------------------------------------------- isolated seasons


def reset_player(belief: GaussianBelief, player: str, hyper: HyperParams) -> GaussianBelief:
    """Replace one player's coordinates by the population prior, independent of everything else."""
    c = belief.coord(player)
    mean = belief.mean.copy()
    cov = belief.cov.copy()
    mean[c : c + 2] = [hyper.mu_alpha, hyper.mu_beta]
    cov[c : c + 2, :] = 0.0
    cov[:, c : c + 2] = 0.0
    cov[c, c] = hyper.sigma_alpha**2
    cov[c + 1, c + 1] = hyper.sigma_beta**2
    return GaussianBelief(belief.players, mean, cov)


def isolated_season_fit(
    seasons: Sequence[ObservationSet],
    focal: str,
    hyper: HyperParams,
    tp: TransitionParams,
    chain: Optional[SeasonChainResult] = None,
) -> GaussianBelief:
    """Final-season posterior with ``focal``'s prior reset to the population prior.

    Every other player keeps the prior carried forward from earlier seasons, so
    the focal rating reflects only the last season while team-mates and
    opponents are still judged on all data.  Pass ``chain`` to reuse a fit.
    """
    final = seasons[-1]
    if focal not in set(final.players):
        raise ValueError(f"player {focal!r} does not appear in the final season")
    if chain is None:
        chain = chain_fit(seasons, hyper, tp)
    prior = reset_player(chain.starts[-1], focal, hyper)
    try:
        post, _ = update_with_loglik(prior, final, hyper)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise SeasonError(chain.labels[-1], exc) from exc
    return post


@dataclass
class IsolatedResult:
    """Per-player (alpha, beta) marginals under the isolated-season model."""

    players: Tuple[str, ...]
    mean: np.ndarray  # (n, 2)
    cov: np.ndarray  # (n, 2, 2)
    rookies: Tuple[str, ...]

    def marginal(self, player: str) -> Tuple[np.ndarray, np.ndarray]:
        i = self.players.index(player)
        return self.mean[i].copy(), self.cov[i].copy()


def isolated_all(
    seasons: Sequence[ObservationSet],
    hyper: HyperParams,
    tp: TransitionParams,
    chain: Optional[SeasonChainResult] = None,
) -> IsolatedResult:
    """Run the isolated fit for every final-season player.

    Rookies already start from the population prior, so their marginals come
    straight from the chain's final posterior.
    """
    if chain is None:
        chain = chain_fit(seasons, hyper, tp)
    players = tuple(sorted(seasons[-1].players))
    rookies = set(chain.rookies[-1])
    mean = np.empty((len(players), 2))
    cov = np.empty((len(players), 2, 2))
    for i, player in enumerate(players):
        if player in rookies:
            m, c = chain.final.marginal(player)
        else:
            m, c = isolated_season_fit(seasons, player, hyper, tp, chain).marginal(player)
        mean[i], cov[i] = m, c
    return IsolatedResult(players, mean, cov, tuple(sorted(rookies)))


def single_season_fit(final: ObservationSet, hyper: HyperParams) -> GaussianBelief:
    """The final season alone, every player on the population prior."""
    return chain_fit([final], hyper, TransitionParams(1.0, 0.0, 0.0)).final
