"""Ratings, dominance probabilities, lineup matchups and awards from posterior beliefs."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import IO, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.special import ndtr

from .chain import IsolatedResult, SeasonChainResult
from .gauss import GaussianBelief, sqrt_factor

logger = logging.getLogger(__name__)

KINDS = ("offense", "defense", "combined")
MODEL_TAGS = ("multi", "single", "isolated")
RATINGS_COLUMNS = (
    "player_id", "name",
    "off_mean", "off_se", "off_rank",
    "def_mean", "def_se", "def_rank",
    "comb_mean", "comb_se", "comb_rank",
    "model_tag",
)


def rank_order(players: Sequence[str], values: np.ndarray) -> np.ndarray:
    """Rank 1 for the largest value; equal values ranked by ascending player id."""
    order = sorted(range(len(players)), key=lambda i: (-values[i], players[i]))
    ranks = np.empty(len(players), dtype=np.int64)
    ranks[order] = np.arange(1, len(players) + 1)
    return ranks


@dataclass
class RatingColumn:
    kind: str
    players: Tuple[str, ...]
    mean: np.ndarray  # centred
    se: np.ndarray
    rank: np.ndarray
    centre: float


def _marginal_arrays(belief: GaussianBelief, players: Sequence[str]) -> Tuple[np.ndarray, np.ndarray]:
    mean = np.empty((len(players), 2))
    cov = np.empty((len(players), 2, 2))
    for i, p in enumerate(players):
        mean[i], cov[i] = belief.marginal(p)
    return mean, cov


def _column(kind: str, players: Tuple[str, ...], mean: np.ndarray, cov: np.ndarray) -> RatingColumn:
    if kind == "offense":
        m, v = mean[:, 0], cov[:, 0, 0]
    elif kind == "defense":
        m, v = mean[:, 1], cov[:, 1, 1]
    elif kind == "combined":
        m = mean[:, 0] + mean[:, 1]
        v = cov[:, 0, 0] + cov[:, 1, 1] + cov[:, 0, 1] + cov[:, 1, 0]
    else:
        raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
    centre = float(np.mean(m))
    return RatingColumn(kind, players, m - centre, np.sqrt(np.clip(v, 0.0, None)), rank_order(players, m), centre)


def centred_ratings(belief: GaussianBelief, kind: str, players: Optional[Sequence[str]] = None) -> RatingColumn:
    """One centred column: mean minus the unweighted mean over ``players`` (default: all)."""
    players = tuple(belief.players if players is None else players)
    if not players:
        raise ValueError("no players to rate")
    mean, cov = _marginal_arrays(belief, players)
    return _column(kind, players, mean, cov)


@dataclass
class RatingsTable:
    model_tag: str
    players: Tuple[str, ...]
    columns: Dict[str, RatingColumn]
    names: Dict[str, str] = field(default_factory=dict)

    @property
    def centres(self) -> Dict[str, float]:
        return {k: c.centre for k, c in self.columns.items()}

    def row(self, player: str) -> dict:
        i = self.players.index(player)
        out = {"player_id": player, "name": self.names.get(player, player)}
        for kind, prefix in zip(KINDS, ("off", "def", "comb")):
            c = self.columns[kind]
            out[f"{prefix}_mean"] = float(c.mean[i])
            out[f"{prefix}_se"] = float(c.se[i])
            out[f"{prefix}_rank"] = int(c.rank[i])
        out["model_tag"] = self.model_tag
        return out

    def top(self, kind: str = "combined", k: int = 10) -> List[str]:
        c = self.columns[kind]
        order = np.argsort(c.rank)
        return [self.players[i] for i in order[:k]]

    def write_csv(self, out: IO[str]) -> None:
        writer = csv.DictWriter(out, fieldnames=RATINGS_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for p in self.top("combined", len(self.players)):
            row = self.row(p)
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def ratings_from_marginals(
    players: Sequence[str],
    mean: np.ndarray,
    cov: np.ndarray,
    model_tag: str,
    names: Optional[Mapping[str, str]] = None,
) -> RatingsTable:
    if model_tag not in MODEL_TAGS:
        raise ValueError(f"model_tag must be one of {MODEL_TAGS}")
    players = tuple(players)
    if not players:
        raise ValueError("no players to rate")
    mean, cov = np.asarray(mean, float), np.asarray(cov, float)
    cols = {kind: _column(kind, players, mean, cov) for kind in KINDS}
    return RatingsTable(model_tag, players, cols, dict(names or {}))


def ratings_table(
    belief: GaussianBelief,
    model_tag: str,
    players: Optional[Sequence[str]] = None,
    names: Optional[Mapping[str, str]] = None,
) -> RatingsTable:
    players = tuple(sorted(belief.players) if players is None else players)
    mean, cov = _marginal_arrays(belief, players)
    return ratings_from_marginals(players, mean, cov, model_tag, names)


def isolated_ratings(iso: IsolatedResult, names: Optional[Mapping[str, str]] = None) -> RatingsTable:
    return ratings_from_marginals(iso.players, iso.mean, iso.cov, "isolated", names)


def read_ratings_csv(stream: IO[str]) -> List[dict]:
    rows = []
    for row in csv.DictReader(stream):
        for key in row:
            if key.endswith(("_mean", "_se")):
                row[key] = float(row[key])
            elif key.endswith("_rank"):
                row[key] = int(row[key])
        rows.append(row)
    return rows


# ------------------------------------------------------------------ pairwise dominance


def pairwise_prob(belief: GaussianBelief, a: str, b: str) -> float:
    """P(alpha_a + beta_a > alpha_b + beta_b) under the joint posterior.

    Evaluated once for the id-ordered pair so that P(a, b) + P(b, a) == 1 exactly.
    """
    if b < a:
        return 1.0 - pairwise_prob(belief, b, a)
    mean, cov = belief.combined([a, b])
    diff = mean[0] - mean[1]
    var = cov[0, 0] + cov[1, 1] - 2.0 * cov[0, 1]
    if var <= 0.0:
        return 1.0 if diff > 0 else (0.0 if diff < 0 else 0.5)
    return float(ndtr(diff / math.sqrt(var)))


def pairwise_matrix(belief: GaussianBelief, players: Sequence[str]) -> np.ndarray:
    """Entry (i, j) is P(player i stronger than player j); the diagonal is 0.5."""
    n = len(players)
    out = np.full((n, n), 0.5)
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = pairwise_prob(belief, players[i], players[j])
            out[j, i] = pairwise_prob(belief, players[j], players[i])
    return out


def write_pairwise_csv(players: Sequence[str], matrix: np.ndarray, out: IO[str]) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["player_id"] + list(players))
    for p, row in zip(players, matrix):
        writer.writerow([p] + [repr(float(x)) for x in row])


# ------------------------------------------------------------------- best-player draws


@dataclass
class BestPlayer:
    players: Tuple[str, ...]
    counts: np.ndarray
    n_draws: int
    seed: int

    @property
    def probs(self) -> np.ndarray:
        return self.counts / self.n_draws

    def as_dict(self) -> Dict[str, float]:
        return {p: float(x) for p, x in zip(self.players, self.probs)}

    def mc_stderr(self) -> np.ndarray:
        pr = self.probs
        return np.sqrt(pr * (1 - pr) / self.n_draws)


def prob_best(
    belief: GaussianBelief,
    players: Optional[Sequence[str]] = None,
    n_draws: int = 1000,
    seed: int = 0,
    block_size: int = 100_000,
) -> BestPlayer:
    """Monte-Carlo probability that each player has the highest combined ability.

    Draws come in fixed-size blocks, each from its own child of
    ``SeedSequence(seed)``, so results depend only on (seed, n_draws,
    block_size) however the blocks are scheduled.  Players are ordered by id and
    exact ties in a draw go to the smallest id.
    """
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    players = tuple(sorted(belief.players if players is None else players))
    if not players:
        raise ValueError("no players")
    mean, cov = belief.combined(players)
    L = sqrt_factor(cov, "combined-ability covariance")
    n_blocks = -(-n_draws // block_size)
    children = np.random.SeedSequence(seed).spawn(n_blocks)
    counts = np.zeros(len(players), dtype=np.int64)
    for k, child in enumerate(children):
        size = min(block_size, n_draws - k * block_size)
        z = np.random.default_rng(child).standard_normal((size, len(players)))
        draws = mean + z @ L.T
        counts += np.bincount(np.argmax(draws, axis=1), minlength=len(players))
    return BestPlayer(players, counts, n_draws, seed)


# ------------------------------------------------------------------------ matchups


@dataclass
class Matchup:
    mean: float
    var: float

    @property
    def sd(self) -> float:
        return math.sqrt(max(self.var, 0.0))


def lineup_matchup(
    home: Sequence[str],
    away: Sequence[str],
    gamma: float,
    belief: Optional[GaussianBelief] = None,
    point: Optional[Mapping[str, Tuple[float, float]]] = None,
) -> Matchup:
    """Expected home-minus-away points per 100 possessions each way for two lineups.

    sum_K(alpha + beta) - sum_L(alpha + beta) + 2 gamma.  With a belief the
    variance comes from the joint covariance; with point estimates
    (``player -> (alpha, beta)``) it is zero.
    """
    home, away = list(home), list(away)
    if len(set(home)) != 5 or len(set(away)) != 5 or len(home) != 5 or len(away) != 5:
        raise ValueError("each lineup needs exactly five distinct players")
    if set(home) & set(away):
        raise ValueError("lineups overlap")
    if (belief is None) == (point is None):
        raise ValueError("pass exactly one of belief or point estimates")
    w = np.array([1.0] * 5 + [-1.0] * 5)
    if belief is not None:
        mean, cov = belief.combined(home + away)
        return Matchup(float(w @ mean) + 2.0 * gamma, float(w @ cov @ w))
    comb = np.array([sum(point[p]) for p in home + away])
    return Matchup(float(w @ comb) + 2.0 * gamma, 0.0)


# -------------------------------------------------------------------------- awards


@dataclass
class Award:
    player: str
    estimate: float
    se: float
    delta: Optional[float] = None


@dataclass
class AwardSlate:
    mvp: Award
    dpoy: Award
    rookie: Optional[Award]
    mip: Optional[Award]
    notices: List[str] = field(default_factory=list)

    def report(self, names: Optional[Mapping[str, str]] = None) -> str:
        names = names or {}
        lines = []
        for title, award in (
            ("Most valuable player", self.mvp),
            ("Defensive player of the year", self.dpoy),
            ("Rookie of the year", self.rookie),
            ("Most improved player", self.mip),
        ):
            if award is None:
                lines.append(f"{title}: none")
                continue
            extra = f", improvement {award.delta:+.2f}" if award.delta is not None else ""
            lines.append(
                f"{title}: {names.get(award.player, award.player)} "
                f"(estimate {award.estimate:.2f}, se {award.se:.2f}{extra})"
            )
        lines.extend(f"note: {n}" for n in self.notices)
        return "\n".join(lines) + "\n"


def _argmax(players: Sequence[str], values: Sequence[float]) -> int:
    return min(range(len(players)), key=lambda i: (-values[i], players[i]))


def select_awards(
    chain: SeasonChainResult,
    isolated: IsolatedResult,
    previous: Optional[GaussianBelief] = None,
) -> AwardSlate:
    """MVP and DPOY from the isolated model, ROY from the chain, MIP from successive season-end fits.

    ``previous`` is the end-of-season belief one year earlier; by default the
    chain's own second-to-last posterior, which is what a fit on the data up
    to that season gives.
    """
    notices: List[str] = []
    players = isolated.players
    comb = isolated.mean[:, 0] + isolated.mean[:, 1]
    comb_var = isolated.cov[:, 0, 0] + isolated.cov[:, 1, 1] + 2 * isolated.cov[:, 0, 1]
    i = _argmax(players, comb)
    mvp = Award(players[i], float(comb[i]), float(math.sqrt(comb_var[i])))
    j = _argmax(players, isolated.mean[:, 1])
    dpoy = Award(players[j], float(isolated.mean[j, 1]), float(math.sqrt(isolated.cov[j, 1, 1])))

    final = chain.final
    rookies = sorted(set(chain.rookies[-1]) & set(players))
    rookie = None
    if rookies:
        m, c = final.combined(rookies)
        k = _argmax(rookies, m)
        rookie = Award(rookies[k], float(m[k]), float(math.sqrt(c[k, k])))
    else:
        notices.append("no rookies in the final season; rookie award omitted")

    if previous is None and len(chain.ends) >= 2:
        previous = chain.ends[-2]
    mip = None
    if previous is None:
        notices.append("a single season has no previous fit; most improved award omitted")
    else:
        before = set(previous.players)
        cands = sorted(p for p in players if p in before and p not in set(chain.rookies[-1]))
        if cands:
            now, now_cov = final.combined(cands)
            then, _ = previous.combined(cands)
            delta = now - then
            k = _argmax(cands, delta)
            mip = Award(cands[k], float(now[k]), float(math.sqrt(now_cov[k, k])), float(delta[k]))
        else:
            notices.append("no returning players; most improved award omitted")
    for n in notices:
        logger.info(n)
    return AwardSlate(mvp, dpoy, rookie, mip, notices)
