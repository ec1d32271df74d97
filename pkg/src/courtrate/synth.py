"""Synthetic leagues generated from the rating model itself.

Abilities are drawn from the population prior and evolve between seasons by the
shrink-plus-noise transition.  Games are split into constant-lineup stretches by
a Poisson substitution process per team; possessions strictly alternate within
a period and each possession's points are drawn so that the stretch's points
per 100 possessions has mean ``sum(alpha) - sum(beta) +/- gamma`` and variance
``sigma**2 / n``.

Every game draws from its own ``SeedSequence([seed, 2, season, game])`` stream,
so a game's content does not depend on which other games were generated.
"""

from __future__ import annotations

import csv
import datetime
import math
from dataclasses import dataclass, field, fields
from typing import IO, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .ingest import LINEUP_UNKNOWN, GameEvent, GameLog, Interval
from .params import REFERENCE_TRANSITION, REFERENCE_HYPER, HyperParams, TransitionParams

PERIOD_SECONDS = 720
N_PERIODS = 4
GAME_SECONDS = PERIOD_SECONDS * N_PERIODS
SCORING_MODES = ("possession", "gaussian")

_STREAM_TRUTH = 1
_STREAM_GAME = 2


@dataclass(frozen=True)
class SynthConfig:
    n_teams: int = 30
    players_per_team: int = 13
    games_per_pair: int = 2
    # when set, overrides games_per_pair with a balanced schedule of this many games per team
    games_per_team: Optional[int] = None
    seasons: int = 1
    pace: float = 100.0  # mean possessions per team per game
    pace_dispersion: float = 0.0  # coefficient of variation of per-game pace
    sub_rate: float = 0.25  # substitutions per team per minute
    ambiguity: float = 0.0  # target fraction of game time with an unknown lineup
    departure_rate: float = 0.0
    rookie_fraction: float = 1.0
    scoring: str = "possession"
    first_season: int = 2001
    hyper: HyperParams = REFERENCE_HYPER
    tp: TransitionParams = REFERENCE_TRANSITION
    seed: int = 0

    def __post_init__(self):
        for name in ("n_teams", "players_per_team", "seasons"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_teams < 2:
            raise ValueError("a league needs at least two teams")
        if self.players_per_team < 5:
            raise ValueError("teams need at least five players")
        if self.games_per_team is None and self.games_per_pair < 1:
            raise ValueError("games_per_pair must be >= 1")
        if self.games_per_team is not None and self.games_per_team < 1:
            raise ValueError("games_per_team must be >= 1")
        for name in ("pace", "pace_dispersion", "sub_rate", "departure_rate"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.pace <= 0:
            raise ValueError("pace must be positive")
        if not 0.0 <= self.ambiguity < 1.0:
            raise ValueError("ambiguity must lie in [0, 1)")
        if not 0.0 <= self.departure_rate <= 1.0 or not 0.0 <= self.rookie_fraction <= 1.0:
            raise ValueError("departure_rate and rookie_fraction must lie in [0, 1]")
        if self.scoring not in SCORING_MODES:
            raise ValueError(f"scoring must be one of {SCORING_MODES}")

    def replace(self, **changes) -> "SynthConfig":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return SynthConfig(**values)

    def season_label(self, t: int) -> str:
        return str(self.first_season + t)

    @classmethod
    def from_mapping(cls, values: Mapping[str, object], base: Optional["SynthConfig"] = None) -> "SynthConfig":
        """Pick SynthConfig, HyperParams and TransitionParams keys out of a flat config."""
        base = base or cls()
        hyper_keys = {f.name for f in fields(HyperParams)}
        tp_keys = {f.name for f in fields(TransitionParams)}
        changes: Dict[str, object] = {}
        hyper = {k: float(v) for k, v in values.items() if k in hyper_keys}
        tp = {k: float(v) for k, v in values.items() if k in tp_keys}
        if hyper:
            changes["hyper"] = base.hyper.replace(**hyper)
        if tp:
            changes["tp"] = base.tp.replace(**tp)
        for f in fields(cls):
            if f.name in values and f.name not in ("hyper", "tp"):
                raw = values[f.name]
                if f.name == "games_per_team":
                    changes[f.name] = None if raw in ("", "none", "None", None) else int(raw)
                elif f.name == "scoring":
                    changes[f.name] = str(raw)
                elif f.name in ("pace", "pace_dispersion", "sub_rate", "ambiguity", "departure_rate",
                                "rookie_fraction"):
                    changes[f.name] = float(raw)
                else:
                    changes[f.name] = int(raw)
        return base.replace(**changes)


@dataclass
class SeasonTruth:
    label: str
    alpha: Dict[str, float]  # every player known so far, active or not
    beta: Dict[str, float]
    rosters: Dict[str, Tuple[str, ...]]

    @property
    def active(self) -> Tuple[str, ...]:
        return tuple(sorted(p for roster in self.rosters.values() for p in roster))

    def combined(self, player: str) -> float:
        return self.alpha[player] + self.beta[player]


@dataclass
class GroundTruth:
    cfg: SynthConfig
    seasons: List[SeasonTruth] = field(default_factory=list)
    next_id: int = 0

    def new_player(self) -> str:
        self.next_id += 1
        return f"P{self.next_id:04d}"


def team_ids(n_teams: int) -> List[str]:
    return [f"T{i + 1:02d}" for i in range(n_teams)]


def gen_league(cfg: SynthConfig) -> GroundTruth:
    """First-season rosters with abilities drawn from the population prior."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, _STREAM_TRUTH, 0]))
    truth = GroundTruth(cfg)
    h = cfg.hyper
    rosters = {}
    alpha, beta = {}, {}
    for team in team_ids(cfg.n_teams):
        roster = tuple(truth.new_player() for _ in range(cfg.players_per_team))
        rosters[team] = roster
    players = [p for r in rosters.values() for p in r]
    a = h.mu_alpha + h.sigma_alpha * rng.standard_normal(len(players))
    b = h.mu_beta + h.sigma_beta * rng.standard_normal(len(players))
    for p, x, y in zip(players, a, b):
        alpha[p], beta[p] = float(x), float(y)
    truth.seasons.append(SeasonTruth(cfg.season_label(0), alpha, beta, rosters))
    return truth


def advance_truth(
    truth: GroundTruth, tp: Optional[TransitionParams] = None, hyper: Optional[HyperParams] = None
) -> GroundTruth:
    """Append the next season: every known player moves by the transition, then rosters turn over.

    Each rostered player leaves with probability ``departure_rate``; the slot
    goes to a rookie with probability ``rookie_fraction`` and otherwise to a
    player currently out of the league (a rookie when nobody is available).
    """
    cfg = truth.cfg
    tp = cfg.tp if tp is None else tp
    hyper = cfg.hyper if hyper is None else hyper
    t = len(truth.seasons)
    prev = truth.seasons[-1]
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, _STREAM_TRUTH, t]))
    known = sorted(prev.alpha)
    eps = rng.standard_normal((len(known), 2))
    alpha = {
        p: float(tp.p * prev.alpha[p] + (1 - tp.p) * hyper.mu_alpha + tp.s_alpha * e)
        for p, e in zip(known, eps[:, 0])
    }
    beta = {
        p: float(tp.p * prev.beta[p] + (1 - tp.p) * hyper.mu_beta + tp.s_beta * e)
        for p, e in zip(known, eps[:, 1])
    }
    active = set(prev.active)
    pool = [p for p in known if p not in active]
    rosters = {}
    for team in sorted(prev.rosters):
        roster = list(prev.rosters[team])
        for i in range(len(roster)):
            if rng.random() >= cfg.departure_rate:
                continue
            pool.append(roster[i])
            if rng.random() < cfg.rookie_fraction or len(pool) == 1:
                newcomer = truth.new_player()
                alpha[newcomer] = float(hyper.mu_alpha + hyper.sigma_alpha * rng.standard_normal())
                beta[newcomer] = float(hyper.mu_beta + hyper.sigma_beta * rng.standard_normal())
            else:
                # anyone out of the league except the player who just left
                newcomer = pool.pop(int(rng.integers(len(pool) - 1)))
            roster[i] = newcomer
        rosters[team] = tuple(roster)
    truth.seasons.append(SeasonTruth(cfg.season_label(t), alpha, beta, rosters))
    return truth


def build_truth(cfg: SynthConfig) -> GroundTruth:
    truth = gen_league(cfg)
    for _ in range(1, cfg.seasons):
        advance_truth(truth)
    return truth


# -------------------------------------------------------------------------- schedule


def schedule(cfg: SynthConfig) -> List[Tuple[str, str]]:
    """(home, away) pairs.  Circle-method rounds give every team the same number of games."""
    teams = team_ids(cfg.n_teams)
    n = len(teams)
    if cfg.games_per_team is None:
        games = []
        for k in range(cfg.games_per_pair):
            for i in range(n):
                for j in range(i + 1, n):
                    games.append((teams[i], teams[j]) if k % 2 == 0 else (teams[j], teams[i]))
        return games
    slots = teams + ([None] if n % 2 else [])
    m = len(slots)
    rounds = []
    for r in range(m - 1):
        rot = [slots[0]] + slots[1:][-r:] + slots[1:][:-r] if r else list(slots)
        pairs = [(rot[i], rot[m - 1 - i]) for i in range(m // 2)]
        rounds.append([(a, b) if (r + i) % 2 == 0 else (b, a) for i, (a, b) in enumerate(pairs)])
    games = []
    played = dict.fromkeys(teams, 0)
    cycle = 0
    while min(played.values()) < cfg.games_per_team:
        for rnd in rounds:
            if min(played.values()) >= cfg.games_per_team:
                break
            for home, away in rnd:
                if home is None or away is None:
                    continue
                if played[home] >= cfg.games_per_team or played[away] >= cfg.games_per_team:
                    continue
                games.append((home, away) if cycle % 2 == 0 else (away, home))
                played[home] += 1
                played[away] += 1
        cycle += 1
    return games


# ------------------------------------------------------------------------- scoring


def possession_distribution(mean: float, var: float, p_one: float = 0.1) -> np.ndarray:
    """Probabilities of 0..3 points with the given mean and variance.

    ``p_one`` is clipped into the range that keeps all four probabilities
    non-negative.  Unreachable (mean, variance) pairs fall back to a two-point
    law with the right mean: {0, 3} when the variance is too large, otherwise
    the two integers around the mean.
    """
    m = min(max(mean, 0.0), 3.0)
    v = max(var, 0.0)
    lo = max(0.0, 2 * m - m * m - v)
    hi = min((3 * m - m * m - v) / 2, (6 - 5 * m + m * m + v) / 2, 1.0)
    if lo <= hi:
        d = min(max(p_one, lo), hi)
        c = (v + m * m - 2 * m + d) / 3
        b = (m - d - 3 * c) / 2
        probs = np.array([1.0 - d - b - c, d, b, c])
        return np.clip(probs, 0.0, None) / np.clip(probs, 0.0, None).sum()
    probs = np.zeros(4)
    if v > m * (3 - m):
        probs[3] = m / 3
        probs[0] = 1 - m / 3
    else:
        k = min(int(math.floor(m)), 2)
        frac = m - k
        probs[k] = 1 - frac
        probs[k + 1] = frac
    return probs


def _split_points(total: int, n: int) -> List[int]:
    """Spread a total over n possessions as values in {0..3}, front-loaded; capped at 3n."""
    out = []
    left = min(total, 3 * n)
    for _ in range(n):
        take = min(3, left)
        out.append(take)
        left -= take
    return out


# --------------------------------------------------------------------------- games


@dataclass
class GameSim:
    log: GameLog
    intervals: List[Interval]
    boxscore: Dict[str, float]
    # (home_team, away_team) points over the whole game
    score: Tuple[int, int]
    n_events: int


def _lineup_sum(values: Mapping[str, float], players) -> float:
    return float(sum(values[p] for p in sorted(players)))


def simulate_game(
    truth: SeasonTruth,
    cfg: SynthConfig,
    season_idx: int,
    game_idx: int,
    home: str,
    away: str,
    emit_logs: bool = True,
) -> GameSim:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, _STREAM_GAME, season_idx, game_idx]))
    # event clocks only matter for the written log, so they get their own stream
    clock_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, _STREAM_GAME, season_idx, game_idx, 1]))
    h = cfg.hyper
    season = truth.label
    game_id = f"{season}-{game_idx + 1:05d}"
    rosters = {home: list(truth.rosters[home]), away: list(truth.rosters[away])}
    starters = {t: tuple(str(p) for p in rng.choice(rosters[t], 5, replace=False)) for t in (home, away)}
    pace = cfg.pace
    if cfg.pace_dispersion > 0:
        shape = 1.0 / cfg.pace_dispersion**2
        pace = cfg.pace * rng.gamma(shape, 1.0 / shape)
    rate = 2.0 * pace / GAME_SECONDS  # possessions per second, both teams
    q = cfg.ambiguity
    p_ambiguous = min(1.0, 2.0 * q)
    start_span = min(1.0, 2.0 * (1.0 - q))

    events: List[GameEvent] = []
    intervals: List[Interval] = []
    seconds: Dict[str, float] = {p: 0.0 for t in rosters for p in rosters[t]}
    score = {home: 0, away: 0}
    period_lineups = {}
    court = {t: list(starters[t]) for t in (home, away)}
    dist_cache: Dict[float, np.ndarray] = {}

    def ev(period, clock, kind, team=None, player_in=None, player_out=None, value=None):
        if emit_logs:
            events.append(GameEvent(game_id, season, period, float(clock), kind, team, player_in, player_out,
                                    None, value))

    for period in range(1, N_PERIODS + 1):
        if period == 3:
            court = {t: list(starters[t]) for t in (home, away)}
        if period > 1:
            period_lineups[period] = (tuple(court[home]), tuple(court[away]))
        # substitution clocks per team, integer seconds strictly inside the period
        subs: List[Tuple[int, int, str]] = []
        for k, team in enumerate((home, away)):
            count = rng.poisson(cfg.sub_rate * PERIOD_SECONDS / 60.0)
            for clock in rng.integers(1, PERIOD_SECONDS, count):
                subs.append((int(clock), k, team))
        ambiguous_at = None
        if q > 0 and rng.random() < p_ambiguous:
            elapsed = int(math.floor(rng.uniform(0.0, start_span) * PERIOD_SECONDS))
            ambiguous_at = PERIOD_SECONDS - elapsed
            subs.append((ambiguous_at, 2, home if rng.random() < 0.5 else away))
        subs.sort(key=lambda s: (-s[0], s[1]))
        changes = sorted({s[0] for s in subs}, reverse=True)
        bounds = [PERIOD_SECONDS] + [c for c in changes if c < PERIOD_SECONDS] + [0]
        possessor = home if rng.random() < 0.5 else away
        unknown = False
        sub_i = 0
        for start, end in zip(bounds[:-1], bounds[1:]):
            # substitutions logged at this boundary
            while sub_i < len(subs) and subs[sub_i][0] == start:
                _, kind, team = subs[sub_i]
                sub_i += 1
                bench = [p for p in rosters[team] if p not in court[team]]
                out_i = int(rng.integers(5))
                player_in = bench[int(rng.integers(len(bench)))] if bench else None
                if player_in is None:
                    continue
                player_out = court[team][out_i]
                court[team][out_i] = player_in
                if kind == 2:
                    ev(period, start, "substitution", team, player_in, None)
                    unknown = True
                else:
                    ev(period, start, "substitution", team, player_in, player_out)
            duration = start - end
            if duration <= 0:
                continue
            n_poss = max(1, int(rng.poisson(rate * duration)))
            clocks = np.sort(clock_rng.integers(end + 1, start + 1, n_poss))[::-1] if emit_logs else None
            first_home = possessor == home
            # alternate starting with the current possessor; the other team has the next one
            n_first = (n_poss + 1) // 2
            counts = {home: n_first if first_home else n_poss - n_first}
            counts[away] = n_poss - counts[home]
            possessor = (away if first_home else home) if n_poss % 2 else possessor
            pts_by_team = {}
            for att, dfn, sign in ((home, away, 1.0), (away, home, -1.0)):
                n = counts[att]
                if n == 0:
                    pts_by_team[att] = np.zeros(0, dtype=np.int64)
                    continue
                mean = _lineup_sum(truth.alpha, court[att]) - _lineup_sum(truth.beta, court[dfn]) + sign * h.gamma
                if cfg.scoring == "possession":
                    cdf = dist_cache.get(mean)
                    if cdf is None:
                        cdf = dist_cache[mean] = np.cumsum(possession_distribution(mean / 100.0, h.sigma**2 / 1e4))
                    pts_by_team[att] = np.minimum(np.searchsorted(cdf, rng.random(n), side="right"), 3)
                else:
                    draw = n * mean / 100.0 + h.sigma * math.sqrt(n) / 100.0 * rng.standard_normal()
                    pts_by_team[att] = np.array(_split_points(max(0, int(round(draw))), n), dtype=np.int64)
            pts_home = int(pts_by_team[home].sum())
            pts_away = int(pts_by_team[away].sum())
            if emit_logs:
                order = {home: iter(pts_by_team[home].tolist()), away: iter(pts_by_team[away].tolist())}
                other = away if first_home else home
                first = home if first_home else away
                for i, clock in enumerate(clocks.tolist()):
                    team = first if i % 2 == 0 else other
                    pts = next(order[team])
                    ev(period, clock, "possession_start", team)
                    if pts:
                        ev(period, clock, "points", team, value=int(pts))
            score[home] += pts_home
            score[away] += pts_away
            for t in (home, away):
                for p in court[t]:
                    seconds[p] += duration
            intervals.append(
                Interval(
                    game_id, season, len(intervals), float(duration),
                    frozenset() if unknown else frozenset(court[home]),
                    frozenset() if unknown else frozenset(court[away]),
                    counts[home], counts[away], pts_home, pts_away,
                    unknown, LINEUP_UNKNOWN if unknown else "",
                )
            )
        ev(period, 0, "period_end")

    log = GameLog(
        game_id=game_id,
        season=season,
        home_team=home,
        away_team=away,
        home_starters=starters[home],
        away_starters=starters[away],
        date=(datetime.date(cfg.first_season + season_idx, 11, 1)
              + datetime.timedelta(days=game_idx // max(1, cfg.n_teams // 2))).isoformat(),
        events=events,
        period_lineups=period_lineups,
    )
    box = {p: s for p, s in seconds.items() if s > 0}
    return GameSim(log, intervals, box, (score[home], score[away]), len(events))


@dataclass
class SeasonData:
    label: str
    truth: SeasonTruth
    logs: List[GameLog]
    boxscores: Dict[str, Dict[str, float]]
    intervals: List[Interval]
    scores: List[Tuple[str, str, int, int]]


def gen_season(truth: GroundTruth, season_idx: int, cfg: Optional[SynthConfig] = None,
               emit_logs: bool = True) -> SeasonData:
    """Play one season's schedule on the given season's true abilities."""
    cfg = truth.cfg if cfg is None else cfg
    st = truth.seasons[season_idx]
    logs, intervals, scores = [], [], []
    boxscores: Dict[str, Dict[str, float]] = {}
    for g, (home, away) in enumerate(schedule(cfg)):
        sim = simulate_game(st, cfg, season_idx, g, home, away, emit_logs)
        if emit_logs:
            logs.append(sim.log)
        intervals.extend(sim.intervals)
        boxscores[sim.log.game_id] = sim.boxscore
        scores.append((home, away) + sim.score)
    return SeasonData(st.label, st, logs, boxscores, intervals, scores)


def simulate(cfg: SynthConfig, emit_logs: bool = True) -> Tuple[GroundTruth, List[SeasonData]]:
    truth = build_truth(cfg)
    return truth, [gen_season(truth, t, cfg, emit_logs) for t in range(cfg.seasons)]


def write_truth_csv(truth: GroundTruth, out: IO[str]) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["season", "player_id", "alpha_true", "beta_true"])
    for st in truth.seasons:
        for p in sorted(st.alpha):
            writer.writerow([st.label, p, repr(float(st.alpha[p])), repr(float(st.beta[p]))])


def read_truth_csv(stream: IO[str]) -> Dict[str, Dict[str, Tuple[float, float]]]:
    out: Dict[str, Dict[str, Tuple[float, float]]] = {}
    for row in csv.DictReader(stream):
        out.setdefault(row["season"], {})[row["player_id"]] = (float(row["alpha_true"]), float(row["beta_true"]))
    return out


# --------------------------------------------------------------------- box-score stats

_STATS_STREAM = 3


def synthetic_stats(st: SeasonTruth, seed: int, hyper: HyperParams = REFERENCE_HYPER) -> List[dict]:
    """Per-40-minute box-score lines loosely tied to the true abilities.

    Points, assists, free-throw and field-goal percentage load on offensive
    ability, steals on defensive ability; the rest is noise.  Positions are
    assigned round-robin within each roster.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, _STATS_STREAM, int(st.label)]))
    rows = []
    positions = ("guard", "guard", "forward", "forward", "center")
    for team in sorted(st.rosters):
        for k, p in enumerate(st.rosters[team]):
            za = (st.alpha[p] - hyper.mu_alpha) / max(hyper.sigma_alpha, 1e-9)
            zb = (st.beta[p] - hyper.mu_beta) / max(hyper.sigma_beta, 1e-9)
            e = rng.standard_normal(10)
            rows.append({
                "player_id": p,
                "fg_pct": float(np.clip(45 + 2.0 * za + 3 * e[0], 0, 100)),
                "ft_pct": float(np.clip(75 + 2.5 * za + 6 * e[1], 0, 100)),
                "three_pct": float(np.clip(33 + 5 * e[2], 0, 100)),
                "tov_40": float(max(0.0, 3.0 - 0.3 * za + 0.8 * e[3])),
                "trb_40": float(max(0.0, 8.0 + 2.5 * e[4])),
                "ast_40": float(max(0.0, 4.0 + 1.2 * za + 1.5 * e[5])),
                "pts_40": float(max(0.0, 17.0 + 3.5 * za + 3 * e[6])),
                "stl_40": float(max(0.0, 1.4 + 0.3 * zb + 0.4 * e[7])),
                "blk_40": float(max(0.0, 0.9 + 0.6 * e[8])),
                "pf_40": float(max(0.0, 4.0 + 1.0 * e[9])),
                "position": positions[k % len(positions)],
            })
    return rows


def write_stats_rows(rows: Sequence[dict], out: IO[str]) -> None:
    from .statsreg import STAT_COLUMNS

    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["player_id", *STAT_COLUMNS, "position"])
    for r in rows:
        writer.writerow([r["player_id"], *[repr(float(r[c])) for c in STAT_COLUMNS], r["position"]])
