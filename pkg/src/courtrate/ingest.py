"""Canonical play-by-play logs -> constant-lineup intervals.

Log format (UTF-8 JSON lines).  Each game starts with a header record::

    {"kind": "header", "game_id": "G1", "season": "2009", "date": "2009-01-02",
     "home_team": "BOS", "away_team": "NYK",
     "starters": {"BOS": [5 ids], "NYK": [5 ids]},
     "period_lineups": {"3": {"BOS": [...], "NYK": [...]}}}      # optional

followed by event records carrying exactly the fields ``game_id, season, period,
clock_remaining, kind, team, player_in, player_out, player, value``.  ``kind`` is
one of ``substitution``, ``possession_start``, ``points`` or ``period_end``.

``period_lineups`` re-declares who is on court at the start of a period; without
it the lineup carries over from the end of the previous period.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import IO, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

logger = logging.getLogger(__name__)

EVENT_FIELDS = (
    "game_id",
    "season",
    "period",
    "clock_remaining",
    "kind",
    "team",
    "player_in",
    "player_out",
    "player",
    "value",
)
EVENT_KINDS = ("substitution", "possession_start", "points", "period_end")

REGULATION_PERIODS = 4
REGULATION_SECONDS = 720.0
OVERTIME_SECONDS = 300.0

# Exclusion reason codes.
LINEUP_UNKNOWN = "lineup_unknown"
SUB_NOT_ON_COURT = "sub_not_on_court"
INCONSISTENT = "inconsistent"
GAME_REJECTED = "game_rejected"

INTERVAL_COLUMNS = (
    "game_id",
    "season",
    "idx",
    "duration_s",
    "home_players",
    "away_players",
    "n_home_poss",
    "n_away_poss",
    "pts_home",
    "pts_away",
    "excluded",
    "reason",
)


class LogFormatError(ValueError):
    """A record in the event stream could not be parsed."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def period_length(period: int) -> float:
    return REGULATION_SECONDS if period <= REGULATION_PERIODS else OVERTIME_SECONDS


@dataclass(frozen=True)
class GameEvent:
    game_id: str
    season: str
    period: int
    clock_remaining: float
    kind: str
    team: Optional[str] = None
    player_in: Optional[str] = None
    player_out: Optional[str] = None
    player: Optional[str] = None
    value: Optional[int] = None

    def to_record(self) -> dict:
        return {name: getattr(self, name) for name in EVENT_FIELDS}


@dataclass
class GameLog:
    game_id: str
    season: str
    home_team: str
    away_team: str
    home_starters: Tuple[str, ...]
    away_starters: Tuple[str, ...]
    date: str = ""
    events: List[GameEvent] = field(default_factory=list)
    period_lineups: Dict[int, Tuple[Tuple[str, ...], Tuple[str, ...]]] = field(default_factory=dict)
    rejected: Optional[str] = None

    @property
    def n_substitutions(self) -> int:
        return sum(1 for ev in self.events if ev.kind == "substitution")

    @property
    def periods(self) -> List[int]:
        return sorted({ev.period for ev in self.events})

    def header_record(self) -> dict:
        rec = {
            "kind": "header",
            "game_id": self.game_id,
            "season": self.season,
            "date": self.date,
            "home_team": self.home_team,
            "away_team": self.away_team,
            "starters": {
                self.home_team: list(self.home_starters),
                self.away_team: list(self.away_starters),
            },
        }
        if self.period_lineups:
            rec["period_lineups"] = {
                str(p): {self.home_team: list(h), self.away_team: list(a)}
                for p, (h, a) in sorted(self.period_lineups.items())
            }
        return rec


@dataclass(frozen=True)
class Interval:
    """One constant-lineup stretch.  Excluded intervals with unknown lineups carry empty sets."""

    game_id: str
    season: str
    idx: int
    duration: float
    home_on_court: FrozenSet[str]
    away_on_court: FrozenSet[str]
    n_home_poss: int
    n_away_poss: int
    pts_home: int
    pts_away: int
    excluded: bool = False
    reason: str = ""


# --------------------------------------------------------------------------- parsing


def _require(rec: dict, key: str, lineno: int):
    if key not in rec:
        raise LogFormatError(lineno, f"missing field {key!r}")
    return rec[key]


def _as_int(value, name: str, lineno: int) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
        raise LogFormatError(lineno, f"{name} must be an integer, got {value!r}")
    return int(value)


def _lineup(value, lineno: int) -> Tuple[str, ...]:
    if not isinstance(value, list) or not all(isinstance(p, str) for p in value):
        raise LogFormatError(lineno, "lineups must be lists of player id strings")
    return tuple(value)


def _parse_header(rec: dict, lineno: int) -> GameLog:
    home = str(_require(rec, "home_team", lineno))
    away = str(_require(rec, "away_team", lineno))
    starters = _require(rec, "starters", lineno)
    if not isinstance(starters, dict) or home not in starters or away not in starters:
        raise LogFormatError(lineno, "starters must map both team ids to player lists")
    period_lineups = {}
    for key, lineups in (rec.get("period_lineups") or {}).items():
        if not isinstance(lineups, dict) or home not in lineups or away not in lineups:
            raise LogFormatError(lineno, f"period_lineups[{key}] must cover both teams")
        try:
            period = int(key)
        except ValueError:
            raise LogFormatError(lineno, f"bad period key {key!r}") from None
        period_lineups[period] = (_lineup(lineups[home], lineno), _lineup(lineups[away], lineno))
    return GameLog(
        game_id=str(_require(rec, "game_id", lineno)),
        season=str(_require(rec, "season", lineno)),
        home_team=home,
        away_team=away,
        home_starters=_lineup(starters[home], lineno),
        away_starters=_lineup(starters[away], lineno),
        date=str(rec.get("date", "")),
        period_lineups=period_lineups,
    )


def _parse_event(rec: dict, lineno: int) -> GameEvent:
    missing = [name for name in EVENT_FIELDS if name not in rec]
    if missing:
        raise LogFormatError(lineno, f"missing fields {missing}")
    extra = sorted(set(rec) - set(EVENT_FIELDS))
    if extra:
        raise LogFormatError(lineno, f"unexpected fields {extra}")
    kind = rec["kind"]
    if kind not in EVENT_KINDS:
        raise LogFormatError(lineno, f"unknown event kind {kind!r}")
    period = _as_int(rec["period"], "period", lineno)
    if period < 1:
        raise LogFormatError(lineno, "period must be >= 1")
    clock = rec["clock_remaining"]
    if isinstance(clock, bool) or not isinstance(clock, (int, float)) or not clock >= 0:
        raise LogFormatError(lineno, f"clock_remaining must be a non-negative number, got {clock!r}")
    value = rec["value"]
    if kind == "points":
        value = _as_int(value, "value", lineno)
        if value not in (1, 2, 3):
            raise LogFormatError(lineno, f"points value must be 1, 2 or 3, got {value}")
    if kind in ("substitution", "possession_start", "points") and rec["team"] is None:
        raise LogFormatError(lineno, f"{kind} event needs a team")
    if kind == "substitution":
        if rec["player_in"] is None:
            raise LogFormatError(lineno, "substitution needs player_in")
        if rec["player_in"] == rec["player_out"]:
            raise LogFormatError(lineno, "substitution with player_in == player_out")
    return GameEvent(
        game_id=str(rec["game_id"]),
        season=str(rec["season"]),
        period=period,
        clock_remaining=float(clock),
        kind=kind,
        team=rec["team"],
        player_in=rec["player_in"],
        player_out=rec["player_out"],
        player=rec["player"],
        value=value if kind == "points" else None,
    )


def _check_game(log: GameLog) -> Optional[str]:
    """Return a rejection reason, or None when the game is usable."""
    home, away = set(log.home_starters), set(log.away_starters)
    if len(log.home_starters) != 5 or len(log.away_starters) != 5 or len(home) != 5 or len(away) != 5:
        return "starters_not_five"
    if home & away:
        return "starters_overlap"
    for h, a in log.period_lineups.values():
        if len(set(h)) != 5 or len(set(a)) != 5 or set(h) & set(a):
            return "period_lineup_invalid"
    teams = {log.home_team, log.away_team}
    if not log.events:
        return "no_events"
    last_period = 0
    ended = set()
    clock = None
    for ev in log.events:
        if ev.season != log.season:
            return "season_mismatch"
        if ev.team is not None and ev.team not in teams:
            return "unknown_team"
        if ev.period < last_period:
            return "period_order"
        if ev.period != last_period:
            if last_period and last_period not in ended:
                return "missing_period_end"
            last_period = ev.period
            clock = period_length(ev.period)
        if ev.period in ended:
            return "event_after_period_end"
        if ev.clock_remaining > clock:
            return "clock_backwards"
        clock = ev.clock_remaining
        if ev.kind == "period_end":
            if ev.clock_remaining != 0:
                return "period_end_not_at_zero"
            ended.add(ev.period)
    if last_period not in ended:
        return "missing_period_end"
    if sorted(ended) != list(range(1, last_period + 1)):
        return "missing_period"
    return None


def parse_event_log(stream: Iterable[str]) -> List[GameLog]:
    """Parse a JSON-lines stream into game logs, in order of first appearance.

    Schema problems raise :class:`LogFormatError` with the offending line number.
    Games whose events are inconsistent (clock running backwards, missing period
    ends, bad starters) are returned with ``rejected`` set instead of raising.
    """
    games: Dict[str, GameLog] = {}
    for lineno, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise LogFormatError(lineno, f"invalid JSON ({exc.msg})") from None
        if not isinstance(rec, dict):
            raise LogFormatError(lineno, "record must be a JSON object")
        if rec.get("kind") == "header":
            log = _parse_header(rec, lineno)
            if log.game_id in games:
                raise LogFormatError(lineno, f"duplicate header for game {log.game_id}")
            games[log.game_id] = log
            continue
        event = _parse_event(rec, lineno)
        log = games.get(event.game_id)
        if log is None:
            raise LogFormatError(lineno, f"event for game {event.game_id} before its header")
        log.events.append(event)
    for log in games.values():
        log.rejected = _check_game(log)
        if log.rejected:
            logger.warning("game %s rejected: %s", log.game_id, log.rejected)
    return list(games.values())


def serialize_event_log(logs: Iterable[GameLog], out: IO[str]) -> int:
    """Write logs in the canonical format; returns the number of records written."""
    n = 0
    for log in logs:
        out.write(json.dumps(log.header_record()) + "\n")
        n += 1
        for ev in log.events:
            out.write(json.dumps(ev.to_record()) + "\n")
            n += 1
    return n


def dumps_event_log(logs: Iterable[GameLog]) -> str:
    buf = io.StringIO()
    serialize_event_log(logs, buf)
    return buf.getvalue()


# ------------------------------------------------------------------ interval extraction


def _rejected_intervals(log: GameLog) -> List[Interval]:
    periods = range(1, max([ev.period for ev in log.events] + [REGULATION_PERIODS]) + 1)
    return [
        Interval(log.game_id, log.season, i, period_length(p), frozenset(), frozenset(),
                 0, 0, 0, 0, True, GAME_REJECTED)
        for i, p in enumerate(periods)
    ]


def extract_intervals(log: GameLog) -> List[Interval]:
    """Split a game into maximal stretches with no substitutions.

    Interval boundaries sit at substitution clocks and period ends.  Once the
    ten players on court cannot be named, every later interval of the period is
    excluded; a declared period lineup restores the state.
    """
    if log.rejected:
        return _rejected_intervals(log)

    by_period: Dict[int, List[GameEvent]] = defaultdict(list)
    for ev in log.events:
        by_period[ev.period].append(ev)

    home_team = log.home_team
    lineup = {home_team: set(log.home_starters), log.away_team: set(log.away_starters)}
    other = {home_team: log.away_team, log.away_team: home_team}
    unknown_reason = ""
    out: List[Interval] = []

    for period in sorted(by_period):
        if period in log.period_lineups:
            home, away = log.period_lineups[period]
            lineup = {home_team: set(home), log.away_team: set(away)}
            unknown_reason = ""
        seg_start = period_length(period)
        poss = {home_team: 0, log.away_team: 0}
        pts = {home_team: 0, log.away_team: 0}
        possessor: Optional[str] = None
        inconsistent = False

        def close(end_clock: float):
            nonlocal poss, pts, inconsistent, seg_start
            duration = seg_start - end_clock
            if duration <= 0:
                return
            bad = inconsistent or any(pts[t] > 0 and poss[t] == 0 for t in poss)
            if unknown_reason:
                home_set = away_set = frozenset()
                reason = unknown_reason
            else:
                home_set = frozenset(lineup[home_team])
                away_set = frozenset(lineup[log.away_team])
                reason = INCONSISTENT if bad else ""
            out.append(
                Interval(
                    log.game_id, log.season, len(out), duration, home_set, away_set,
                    poss[home_team], poss[log.away_team], pts[home_team], pts[log.away_team],
                    bool(reason), reason,
                )
            )
            poss = {t: 0 for t in poss}
            pts = {t: 0 for t in pts}
            inconsistent = False
            seg_start = end_clock

        for ev in by_period[period]:
            if ev.kind in ("substitution", "period_end"):
                if ev.clock_remaining < seg_start:
                    close(ev.clock_remaining)
                if ev.kind == "period_end" or unknown_reason:
                    continue
                on_court = lineup[ev.team]
                if ev.player_out is None:
                    unknown_reason = LINEUP_UNKNOWN
                elif (
                    ev.player_out not in on_court
                    or ev.player_in in on_court
                    or ev.player_in in lineup[other[ev.team]]
                ):
                    unknown_reason = SUB_NOT_ON_COURT
                else:
                    on_court.discard(ev.player_out)
                    on_court.add(ev.player_in)
            elif ev.kind == "possession_start":
                poss[ev.team] += 1
                possessor = ev.team
            else:
                pts[ev.team] += ev.value
                if possessor != ev.team:
                    inconsistent = True
    return out


def intervals_from_logs(logs: Iterable[GameLog]) -> List[Interval]:
    out: List[Interval] = []
    for log in logs:
        out.extend(extract_intervals(log))
    return out


def write_intervals_csv(intervals: Iterable[Interval], out: IO[str]) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(INTERVAL_COLUMNS)
    for iv in intervals:
        writer.writerow(
            [
                iv.game_id, iv.season, iv.idx, repr(float(iv.duration)),
                ";".join(sorted(iv.home_on_court)), ";".join(sorted(iv.away_on_court)),
                iv.n_home_poss, iv.n_away_poss, iv.pts_home, iv.pts_away,
                int(iv.excluded), iv.reason,
            ]
        )


def read_intervals_csv(stream: IO[str]) -> List[Interval]:
    reader = csv.DictReader(stream)
    if reader.fieldnames is None:
        return []
    missing = [c for c in INTERVAL_COLUMNS if c not in reader.fieldnames]
    if missing:
        raise ValueError(f"interval file missing columns {missing}")

    def players(cell: str) -> FrozenSet[str]:
        return frozenset(p for p in cell.split(";") if p)

    return [
        Interval(
            game_id=row["game_id"],
            season=row["season"],
            idx=int(row["idx"]),
            duration=float(row["duration_s"]),
            home_on_court=players(row["home_players"]),
            away_on_court=players(row["away_players"]),
            n_home_poss=int(row["n_home_poss"]),
            n_away_poss=int(row["n_away_poss"]),
            pts_home=int(row["pts_home"]),
            pts_away=int(row["pts_away"]),
            excluded=row["excluded"].strip() in ("1", "true", "True"),
            reason=row["reason"],
        )
        for row in reader
    ]


# --------------------------------------------------------------------- box scores


@dataclass
class ValidationReport:
    game_id: str
    player_seconds: Dict[str, float]
    total_seconds: float
    excluded_seconds: float
    boxscore_total_seconds: float
    discrepancies: Dict[str, float]
    tolerance: float

    @property
    def flagged_players(self) -> List[str]:
        return sorted(p for p, d in self.discrepancies.items() if d > self.tolerance)

    @property
    def total_discrepancy(self) -> float:
        return abs(self.total_seconds - self.boxscore_total_seconds)

    @property
    def flagged(self) -> bool:
        return bool(self.flagged_players) or self.total_discrepancy > self.tolerance

    @property
    def excluded_fraction(self) -> float:
        return self.excluded_seconds / self.total_seconds if self.total_seconds else 0.0


def crosscheck_boxscore(
    intervals: Sequence[Interval], boxscore: Mapping[str, float], tolerance: float = 30.0
) -> ValidationReport:
    """Compare on-court seconds inferred from one game's intervals with its box score."""
    game_ids = {iv.game_id for iv in intervals}
    if len(game_ids) > 1:
        raise ValueError(f"crosscheck expects one game, got {sorted(game_ids)}")
    seconds: Dict[str, float] = defaultdict(float)
    total = excluded = 0.0
    for iv in intervals:
        total += iv.duration
        if iv.excluded:
            excluded += iv.duration
        for player in iv.home_on_court | iv.away_on_court:
            seconds[player] += iv.duration
    discrepancies = {
        player: abs(seconds.get(player, 0.0) - float(boxscore.get(player, 0.0)))
        for player in set(seconds) | set(boxscore)
    }
    return ValidationReport(
        game_id=next(iter(game_ids), ""),
        player_seconds=dict(seconds),
        total_seconds=total,
        excluded_seconds=excluded,
        boxscore_total_seconds=sum(float(s) for s in boxscore.values()) / 10.0,
        discrepancies=discrepancies,
        tolerance=tolerance,
    )


def read_boxscores(stream: IO[str]) -> Dict[str, Dict[str, float]]:
    out: Dict[str, Dict[str, float]] = defaultdict(dict)
    for row in csv.DictReader(stream):
        out[row["game_id"]][row["player_id"]] = float(row["seconds_on_court"])
    return dict(out)


def write_boxscores(boxscores: Mapping[str, Mapping[str, float]], out: IO[str]) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["game_id", "player_id", "seconds_on_court"])
    for game_id, players in boxscores.items():
        for player, secs in sorted(players.items()):
            writer.writerow([game_id, player, repr(float(secs))])
