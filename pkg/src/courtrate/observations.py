"""Regression observations built from intervals.

Each (interval, team in possession) pair with at least one possession becomes a
row with response ``100 * points / possessions`` and weight ``possessions``.
The row mean is ``sum(alpha of attackers) - sum(beta of defenders) +/- gamma``
and its noise variance is ``sigma**2 / weight``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import IO, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .ingest import Interval


@dataclass(frozen=True)
class ObservationRow:
    response: float
    weight: float
    attackers: Tuple[str, ...]
    defenders: Tuple[str, ...]
    home_attacking: bool
    season: str = ""


class ObservationSet:
    """Column-oriented store of observation rows.

    ``att_idx``/``def_idx`` hold positions into ``players`` for each row, with
    row ``k`` spanning ``att_ptr[k]:att_ptr[k+1]`` (CSR layout, so toy rows with
    fewer than five players per side are allowed).
    """

    def __init__(
        self,
        players: Sequence[str],
        response,
        weight,
        home,
        att_ptr,
        att_idx,
        def_ptr,
        def_idx,
        season: Optional[Sequence[str]] = None,
    ):
        self.players: Tuple[str, ...] = tuple(players)
        if len(set(self.players)) != len(self.players):
            raise ValueError("player index must be a bijection (duplicate ids)")
        self.response = np.asarray(response, dtype=float)
        self.weight = np.asarray(weight, dtype=float)
        self.home = np.asarray(home, dtype=bool)
        self.att_ptr = np.asarray(att_ptr, dtype=np.int64)
        self.att_idx = np.asarray(att_idx, dtype=np.int64)
        self.def_ptr = np.asarray(def_ptr, dtype=np.int64)
        self.def_idx = np.asarray(def_idx, dtype=np.int64)
        n = len(self.response)
        self.season = np.asarray(season if season is not None else [""] * n, dtype=object)
        if not (len(self.weight) == len(self.home) == len(self.season) == n):
            raise ValueError("row arrays have inconsistent lengths")
        if len(self.att_ptr) != n + 1 or len(self.def_ptr) != n + 1:
            raise ValueError("pointer arrays must have n_rows + 1 entries")
        if n and np.any(self.weight < 1):
            raise ValueError("row weights must be >= 1")
        if n and np.any(self.response < 0):
            raise ValueError("responses must be non-negative")
        for idx in (self.att_idx, self.def_idx):
            if idx.size and (idx.min() < 0 or idx.max() >= len(self.players)):
                raise ValueError("row references a player outside the index")

    def __len__(self) -> int:
        return len(self.response)

    @property
    def index(self) -> Dict[str, int]:
        return {p: i for i, p in enumerate(self.players)}

    @property
    def offset_sign(self) -> np.ndarray:
        """+1 for home-attacking rows, -1 otherwise (multiplies gamma)."""
        return np.where(self.home, 1.0, -1.0)

    @classmethod
    def empty(cls, players: Sequence[str] = ()) -> "ObservationSet":
        return cls(players, [], [], [], [0], [], [0], [])

    @classmethod
    def from_rows(cls, rows: Iterable[ObservationRow], players: Optional[Sequence[str]] = None):
        rows = list(rows)
        if players is None:
            players = sorted({p for r in rows for p in r.attackers + r.defenders})
        index = {p: i for i, p in enumerate(players)}
        att_ptr, att_idx, def_ptr, def_idx = [0], [], [0], []
        for r in rows:
            if set(r.attackers) & set(r.defenders):
                raise ValueError(f"row has overlapping attackers and defenders: {r}")
            try:
                att_idx.extend(index[p] for p in r.attackers)
                def_idx.extend(index[p] for p in r.defenders)
            except KeyError as exc:
                raise ValueError(f"player {exc.args[0]} missing from index") from None
            att_ptr.append(len(att_idx))
            def_ptr.append(len(def_idx))
        return cls(
            players,
            [r.response for r in rows],
            [r.weight for r in rows],
            [r.home_attacking for r in rows],
            att_ptr,
            att_idx,
            def_ptr,
            def_idx,
            [r.season for r in rows],
        )

    def rows(self) -> Iterator[ObservationRow]:
        for k in range(len(self)):
            yield ObservationRow(
                response=float(self.response[k]),
                weight=float(self.weight[k]),
                attackers=tuple(self.players[i] for i in self.att_idx[self.att_ptr[k] : self.att_ptr[k + 1]]),
                defenders=tuple(self.players[i] for i in self.def_idx[self.def_ptr[k] : self.def_ptr[k + 1]]),
                home_attacking=bool(self.home[k]),
                season=str(self.season[k]),
            )

    def subset(self, mask) -> "ObservationSet":
        """Rows selected by a boolean mask; the player index is kept."""
        return ObservationSet.from_rows(
            (r for r, keep in zip(self.rows(), np.asarray(mask, dtype=bool)) if keep), self.players
        )

    def concat(self, other: "ObservationSet") -> "ObservationSet":
        players = list(self.players) + [p for p in other.players if p not in set(self.players)]
        return ObservationSet.from_rows(list(self.rows()) + list(other.rows()), players)

    def design(self, coords: Dict[str, int], n_coords: int) -> sp.csr_matrix:
        """Sparse design: +1 on each attacker's alpha, -1 on each defender's beta.

        ``coords`` maps player id to the alpha coordinate; beta sits at alpha + 1.
        """
        return self._cached(coords, n_coords)["X"]

    def gram(self, coords: Dict[str, int], n_coords: int) -> np.ndarray:
        """Dense ``X' W X`` for the same coordinate layout."""
        entry = self._cached(coords, n_coords)
        if "G" not in entry:
            X = entry["X"]
            entry["G"] = np.asarray((X.T @ X.multiply(self.weight[:, None])).todense())
        return entry["G"]

    def _cached(self, coords: Dict[str, int], n_coords: int) -> dict:
        # one layout at a time: chains re-use the same belief index across evaluations
        key = (tuple(coords[p] if p in coords else -1 for p in self.players), n_coords)
        cache = self.__dict__.setdefault("_layout_cache", {})
        if key in cache:
            return cache[key]
        if -1 in key[0]:
            missing = next(p for p in self.players if p not in coords)
            raise ValueError(f"player {missing} is not indexed in the belief")
        col_of = np.array(key[0], dtype=np.int64)
        n = len(self)
        rows = np.concatenate(
            [np.repeat(np.arange(n), np.diff(self.att_ptr)), np.repeat(np.arange(n), np.diff(self.def_ptr))]
        )
        cols = np.concatenate([col_of[self.att_idx], col_of[self.def_idx] + 1])
        data = np.concatenate([np.ones(len(self.att_idx)), -np.ones(len(self.def_idx))])
        X = sp.csr_matrix((data, (rows, cols)), shape=(n, n_coords))
        cache.clear()
        cache[key] = {"X": X}
        return cache[key]

    def write_csv(self, out: IO[str]) -> None:
        """Audit export: response, weight, five attacker and five defender columns, flag, season."""
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(
            ["response", "weight"]
            + [f"att{i}" for i in range(1, 6)]
            + [f"def{i}" for i in range(1, 6)]
            + ["home_attacking", "season"]
        )
        for r in self.rows():
            att = list(r.attackers) + [""] * (5 - len(r.attackers))
            dfn = list(r.defenders) + [""] * (5 - len(r.defenders))
            writer.writerow([repr(r.response), repr(r.weight)] + att[:5] + dfn[:5] + [int(r.home_attacking), r.season])


def build_observations(
    intervals: Iterable[Interval], seasons: Optional[Iterable[str]] = None
) -> ObservationSet:
    """Turn included intervals into observation rows.

    Excluded intervals and intervals outside ``seasons`` are skipped; a side
    with zero possessions contributes no row.
    """
    wanted = None if seasons is None else {str(s) for s in seasons}
    players: set = set()
    kept: List[Interval] = []
    for iv in intervals:
        if iv.excluded or (wanted is not None and iv.season not in wanted):
            continue
        if iv.home_on_court & iv.away_on_court:
            raise ValueError(
                f"interval {iv.game_id}#{iv.idx} has players on both sides: "
                f"{sorted(iv.home_on_court & iv.away_on_court)}"
            )
        if len(iv.home_on_court) != 5 or len(iv.away_on_court) != 5:
            raise ValueError(f"interval {iv.game_id}#{iv.idx} does not have five players per side")
        kept.append(iv)
        players |= iv.home_on_court | iv.away_on_court
    order = sorted(players)
    index = {p: i for i, p in enumerate(order)}

    response, weight, home, season = [], [], [], []
    att_idx: List[int] = []
    def_idx: List[int] = []
    for iv in kept:
        home_idx = sorted(index[p] for p in iv.home_on_court)
        away_idx = sorted(index[p] for p in iv.away_on_court)
        for n, pts, is_home in ((iv.n_home_poss, iv.pts_home, True), (iv.n_away_poss, iv.pts_away, False)):
            if n <= 0:
                continue
            response.append(100.0 * pts / n)
            weight.append(float(n))
            home.append(is_home)
            season.append(iv.season)
            att_idx.extend(home_idx if is_home else away_idx)
            def_idx.extend(away_idx if is_home else home_idx)
    ptr = np.arange(0, 5 * len(response) + 1, 5)
    return ObservationSet(order, response, weight, home, ptr, att_idx, ptr.copy(), def_idx, season)


def split_by_season(obs: ObservationSet, seasons: Sequence[str]) -> List[ObservationSet]:
    """One set per season label, each with its own (sorted) player index."""
    out = []
    for label in seasons:
        rows = [r for r in obs.rows() if r.season == str(label)]
        out.append(ObservationSet.from_rows(rows))
    return out
