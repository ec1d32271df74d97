"""Regressing ability estimates on per-40-minute box-score statistics.

Each player's estimate ``y_i`` has a known standard error ``se_i`` and the model
is ``y_i = a_0 + sum_j a_j x_ij + se_i * nu_i`` with standard normal ``nu``.
The noise scale is known, so coefficient covariances are ``(A' W A)^-1`` with
``W = diag(1 / se^2)`` and no residual-variance factor.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import IO, BinaryIO, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

logger = logging.getLogger(__name__)

STAT_COLUMNS = (
    "fg_pct", "ft_pct", "three_pct",
    "tov_40", "trb_40", "ast_40", "pts_40", "stl_40", "blk_40", "pf_40",
)
STAT_LABELS = {
    "fg_pct": "field goal %",
    "ft_pct": "free throw %",
    "three_pct": "3 pointer %",
    "tov_40": "turnovers/40 mins",
    "trb_40": "total rebounds/40 mins",
    "ast_40": "assists/40 mins",
    "pts_40": "points/40 mins",
    "stl_40": "steals/40 mins",
    "blk_40": "blocks/40 mins",
    "pf_40": "personal fouls/40 mins",
}
PCT_COLUMNS = ("fg_pct", "ft_pct", "three_pct")
POSITIONS = ("guard", "forward", "center")
# points scored is not a plausible cause of defensive ability
OFFENSE_CANDIDATES = STAT_COLUMNS
DEFENSE_CANDIDATES = tuple(c for c in STAT_COLUMNS if c != "pts_40")
Z95 = float(stats.norm.ppf(0.975))


class RankDeficientError(ValueError):
    def __init__(self, columns: Sequence[str]):
        super().__init__(f"design is rank deficient; collinear columns: {', '.join(columns)}")
        self.columns = list(columns)


@dataclass
class RegressionFit:
    names: Tuple[str, ...]
    coef: np.ndarray
    stderr: np.ndarray
    intercept: float
    intercept_se: float
    X: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    se: np.ndarray = field(repr=False)
    players: Tuple[str, ...] = ()
    std_coef: Optional[np.ndarray] = None
    std_stderr: Optional[np.ndarray] = None
    dropped: Tuple[str, ...] = ()
    notices: List[str] = field(default_factory=list)

    @property
    def weights(self) -> np.ndarray:
        return 1.0 / self.se**2

    @property
    def ci(self) -> np.ndarray:
        return np.column_stack([self.coef - Z95 * self.stderr, self.coef + Z95 * self.stderr])

    @property
    def std_ci(self) -> Optional[np.ndarray]:
        if self.std_coef is None:
            return None
        return np.column_stack([self.std_coef - Z95 * self.std_stderr, self.std_coef + Z95 * self.std_stderr])

    @property
    def pvalues(self) -> np.ndarray:
        return 2.0 * stats.norm.sf(np.abs(self.coef / self.stderr))

    @property
    def fitted(self) -> np.ndarray:
        return self.intercept + self.X @ self.coef

    @property
    def r2(self) -> float:
        return r_squared(self)

    def coefficient(self, name: str) -> float:
        return float(self.coef[self.names.index(name)])


def _check_inputs(X, y, se, names):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    se = np.asarray(se, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    names = tuple(names)
    if X.shape != (len(y), len(names)) or se.shape != y.shape:
        raise ValueError("X must be n x k with one name per column; y and se length n")
    if not (np.all(np.isfinite(se)) and np.all(se > 0)):
        raise ValueError("standard errors must be finite and positive")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("X and y must be finite")
    if len(set(names)) != len(names):
        raise ValueError("duplicate covariate names")
    return X, y, se, names


def wls_fit(X, y, se, names: Sequence[str], players: Sequence[str] = ()) -> RegressionFit:
    """Weighted least squares with an intercept and known per-row noise scales."""
    X, y, se, names = _check_inputs(X, y, se, names)
    A = np.column_stack([np.ones(len(y)), X])
    sw = 1.0 / se
    Aw = A * sw[:, None]
    u, s, vt = np.linalg.svd(Aw, full_matrices=False)
    tol = s.max(initial=0.0) * max(Aw.shape) * np.finfo(float).eps
    if len(s) < A.shape[1] or s[-1] <= tol:
        null = vt[-1] if len(s) == A.shape[1] else np.linalg.svd(Aw)[2][-1]
        labels = ("intercept",) + names
        involved = [labels[i] for i in np.flatnonzero(np.abs(null) > 1e-6 * np.abs(null).max())]
        raise RankDeficientError(involved)
    beta = vt.T @ ((u.T @ (y * sw)) / s)
    cov = (vt.T / s**2) @ vt
    sd = np.sqrt(np.diagonal(cov))
    return RegressionFit(
        names=names, coef=beta[1:], stderr=sd[1:], intercept=float(beta[0]), intercept_se=float(sd[0]),
        X=X, y=y, se=se, players=tuple(players),
    )


def r_squared(fit: RegressionFit) -> float:
    """1 - RSS_w / TSS_w with the total sum of squares about the weighted mean."""
    w = fit.weights
    ybar = np.sum(w * fit.y) / np.sum(w)
    tss = float(np.sum(w * (fit.y - ybar) ** 2))
    if tss <= 0:
        raise ValueError("outcome has zero weighted variance; R^2 undefined")
    rss = float(np.sum(w * (fit.y - fit.fitted) ** 2))
    return 1.0 - rss / tss


def backward_select(
    X, y, se, names: Sequence[str], alpha_level: float = 0.05, players: Sequence[str] = ()
) -> RegressionFit:
    """Drop the least significant covariate until every survivor has p <= alpha_level.

    Columns are handled in name order and equal p-values are broken by name,
    so the result does not depend on how the candidates were ordered.
    """
    X, y, se, names = _check_inputs(X, y, se, names)
    order = sorted(range(len(names)), key=lambda j: names[j])
    keep = [names[j] for j in order]
    cols = {n: X[:, j] for j, n in enumerate(names)}
    dropped: List[str] = []
    while True:
        Xk = np.column_stack([cols[n] for n in keep]) if keep else np.zeros((len(y), 0))
        fit = wls_fit(Xk, y, se, keep, players)
        if not keep:
            msg = "no covariate survived backward selection; returning the intercept-only fit"
            warnings.warn(msg, stacklevel=2)
            fit.notices.append(msg)
            break
        p = fit.pvalues
        worst = min(range(len(keep)), key=lambda j: (-p[j], keep[j]))
        if p[worst] <= alpha_level:
            break
        dropped.append(keep.pop(worst))
    fit.dropped = tuple(dropped)
    return fit


def standardise_fit(fit: RegressionFit, weighted: bool = False) -> RegressionFit:
    """Refit the selected model on centred and scaled covariates and outcome.

    Scaling uses unweighted means and sample SDs by default (``weighted=True``
    uses the fit's 1/se^2 weights).  Zero-variance covariates are left out of
    the standardised refit with a notice.
    """
    w = fit.weights if weighted else np.ones(len(fit.y))

    def centre_scale(v):
        m = np.sum(w * v) / np.sum(w)
        if weighted:
            var = np.sum(w * (v - m) ** 2) / np.sum(w) * len(v) / (len(v) - 1)
        else:
            var = np.var(v, ddof=1)
        return m, float(np.sqrt(var))

    my, sy = centre_scale(fit.y)
    if not sy > 0:
        raise ValueError("outcome has zero variance; cannot standardise")
    notices = list(fit.notices)
    kept, Z, scales = [], [], []
    for j, name in enumerate(fit.names):
        m, s = centre_scale(fit.X[:, j])
        if not s > 0:
            notices.append(f"covariate {name} has zero variance and is left out of the standardised fit")
            continue
        kept.append(j)
        Z.append((fit.X[:, j] - m) / s)
        scales.append(s)
    Zm = np.column_stack(Z) if Z else np.zeros((len(fit.y), 0))
    sfit = wls_fit(Zm, (fit.y - my) / sy, fit.se / sy, [fit.names[j] for j in kept])
    std_coef = np.full(len(fit.names), np.nan)
    std_se = np.full(len(fit.names), np.nan)
    std_coef[kept] = sfit.coef
    std_se[kept] = sfit.stderr
    return replace(fit, std_coef=std_coef, std_stderr=std_se, notices=notices)


def predict_ability(fit: RegressionFit, row: Mapping[str, float]) -> float:
    """Raw-scale prediction, intercept included, from a mapping of covariate values."""
    missing = [n for n in fit.names if n not in row or row[n] is None]
    if missing:
        raise KeyError(f"stats row lacks selected covariates: {missing}")
    return float(fit.intercept + sum(c * float(row[n]) for n, c in zip(fit.names, fit.coef)))


# ----------------------------------------------------------------------- stats tables


@dataclass
class StatsTable:
    players: Tuple[str, ...]
    positions: Tuple[str, ...]
    values: np.ndarray  # n x len(STAT_COLUMNS)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.players), len(STAT_COLUMNS)):
            raise ValueError("stats table shape does not match players x columns")
        pct = self.values[:, [STAT_COLUMNS.index(c) for c in PCT_COLUMNS]]
        if np.any(pct < 0) or np.any(pct > 100):
            raise ValueError("percentages must lie in [0, 100]")
        rates = self.values[:, [STAT_COLUMNS.index(c) for c in STAT_COLUMNS if c not in PCT_COLUMNS]]
        if np.any(rates < 0):
            raise ValueError("per-40 rates must be non-negative")

    def column(self, name: str) -> np.ndarray:
        return self.values[:, STAT_COLUMNS.index(name)]

    def row(self, player: str) -> Dict[str, float]:
        i = self.players.index(player)
        return {c: float(v) for c, v in zip(STAT_COLUMNS, self.values[i])}

    def subset(self, mask) -> "StatsTable":
        mask = np.asarray(mask, dtype=bool)
        return StatsTable(
            tuple(p for p, k in zip(self.players, mask) if k),
            tuple(p for p, k in zip(self.positions, mask) if k),
            self.values[mask],
        )


def read_stats_csv(stream: IO[str], position_map: Optional[Mapping[str, str]] = None) -> StatsTable:
    """One row per player: ``player_id``, the ten statistic columns and ``position``.

    ``position_map`` relabels positions, e.g. ``{"center": "forward"}`` to pool
    centres with forwards.
    """
    reader = csv.DictReader(stream)
    need = {"player_id", "position", *STAT_COLUMNS}
    missing = need - set(reader.fieldnames or ())
    if missing:
        raise ValueError(f"stats file lacks columns {sorted(missing)}")
    players, positions, values = [], [], []
    for lineno, row in enumerate(reader, start=2):
        pos = row["position"].strip().lower()
        if position_map:
            pos = position_map.get(pos, pos)
        try:
            values.append([float(row[c]) for c in STAT_COLUMNS])
        except ValueError as exc:
            raise ValueError(f"stats line {lineno}: {exc}") from None
        players.append(row["player_id"])
        positions.append(pos)
    return StatsTable(tuple(players), tuple(positions), np.array(values).reshape(-1, len(STAT_COLUMNS)))


def write_stats_csv(table: StatsTable, out: IO[str]) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["player_id", *STAT_COLUMNS, "position"])
    for p, pos, vals in zip(table.players, table.positions, table.values):
        writer.writerow([p, *[repr(float(v)) for v in vals], pos])


def ability_model(
    table: StatsTable,
    estimates: Mapping[str, Tuple[float, float]],
    candidates: Sequence[str],
    alpha_level: float = 0.05,
) -> RegressionFit:
    """Backward selection then standardisation for players having both stats and an estimate."""
    unknown = [c for c in candidates if c not in STAT_COLUMNS]
    if unknown:
        raise ValueError(f"unknown covariates {unknown}")
    rows = [i for i, p in enumerate(table.players) if p in estimates]
    if not rows:
        raise ValueError("no player has both statistics and an ability estimate")
    players = tuple(table.players[i] for i in rows)
    X = np.column_stack([table.column(c)[rows] for c in candidates])
    y = np.array([estimates[p][0] for p in players])
    se = np.array([estimates[p][1] for p in players])
    fit = backward_select(X, y, se, candidates, alpha_level, players)
    return standardise_fit(fit)


def position_subset_fit(
    table: StatsTable,
    estimates: Mapping[str, Tuple[float, float]],
    position: str,
    candidates: Sequence[str],
    alpha_level: float = 0.05,
    min_players: int = 10,
) -> RegressionFit:
    """The same pipeline restricted to one position (``all`` keeps everybody)."""
    if position == "all":
        sub = table
    else:
        sub = table.subset([pos == position for pos in table.positions])
    n = sum(1 for p in sub.players if p in estimates)
    if n < min_players:
        raise ValueError(f"only {n} {position} players with estimates; need at least {min_players}")
    return ability_model(sub, estimates, candidates, alpha_level)


# -------------------------------------------------------------------------- reports


def format_fit_report(fit: RegressionFit, title: str = "") -> str:
    """Plain-text table: covariate, standardised coefficient (95% CI), raw coefficient (95% CI)."""
    lines = [title] if title else []
    lines.append(f"{'covariate':<26}{'standardised (95% CI)':>30}{'raw (95% CI)':>34}")
    std_ci = fit.std_ci
    order = range(len(fit.names))
    if fit.std_coef is not None:
        order = sorted(order, key=lambda j: -abs(np.nan_to_num(fit.std_coef[j])))
    for j in order:
        label = STAT_LABELS.get(fit.names[j], fit.names[j])
        raw = f"{fit.coef[j]:.3f} ({fit.ci[j, 0]:.3f}, {fit.ci[j, 1]:.3f})"
        if fit.std_coef is not None and np.isfinite(fit.std_coef[j]):
            std = f"{fit.std_coef[j]:.2f} ({std_ci[j, 0]:.2f}, {std_ci[j, 1]:.2f})"
        else:
            std = "-"
        lines.append(f"{label:<26}{std:>30}{raw:>34}")
    lo, hi = fit.intercept - Z95 * fit.intercept_se, fit.intercept + Z95 * fit.intercept_se
    lines.append(f"{'intercept':<26}{'-':>30}{f'{fit.intercept:.3f} ({lo:.3f}, {hi:.3f})':>34}")
    try:
        lines.append(f"R^2 = {r_squared(fit):.3f}")
    except ValueError:
        lines.append("R^2 undefined")
    if fit.dropped:
        lines.append("dropped: " + ", ".join(fit.dropped))
    lines.extend(f"note: {n}" for n in fit.notices)
    return "\n".join(lines) + "\n"


def top_predicted(fit: RegressionFit, table: StatsTable, k: int = 10) -> List[Tuple[str, float]]:
    preds = [(p, predict_ability(fit, table.row(p))) for p in table.players]
    preds.sort(key=lambda t: (-t[1], t[0]))
    return preds[:k]


def write_scatter_csv(fit: RegressionFit, out: IO[str]) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["player_id", "estimate", "fitted", "se", "weight"])
    for p, y, f, s in zip(fit.players, fit.y, fit.fitted, fit.se):
        writer.writerow([p, repr(float(y)), repr(float(f)), repr(float(s)), repr(float(1.0 / s**2))])


def write_scatter_svg(fit: RegressionFit, target: Union[str, Path, BinaryIO], title: str = "") -> None:
    """Fitted value against estimate, marker area proportional to 1/se^2."""
    from matplotlib.figure import Figure

    w = fit.weights
    sizes = 60.0 * w / w.max()
    fig = Figure(figsize=(5, 5))
    ax = fig.subplots()
    ax.scatter(fit.fitted, fit.y, s=sizes, alpha=0.6, edgecolors="none")
    lo = min(fit.fitted.min(), fit.y.min())
    hi = max(fit.fitted.max(), fit.y.max())
    ax.plot([lo, hi], [lo, hi], color="grey", lw=0.8)
    ax.set_xlabel("fitted value")
    ax.set_ylabel("estimated ability")
    try:
        ax.set_title(f"{title} (R^2 = {r_squared(fit):.2f})".strip())
    except ValueError:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(str(target) if isinstance(target, (str, Path)) else target, format="svg")
