"""Command-line pipeline: simulate, ingest, validate, fit and rate."""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import logging
import os
import sys
import tempfile
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from ._optim import ConvergenceError
from .chain import (
    SeasonError,
    chain_fit,
    fit_chain_model,
    fit_transition_params,
    isolated_all,
    single_season_fit,
)
from .gauss import BELIEF_FORMAT_VERSION, fit_hyperparameters, load_belief, save_belief
from .ingest import (
    LogFormatError,
    crosscheck_boxscore,
    intervals_from_logs,
    parse_event_log,
    read_boxscores,
    read_intervals_csv,
    serialize_event_log,
    write_boxscores,
    write_intervals_csv,
)
from .observations import ObservationSet, build_observations, split_by_season
from .params import (
    HyperParams,
    TransitionParams,
    config_items,
    format_config,
    hyper_from_config,
    parse_config,
    transition_from_config,
)
from .ratings import (
    isolated_ratings,
    pairwise_prob,
    ratings_table,
    read_ratings_csv,
    select_awards,
)
from .statsreg import (
    DEFENSE_CANDIDATES,
    OFFENSE_CANDIDATES,
    format_fit_report,
    position_subset_fit,
    read_stats_csv,
    top_predicted,
    write_scatter_csv,
    write_scatter_svg,
)
from .synth import SynthConfig, simulate, synthetic_stats, write_stats_rows, write_truth_csv

logger = logging.getLogger("courtrate")

FORMAT_VERSIONS = {
    "events": "courtrate-events/1",
    "intervals": "courtrate-intervals/1",
    "belief": BELIEF_FORMAT_VERSION,
    "ratings": "courtrate-ratings/1",
    "config": "courtrate-config/1",
}
MODELS = ("multi", "single", "isolated")


class DataError(Exception):
    """Problem with the user's inputs; reported on stderr with exit status 1."""


# ------------------------------------------------------------------------ file output


def atomic_write(path: Path, write: Callable, binary: bool = False) -> Path:
    """Write through a temporary file in the same directory, then rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb" if binary else "w", **({} if binary else {"encoding": "utf-8", "newline": ""})) as fh:
            write(fh)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise
    return path


def write_text(path: Path, text: str) -> Path:
    return atomic_write(path, lambda fh: fh.write(text))


class Run:
    """Collects outputs of one subcommand and writes its manifest last."""

    def __init__(self, args: argparse.Namespace, config_text: str):
        self.args = args
        self.config_text = config_text
        self.outputs: List[str] = []
        self.out = Path(args.out) if getattr(args, "out", None) else None

    def path(self, name: str) -> Path:
        if self.out is None:
            raise DataError("this command needs --out DIR")
        return self.out / name

    def text(self, name: str, text: str) -> Path:
        p = write_text(self.path(name), text)
        self.outputs.append(name)
        return p

    def write(self, name: str, write: Callable, binary: bool = False) -> Path:
        p = atomic_write(self.path(name), write, binary)
        self.outputs.append(name)
        return p

    def manifest(self, extra: Optional[dict] = None) -> None:
        if self.out is None:
            return
        record = {
            "command": self.args.command,
            "argv": self.args.argv,
            "package_version": __version__,
            "config_sha256": hashlib.sha256(self.config_text.encode("utf-8")).hexdigest(),
            "seed": getattr(self.args, "seed", None),
            "format_versions": FORMAT_VERSIONS,
            "outputs": sorted(self.outputs),
        }
        record.update(extra or {})
        write_text(self.path(f"manifest-{self.args.command}.json"), json.dumps(record, indent=2, sort_keys=True) + "\n")


# ------------------------------------------------------------------------- inputs


def _load_config(args) -> Tuple[dict, str]:
    if not getattr(args, "config", None):
        return {}, ""
    text = Path(args.config).read_text(encoding="utf-8")
    return parse_config(text), text


def _season_list(args) -> Optional[List[str]]:
    if not getattr(args, "seasons", None):
        return None
    return [s.strip() for s in args.seasons.split(",") if s.strip()]


def _load_seasons(args) -> Tuple[List[str], List[ObservationSet]]:
    with open(args.intervals, encoding="utf-8", newline="") as fh:
        intervals = read_intervals_csv(fh)
    wanted = _season_list(args)
    obs = build_observations(intervals, wanted)
    if len(obs) == 0:
        raise DataError("no observations")
    labels = wanted if wanted is not None else sorted({str(s) for s in obs.season})
    return labels, split_by_season(obs, labels)


def _hyper(cfg: dict, seasons: Sequence[ObservationSet]) -> HyperParams:
    if str(cfg.get("hyper", "")).lower() == "fit":
        return fit_hyperparameters(seasons, hyper_from_config(cfg)).params
    return hyper_from_config(cfg)


def _transition(cfg: dict, seasons: Sequence[ObservationSet], hyper: HyperParams) -> TransitionParams:
    if str(cfg.get("transition", "")).lower() == "fit" and len(seasons) >= 2:
        return fit_transition_params(seasons, hyper, transition_from_config(cfg)).params
    return transition_from_config(cfg)


def _names(args) -> Dict[str, str]:
    if not getattr(args, "names", None):
        return {}
    import csv

    with open(args.names, encoding="utf-8", newline="") as fh:
        return {row["player_id"]: row["name"] for row in csv.DictReader(fh)}


# ---------------------------------------------------------------------- subcommands


def cmd_simulate(args, cfg, run: Run) -> int:
    sc = SynthConfig.from_mapping(cfg)
    if args.seed is not None:
        sc = sc.replace(seed=args.seed)
    if args.seasons:
        sc = sc.replace(seasons=int(args.seasons))
    truth, data = simulate(sc)
    logs = [log for d in data for log in d.logs]
    run.write("events.jsonl", lambda fh: serialize_event_log(logs, fh))
    box = {gid: b for d in data for gid, b in d.boxscores.items()}
    run.write("boxscores.csv", lambda fh: write_boxscores(box, fh))
    run.write("truth.csv", lambda fh: write_truth_csv(truth, fh))
    final = truth.seasons[-1]
    run.write("stats.csv", lambda fh: write_stats_rows(synthetic_stats(final, sc.seed, sc.hyper), fh))
    run.write("intervals_truth.csv", lambda fh: write_intervals_csv([iv for d in data for iv in d.intervals], fh))
    run.text("synth.cfg", format_config(
        {**{k: v for k, v in vars(sc).items() if k not in ("hyper", "tp")},
         **dict(config_items(sc.hyper, sc.tp))},
        header="synthetic league configuration",
    ))
    run.manifest({"seed": sc.seed, "games": len(logs), "seasons": [d.label for d in data]})
    print(f"simulated {len(logs)} games over {len(data)} season(s) into {run.out}")
    return 0


def cmd_ingest(args, cfg, run: Run) -> int:
    with open(args.logs, encoding="utf-8") as fh:
        logs = parse_event_log(fh)
    intervals = intervals_from_logs(logs)
    rejected = [(log.game_id, log.rejected) for log in logs if log.rejected]
    run.write("intervals.csv", lambda fh: write_intervals_csv(intervals, fh))
    total = sum(iv.duration for iv in intervals)
    excluded = sum(iv.duration for iv in intervals if iv.excluded)
    frac = excluded / total if total else 0.0
    run.manifest({"games": len(logs), "rejected_games": rejected, "excluded_fraction": frac})
    print(f"{len(logs)} games, {len(intervals)} intervals, {len(rejected)} rejected, excluded time {frac:.3%}")
    return 0


def cmd_validate(args, cfg, run: Run) -> int:
    with open(args.intervals, encoding="utf-8", newline="") as fh:
        intervals = read_intervals_csv(fh)
    with open(args.boxscores, encoding="utf-8", newline="") as fh:
        box = read_boxscores(fh)
    by_game: Dict[str, list] = {}
    for iv in intervals:
        by_game.setdefault(iv.game_id, []).append(iv)
    lines = ["game_id,flagged,max_discrepancy_s,excluded_fraction,flagged_players"]
    flagged = 0
    for gid in sorted(set(by_game) | set(box)):
        rep = crosscheck_boxscore(by_game.get(gid, []), box.get(gid, {}), args.tolerance)
        worst = max(rep.discrepancies.values(), default=0.0)
        flagged += rep.flagged
        lines.append(f"{gid},{int(rep.flagged)},{worst!r},{rep.excluded_fraction!r},{';'.join(rep.flagged_players)}")
    report = "\n".join(lines) + "\n"
    if run.out is not None:
        run.text("validation.csv", report)
        run.manifest({"tolerance": args.tolerance, "flagged_games": flagged})
    else:
        sys.stdout.write(report)
    print(f"{flagged} of {len(lines) - 1} games flagged (tolerance {args.tolerance:g} s)")
    return 0


def cmd_fit_hyper(args, cfg, run: Run) -> int:
    labels, seasons = _load_seasons(args)
    fit = fit_hyperparameters(seasons, hyper_from_config(cfg))
    values = dict(config_items(fit.params))
    header = "maximum-likelihood hyperparameters\n" + "\n".join(
        f"se {k} = {v:.4g}" for k, v in fit.stderr.items()
    ) + f"\nloglik = {fit.loglik!r}\nseasons = {','.join(labels)}"
    text = format_config(values, header)
    if run.out is not None:
        run.text("hyper.cfg", text)
        run.manifest({"seasons": labels, "loglik": fit.loglik})
    print(text, end="")
    return 0


def cmd_fit_transition(args, cfg, run: Run) -> int:
    labels, seasons = _load_seasons(args)
    if len(seasons) < 2:
        raise DataError("fitting the transition needs at least two seasons")
    if args.order == "joint":
        res = fit_chain_model(seasons, hyper_from_config(cfg), transition_from_config(cfg), order="joint")
        values = {**dict(config_items(res.hyper)), **dict(config_items(res.transition))}
        header = f"joint maximum-likelihood fit\nloglik = {res.loglik!r}"
        converged = res.converged
    else:
        hyper = _hyper(cfg, seasons)
        fit = fit_transition_params(seasons, hyper, transition_from_config(cfg, TransitionParams(0.8, 1.0, 1.0)))
        values = dict(config_items(fit.params))
        header = "maximum-likelihood transition parameters\n" + "\n".join(
            f"se {k} = {v:.4g}" for k, v in fit.stderr.items()
        ) + f"\nloglik = {fit.loglik!r}\nconverged = {fit.converged}"
        converged = fit.converged
    text = format_config(values, header + f"\nseasons = {','.join(labels)}")
    if run.out is not None:
        run.text("transition.cfg", text)
        run.manifest({"seasons": labels, "converged": converged, "order": args.order})
    print(text, end="")
    return 0


def _fit_chain(args, cfg):
    labels, seasons = _load_seasons(args)
    if len(seasons[-1]) == 0:
        raise DataError(f"no observations in the final season {labels[-1]}")
    hyper = _hyper(cfg, seasons)
    tp = _transition(cfg, seasons, hyper)
    return labels, seasons, hyper, tp, chain_fit(seasons, hyper, tp, labels=labels)


def _fit_models(args, cfg, models: Sequence[str]):
    labels, seasons, hyper, tp, chain = _fit_chain(args, cfg)
    names = _names(args)
    final_players = tuple(sorted(seasons[-1].players))
    tables = {}
    for model in models:
        if model == "multi":
            tables[model] = ratings_table(chain.final, "multi", final_players, names)
        elif model == "single":
            tables[model] = ratings_table(single_season_fit(seasons[-1], hyper), "single", final_players, names)
        else:
            tables[model] = isolated_ratings(isolated_all(seasons, hyper, tp, chain), names)
    return labels, seasons, hyper, tp, chain, tables


def cmd_rate(args, cfg, run: Run) -> int:
    models = MODELS if args.all_models else (args.model,)
    labels, seasons, hyper, tp, chain, tables = _fit_models(args, cfg, models)
    for model, table in tables.items():
        run.write(f"ratings_{model}.csv", table.write_csv)
    for label, start, end in zip(chain.labels, chain.starts, chain.ends):
        run.write(f"belief_{label}_start.npz", lambda fh, b=start: save_belief(b, fh), binary=True)
        run.write(f"belief_{label}_end.npz", lambda fh, b=end: save_belief(b, fh), binary=True)
    if args.all_models:
        run.text("ratings_side_by_side.txt", _side_by_side(tables))
    run.text("params.cfg", format_config({**dict(config_items(hyper)), **dict(config_items(tp))},
                                         header="parameters used for rating"))
    run.manifest({"seasons": labels, "models": list(models)})
    top = tables[models[0]].top("combined", 10)
    print(f"top combined ({models[0]}): " + ", ".join(top))
    return 0


def _side_by_side(tables) -> str:
    models = list(tables)
    lines = []
    for kind, prefix in (("offense", "off"), ("defense", "def"), ("combined", "comb")):
        lines.append(f"{kind} ratings: mean (se) rank")
        head = f"{'player':<10}" + "".join(f"{m:>26}" for m in models)
        lines.append(head)
        first = tables[models[0]]
        for p in first.top(kind, 10):
            cells = []
            for m in models:
                row = tables[m].row(p)
                cells.append(f"{row[prefix + '_mean']:.2f} ({row[prefix + '_se']:.2f}) {row[prefix + '_rank']}")
            lines.append(f"{first.names.get(p, p):<10}" + "".join(f"{c:>26}" for c in cells))
        lines.append("")
    return "\n".join(lines)


def cmd_compare(args, cfg, run: Run) -> int:
    belief = load_belief(args.belief)
    for p in (args.a, args.b):
        if p not in belief:
            raise DataError(f"player {p} is not in the belief")
    prob = pairwise_prob(belief, args.a, args.b)
    print(f"P({args.a} stronger than {args.b}) = {prob!r}")
    return 0


def cmd_awards(args, cfg, run: Run) -> int:
    labels, seasons, hyper, tp, chain = _fit_chain(args, cfg)
    iso = isolated_all(seasons, hyper, tp, chain)
    slate = select_awards(chain, iso)
    report = slate.report(_names(args))
    if run.out is not None:
        run.text("awards.txt", report)
        run.manifest({"seasons": labels})
    sys.stdout.write(report)
    return 0


def _have_matplotlib() -> bool:
    import importlib.util

    return importlib.util.find_spec("matplotlib") is not None


def cmd_regress_stats(args, cfg, run: Run) -> int:
    pos_map = {}
    if args.pool_centers:
        pos_map["center"] = "forward"
    with open(args.stats, encoding="utf-8", newline="") as fh:
        table = read_stats_csv(fh, pos_map)
    with open(args.ratings, encoding="utf-8", newline="") as fh:
        rows = read_ratings_csv(fh)
    if not rows:
        raise DataError("ratings file is empty")
    off = {r["player_id"]: (r["off_mean"], r["off_se"]) for r in rows}
    dfn = {r["player_id"]: (r["def_mean"], r["def_se"]) for r in rows}
    report = []
    for label, est, cands in (("offense", off, OFFENSE_CANDIDATES), ("defense", dfn, DEFENSE_CANDIDATES)):
        fit = position_subset_fit(table, est, args.position, cands, args.alpha)
        report.append(format_fit_report(fit, f"{label} ({args.position})"))
        top = top_predicted(fit, table.subset([p in est for p in table.players]), 10)
        report.append("top ten by fitted value: " + ", ".join(p for p, _ in top) + "\n")
        run.write(f"scatter_{label}.csv", lambda fh, f=fit: write_scatter_csv(f, fh))
        if _have_matplotlib():
            run.write(f"scatter_{label}.svg", lambda fh, f=fit, t=label: write_scatter_svg(f, fh, t), binary=True)
        else:
            logger.warning("matplotlib is not installed; skipping scatter_%s.svg", label)
    text = "\n".join(report)
    run.text("regression.txt", text)
    run.manifest({"position": args.position, "alpha": args.alpha})
    sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="courtrate", description="Bayesian offensive/defensive player ratings")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="plain-text key = value file")
        p.add_argument("--out", help="output directory")
        p.set_defaults(func=func)
        return p

    p = add("simulate", cmd_simulate, "generate a synthetic league")
    p.add_argument("--seed", type=int)
    p.add_argument("--seasons", help="number of seasons")

    p = add("ingest", cmd_ingest, "parse event logs into intervals")
    p.add_argument("logs")

    p = add("validate", cmd_validate, "cross-check intervals against box scores")
    p.add_argument("intervals")
    p.add_argument("boxscores")
    p.add_argument("--tolerance", type=float, default=30.0)

    for name, func, help_text in (
        ("fit-hyper", cmd_fit_hyper, "maximum-likelihood population prior and noise"),
        ("fit-transition", cmd_fit_transition, "maximum-likelihood between-season transition"),
        ("rate", cmd_rate, "ratings table from the chained seasons"),
        ("awards", cmd_awards, "award slate for the final season"),
    ):
        p = add(name, func, help_text)
        p.add_argument("intervals")
        p.add_argument("--seasons", help="comma-separated season labels, in chronological order")
        p.add_argument("--seed", type=int)
        if name == "fit-transition":
            p.add_argument("--order", choices=("sequential", "joint"), default="sequential")
        if name in ("rate", "awards"):
            p.add_argument("--names", help="CSV with player_id,name")
        if name == "rate":
            p.add_argument("--model", choices=MODELS, default="multi")
            p.add_argument("--all-models", action="store_true")

    p = add("compare", cmd_compare, "probability that player A is stronger than player B")
    p.add_argument("belief", help="belief file written by rate")
    p.add_argument("a")
    p.add_argument("b")

    p = add("regress-stats", cmd_regress_stats, "regress ratings on box-score statistics")
    p.add_argument("stats")
    p.add_argument("ratings")
    p.add_argument("--position", choices=("all", "guard", "forward"), default="all")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--pool-centers", action="store_true", help="treat centers as forwards")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg, text = _load_config(args)
        return args.func(args, cfg, Run(args, text))
    except (DataError, LogFormatError, SeasonError, ConvergenceError, ValueError, KeyError,
            OSError, np.linalg.LinAlgError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"courtrate {args.command}: error: {msg}", file=sys.stderr)
        return 1


run = main

if __name__ == "__main__":
    sys.exit(main())
