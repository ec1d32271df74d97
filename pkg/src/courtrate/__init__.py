"""Bayesian offensive and defensive ratings for basketball players from play-by-play data."""

__version__ = "0.1.0"

from .chain import (
    SeasonChainResult,
    apply_transition,
    chain_fit,
    fit_transition_params,
    inject_players,
    isolated_all,
    isolated_season_fit,
)
from .gauss import (
    GaussianBelief,
    fit_hyperparameters,
    load_belief,
    log_marginal_likelihood,
    posterior_update,
    prior_belief,
    save_belief,
)
from .ingest import GameEvent, GameLog, Interval, crosscheck_boxscore, extract_intervals, parse_event_log
from .observations import ObservationRow, ObservationSet, build_observations
from .params import REFERENCE_TRANSITION, REFERENCE_HYPER, HyperParams, TransitionParams
from .ratings import (
    AwardSlate,
    RatingsTable,
    centred_ratings,
    lineup_matchup,
    pairwise_prob,
    prob_best,
    select_awards,
)
from .statsreg import RegressionFit, backward_select, predict_ability, r_squared, standardise_fit, wls_fit
from .synth import GroundTruth, SynthConfig, advance_truth, gen_league, gen_season

__all__ = [name for name in dir() if not name.startswith("_")]
