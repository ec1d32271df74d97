import numpy as np
import pytest

import courtrate.chain as chain_mod
from courtrate.chain import (
    SeasonError,
    apply_transition,
    chain_fit,
    chain_loglik,
    fit_chain_model,
    fit_transition_params,
    inject_players,
    isolated_all,
    isolated_season_fit,
    reset_player,
    single_season_fit,
)
from courtrate.gauss import GaussianBelief, posterior_update, prior_belief, update_with_loglik
from courtrate.observations import ObservationRow, ObservationSet, build_observations
from courtrate.params import REFERENCE_TRANSITION, REFERENCE_HYPER, TransitionParams
from courtrate.synth import SynthConfig, simulate
from oracles import random_toy

STATIC = TransitionParams(1.0, 0.0, 0.0)


def toy_seasons(rng, n=3, players=6, rows=30):
    out = []
    for t in range(n):
        obs = random_toy(rng, n_players=players, n_rows=rows)
        out.append(ObservationSet.from_rows(
            [ObservationRow(r.response, r.weight, r.attackers, r.defenders, r.home_attacking, str(2000 + t))
             for r in obs.rows()]))
    return out


def hand_belief():
    mean = np.array([10.0, -9.0, 8.0, -10.0])
    cov = np.array([[4.0, 0.5, 1.0, 0.0], [0.5, 2.0, 0.0, 0.25], [1.0, 0.0, 3.0, 0.5], [0.0, 0.25, 0.5, 1.0]])
    return GaussianBelief(("a", "b"), mean, cov)


def test_apply_transition_formula():
    b = hand_belief()
    tp = REFERENCE_TRANSITION
    out = apply_transition(b, tp, REFERENCE_HYPER)
    mu = np.array([REFERENCE_HYPER.mu_alpha, REFERENCE_HYPER.mu_beta] * 2)
    s2 = np.array([tp.s_alpha**2, tp.s_beta**2] * 2)
    np.testing.assert_array_equal(out.mean, tp.p * b.mean + (1 - tp.p) * mu)
    np.testing.assert_array_equal(out.cov, tp.p**2 * b.cov + np.diag(s2))
    # the input is untouched
    np.testing.assert_array_equal(b.cov, hand_belief().cov)
    assert apply_transition(b, STATIC, REFERENCE_HYPER).cov.tolist() == b.cov.tolist()


def test_inject_players():
    b = inject_players(hand_belief(), ["c"], REFERENCE_HYPER)
    assert b.players == ("a", "b", "c")
    np.testing.assert_array_equal(b.cov[:4, :4], hand_belief().cov)
    assert not b.cov[4:, :4].any()
    assert b.cov[4, 4] == REFERENCE_HYPER.sigma_alpha**2 and b.cov[5, 5] == REFERENCE_HYPER.sigma_beta**2
    with pytest.raises(ValueError):
        inject_players(b, ["a"], REFERENCE_HYPER)
    assert inject_players(b, [], REFERENCE_HYPER) is b


def test_single_season_is_plain_posterior(rng):
    (obs,) = toy_seasons(rng, n=1)
    res = chain_fit([obs], REFERENCE_HYPER, REFERENCE_TRANSITION)
    direct = posterior_update(prior_belief(obs.players, REFERENCE_HYPER), obs, REFERENCE_HYPER)
    np.testing.assert_allclose(res.final.mean, direct.mean, atol=1e-12)
    assert res.labels == ["2000"] and res.rookies == [obs.players]


def test_static_chain_equals_pooled_update(rng):
    seasons = toy_seasons(rng, n=3, players=5)
    res = chain_fit(seasons, REFERENCE_HYPER, STATIC)
    pooled = seasons[0].concat(seasons[1]).concat(seasons[2])
    players = res.final.players
    direct = posterior_update(prior_belief(players, REFERENCE_HYPER), pooled, REFERENCE_HYPER)
    np.testing.assert_allclose(res.final.mean, direct.mean, atol=1e-8)
    np.testing.assert_allclose(res.final.cov, direct.cov, atol=1e-8)


def test_chain_can_be_resumed(rng):
    seasons = toy_seasons(rng, n=3)
    whole = chain_fit(seasons, REFERENCE_HYPER, REFERENCE_TRANSITION)
    head = chain_fit(seasons[:2], REFERENCE_HYPER, REFERENCE_TRANSITION)
    tail = chain_fit(seasons[2:], REFERENCE_HYPER, REFERENCE_TRANSITION, initial=head.final)
    np.testing.assert_allclose(tail.final.mean, whole.final.mean, atol=1e-10)
    assert tail.loglik[0] == pytest.approx(whole.loglik[2], abs=1e-8)
    assert chain_loglik(seasons, REFERENCE_HYPER, REFERENCE_TRANSITION) == pytest.approx(whole.total_loglik, abs=1e-8)


def test_rookie_and_absent_bookkeeping():
    def season(label, att, dfn):
        return ObservationSet.from_rows([ObservationRow(100.0, 5.0, att, dfn, True, label),
                                         ObservationRow(90.0, 5.0, dfn, att, False, label)])
    s1 = season("1", ("a", "b"), ("c", "d"))
    s2 = season("2", ("a", "e"), ("c", "f"))
    res = chain_fit([s1, s2], REFERENCE_HYPER, REFERENCE_TRANSITION)
    assert res.rookies == [("a", "b", "c", "d"), ("e", "f")]
    assert res.absent == [(), ("b", "d")]
    assert res.final.players == ("a", "b", "c", "d", "e", "f")
    start, end = res.season("2")
    assert start is res.starts[1] and end is res.final
    with pytest.raises(ValueError):
        chain_fit([s1], REFERENCE_HYPER, REFERENCE_TRANSITION, labels=["1", "2"])


def test_engine_failure_names_season(rng, monkeypatch):
    seasons = toy_seasons(rng, n=2)

    def boom(*args, **kwargs):
        raise np.linalg.LinAlgError("singular")

    monkeypatch.setattr(chain_mod, "update_with_loglik", boom)
    with pytest.raises(SeasonError) as info:
        chain_fit(seasons, REFERENCE_HYPER, REFERENCE_TRANSITION)
    assert info.value.season == "2000"


def test_reset_player():
    b = reset_player(hand_belief(), "b", REFERENCE_HYPER)
    m, c = b.marginal("b")
    assert m.tolist() == [REFERENCE_HYPER.mu_alpha, REFERENCE_HYPER.mu_beta]
    assert c.tolist() == [[REFERENCE_HYPER.sigma_alpha**2, 0.0], [0.0, REFERENCE_HYPER.sigma_beta**2]]
    assert not b.cov[:2, 2:].any()
    np.testing.assert_array_equal(b.cov[:2, :2], hand_belief().cov[:2, :2])


def test_isolated_fit_resets_only_focal(rng):
    seasons = toy_seasons(rng, n=2)
    res = chain_fit(seasons, REFERENCE_HYPER, REFERENCE_TRANSITION)
    focal = seasons[-1].players[0]
    post = isolated_season_fit(seasons, focal, REFERENCE_HYPER, REFERENCE_TRANSITION, res)
    prior = reset_player(res.starts[-1], focal, REFERENCE_HYPER)
    expected, _ = update_with_loglik(prior, seasons[-1], REFERENCE_HYPER)
    np.testing.assert_allclose(post.mean, expected.mean, atol=1e-12)
    with pytest.raises(ValueError):
        isolated_season_fit(seasons, "nobody", REFERENCE_HYPER, REFERENCE_TRANSITION, res)


def test_isolated_se_not_above_single_season(rng):
    for _ in range(5):
        seasons = toy_seasons(rng, n=3, players=7, rows=50)
        iso = isolated_all(seasons, REFERENCE_HYPER, REFERENCE_TRANSITION)
        single = single_season_fit(seasons[-1], REFERENCE_HYPER)
        for i, p in enumerate(iso.players):
            _, c = single.marginal(p)
            # Loewner order: the single-season covariance dominates
            assert np.linalg.eigvalsh(c - iso.cov[i]).min() > -1e-9


def test_isolated_rookies_come_from_chain(rng):
    seasons = toy_seasons(rng, n=2, players=6)
    extra = ObservationSet.from_rows(list(seasons[1].rows()) + [
        ObservationRow(120.0, 4.0, ("NEW",), (seasons[1].players[0],), True, "2001")])
    res = chain_fit([seasons[0], extra], REFERENCE_HYPER, REFERENCE_TRANSITION)
    iso = isolated_all([seasons[0], extra], REFERENCE_HYPER, REFERENCE_TRANSITION, res)
    assert "NEW" in iso.rookies
    m, c = iso.marginal("NEW")
    m2, c2 = res.final.marginal("NEW")
    np.testing.assert_array_equal(m, m2)
    np.testing.assert_array_equal(c, c2)


@pytest.fixture(scope="module")
def three_season_league():
    cfg = SynthConfig(n_teams=6, players_per_team=7, games_per_pair=8, seasons=3, seed=11)
    _, seasons = simulate(cfg, emit_logs=False)
    return [build_observations(s.intervals) for s in seasons]


def test_fit_transition_small_league(three_season_league):
    fit = fit_transition_params(three_season_league, REFERENCE_HYPER)
    assert fit.converged and set(fit.stderr) == {"p", "s_alpha", "s_beta"}
    assert fit.loglik == pytest.approx(chain_loglik(three_season_league, REFERENCE_HYPER, fit.params), abs=1e-6)
    for key, step in (("p", 0.02), ("s_alpha", 0.05), ("s_beta", 0.05)):
        for sgn in (-1, 1):
            moved = fit.params.replace(**{key: min(1.0, max(0.0, getattr(fit.params, key) + sgn * step))})
            assert chain_loglik(three_season_league, REFERENCE_HYPER, moved) <= fit.loglik + 1e-6
    with pytest.raises(ValueError):
        fit_transition_params(three_season_league[:1], REFERENCE_HYPER)


def test_transition_fit_reports_nonconvergence(three_season_league):
    fit = fit_transition_params(three_season_league, REFERENCE_HYPER, max_iter=3)
    assert not fit.converged and fit.stderr == {}


def test_fit_chain_model_orders(three_season_league):
    seq = fit_chain_model(three_season_league, REFERENCE_HYPER, REFERENCE_TRANSITION)
    assert seq.order == "sequential" and seq.hyper_fit is not None
    with pytest.raises(ValueError):
        fit_chain_model(three_season_league, REFERENCE_HYPER, REFERENCE_TRANSITION, order="both")
