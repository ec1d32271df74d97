import io

import numpy as np
import pytest

from courtrate.ingest import Interval
from courtrate.observations import ObservationRow, ObservationSet, build_observations, split_by_season
from oracles import dense_design, random_toy

H = frozenset(f"H{i}" for i in range(5))
A = frozenset(f"A{i}" for i in range(5))


def iv(idx, nh, na, ph, pa, excluded=False, season="2009", home=H, away=A):
    return Interval("G1", season, idx, 60.0, home, away, nh, na, ph, pa, excluded, "x" if excluded else "")


def test_rows_from_intervals():
    obs = build_observations([iv(0, 4, 3, 6, 2), iv(1, 0, 2, 0, 3), iv(2, 5, 5, 9, 9, excluded=True)])
    assert len(obs) == 3
    np.testing.assert_allclose(obs.response, [150.0, 200.0 / 3, 150.0])
    np.testing.assert_allclose(obs.weight, [4, 3, 2])
    assert obs.home.tolist() == [True, False, False]
    rows = list(obs.rows())
    assert set(rows[0].attackers) == set(H) and set(rows[0].defenders) == set(A)
    assert set(rows[1].attackers) == set(A)
    assert obs.players == tuple(sorted(H | A))


def test_season_filter_and_split():
    ivs = [iv(0, 3, 3, 3, 3, season="2008"), iv(1, 2, 2, 2, 2, season="2009")]
    assert len(build_observations(ivs, seasons=["2009"])) == 2
    obs = build_observations(ivs)
    parts = split_by_season(obs, ["2008", "2009"])
    assert [len(p) for p in parts] == [2, 2]
    assert {r.season for r in parts[0].rows()} == {"2008"}


def test_malformed_lineups_rejected():
    with pytest.raises(ValueError, match="five"):
        build_observations([iv(0, 1, 1, 0, 0, home=frozenset(list(H)[:4]))])
    with pytest.raises(ValueError, match="both sides"):
        build_observations([iv(0, 1, 1, 0, 0, away=frozenset(list(A)[:4]) | {"H0"})])


def test_design_and_gram_match_dense(rng):
    for _ in range(10):
        obs = random_toy(rng)
        coords = {p: 2 * i for i, p in enumerate(obs.players)}
        X, _ = dense_design(obs, obs.players)
        np.testing.assert_array_equal(obs.design(coords, 2 * len(obs.players)).toarray(), X)
        np.testing.assert_allclose(obs.gram(coords, 2 * len(obs.players)), X.T @ (obs.weight[:, None] * X),
                                   rtol=0, atol=1e-9)


def test_cache_follows_layout(rng):
    obs = random_toy(rng, n_players=4, n_rows=10)
    a = obs.gram({p: 2 * i for i, p in enumerate(obs.players)}, 8)
    # the same players embedded at the end of a wider belief
    b = obs.gram({p: 4 + 2 * i for i, p in enumerate(obs.players)}, 12)
    np.testing.assert_array_equal(b[4:, 4:], a)
    assert not b[:4].any()


def test_row_validation():
    row = ObservationRow(100.0, 2.0, ("a",), ("a",), True)
    with pytest.raises(ValueError, match="overlapping"):
        ObservationSet.from_rows([row])
    with pytest.raises(ValueError, match="missing from index"):
        ObservationSet.from_rows([ObservationRow(100.0, 2.0, ("a",), ("b",), True)], players=["a"])
    with pytest.raises(ValueError, match="weights"):
        ObservationSet.from_rows([ObservationRow(100.0, 0.5, ("a",), ("b",), True)])
    with pytest.raises(ValueError, match="duplicate"):
        ObservationSet.empty(["a", "a"])


def test_subset_concat_csv(rng):
    obs = random_toy(rng, n_players=6, n_rows=12)
    mask = np.arange(12) % 2 == 0
    half = obs.subset(mask)
    assert len(half) == 6 and half.players == obs.players
    both = half.concat(obs.subset(~mask))
    assert sorted(both.response) == sorted(obs.response)
    buf = io.StringIO()
    obs.write_csv(buf)
    assert buf.getvalue().count("\n") == 13
