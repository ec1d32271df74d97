import io
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from courtrate.statsreg import (
    STAT_COLUMNS,
    STAT_LABELS,
    RankDeficientError,
    StatsTable,
    backward_select,
    format_fit_report,
    position_subset_fit,
    predict_ability,
    r_squared,
    read_stats_csv,
    standardise_fit,
    top_predicted,
    wls_fit,
    write_scatter_csv,
    write_scatter_svg,
    write_stats_csv,
)
from oracles import ols_normal_equations


def random_problem(rng, n=60, k=4):
    X = rng.standard_normal((n, k)) @ rng.uniform(0.5, 2, (k, k))
    y = 2.0 + X @ rng.normal(0, 1, k) + rng.standard_normal(n)
    se = rng.uniform(0.5, 2.0, n)
    return X, y, se, [f"x{j}" for j in range(k)]


def planted_problem(rng, n=300):
    """Four real effects and one null covariate."""
    X = rng.standard_normal((n, 5))
    X[:, 1] += 0.5 * X[:, 0]
    se = rng.uniform(0.5, 1.5, n)
    y = 1.0 + X @ np.array([0.8, -0.6, 0.5, 0.4, 0.0]) + se * rng.standard_normal(n)
    return X, y, se, ["a", "b", "c", "d", "null"]


def test_equal_se_is_ols(rng):
    X, y, _, names = random_problem(rng)
    fit = wls_fit(X, y, np.full(len(y), 1.7), names)
    beta, *_ = np.linalg.lstsq(np.column_stack([np.ones(len(y)), X]), y, rcond=None)
    np.testing.assert_allclose(np.r_[fit.intercept, fit.coef], beta, rtol=0, atol=1e-10)


def test_normal_equations_oracle(rng):
    for _ in range(5):
        X, y, se, names = random_problem(rng)
        fit = wls_fit(X, y, se, names)
        beta, cov = ols_normal_equations(X, y, se)
        np.testing.assert_allclose(np.r_[fit.intercept, fit.coef], beta, rtol=0, atol=1e-8)
        np.testing.assert_allclose(np.r_[fit.intercept_se, fit.stderr], np.sqrt(np.diagonal(cov)), atol=1e-8)


def test_r_squared_weighted(rng):
    X, y, se, names = random_problem(rng)
    fit = wls_fit(X, y, se, names)
    w = 1 / se**2
    ybar = np.sum(w * y) / np.sum(w)
    expected = 1 - np.sum(w * (y - fit.fitted) ** 2) / np.sum(w * (y - ybar) ** 2)
    assert r_squared(fit) == pytest.approx(expected) and 0 < fit.r2 < 1
    assert fit.ci.shape == (4, 2) and np.all(fit.ci[:, 0] < fit.coef)


def test_rank_deficiency_names_columns(rng):
    X, y, se, names = random_problem(rng)
    X[:, 2] = 2 * X[:, 0] - X[:, 1]
    with pytest.raises(RankDeficientError) as info:
        wls_fit(X, y, se, names)
    assert set(info.value.columns) == {"x0", "x1", "x2"}


@pytest.mark.parametrize("bad", ["se", "shape", "names"])
def test_input_validation(rng, bad):
    X, y, se, names = random_problem(rng)
    if bad == "se":
        se[0] = 0.0
    elif bad == "shape":
        y = y[:-1]
    else:
        names = ["x0", "x0", "x1", "x2"]
    with pytest.raises(ValueError):
        wls_fit(X, y, se, names)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), c=st.floats(0.1, 10), d=st.floats(0.1, 10))
def test_scale_equivariance(seed, c, d):
    X, y, se, names = random_problem(np.random.default_rng(seed))
    base = wls_fit(X, y, se, names)
    Xs = X.copy()
    Xs[:, 1] *= c
    scaled = wls_fit(Xs, d * y, d * se, names)
    expected = d * base.coef
    expected[1] /= c
    np.testing.assert_allclose(scaled.coef, expected, rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(scaled.coef / scaled.stderr, base.coef / base.stderr, rtol=1e-8)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_selection_ignores_column_order(seed):
    r = np.random.default_rng(seed)
    X, y, se, names = random_problem(r, k=5)
    perm = r.permutation(5)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        one = backward_select(X, y, se, names)
        two = backward_select(X[:, perm], y, se, [names[j] for j in perm])
    assert one.names == two.names and one.dropped == two.dropped
    np.testing.assert_allclose(one.coef, two.coef, rtol=1e-10)


def test_backward_selection_recovers_support(rng):
    fit = backward_select(*planted_problem(rng))
    assert set(fit.names) <= {"a", "b", "c", "d", "null"} and {"a", "b", "c", "d"} <= set(fit.names)
    assert np.all(fit.pvalues <= 0.05)
    assert set(fit.dropped) | set(fit.names) == {"a", "b", "c", "d", "null"}


def test_intercept_only_fallback_warns(rng):
    n = 50
    X = rng.standard_normal((n, 2))
    y = rng.standard_normal(n)
    with pytest.warns(UserWarning, match="intercept-only"):
        fit = backward_select(X, y, np.ones(n), ["u", "v"], alpha_level=1e-12)
    assert fit.names == () and fit.notices


def test_standardised_coefficients(rng):
    X, y, se, names = random_problem(rng)
    fit = standardise_fit(wls_fit(X, y, se, names))
    # WLS is equivariant under affine maps, so the standardised slope is coef * sd_x / sd_y
    expected = fit.coef * X.std(axis=0, ddof=1) / y.std(ddof=1)
    np.testing.assert_allclose(fit.std_coef, expected, rtol=1e-9)
    assert fit.std_ci.shape == (4, 2)
    weighted = standardise_fit(wls_fit(X, y, se, names), weighted=True)
    assert not np.allclose(weighted.std_coef, fit.std_coef)
    flat = wls_fit(X, np.full(len(y), 3.0), se, names)
    with pytest.raises(ValueError, match="zero variance"):
        standardise_fit(flat)


def test_predict_ability(rng):
    X, y, se, names = random_problem(rng)
    fit = wls_fit(X, y, se, names)
    row = dict(zip(names, X[0]))
    assert predict_ability(fit, row) == pytest.approx(fit.fitted[0])
    del row["x2"]
    with pytest.raises(KeyError, match="x2"):
        predict_ability(fit, row)


def stats_table(rng, n=40):
    vals = np.abs(rng.normal(10, 3, (n, len(STAT_COLUMNS))))
    vals[:, :3] = rng.uniform(20, 80, (n, 3))
    positions = tuple(["guard", "forward", "center", "forward"][i % 4] for i in range(n))
    return StatsTable(tuple(f"P{i:03d}" for i in range(n)), positions, vals)


def test_stats_table_io_and_validation(rng):
    table = stats_table(rng)
    buf = io.StringIO()
    write_stats_csv(table, buf)
    buf.seek(0)
    pooled = read_stats_csv(buf, position_map={"center": "forward"})
    np.testing.assert_array_equal(pooled.values, table.values)
    assert set(pooled.positions) == {"guard", "forward"}
    bad = table.values.copy()
    bad[0, 0] = 120.0
    with pytest.raises(ValueError, match="percentages"):
        StatsTable(table.players, table.positions, bad)
    with pytest.raises(ValueError, match="lacks columns"):
        read_stats_csv(io.StringIO("player_id,position\nP1,guard\n"))


def test_position_pipeline_and_reports(rng, tmp_path):
    table = stats_table(rng)
    ability = {p: (0.5 * table.row(p)["pts_40"] + rng.normal(0, 0.5), 0.5) for p in table.players}
    fit = position_subset_fit(table, ability, "all", ["pts_40", "ast_40", "stl_40"])
    assert "pts_40" in fit.names
    report = format_fit_report(fit, "offense")
    assert report.startswith("offense") and STAT_LABELS["pts_40"] in report
    top = top_predicted(fit, table, k=3)
    assert len(top) == 3 and top[0][1] >= top[1][1]
    with pytest.raises(ValueError, match="need at least"):
        position_subset_fit(table, ability, "guard", ["pts_40"], min_players=50)
    buf = io.StringIO()
    write_scatter_csv(fit, buf)
    assert len(buf.getvalue().splitlines()) == len(table.players) + 1
    pytest.importorskip("matplotlib")
    write_scatter_svg(fit, tmp_path / "s.svg", "offense")
    assert (tmp_path / "s.svg").read_text().lstrip().startswith("<?xml")
