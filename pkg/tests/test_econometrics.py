import numpy as np
import pandas as pd
import pytest
import statsmodels.api as sm
from helpers import blob, stores_at
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from amenity_eci.clusters import attach_attributes, detect_clusters
from amenity_eci.econometrics import (
    EQ3_COLUMNS,
    INTERCEPT,
    ModelSpec,
    PanelConfig,
    RobustOLS,
    build_panel,
    correlation_table,
    design_matrix,
    fit_ols,
    fit_spec,
    model_eq3,
    model_eq4,
    parse_table,
    quantile_flag,
    regression_frame,
    render_table,
    star_codes,
    table_specs,
)
from amenity_eci.exceptions import (
    EmptyPanel,
    InsufficientRows,
    MissingWeather,
    RankDeficient,
    ZeroVariance,
)
from amenity_eci.model import MobilityCount, WeatherRecord
from amenity_eci.synth import SynthConfig, gen_panel


def _design(rng, n, k):
    X = np.column_stack([np.ones(n), rng.normal(0, 1, (n, k - 1))])
    y = X @ rng.normal(0, 2, k) + rng.normal(0, 1, n) * (1 + X[:, -1] ** 2)
    return X, y, [INTERCEPT] + [f"x{j}" for j in range(1, k)]


def test_three_point_line():
    X = np.column_stack([np.ones(3), [0.0, 1.0, 2.0]])
    r = fit_ols(X, [1.0, 2.0, 4.0], [INTERCEPT, "x"])
    assert_allclose(r.coef, [5 / 6, 1.5], rtol=1e-12)
    assert r.n == 3 and r.df_resid == 1
    assert r.r2 == pytest.approx(1 - (1 / 6) / (14 / 3))


def test_exact_fit():
    X = np.column_stack([np.ones(3), [1.0, 2.0, 3.0]])
    r = fit_ols(X, [1.0, 3.0, 5.0], [INTERCEPT, "x"], se_type="classical")
    assert_allclose(r.coef, [-1.0, 2.0], atol=1e-12)
    assert_allclose(r.se, 0.0, atol=1e-12)
    assert r.r2 == pytest.approx(1.0)
    assert r.fvalue == np.inf


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(10, 200), st.integers(1, 8))
def test_against_statsmodels(seed, n, k):
    k = min(k, n - 2)
    X, y, names = _design(np.random.default_rng(seed), n, k)
    for se_type, cov in (("HC1", "HC1"), ("HC0", "HC0"), ("classical", "nonrobust")):
        r = fit_ols(X, y, names, se_type=se_type)
        ref = sm.OLS(y, X).fit(cov_type=cov)
        assert_allclose(r.coef, ref.params, rtol=1e-8, atol=1e-10)
        assert_allclose(r.se, ref.bse, rtol=1e-8)
    ref = sm.OLS(y, X).fit()
    assert r.adj_r2 == pytest.approx(ref.rsquared_adj, rel=1e-9, abs=1e-12)
    if k > 1:
        assert r.fvalue == pytest.approx(ref.fvalue, rel=1e-8)
        assert (r.f_df1, r.f_df2) == (k - 1, n - k)


def test_residuals_orthogonal_to_design(rng):
    X, y, names = _design(rng, 120, 5)
    r = fit_ols(X, y, names)
    assert_allclose(X.T @ r.residuals, 0.0, atol=1e-9)


def test_hc1_is_scaled_hc0(rng):
    X, y, names = _design(rng, 50, 4)
    r1, r0 = fit_ols(X, y, names, "HC1"), fit_ols(X, y, names, "HC0")
    assert np.array_equal(r1.cov, r0.cov * (50 / 46))


def test_rank_deficient_and_short_designs(rng):
    X, y, names = _design(rng, 30, 3)
    Xd = np.column_stack([X, X[:, 1] * 2])
    with pytest.raises(RankDeficient) as exc:
        fit_ols(Xd, y, names + ["dup"])
    assert len(exc.value.columns) == 1
    with pytest.raises(InsufficientRows):
        fit_ols(X[:3], y[:3], names)
    with pytest.raises(ValueError):
        fit_ols(X, y, names, se_type="HC3")


@pytest.mark.parametrize("p, stars", [(0.009, "***"), (0.01, "**"), (0.049, "**"), (0.05, "*"), (0.1, ""), (np.nan, "")])
def test_star_codes(p, stars):
    assert star_codes(p) == stars


def test_design_matrix_products():
    df = pd.DataFrame({"a": [1.0, 2.0], "b": [3.0, 4.0]})
    X, names = design_matrix(df, ["a", "a:b"])
    assert names == [INTERCEPT, "a", "a:b"]
    assert X.tolist() == [[1, 1, 3], [1, 2, 8]]
    with pytest.raises(KeyError):
        design_matrix(df, ["c"])


def test_specs():
    assert model_eq3().terms == EQ3_COLUMNS[4]
    assert "High_Year:Complexity" in model_eq3(2).terms
    assert model_eq4().terms == ("High_Complexity", "High_Green", "Near_Metro")
    assert model_eq4(2).interactions == ("High_Temp:High_Complexity", "High_Complexity:Near_Metro")
    assert [s.timeslot for s in table_specs(4)] == ["07-24", "07-09", "09-18", "18-20", "20-24"]
    assert [s.demographic for s in table_specs(6)] == ["total", "male", "female", "60+"]
    with pytest.raises(ValueError):
        ModelSpec("bad", ("Complexity", "High_Year:Complexity"))
    with pytest.raises(ValueError):
        model_eq3(7)


def test_full_size_panel():
    df, _ = gen_panel(SynthConfig(seed=0))
    assert len(df) == 230 * 6 == 1380
    r = fit_spec(df, model_eq3())
    assert (r.n, r.df_resid, r.f_df1) == (1380, 1371, 8)


def test_render_and_parse_round_trip():
    df, _ = gen_panel(SynthConfig(seed=1))
    results = [fit_spec(df, s) for s in table_specs(3)]
    text = render_table(results, title="Yearly model")
    assert text.splitlines()[0] == "Yearly model"
    assert "Note: Robust (HC1) standard errors in parentheses; *p<0.1; **p<0.05; ***p<0.01" in text
    assert "High_Year x Complexity" in text
    cols = parse_table(text)
    assert [c["label"] for c in cols] == ["(1)", "(2)", "(3)", "(4)"]
    for r, c in zip(results, cols):
        assert set(c["terms"]) == set(r.terms)
        for t, b, se in zip(r.terms, r.coef, r.se):
            assert c["terms"][t]["estimate"] == pytest.approx(b, abs=5e-4)
            assert c["terms"][t]["se"] == pytest.approx(se, abs=5e-4)
        assert (c["n"], c["df_resid"], c["f_df1"], c["f_df2"]) == (r.n, r.df_resid, r.f_df1, r.f_df2)
        assert c["f_stars"] == star_codes(r.f_pvalue)
    # the intercept row comes last
    lines = [ln for ln in text.splitlines() if " & " in ln and not ln.startswith(" ")]
    assert lines[-5].startswith("Intercept")
    frame = regression_frame(results)
    assert list(frame.columns) == ["model", "term", "estimate", "se", "t", "p", "stars"]
    assert len(frame) == sum(r.k for r in results)


def test_correlation_table(rng):
    df = pd.DataFrame(rng.normal(size=(40, 3)), columns=["a", "b", "c"])
    R = correlation_table(df, ["a", "b", "c"])
    assert_allclose(np.diag(R), 1.0)
    assert R.loc["b", "a"] == pytest.approx(np.corrcoef(df["a"], df["b"])[0, 1])
    assert np.isnan(R.loc["a", "b"])
    df["d"] = 1.0
    with pytest.raises(ZeroVariance):
        correlation_table(df, ["a", "d"])
    with pytest.raises(InsufficientRows):
        correlation_table(df.iloc[:1], ["a", "b"])


def test_quantile_flag_nearest_rank():
    assert quantile_flag(np.arange(10), 0.2).tolist() == [0] * 8 + [1, 1]
    assert quantile_flag(np.arange(10), 0.2, top=False).tolist() == [1, 1] + [0] * 8
    # ties at the cut are all flagged
    assert quantile_flag([1, 2, 3, 3, 3], 0.2).tolist() == [0, 0, 1, 1, 1]
    assert quantile_flag([np.nan, 1, 2, 3, 4, 5], 0.2).tolist() == [0, 0, 0, 0, 0, 1]


def test_estimator(rng):
    X, y, _ = _design(rng, 80, 4)
    est = RobustOLS().fit(X[:, 1:], y)
    ref = fit_ols(X, y)
    assert est.intercept_ == pytest.approx(ref.coef[0])
    assert_allclose(est.coef_, ref.coef[1:])
    assert_allclose(est.bse_, ref.se[1:])
    assert_allclose(est.predict(X[:, 1:]), X @ ref.coef)
    assert 0 < est.score(X[:, 1:], y) <= 1


# -- panel assembly ---------------------------------------------------------


def _panel_inputs(rng):
    xy = np.vstack([blob(rng, 40, 0, 0), blob(rng, 40, 2, 0), blob(rng, 40, 4, 0)])
    stores = stores_at(xy, year=2018)
    _, clusters = detect_clusters(stores, year=2018)
    clusters = sorted(clusters, key=lambda c: c.seed_lonlat[0])
    mob = []
    for k, c in enumerate(clusters[:2]):
        lon, lat = c.seed_lonlat
        mob.append(MobilityCount(f"station:{k}", lon, lat, 2018, 8, "07-24", "total", 1143090.0 * (k + 1)))
        mob.append(MobilityCount(f"station:{k}", lon, lat, 2018, 8, "07-09", "total", 5.0))
        mob.append(MobilityCount(f"cell:{k}", lon, lat, 2018, 8, "ALL", "total", 1000.0))
    comp = pd.DataFrame(
        {
            "cluster_id": [c.cluster_id for c in clusters],
            "year": 2018,
            "eci_raw": [0.0, 1.0, -1.0],
            "eci_rescaled": [50.0, 100.0, 0.0],
            "diversity": [20, 30, 10],
            "n_shops": [40, 40, 40],
        }
    )
    clusters = attach_attributes(clusters, [], mob)
    weather = [WeatherRecord(2018, 8, 33.3, 39.6, 221.5)]
    return {2018: clusters}, comp, mob, weather


def test_build_panel_subway(rng):
    cby, comp, mob, weather = _panel_inputs(rng)
    cfg = PanelConfig(years=(2018,), months=(8,))
    df = build_panel(cby, comp, mob, weather, cfg)
    assert len(df) == 2
    assert df["Y"].tolist() == pytest.approx([1143.090, 2286.180])
    row = df.iloc[0]
    assert (row["Temperature"], row["Rain"], row["High_Year"], row["High_Temp"]) == (33.3, 221.5, 1, 1)
    assert row["Covid_period"] == 0
    assert df["Near_Metro"].tolist() == [1, 1]
    # dummies are set over every cluster of the year, including the one without counts
    assert df["High_Complexity"].tolist() == [0, 1]
    slot = build_panel(cby, comp, mob, weather, PanelConfig(years=(2018,), timeslot="07-09"))
    assert slot["Y"].tolist() == pytest.approx([0.005, 0.005])


def test_build_panel_mobile(rng):
    cby, comp, mob, weather = _panel_inputs(rng)
    df = build_panel(cby, comp, mob, weather, PanelConfig.mobile(months=(8,)))
    assert df["Y"].tolist() == [1.0, 1.0]


def test_build_panel_errors(rng):
    cby, comp, mob, weather = _panel_inputs(rng)
    with pytest.raises(MissingWeather):
        build_panel(cby, comp, mob, weather, PanelConfig(years=(2018,), months=(7,)))
    with pytest.raises(EmptyPanel):
        build_panel(cby, comp, mob, weather, PanelConfig(years=(2017,)))
    with pytest.raises(EmptyPanel):
        build_panel(cby, comp, [], weather, PanelConfig(years=(2018,)))
    with pytest.raises(ValueError):
        PanelConfig(timeslot="25-26")
