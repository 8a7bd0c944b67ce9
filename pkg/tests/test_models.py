import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from contactfatigue.domain import (FeatureBlock, FeatureSpec,
                                   PopulationTable, SurveyRecord,
                                   build_design, default_coarse_bands)
from contactfatigue.models import (FatigueSpec, HillCurve, ModelSpec,
                                   build_model, fatigue_variant_term,
                                   hill, hill_grad, make_brc_data,
                                   predict_intensity)
from contactfatigue.models.assemble import brc_surface_config
from contactfatigue.models.params import Block, Layout
from contactfatigue.priors import RhsSpec

from conftest import SMALL_FEATURES, make_records, max_rel_grad_error


class TestHill:
    def test_plugin(self):
        assert hill(HillCurve(1.0, 0.0, 1.0), 1.0) == pytest.approx(-0.5)

    def test_zero_at_no_repeats(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            curve = HillCurve(rng.uniform(0.1, 3), rng.normal(),
                              rng.uniform(0.1, 3))
            assert hill(curve, 0.0) == 0.0

    def test_paper_asymptotic_reduction(self):
        # 100 (e^-gamma - 1) at gamma = 0.88 is -58.5%
        assert 100 * (np.exp(-0.88) - 1) == pytest.approx(-58.5, abs=0.1)
        curve = HillCurve(0.88, -1.55, 0.94)
        assert hill(curve, 1e9) == pytest.approx(-0.88, abs=1e-4)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.01, 5.0), st.floats(-4.0, 4.0), st.floats(0.05, 4.0))
    def test_monotone_non_increasing(self, gamma, zeta, eta):
        curve = HillCurve(gamma, zeta, eta)
        values = hill(curve, np.arange(0, 51, dtype=float))
        assert np.all(np.diff(values) <= 1e-15)
        assert np.all(values <= 0.0)
        assert np.all(values > -gamma - 1e-12)

    def test_gradients_match_finite_differences(self):
        r = np.array([0.0, 1.0, 2.0, 7.0])
        g0, z0, e0 = 0.9, -1.2, 1.3
        _, grads = hill_grad(HillCurve(g0, z0, e0), r)
        h = 1e-6
        for name, d in (("gamma", (h, 0, 0)), ("zeta", (0, h, 0)),
                        ("eta", (0, 0, h))):
            up = hill(HillCurve(g0 + d[0], z0 + d[1], e0 + d[2]), r)
            dn = hill(HillCurve(g0 - d[0], z0 - d[1], e0 - d[2]), r)
            np.testing.assert_allclose(grads[name], (up - dn) / (2 * h),
                                       rtol=1e-6, atol=1e-9)

    def test_negative_repeats_rejected(self):
        with pytest.raises(ValueError):
            hill(HillCurve(1.0, 0.0, 1.0), -1.0)


class TestParamVector:
    def test_pack_unpack_roundtrip(self):
        layout = Layout([Block("a", 2), Block("b", 3, "log"), Block("c", 1)])
        values = {"a": np.array([0.3, -1.2]), "b": np.array([0.5, 2.0, 7.0]),
                  "c": np.array([4.0])}
        theta = layout.pack(values)
        back = layout.constrained(theta)
        for k in values:
            np.testing.assert_allclose(back[k], values[k], rtol=1e-14)

    def test_duplicate_names_rejected(self):
        with pytest.raises(ValueError):
            Layout([Block("a", 1), Block("a", 2)])

    def test_parameter_names(self):
        layout = Layout([Block("a", 1), Block("b", 2)])
        assert layout.parameter_names() == ["a", "b[0]", "b[1]"]


def _brc_model(fatigue_kind="independent", m=6, seed=0):
    rng = np.random.default_rng(seed)
    bands = default_coarse_bands()
    pop = PopulationTable.uniform(("all",), 500.0)
    rows = []
    for t in (1, 2):
        for r in (0, 1, 2):
            for a in (10, 25, 40, 60):
                for c in (1, 5, 8):
                    rows.append((t, r, a, c, float(rng.integers(0, 40))))
    rows = np.array(rows)
    data = make_brc_data(
        y=rows[:, 4], wave=rows[:, 0].astype(int),
        repeat=rows[:, 1].astype(int), age=rows[:, 2].astype(int),
        band=rows[:, 3].astype(int),
        n_participants=np.full(len(rows), 12.0),
        s_prop=np.full(len(rows), 0.9), population=pop, bands=bands)
    surf = dataclasses.replace(brc_surface_config(), m=m)
    spec = ModelSpec(family="aggregated_brc",
                     fatigue=FatigueSpec(kind=fatigue_kind, max_repeat=2),
                     hsgp_surface=surf)
    return build_model(spec, data), pop


class TestGradientSuite:
    """Analytic gradients against central finite differences, rel < 1e-5."""

    def _check(self, model, n_points=10, h=1e-5, lo=-0.5, hi=0.5, seed=1):
        rng = np.random.default_rng(seed)
        for _ in range(n_points):
            theta = rng.uniform(lo, hi, size=model.layout.size)
            assert max_rel_grad_error(model, theta, h=h) < 1e-5

    def test_stage1_rhs(self, small_design):
        rhs = RhsSpec(n_coef=2, p0=1.0, n_obs=small_design.n)
        model = build_model(ModelSpec(family="stage1_poisson", rhs=rhs,
                                      beta0_scale=100.0), small_design)
        self._check(model)

    def test_stage1_plain(self, small_design):
        model = build_model(ModelSpec(family="stage1_poisson",
                                      beta0_scale=100.0), small_design)
        self._check(model)

    def test_stage2_negative_rhs(self):
        records = make_records(30, seed=2, min_repeat=1)
        design = build_design(records, SMALL_FEATURES)
        design = dataclasses.replace(design, offsets=np.full(30, 1.1))
        rhs = RhsSpec(n_coef=3, p0=1.5, n_obs=30, sign="negative")
        model = build_model(ModelSpec(family="stage2_poisson", rhs=rhs),
                            design)
        self._check(model)

    @pytest.mark.parametrize("kind,kw", [
        ("hill", {}), ("independent", {"max_repeat": 3}),
        ("identical", {}), ("gp", {"max_repeat": 3}), ("none", {})])
    def test_longitudinal(self, small_design, kind, kw):
        spec = ModelSpec(family="longitudinal_nb",
                         fatigue=FatigueSpec(kind=kind, **kw))
        self._check(build_model(spec, small_design), n_points=4)

    @pytest.mark.parametrize("kind", ["hill_per_covariate", "none"])
    def test_gam(self, small_design, kind):
        spec = ModelSpec(family="individual_gam",
                         fatigue=FatigueSpec(kind=kind))
        self._check(build_model(spec, small_design), n_points=4)

    @pytest.mark.parametrize("kind", ["independent", "variant_a",
                                      "variant_b", "variant_c"])
    def test_brc(self, kind):
        # larger h: |logp| ~ 1e6 makes 1e-5 steps round-off dominated
        model, _ = _brc_model(kind)
        self._check(model, n_points=3, h=1e-4, lo=-0.3, hi=0.3)


class TestLogPosteriorContracts:
    def test_zero_data_is_prior_only(self):
        design = build_design([], SMALL_FEATURES)
        model = build_model(ModelSpec(family="stage1_poisson",
                                      beta0_scale=100.0), design)
        rng = np.random.default_rng(0)
        theta = rng.uniform(-1, 1, model.layout.size)
        logp, _ = model.logp_grad(theta)
        c = model.layout.constrained(theta)
        expected = (
            stats.norm.logpdf(c["beta0"][0], 0, 100)
            + stats.norm.logpdf(c["alpha_raw"]).sum()
            + stats.halfcauchy.logpdf(c["sigma_alpha"][0])
            + np.log(c["sigma_alpha"][0])     # log-transform Jacobian
            + stats.norm.logpdf(c["beta"]).sum())
        assert logp == pytest.approx(expected, rel=1e-10)

    def test_single_poisson_row_plugin(self):
        # y = 3 at predictor 0: loglik = -1 - log 6
        records = [SurveyRecord("p", 1, 0, 30, "M", "1",
                                {"employment": "retired"}, 3)]
        design = build_design(records, SMALL_FEATURES)
        model = build_model(ModelSpec(family="stage1_poisson",
                                      beta0_scale=100.0), design)
        theta = model.layout.pack({
            "beta0": np.zeros(1), "alpha_raw": np.zeros(5),
            "sigma_alpha": np.ones(1), "beta": np.zeros(2)})
        ll = model.pointwise_loglik(theta)
        assert ll[0] == pytest.approx(-1 - np.log(6))

    def test_deterministic(self, small_design):
        model = build_model(ModelSpec(family="individual_gam",
                                      fatigue=FatigueSpec(
                                          kind="hill_per_covariate")),
                            small_design)
        theta = np.random.default_rng(3).uniform(-0.5, 0.5,
                                                 model.layout.size)
        a = model.logp_grad(theta)
        b = model.logp_grad(theta)
        assert a[0] == b[0]
        np.testing.assert_array_equal(a[1], b[1])

    def test_nan_predictor_names_row(self, small_design):
        bad = dataclasses.replace(
            small_design,
            offsets=np.where(np.arange(small_design.n) == 7, np.nan, 0.0))
        model = build_model(ModelSpec(family="stage1_poisson",
                                      beta0_scale=100.0), bad)
        with pytest.raises(FloatingPointError, match="row 7"):
            model.logp_grad(np.zeros(model.layout.size))

    def test_observation_family_pins(self):
        with pytest.raises(ValueError):
            ModelSpec(family="aggregated_brc", observation="nb2")
        with pytest.raises(ValueError):
            ModelSpec(family="individual_gam", observation="poisson")
        assert ModelSpec(family="aggregated_brc").observation == "nb1"


class TestFatigueVariants:
    def test_variant_scalar_contract(self):
        spec = FatigueSpec(kind="variant_a", max_repeat=2)
        assert fatigue_variant_term(spec, 1, rho_r=0.0) == pytest.approx(-1.0)
        assert fatigue_variant_term(spec, 0, rho_r=2.0) == 0.0
        assert fatigue_variant_term(FatigueSpec(kind="independent",
                                                max_repeat=2), 1, -0.3) == -0.3

    def test_band_midpoint_lookup(self):
        bands = default_coarse_bands()
        k = bands.index_of_age(29)
        assert bands.bands[k].label == "25-34"
        assert bands.midpoints[k] == 29

    def test_variants_strictly_negative_for_repeats(self):
        model, _ = _brc_model("variant_b")
        rng = np.random.default_rng(5)
        for _ in range(5):
            theta = rng.uniform(-0.5, 0.5, model.layout.size)
            term, _ = model._fatigue_cells(theta)
            r = model.data.cell_repeat
            assert np.all(term[r >= 1] < 0.0)
            assert np.all(term[r == 0] == 0.0)


class TestFlowIdentity:
    def test_rate_consistency_exact(self):
        # P_a m(a,b) = P_b m(b,a) for every draw, algebraically
        model, pop = _brc_model("independent")
        rng = np.random.default_rng(7)
        ages = np.arange(0, 85, 7, dtype=float)
        aa, bb = np.meshgrid(ages, ages)
        a, b = aa.ravel(), bb.ravel()
        p = pop.get("all")
        for _ in range(3):
            theta = rng.uniform(-0.5, 0.5, model.layout.size)
            log_m_ab = model.predict_log_m(theta, "all", 1, a, b, pop)
            log_m_ba = model.predict_log_m(theta, "all", 1, b, a, pop)
            flow_ab = np.log(p[a.astype(int)]) + log_m_ab
            flow_ba = np.log(p[b.astype(int)]) + log_m_ba
            np.testing.assert_allclose(flow_ab, flow_ba, rtol=1e-12,
                                       atol=1e-12)


class TestPredictIntensity:
    def _gam_fit_free(self, seed=0):
        records = make_records(30, seed=seed)
        design = build_design(records, SMALL_FEATURES)
        spec = ModelSpec(family="individual_gam",
                         fatigue=FatigueSpec(kind="hill_per_covariate"))
        return build_model(spec, design), design

    def test_debias_equals_raw_at_zero_repeats(self):
        model, design = self._gam_fit_free()
        theta = np.random.default_rng(1).uniform(-0.5, 0.5,
                                                 model.layout.size)
        newdata = {"u": design.block("u"), "age": design.age,
                   "w": design.block("w"),
                   "repeat": np.zeros(design.n, dtype=int)}
        raw = predict_intensity(model, theta, newdata, debias=False)
        deb = predict_intensity(model, theta, newdata, debias=True)
        np.testing.assert_allclose(raw, deb, rtol=1e-12)

    def test_debias_ratio_saturates_at_exp_gamma(self):
        model, design = self._gam_fit_free()
        theta = np.random.default_rng(2).uniform(-0.5, 0.5,
                                                 model.layout.size)
        gammas = np.exp(model.layout.raw(theta, "hill_gamma"))
        n = design.n
        w = np.zeros_like(design.block("w"))
        w[:, 0] = 1.0
        newdata = {"u": design.block("u"), "age": design.age, "w": w,
                   "repeat": np.full(n, 10**6)}
        raw = predict_intensity(model, theta, newdata, debias=False)[0]
        deb = predict_intensity(model, theta, newdata, debias=True)[0]
        np.testing.assert_allclose(deb / raw, np.exp(gammas[0]), rtol=1e-4)
