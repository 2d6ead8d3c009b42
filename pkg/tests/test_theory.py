import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from genlaplace.theory import (
    FiniteModel,
    MisspecificationConfig,
    aleatoric_curve,
    aleatoric_probability,
    central_condition_mass,
    linear_grid,
    misspecification_demo,
    prior_rescale_identity,
    tempered_grid_posterior,
    tempered_log_weights,
)
from oracles import misspecification_oracle

GOLDEN = Path(__file__).parent / "data" / "misspecification_golden.csv"
COIN = FiniteModel.bernoulli([0.3, 0.6], 0.5)


class TestGridPosterior:
    def test_zero_temperature_is_prior(self):
        model = FiniteModel.bernoulli([0.1, 0.3, 0.6], 0.5, prior=[0.2, 0.5, 0.3])
        post = tempered_grid_posterior(model, [(0, 1), (0, 1), (0, 0)], 0.0)
        np.testing.assert_array_equal(post.weights, model.prior)

    def test_one_step_bayes(self):
        np.testing.assert_allclose(tempered_grid_posterior(COIN, [(0, 1)], 1.0).weights, [1 / 3, 2 / 3], atol=1e-15)

    def test_squared_likelihood(self):
        np.testing.assert_allclose(tempered_grid_posterior(COIN, [(0, 1)], 2.0).weights, [0.2, 0.8], atol=1e-15)

    def test_all_zero_mass(self):
        model = FiniteModel.bernoulli([0.0, 0.0], 0.5)
        with pytest.raises(ValueError):
            tempered_grid_posterior(model, [(0, 1)], 1.0)

    def test_rejects_negative_temperature(self):
        with pytest.raises(ValueError):
            tempered_grid_posterior(COIN, [(0, 1)], -1.0)

    def test_log_space_survives_long_sequences(self):
        obs = [(0, 1)] * 5000 + [(0, 0)] * 4000
        w = tempered_grid_posterior(COIN, obs, 1.0).weights
        assert np.all(np.isfinite(w)) and abs(w.sum() - 1) < 1e-12

    @given(st.permutations(range(5)), st.floats(0.05, 5.0), st.sampled_from(["likelihood_only", "likelihood_and_prior"]))
    @settings(max_examples=40, deadline=None)
    def test_permutation_invariance(self, perm, T, form):
        hyps = np.array([0.1, 0.25, 0.5, 0.7, 0.95])
        prior = np.array([0.1, 0.3, 0.2, 0.25, 0.15])
        obs = [(0, 1), (0, 0), (0, 1), (0, 1)]
        a = tempered_grid_posterior(FiniteModel.bernoulli(hyps, 0.6, prior), obs, T, form).weights
        p = list(perm)
        b = tempered_grid_posterior(FiniteModel.bernoulli(hyps[p], 0.6, prior[p]), obs, T, form).weights
        assert np.max(np.abs(a[p] - b)) < 1e-12

    def test_prior_tempering_matches_rescaled_gaussian(self):
        # Gaussian prior on a grid: prior^T is the grid Gaussian with std beta / sqrt(T)
        grid = np.linspace(-3, 3, 61)
        beta, T = 1.3, 2.5
        rng = np.random.default_rng(0)
        x, y = rng.normal(size=8), rng.normal(size=8)
        log_lik = np.array([(-0.5 * (y - th * x) ** 2).sum() for th in grid])
        log_prior = lambda s: -0.5 * grid**2 / s**2 - np.log(np.exp(-0.5 * grid**2 / s**2).sum())
        both = tempered_log_weights(log_lik, log_prior(beta), T, "likelihood_and_prior")
        lik_only = tempered_log_weights(log_lik, log_prior(beta / math.sqrt(T)), T, "likelihood_only")
        assert np.max(np.abs(np.exp(both) - np.exp(lik_only))) < 1e-9


class TestPriorRescaleIdentity:
    def test_unit_temperature(self):
        thetas = np.random.default_rng(0).normal(size=(20, 3))
        assert prior_rescale_identity(1.7, 1.0, thetas) < 1e-14

    def test_closed_form_points(self):
        assert prior_rescale_identity(1.0, 4.0, [[0.0, 0.0], [1.0, 2.0], [-3.0, 5.0]]) < 1e-12

    @given(st.floats(-10, 10), st.floats(0.1, 10), st.floats(0.1, 5))
    def test_quadratic_parts(self, theta, T, beta):
        lhs = (1 / T) * (-(theta**2) / (2 * beta**2))
        rhs = -(theta**2) / (2 * (math.sqrt(T) * beta) ** 2)
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-300)


class TestCentralCondition:
    def test_bernoulli_small_temperature(self):
        cc = central_condition_mass(COIN, 0.1)
        assert COIN.hypotheses[cc.risk_minimizer] == 0.6
        np.testing.assert_allclose(cc.risks, [-0.5 * (math.log(0.7) + math.log(0.3)), -0.5 * (math.log(0.4) + math.log(0.6))])
        assert cc.risks[1] == pytest.approx(0.7136, abs=1e-4) and cc.risks[0] == pytest.approx(0.7803, abs=1e-4)
        want = 0.5 * ((0.7 / 0.4) ** 0.1 + (0.3 / 0.6) ** 0.1)
        assert cc.masses[0] == pytest.approx(want, abs=1e-15)
        assert cc.masses[0] == pytest.approx(0.9953, abs=1e-4) and cc.satisfied

    def test_bernoulli_unit_temperature(self):
        cc = central_condition_mass(COIN, 1.0)
        assert cc.masses[0] == pytest.approx(1.125, abs=1e-15)
        assert not cc.satisfied

    def test_minimiser_mass_is_one(self):
        for T in (1e-3, 0.5, 1.0, 7.0):
            cc = central_condition_mass(COIN, T)
            assert cc.masses[cc.risk_minimizer] == 1.0

    def test_correct_specification(self):
        model = FiniteModel.bernoulli([0.2, 0.45, 0.7, 0.9], 0.7)
        cc = central_condition_mass(model, 1.0)
        assert model.hypotheses[cc.risk_minimizer] == 0.7
        assert np.all(cc.masses <= 1 + 1e-12)

    def test_small_temperature_below_one(self):
        model = FiniteModel.bernoulli([0.2, 0.45, 0.7, 0.9], 0.5)
        for T in (1e-3, 1e-2, 1e-1):
            cc = central_condition_mass(model, T)
            worse = np.arange(4) != cc.risk_minimizer
            assert np.all(cc.masses[worse] < 1)

    def test_first_index_tie_break(self):
        model = FiniteModel.bernoulli([0.4, 0.6], 0.5)
        assert central_condition_mass(model, 1.0).risk_minimizer == 0

    def test_zero_likelihood_at_minimiser(self):
        # every hypothesis rules out an outcome the truth supports
        model = FiniteModel([0, 1], [0.5, 0.5], [(0, 0), (0, 1)], [0.99, 0.01], [[1.0, 0.0], [1.0, 0.0]])
        with pytest.raises(ValueError):
            central_condition_mass(model, 1.0)

    def test_json_roundtrip(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_text(json.dumps(COIN.to_dict()))
        back = FiniteModel.load(path)
        np.testing.assert_array_equal(back.likelihood, COIN.likelihood)

    def test_invalid_likelihood_table(self):
        with pytest.raises(ValueError):
            FiniteModel([0], [1.0], [(0, 0), (0, 1)], [0.5, 0.5], [[0.6, 0.6]])


class TestAleatoric:
    def test_delta_posterior(self):
        probs = np.array([[1.0, 0.0], [0.3, 0.7]])
        assert aleatoric_probability(probs, [1.0, 0.0], 0, 1.0, "likelihood_only") == 0.0

    def test_uniform_classes(self):
        K = 4
        probs = np.full((3, K), 1 / K)
        assert aleatoric_probability(probs, np.full(3, 1 / 3), 2, 1.3) == pytest.approx((K - 1) / K, abs=1e-15)

    @pytest.mark.parametrize("form", ["likelihood_only", "likelihood_and_prior"])
    def test_curve_matches_enumeration(self, form):
        probs = [[0.9, 0.1], [0.4, 0.6]]
        prior = [0.3, 0.7]
        temps = [0.1, 0.5, 1.0, 2.0, 10.0]
        curve = aleatoric_curve(probs, prior, 0, temps, form)
        for T, got in zip(temps, curve):
            c = T if form == "likelihood_and_prior" else 1.0
            w = [probs[i][0] ** T * prior[i] ** c for i in range(2)]
            want = sum(wi * (1 - probs[i][0]) for i, wi in enumerate(w)) / sum(w)
            assert abs(got - want) < 1e-12
        d = np.diff(curve)
        assert np.all(d <= 0) or np.all(d >= 0)


class TestMisspecification:
    def test_no_data_equals_prior(self):
        cfg = MisspecificationConfig(sizes=(0,), temperatures=(0.25, 1.0, 4.0))
        _, prior = linear_grid(cfg)
        report = misspecification_demo(cfg)
        for T in cfg.temperatures:
            np.testing.assert_allclose(report.posteriors[(0, T)], prior, atol=1e-15)

    def test_correct_specification_concentrates(self):
        cfg = MisspecificationConfig(slope=0.5, s0=0.5, s1=0.0, sizes=(10, 100, 2000), temperatures=(1.0,))
        report = misspecification_demo(cfg)
        truth = report.hypotheses.index((0.5, 0.0, 0.5, "simple"))
        masses = [report.posteriors[(n, 1.0)][truth] for n in cfg.sizes]
        assert masses[-1] > 0.99 and masses == sorted(masses)

    def test_risks_are_minimised_by_truth(self):
        cfg = MisspecificationConfig(slope=0.5, s0=0.5, s1=0.0)
        report = misspecification_demo(cfg)
        assert report.hypotheses[int(np.argmin(report.risks))] == (0.5, 0.0, 0.5, "simple")

    def test_golden_table(self):
        cfg = MisspecificationConfig()
        report = misspecification_demo(cfg)
        with open(GOLDEN) as fh:
            golden = list(csv.DictReader(fh))
        assert len(golden) == len(report.tier_masses)
        for g, r in zip(golden, report.tier_masses):
            assert (int(g["n"]), float(g["temperature"]), g["tier"]) == (r["n"], r["temperature"], r["tier"])
            assert abs(float(g["mass"]) - r["mass"]) < 1e-12

    def test_matches_loop_oracle(self):
        cfg = MisspecificationConfig(sizes=(0, 7, 40), temperatures=(0.5, 2.0), seed=3)
        want = misspecification_oracle(cfg.slopes, cfg.intercepts, cfg.noise_stds, cfg.sizes, cfg.temperatures, cfg.seed)
        got = misspecification_demo(cfg).tier_masses
        for a, b in zip(got, want):
            assert abs(a["mass"] - b["mass"]) < 1e-12
