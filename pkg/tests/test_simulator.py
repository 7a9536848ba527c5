import math

import numpy as np
import pytest
from scipy.stats import ks_2samp

from pennma.simulator import (
    SIMULATION_EDGES,
    ExponentialBaseline,
    ScenarioSpec,
    WeibullBaseline,
    draw_event_time,
    event_time_from_uniform,
    generator_parameters,
    scenario_spec,
    simulate_dataset,
    true_support,
    _relative_log_hazard,
)


class TestScenarioSpecs:
    def test_network_has_nine_edges(self):
        assert len(SIMULATION_EDGES) == 9
        assert all(len(e) == 2 for e in SIMULATION_EDGES)
        a_edges = [e for e in SIMULATION_EDGES if "A" in e]
        assert len(a_edges) == 4  # A compared directly with B, C, D, E

    def test_unknown_scenario(self):
        with pytest.raises(ValueError, match="S1, S2, S3, S4, S5"):
            scenario_spec("S9", 0.1, 3)

    def test_true_support_table(self):
        assert true_support(scenario_spec("S1", 0.1, 3)).support == ()
        assert true_support(scenario_spec("S2", 0.1, 3)).support == (
            "incons:B:C", "incons:D:E")
        assert set(true_support(scenario_spec("S3", 0.1, 3)).support) == {
            "cov:z2", "inter:z2:B", "inter:z2:D"}
        s4 = true_support(scenario_spec("S4", 0.1, 3))
        assert set(s4.support) == {
            "incons:B:C", "incons:D:E", "cov:z2", "inter:z2:B", "inter:z2:D"}
        s5 = true_support(scenario_spec("S5", 0.1, 3))
        assert set(s4.support) < set(s5.support)
        assert {f"nonprop:{k}:E" for k in range(2, 7)} <= set(s5.support)
        assert s5.nonproportional == ("E",)

    def test_effect_values(self):
        s4 = true_support(scenario_spec("S4", 0.1, 3))
        assert s4.effects["incons:B:C"] == pytest.approx(math.log(0.5))
        assert s4.effects["incons:D:E"] == pytest.approx(math.log(2.0))
        assert s4.effects["cov:z2"] == pytest.approx(math.log(1.25))
        assert s4.effects["inter:z2:B"] == pytest.approx(math.log(1.25))
        assert s4.treatment_effects == pytest.approx(
            {"B": math.log(0.77), "C": math.log(0.65),
             "D": math.log(0.96), "E": math.log(0.87)})


class TestDrawEventTime:
    def test_exponential_plug_in(self):
        base = ExponentialBaseline(math.exp(-5.5))
        t = event_time_from_uniform(math.exp(-1.0), 0.0, base)
        assert t == pytest.approx(math.exp(5.5))

    def test_hazard_multiplier_halves_time(self):
        base = ExponentialBaseline(math.exp(-5.5))
        u = 0.37
        t0 = event_time_from_uniform(u, 0.0, base)
        t1 = event_time_from_uniform(u, math.log(2.0), base)
        assert t1 == pytest.approx(t0 / 2.0)

    def test_weibull_inverse_cumhaz(self):
        base = WeibullBaseline(shape=0.75, scale=100.0)
        u = math.exp(-1.0)  # cumulative hazard 1
        t = event_time_from_uniform(u, 0.0, base)
        assert (t / 100.0) ** 0.75 == pytest.approx(1.0)

    def test_monte_carlo_hazard_ratio(self):
        rng = np.random.default_rng(77)
        base = ExponentialBaseline(math.exp(-5.5))
        n = 10**5
        t0 = np.array([draw_event_time(0.0, base, rng) for _ in range(n)])
        t1 = np.array([draw_event_time(math.log(0.77), base, rng) for _ in range(n)])
        # exponential rate ratio estimates the hazard ratio
        hr = t0.mean() / t1.mean()
        assert abs(hr - 0.77) < 0.02


class TestSimulateDataset:
    def test_deterministic(self):
        spec = scenario_spec("S2", 0.2, 2)
        d1, t1 = simulate_dataset(spec, 99)
        d2, t2 = simulate_dataset(spec, 99)
        assert d1.records == d2.records
        assert t1 == t2
        d3, _ = simulate_dataset(spec, 100)
        assert d3.records != d1.records

    def test_trial_count_and_size_bounds(self):
        dataset, _ = simulate_dataset(scenario_spec("S1", 0.1, 3), 5)
        assert len(dataset.trials) == 27
        n = len(dataset.records)
        assert 27 * 50 <= n <= 27 * 500
        for trial in dataset.trials:
            sizes = dict(trial.arms)
            ref = trial.reference_arm
            other = next(t for t in trial.treatments if t != ref)
            assert sizes[ref] >= sizes[other]
            assert sizes[ref] - sizes[other] <= 1

    def test_censoring_rate_near_paper_value(self):
        rates = []
        for seed in range(5):
            dataset, _ = simulate_dataset(scenario_spec("S1", 0.1, 3), seed)
            rates.append(1.0 - np.mean([r.event for r in dataset.records]))
        assert 0.17 <= np.mean(rates) <= 0.25

    def test_s2_direct_comparison_log_hazard(self):
        spec = scenario_spec("S2", 0.0, 3)
        # experimental arm C in a B-vs-C trial, no deviations, no covariates
        m = _relative_log_hazard(spec, arm="C", trial_ref="B", u_trial=0.0,
                                 v_trial={}, z=np.zeros(2))
        expected = (math.log(0.65) - math.log(0.77)) + math.log(0.5)
        assert m == pytest.approx(expected)

    def test_s3_interaction_enters_through_contrast(self):
        spec = scenario_spec("S3", 0.0, 3)
        z = np.array([0.0, 1.0])
        m_b = _relative_log_hazard(spec, "B", "A", 0.0, {}, z)
        assert m_b == pytest.approx(
            math.log(1.25) + math.log(0.77) + math.log(1.25))
        # arm C in a B-vs-C trial: interaction with B enters with sign -1
        m_c = _relative_log_hazard(spec, "C", "B", 0.0, {}, z)
        assert m_c == pytest.approx(
            math.log(1.25) + math.log(0.65) - (math.log(0.77) + math.log(1.25)))

    def test_null_model_exchangeable_across_arms(self):
        spec = ScenarioSpec(
            scenario="custom", tau=0.0, trials_per_edge=3, baseline_sd=0.0,
            treatment_effects={q: 0.0 for q in "BCDE"})
        dataset, _ = simulate_dataset(spec, 31)
        times_a = [r.followup_time for r in dataset.records if r.arm_treatment == "A"]
        times_e = [r.followup_time for r in dataset.records if r.arm_treatment == "E"]
        stat = ks_2samp(times_a, times_e)
        assert stat.pvalue > 0.01

    def test_null_marginal_event_rate(self):
        spec = ScenarioSpec(
            scenario="custom", tau=0.0, trials_per_edge=3, baseline_sd=0.0,
            treatment_effects={q: 0.0 for q in "BCDE"})
        dataset, _ = simulate_dataset(spec, 13)
        events = sum(r.event for r in dataset.records)
        exposure = sum(r.followup_time for r in dataset.records)
        rate = events / exposure
        target = math.exp(-5.5)
        assert abs(rate - target) / target < 4.0 / math.sqrt(events)

    def test_weibull_arm_hazard_decreases(self):
        dataset, _ = simulate_dataset(scenario_spec("S5", 0.0, 3), 23)
        e_rows = [r for r in dataset.records if r.arm_treatment == "E"]
        times = np.array([r.followup_time for r in e_rows])
        events = np.array([r.event for r in e_rows])
        q1, q3 = np.quantile(times[events == 1], [0.25, 0.75])

        def window_hazard(lo, hi):
            exposure = np.clip(np.minimum(times, hi) - lo, 0, None).sum()
            d = ((events == 1) & (times > lo) & (times <= hi)).sum()
            return d / exposure

        assert window_hazard(0.0, q1) > window_hazard(q3, times.max())

    def test_generator_parameter_record(self):
        spec = scenario_spec("S5", 0.3, 5)
        params = generator_parameters(spec)
        assert params["scenario"] == "S5"
        assert params["tau"] == 0.3
        assert params["edges"] == ["".join(e) for e in SIMULATION_EDGES]
        assert params["weibull_shape"] == 0.75
        assert params["nonproportional_treatments"] == ["E"]

    def test_invalid_spec_fields(self):
        with pytest.raises(ValueError):
            ScenarioSpec(scenario="custom", tau=-0.1, trials_per_edge=3)
        with pytest.raises(ValueError):
            ScenarioSpec(scenario="custom", tau=0.1, trials_per_edge=0)
