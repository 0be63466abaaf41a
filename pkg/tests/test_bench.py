"""Data generators, baseline combination, and the replication harness."""

import numpy as np
import pytest

from mgcp.bench import (
    ScenarioSpec,
    bgcp_combine,
    generate,
    generate_case1,
    generate_case2,
    generate_case3,
    resolve_n_jobs,
    run_benchmark,
    write_replications_csv,
    write_summary_csv,
)
from mgcp.exceptions import CombinationError, ConfigError
from mgcp.train import TrainConfig, penalized_objective

from .conftest import quick_config, random_dataset, random_theta


class TestCase1:
    def test_shapes_and_counts(self):
        sim = generate_case1(ScenarioSpec(case="sim1", seed=0))
        assert len(sim.sources) == 4
        assert all(s.n == 30 for s in sim.sources)
        assert sim.target.n == 10
        assert sim.test_inputs.shape == (60, 1)
        assert sim.oracle_sources == (0, 1)

    def test_noise_free_values_match_formulas(self):
        sim = generate_case1(ScenarioSpec(case="sim1", seed=3, noise_std=0.0))
        x = sim.sources[0].inputs[:, 0]
        np.testing.assert_allclose(sim.sources[0].responses, 0.3 * (x - 3) ** 3)
        np.testing.assert_allclose(sim.sources[2].responses, (x - 2) ** 2)
        xt = sim.target.inputs[:, 0]
        np.testing.assert_allclose(
            sim.target.responses, 0.2 * (xt - 3) ** 3 + 0.15 * xt**2 + np.sin(2 * xt)
        )

    def test_third_source_root_at_two(self):
        # n=26 puts x=2 exactly on the grid (step 0.2)
        sim = generate_case1(ScenarioSpec(case="sim1", seed=3, n=26, noise_std=0.0))
        x = sim.sources[2].inputs[:, 0]
        idx = np.argmin(np.abs(x - 2.0))
        assert x[idx] == pytest.approx(2.0, abs=1e-12)
        assert sim.sources[2].responses[idx] == pytest.approx(0.0, abs=1e-12)

    def test_target_left_endpoint_value(self):
        sim = generate_case1(ScenarioSpec(case="sim1", seed=1, noise_std=0.0))
        assert sim.target.responses[0] == pytest.approx(-5.4, abs=1e-12)

    def test_test_truth_noise_free_regardless_of_noise(self):
        a = generate_case1(ScenarioSpec(case="sim1", seed=5, noise_std=0.0))
        b = generate_case1(ScenarioSpec(case="sim1", seed=5, noise_std=0.2))
        np.testing.assert_array_equal(a.test_truth, b.test_truth)

    def test_bitwise_reproducible(self):
        a = generate_case1(ScenarioSpec(case="sim1", seed=11))
        b = generate_case1(ScenarioSpec(case="sim1", seed=11))
        np.testing.assert_array_equal(a.target.responses, b.target.responses)
        np.testing.assert_array_equal(a.test_inputs, b.test_inputs)


class TestCase2:
    def test_pseudo_source_size(self):
        sim = generate_case2(ScenarioSpec(case="sim2", seed=0))
        assert sim.sources[0].n == 64
        assert sim.sources[0].d == 2
        assert sim.excluded_for_baselines == {0}

    def test_other_sources_at_same_locations(self):
        sim = generate_case2(ScenarioSpec(case="sim2", seed=0))
        np.testing.assert_array_equal(sim.sources[1].inputs, sim.sources[0].inputs)
        np.testing.assert_array_equal(sim.sources[2].inputs, sim.sources[0].inputs)

    def test_formulas_with_zero_noise(self):
        sim = generate_case2(ScenarioSpec(case="sim2", seed=2, noise_std=0.0))
        x = sim.sources[1].inputs
        np.testing.assert_allclose(
            sim.sources[1].responses,
            4 * np.cos(2 * x[:, 0]) + x[:, 1] ** 2 + x[:, 1],
        )
        # pseudo source reduces to the exact marginal mean of f1
        np.testing.assert_allclose(
            sim.sources[0].responses, 3 * np.sin(sim.sources[0].inputs[:, 0])
        )
        # target at the grid origin is zero
        xt = sim.target.inputs
        idx = np.argmin(np.abs(xt).sum(axis=1))
        assert xt[idx, 0] == 0.0
        assert sim.target.responses[idx] == pytest.approx(
            xt[idx, 1] ** 2 + xt[idx, 1], abs=1e-12
        )

    def test_target_grid_and_test_grid(self):
        sim = generate_case2(ScenarioSpec(case="sim2", seed=0))
        assert sim.target.n == 24
        assert sim.test_inputs.shape == (100, 2)
        assert sim.target.inputs[:, 0].min() == 0.0
        assert sim.target.inputs[:, 0].max() == 2.0


class TestCase3:
    def test_setting1_output_counts(self):
        for ne, total in ((2, 9), (10, 41)):
            sim = generate_case3(ScenarioSpec(case="sim3-s1", n_e=ne, seed=0))
            assert len(sim.sources) + 1 == total

    def test_setting2_output_counts(self):
        for ne, total in ((1, 4), (2, 7)):
            sim = generate_case3(ScenarioSpec(case="sim3-s2", n_e=ne, seed=0))
            assert len(sim.sources) + 1 == total

    def test_setting1_zero_perturbation_reduces_to_base_cubic(self, monkeypatch):
        spec = ScenarioSpec(case="sim3-s1", n_e=1, seed=0, noise_std=0.0)
        # freeze the family perturbations at zero
        import mgcp.bench as bench_mod

        class FixedRng:
            def __init__(self, rng):
                self._rng = rng

            def uniform(self, lo, hi, size=None):
                return np.zeros(size) if size is not None else 0.0

            def __getattr__(self, name):
                return getattr(self._rng, name)

        real = bench_mod.derive_rng

        monkeypatch.setattr(
            bench_mod, "derive_rng", lambda *a: FixedRng(real(*a))
        )
        sim = generate_case3(spec)
        x = sim.sources[0].inputs[:, 0]
        np.testing.assert_allclose(sim.sources[0].responses, 0.3 * (x - 2.5) ** 3)

    def test_setting2_structure(self):
        sim = generate_case3(ScenarioSpec(case="sim3-s2", n_e=2, seed=1))
        # adapted family-1 sources: 10 induced x 10 draws
        assert sim.sources[0].n == 100
        assert sim.sources[0].d == 5
        assert sim.excluded_for_baselines == {0, 1}
        # target training points all lie in the x1 > 0 half-space
        assert sim.target.n == 50
        assert np.all(sim.target.inputs[:, 0] > 0)
        assert sim.test_inputs.shape == (150, 5)

    def test_invalid_ne(self):
        with pytest.raises(ConfigError):
            ScenarioSpec(case="sim3-s1", n_e=0)


class TestBgcpCombine:
    def test_single_submodel_unchanged(self):
        pred = bgcp_combine([(np.array([1.0, 2.0]), np.array([0.5, 2.0]))])
        np.testing.assert_allclose(pred.mean, [1.0, 2.0])
        np.testing.assert_allclose(pred.variance, [0.5, 2.0])

    def test_equal_weights(self):
        pred = bgcp_combine(
            [(np.array([1.0]), np.array([1.0])), (np.array([3.0]), np.array([1.0]))]
        )
        assert pred.mean[0] == pytest.approx(2.0)
        assert pred.variance[0] == pytest.approx(1.0)

    def test_hand_value(self):
        pred = bgcp_combine(
            [(np.array([0.0]), np.array([1.0])), (np.array([2.0]), np.array([4.0]))]
        )
        assert pred.mean[0] == pytest.approx(0.4)
        assert pred.variance[0] == pytest.approx(1.6)

    def test_identical_submodels_fixed_point(self):
        mean, var = np.array([0.3, -1.2]), np.array([0.7, 2.0])
        pred = bgcp_combine([(mean, var)] * 5)
        np.testing.assert_allclose(pred.mean, mean)
        np.testing.assert_allclose(pred.variance, var)

    def test_zero_variance_rejected(self):
        with pytest.raises(CombinationError):
            bgcp_combine([(np.array([0.0]), np.array([0.0]))])

    def test_empty_rejected(self):
        with pytest.raises(CombinationError):
            bgcp_combine([])


class TestSharedCodePath:
    def test_gamma_zero_objective_equals_unpenalized(self, rng):
        data = random_dataset(rng, q=2)
        theta = random_theta(rng, q=2)
        with_gamma = penalized_objective(
            data, theta, quick_config(gamma=0.0, jitter=1e-8)
        )
        none_mode = penalized_objective(
            data, theta, quick_config(gamma=0.0, penalty_mode="none", jitter=1e-8)
        )
        assert with_gamma == none_mode


FAST = TrainConfig(
    gamma=1.0, restarts=1, max_iterations=60, screen_draws=None, seed=0
)


class TestRunBenchmark:
    def test_unknown_method_rejected(self):
        with pytest.raises(ConfigError):
            run_benchmark(ScenarioSpec(case="sim1"), ["MGCP-X"], 1)

    def test_mgcp_t_outside_sim1_rejected(self):
        with pytest.raises(ConfigError):
            run_benchmark(ScenarioSpec(case="sim2"), ["MGCP-T"], 1)

    def test_rows_and_summary(self):
        spec = ScenarioSpec(case="sim1", seed=0)
        result = run_benchmark(spec, ["GCP", "MGCP-T"], 2, train=FAST, n_jobs=1)
        assert len(result.rows) == 4
        summary = {s["method"]: s for s in result.summary()}
        assert summary["GCP"]["failures"] == 0
        assert summary["GCP"]["median_mae"] > 0
        assert summary["MGCP-T"]["mean_fit_seconds"] > 0

    def test_deterministic_rows(self):
        spec = ScenarioSpec(case="sim1", seed=4)
        a = run_benchmark(spec, ["GCP"], 2, train=FAST, n_jobs=1)
        b = run_benchmark(spec, ["GCP"], 2, train=FAST, n_jobs=2)
        for ra, rb in zip(a.rows, b.rows):
            assert ra["mae"] == rb["mae"]
            assert ra["selected_sources"] == rb["selected_sources"]

    def test_bgcp_runs_pairwise(self):
        spec = ScenarioSpec(case="sim1", seed=1)
        result = run_benchmark(spec, ["BGCP-R"], 1, train=FAST, n_jobs=1)
        assert result.rows[0]["mae"] is not None

    def test_csv_round_trip(self, tmp_path):
        spec = ScenarioSpec(case="sim1", seed=0)
        result = run_benchmark(spec, ["GCP"], 2, train=FAST, n_jobs=1)
        rep = tmp_path / "replications.csv"
        summ = tmp_path / "summary.csv"
        write_replications_csv(rep, result)
        write_summary_csv(summ, result)
        lines = rep.read_text().splitlines()
        assert lines[0].split(",")[:3] == ["replication", "method", "mae"]
        # full-precision floats parse back exactly
        mae_back = float(lines[1].split(",")[2])
        assert mae_back == result.rows[0]["mae"]
        assert "median_mae" in summ.read_text().splitlines()[0]


class TestResolveNJobs:
    def test_env_cap(self, monkeypatch):
        monkeypatch.setenv("MGCP_THREADS", "1")
        assert resolve_n_jobs(8) == 1

    def test_invalid_env(self, monkeypatch):
        monkeypatch.setenv("MGCP_THREADS", "lots")
        with pytest.raises(ConfigError):
            resolve_n_jobs(2)

    def test_task_cap(self, monkeypatch):
        monkeypatch.delenv("MGCP_THREADS", raising=False)
        assert resolve_n_jobs(None, tasks=1) == 1
