import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from distsgd.analysis import (
    BoundInputs,
    check_result,
    check_trajectory,
    gap_from_results,
    strategy_gap,
    theorem1_bound,
    theorem2_bound,
)
from distsgd.errors import InvalidArgument
from distsgd.losses import LossModel
from distsgd.sim import ExperimentConfig, run_experiment
from distsgd.strategies import AlgorithmSpec


def test_theorem1_example():
    b = BoundInputs(n_nodes=20, lam=0.01, sigma=0.9, g=1.0, rounds=999)
    # 4*20/(0.01*1000) * (3 + 8*0.9*sqrt(20)/0.1) = 8 * (3 + 72 sqrt(20))
    assert theorem1_bound(b) == pytest.approx(24 + 576 * math.sqrt(20), rel=1e-12)
    assert theorem1_bound(b) == pytest.approx(2599.9503, abs=1e-4)


def test_theorem2_example():
    b = BoundInputs(n_nodes=4, lam=1.0, sigma=0.5, g=1.0, rounds=23)
    assert theorem2_bound(b) == pytest.approx(5.0, rel=1e-14)


def test_sigma_zero_drops_network_term():
    b = BoundInputs(n_nodes=9, lam=0.5, sigma=0.0, g=2.0, rounds=99)
    assert theorem1_bound(b) == pytest.approx(4 * 9 * 4 / (0.5 * 100) * 3)
    assert theorem2_bound(b) == pytest.approx(24 * 4 / (0.25 * 100))


@pytest.mark.parametrize("sigma", [1.0, -0.1, 1.5])
def test_sigma_out_of_range(sigma):
    with pytest.raises(InvalidArgument):
        BoundInputs(4, 1.0, sigma, 1.0, 10)


inputs = st.builds(BoundInputs, st.integers(1, 100), st.floats(1e-4, 10), st.floats(0, 0.999),
                   st.floats(1e-3, 100), st.integers(1, 10_000))


@settings(max_examples=200, deadline=None)
@given(inputs)
def test_monotonicity(b):
    for fn in (theorem1_bound, theorem2_bound):
        base = fn(b)
        assert fn(replace(b, rounds=b.rounds + 1)) < base
        assert fn(replace(b, g=b.g * 1.5)) > base
        assert fn(replace(b, lam=b.lam * 1.5)) < base
        assert fn(replace(b, sigma=min(0.9995, b.sigma + 0.0005))) > base
    assert theorem1_bound(replace(b, n_nodes=b.n_nodes + 1)) > theorem1_bound(b)


def test_checker_flags_violations_under_scaled_bound():
    b = BoundInputs(5, 0.1, 0.5, 1.0, 100)
    bound = np.array([theorem2_bound(replace(b, rounds=t)) for t in range(1, 101)])
    emp = 0.75 * bound
    assert check_trajectory(emp, b, "t2").ok
    report = check_trajectory(emp, b, "t2", scale=0.5)
    assert report.violations == list(range(1, 101))


def test_checker_skips_unevaluated_rounds():
    b = BoundInputs(5, 0.1, 0.5, 1.0, 4)
    report = check_trajectory([np.nan, 1e9, np.nan, 0.0], b, "t1")
    assert report.violations == [2]
    assert list(report.rounds) == [2, 4]


def test_checker_rejects_unknown_bound():
    with pytest.raises(InvalidArgument):
        check_trajectory([1.0], BoundInputs(2, 1.0, 0.1, 1.0, 1), "t3")


def test_single_node_within_both_bounds():
    cfg = ExperimentConfig(n_nodes=1, dim=3, rounds=300, trials=5, algorithm=AlgorithmSpec("tvw"),
                           loss=LossModel("squared", 0.1), master_seed=2)
    res = run_experiment(cfg)
    assert res.sigma == 0.0
    assert check_result(res, "t1").ok
    assert check_result(res, "t2").ok


def test_bound_csv(small_config):
    res = run_experiment(small_config)
    report = check_result(res, "t1", node=1)
    lines = report.csv_text().splitlines()
    assert lines[0] == "t,empirical,bound,ratio"
    assert len(lines) == small_config.rounds + 1


def test_strategy_gap_zero_step_is_exact(small_config):
    cfg = replace(small_config, algorithm=AlgorithmSpec("css", step_size=0.0))
    gap = strategy_gap(cfg)
    assert gap.final_gap == 0.0
    np.testing.assert_array_equal(gap.msd_diffusion, gap.msd_consensus)


def test_strategy_gap_single_node_is_zero():
    cfg = ExperimentConfig(n_nodes=1, dim=2, rounds=100, trials=2, algorithm=AlgorithmSpec("vss"),
                           loss=LossModel("squared", 0.5, radius=100.0))
    assert abs(strategy_gap(cfg).final_gap) <= 1e-15


def test_strategy_gap_complete_uniform_within_noise():
    cfg = ExperimentConfig(n_nodes=6, dim=3, rounds=300, trials=30, topology="complete", rule="uniform",
                           algorithm=AlgorithmSpec("vss"), loss=LossModel("squared", 0.5), master_seed=3)
    d = run_experiment(cfg)
    c = run_experiment(replace(cfg, algorithm=AlgorithmSpec("vss", "consensus")))
    gap = gap_from_results(d, c)
    se = math.sqrt((d.var["msd"][-1] + c.var["msd"][-1]) / cfg.trials)
    assert abs(gap.final_gap) <= 4 * se


def test_strategy_gap_rejects_mismatched_configs(small_config):
    other = replace(small_config, rounds=10, algorithm=AlgorithmSpec("tvw", "consensus"))
    with pytest.raises(InvalidArgument):
        strategy_gap(small_config, other)
