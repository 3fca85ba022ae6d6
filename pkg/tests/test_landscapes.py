import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from proposa.acceptance import TemperatureSchedule
from proposa.errors import DomainError, ParseError
from proposa.landscapes import (
    BasinExperiment,
    Landscape,
    LandscapeTask,
    PairedOutcome,
    SyntheticProposer,
    brute_force_optimum,
    compare_strategies,
    count_local_maxima,
    degeneracy_sweep,
    eval_landscape,
    landscape_from_dict,
    run_strategy_trial,
)


def crossing(land):
    (c1, c2), (v1, v2), a = land.centers, land.values, land.curvature
    return (v2 - v1 + a * (c1**2 - c2**2)) / (2 * a * (c1 - c2))


@settings(max_examples=100)
@given(st.floats(-2, -0.2), st.floats(0.2, 2), st.floats(-1, 1), st.floats(0.001, 1), st.floats(0.05, 3))
def test_double_well_barrier_is_exact(c1, c2, v1, gap, h):
    land = Landscape.double_well(c1, c2, v1, v1 + gap, h, lo=c1 - 2, hi=c2 + 2)
    x = crossing(land)
    assert c1 < x < c2
    assert eval_landscape(land, x) == pytest.approx(v1 - h, abs=1e-9)
    assert eval_landscape(land, c1) == pytest.approx(v1) and eval_landscape(land, c2) == pytest.approx(v1 + gap)


def test_local_maxima_counts():
    assert count_local_maxima(Landscape.quadratic()) == 1
    assert count_local_maxima(Landscape.double_well()) == 2


def test_brute_force_optimum_finds_global_peak():
    land = Landscape.double_well(v2=0.3)
    x, f = brute_force_optimum(land, 6001)
    assert x == pytest.approx(1.0) and f == pytest.approx(0.3)
    assert land.basin(x) == land.global_basin == 1


@pytest.mark.parametrize("kw", [dict(v2=-0.1), dict(barrier=0.0), dict(c1=1.0, c2=-1.0), dict(lo=0.0)])
def test_double_well_rejects_bad_parameters(kw):
    with pytest.raises(DomainError):
        Landscape.double_well(**kw)


def test_eval_outside_domain():
    with pytest.raises(DomainError):
        eval_landscape(Landscape.quadratic(), 1.5)


def test_task_parse_and_round_trip():
    land = Landscape.double_well(v2=0.02)
    task = LandscapeTask(land)
    with pytest.raises(ParseError):
        task.parse('{"x": 9.0}')
    with pytest.raises(ParseError):
        task.parse('{"y": 0.0}')
    assert landscape_from_dict(land.to_dict()) == land


def test_greedy_on_unimodal_climbs():
    land = Landscape.quadratic(lo=-3, hi=3)
    trial = run_strategy_trial(land, SyntheticProposer(0.5), "greedy", -2.5, rounds=30, seed=1)
    assert abs(trial.final_x) < 0.5
    assert trial.values[0] == eval_landscape(land, -2.5)


def test_trials_are_deterministic():
    land = Landscape.double_well(v2=0.02)
    sched = TemperatureSchedule(0.3, 0.7)
    a = run_strategy_trial(land, SyntheticProposer(2.0), "simulated_annealing", -1.0, sched, 10, seed=5)
    b = run_strategy_trial(land, SyntheticProposer(2.0), "simulated_annealing", -1.0, sched, 10, seed=5)
    assert a == b


def test_paired_experiment_shares_seeds():
    land = Landscape.double_well(v2=0.02)
    exp = BasinExperiment(land, 2.0, -1.0, TemperatureSchedule(0.3, 0.7), 10, 20, 7)
    o = compare_strategies(exp)
    g, s = exp.basins("greedy"), exp.basins("simulated_annealing")
    assert o.sa_only == int(np.sum((s == 1) & (g == 0))) and o.greedy_only == int(np.sum((g == 1) & (s == 0)))
    assert o.sa_global_rate - o.greedy_global_rate == pytest.approx((o.sa_only - o.greedy_only) / 20)


def test_sign_test():
    assert PairedOutcome(0, 0, 0, 0, 5, 0, 10).sign_test_p() == 1 / 32
    assert PairedOutcome(0, 0, 0, 0, 0, 0, 10).sign_test_p() == 1.0
    assert PairedOutcome(0, 0, 0, 0, 3, 3, 10).sign_test_p() == pytest.approx(sum(math.comb(6, j) for j in range(3, 7)) / 64)


def test_degeneracy_sweep_includes_edges():
    rows = degeneracy_sweep(0.01, TemperatureSchedule(0.054, 0.7), samples=5, rounds=3)
    assert len(rows) == 3 * 7
    assert {r.delta for r in rows[:2]} == {0.0, -0.01}
    assert all(r.p >= r.bound for r in rows)
    with pytest.raises(DomainError):
        degeneracy_sweep(0.0, TemperatureSchedule(0.054, 0.7), 1)
