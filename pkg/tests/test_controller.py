"""Parameter spaces and the suggest/observe loop."""

import json
import math

import numpy as np
import pytest

from practicalbo import Dimension, Optimizer, ParameterSpace, StrategyConfig
from practicalbo.controller import (
    best,
    duration_training_data,
    dumps_state,
    load_state,
    loads_state,
    new_state,
    observe,
    save_state,
    suggest,
)
from practicalbo.errors import (
    EmptyStateError,
    ExhaustedGridError,
    InvalidArgumentError,
    StateFormatError,
    UnsupportedVersionError,
)

FAST = dict(mcmc_samples=3, burn_in=5, warm_burn_in=2, n_candidates=128, fantasy_count=3)


def box(d=2):
    return ParameterSpace([Dimension(f"x{i}", 0.0, 1.0) for i in range(d)])


def quad(x):
    return float(np.sum((np.asarray(x) - 0.3) ** 2))


class TestDimension:
    def test_linear(self):
        assert Dimension("a", 0, 10).to_unit(5.0) == 0.5

    def test_log10(self):
        d = Dimension("c", 1e-1, 1e6, "log10")
        assert d.to_unit(10**2.5) == pytest.approx(0.5, abs=1e-14)

    def test_round_trip(self):
        space = ParameterSpace([Dimension("a", -3, 7), Dimension("b", 1e-1, 1e6, "log10")])
        for u in np.random.default_rng(0).random((100, 2)):
            np.testing.assert_allclose(space.to_unit(space.from_unit(u)), u, atol=1e-12)

    @pytest.mark.parametrize(
        "args",
        [("a", 1.0, 1.0), ("a", 2.0, 1.0), ("a", 0.0, 1.0, "log10"), ("a", 0.0, 1.0, "cubic"), ("a", 0, math.inf)],
    )
    def test_invalid(self, args):
        with pytest.raises(InvalidArgumentError):
            Dimension(*args)

    def test_out_of_bounds(self):
        with pytest.raises(InvalidArgumentError):
            Dimension("a", 0, 1).to_unit(1.5)

    def test_grid_all_or_none(self):
        with pytest.raises(InvalidArgumentError):
            ParameterSpace([Dimension("a", 0, 1, grid=[0, 1]), Dimension("b", 0, 1)])

    def test_grid_product(self):
        space = ParameterSpace([Dimension("a", 0, 1, grid=[0, 0.5, 1]), Dimension("b", 0, 2, grid=[1, 2])])
        assert space.grid.shape == (6, 2)

    def test_space_round_trip(self):
        space = ParameterSpace([Dimension("a", 0, 1)], grid_points=[[0.1], [0.9]])
        again = ParameterSpace.from_dict(space.to_dict())
        np.testing.assert_array_equal(again.grid, space.grid)


class TestSuggest:
    def test_initial_design(self):
        opt = Optimizer(box(), StrategyConfig(initial_design_count=2, parallel_degree=2, **FAST))
        a, b = opt.suggest(), opt.suggest()
        assert np.all((a >= 0) & (a <= 1)) and np.all((b >= 0) & (b <= 1))
        assert not np.allclose(a, b)

    def test_parallel_distinct(self):
        opt = Optimizer(box(), StrategyConfig(initial_design_count=2, parallel_degree=3, **FAST))
        for _ in range(3):
            x = opt.suggest()
            opt.observe(x, quad(x))
        pts = [opt.suggest() for _ in range(3)]
        for i in range(3):
            for j in range(i):
                assert np.linalg.norm(pts[i] - pts[j]) > 1e-6

    def test_cap_enforced(self):
        opt = Optimizer(box(), StrategyConfig(**FAST))
        opt.suggest()
        with pytest.raises(InvalidArgumentError):
            opt.suggest()

    def test_bounds_native_log_scale(self):
        space = ParameterSpace([Dimension("c", 1e-1, 1e6, "log10")])
        opt = Optimizer(space, StrategyConfig(seed=4, **FAST))
        for _ in range(6):
            x = opt.suggest()
            assert 1e-1 <= x[0] <= 1e6
            opt.observe(x, (math.log10(x[0]) - 2) ** 2)

    def test_grid_mode_unique_grid_points(self):
        grid = [[v] for v in np.linspace(0, 1, 7)]
        space = ParameterSpace([Dimension("x", 0, 1)], grid_points=grid)
        opt = Optimizer(space, StrategyConfig(seed=1, **FAST))
        seen = []
        for _ in range(7):
            x = opt.suggest()
            assert any(np.array_equal(x, g) for g in np.asarray(grid))
            assert not any(np.array_equal(x, s) for s in seen)
            seen.append(x)
            opt.observe(x, quad(x))
        with pytest.raises(ExhaustedGridError):
            opt.suggest()

    @pytest.mark.parametrize("name", ["ei-mcmc", "ei-opt", "ei-per-second"])
    def test_strategies_run(self, name):
        opt = Optimizer(box(), StrategyConfig.from_name(name, seed=2, **FAST))
        for _ in range(5):
            x = opt.suggest()
            opt.observe(x, quad(x), duration=1.0 + x[0])
        assert opt.best()[1] < 0.5

    def test_cost_aware_without_durations_is_plain_ei(self):
        a = Optimizer(box(), StrategyConfig.from_name("ei-per-second", seed=3, **FAST))
        b = Optimizer(box(), StrategyConfig.from_name("ei-mcmc", seed=3, **FAST))
        for _ in range(4):
            xa, xb = a.suggest(), b.suggest()
            np.testing.assert_array_equal(xa, xb)
            a.observe(xa, quad(xa))
            b.observe(xb, quad(xb))

    def test_no_location_both_pending_and_completed(self):
        opt = Optimizer(box(), StrategyConfig(parallel_degree=2, seed=5, **FAST))
        for _ in range(6):
            x = opt.suggest()
            opt.observe(x, quad(x))
            opt.suggest()
            done = opt.state.completed_unit()
            for p in opt.state.pending_unit():
                assert np.min(np.sum((done - p) ** 2, axis=1)) > 0
            opt.observe(opt.state.pending[0], 1.0)


class TestObserve:
    def test_counts(self):
        state = new_state(box(), StrategyConfig(**FAST))
        x = suggest(state)
        assert len(state.pending) == 1
        observe(state, x, 1.0)
        assert len(state.pending) == 0 and len(state.completed) == 1

    def test_unknown_point_needs_force(self):
        state = new_state(box(), StrategyConfig(**FAST))
        with pytest.raises(InvalidArgumentError):
            observe(state, [0.5, 0.5], 1.0)
        observe(state, [0.5, 0.5], 1.0, force=True)
        assert best(state)[1] == 1.0

    def test_non_finite_value(self):
        state = new_state(box(), StrategyConfig(**FAST))
        x = suggest(state)
        with pytest.raises(InvalidArgumentError):
            observe(state, x, float("nan"))

    def test_duration_log_target(self):
        state = new_state(box(), StrategyConfig(**FAST))
        observe(state, suggest(state), 1.0, duration=2.0)
        _, logd = duration_training_data(state)
        assert logd[0] == pytest.approx(math.log(2.0))

    def test_failure_filled_with_worse_value(self):
        state = new_state(box(), StrategyConfig(parallel_degree=3, **FAST))
        pts = [suggest(state) for _ in range(3)]
        observe(state, pts[0], 1.0)
        observe(state, pts[1], 3.0)
        observe(state, pts[2], failed=True)
        vals = state.effective_values()
        assert vals[2] == pytest.approx(3.0 + 1.0)
        assert duration_training_data(state)[1].size == 0

    def test_incumbent_updates(self):
        state = new_state(box(), StrategyConfig(**FAST))
        for v in (3.0, 1.0, 2.0):
            observe(state, suggest(state), v)
        assert best(state)[1] == 1.0
        np.testing.assert_array_equal(best(state)[0], state.completed[1].location)


class TestBest:
    def test_empty(self):
        with pytest.raises(EmptyStateError):
            best(new_state(box()))

    def test_tie_goes_to_first(self):
        state = new_state(box())
        observe(state, [0.1, 0.1], 1.0, force=True)
        observe(state, [0.2, 0.2], 1.0, force=True)
        np.testing.assert_array_equal(best(state)[0], [0.1, 0.1])

    def test_non_increasing(self):
        opt = Optimizer(box(), StrategyConfig(seed=6, **FAST))
        prev = math.inf
        for _ in range(6):
            x = opt.suggest()
            opt.observe(x, quad(x))
            assert opt.best()[1] <= prev
            prev = opt.best()[1]


class TestPersistence:
    def drive(self, state, n):
        for _ in range(n):
            x = suggest(state)
            observe(state, x, quad(x), duration=1.0)

    @pytest.mark.parametrize("name", ["ei-mcmc", "ei-opt", "ei-per-second"])
    def test_round_trip_same_next_point(self, name):
        state = new_state(box(), StrategyConfig.from_name(name, seed=9, **FAST))
        self.drive(state, 4)
        copy = loads_state(dumps_state(state))
        np.testing.assert_array_equal(suggest(state), suggest(copy))

    def test_json_serializable(self):
        state = new_state(box(), StrategyConfig(seed=1, **FAST))
        self.drive(state, 3)
        json.dumps(save_state(state))

    def test_truncated_document(self):
        text = dumps_state(new_state(box()))
        with pytest.raises(StateFormatError):
            loads_state(text[: len(text) // 2])

    def test_missing_field(self):
        doc = save_state(new_state(box()))
        del doc["completed"]
        with pytest.raises(StateFormatError):
            load_state(doc)

    def test_old_version(self):
        doc = save_state(new_state(box()))
        doc["version"] = 0
        with pytest.raises(UnsupportedVersionError):
            load_state(doc)


class TestDeterminism:
    def run(self, degree):
        opt = Optimizer(box(), StrategyConfig(parallel_degree=degree, seed=12, **FAST))
        out = []
        for _ in range(degree):
            out.append(opt.suggest())
        for _ in range(5):
            x = opt.state.pending[0]
            opt.observe(x, quad(x))
            out.append(opt.suggest())
        return np.array(out)

    @pytest.mark.parametrize("degree", [1, 3])
    def test_identical_sequences(self, degree):
        np.testing.assert_array_equal(self.run(degree), self.run(degree))


class TestStrategyConfig:
    def test_names(self):
        assert StrategyConfig.from_name("ei-opt").treatment == "point"
        assert StrategyConfig.from_name("ei-per-second").cost_aware
        with pytest.raises(InvalidArgumentError):
            StrategyConfig.from_name("random")

    def test_dict_round_trip(self):
        cfg = StrategyConfig.from_name("ei-per-second", parallel_degree=3, kernel="se")
        assert StrategyConfig.from_dict(cfg.to_dict()) == cfg

    def test_cost_aware_requires_ei(self):
        from practicalbo.acquisition import AcquisitionKind

        with pytest.raises(InvalidArgumentError):
            StrategyConfig(cost_aware=True, acquisition=AcquisitionKind("pi"))
