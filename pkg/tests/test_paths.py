from __future__ import annotations

import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfg_lqg.ctmc import CtmcPath, sample_path
from mfg_lqg.errors import GridMismatch, OutOfRange
from mfg_lqg.model import load_model, two_regime_config
from mfg_lqg.nplayer import solve_reduced
from mfg_lqg.paths import (
    batch_grids,
    exp_integral,
    exp_integral_path,
    make_noise_batch,
    refine_grid,
    run_coupled_batch,
    run_mfg_batch,
    simulate_conditional_moments,
    simulate_coupled_pair,
    simulate_mfg_path,
    simulate_nplayer,
    solution_map_G,
    solution_map_Gbar,
)
from mfg_lqg.riccati import solve_mfg_riccati
from mfg_lqg.streams import StreamFactory

JUMPY = CtmcPath(0, np.array([1.234, 3.0]), np.array([1, 0]), 5.0)


def _zero_cost(b1=0.0, n=200, **kw):
    cfg = two_regime_config()
    cfg.update(n_steps=n, b1=b1, costs={"h": [0.0, 0.0], "g": [0.0, 0.0]}, **kw)
    return load_model(cfg, strict=False)


class TestExpIntegral:
    def test_linear_exact(self):
        t = np.linspace(0, 2, 21)
        assert exp_integral(np.ones_like(t), t, 2.0) == pytest.approx(math.e**2, rel=1e-14)
        assert exp_integral(t, t, 2.0) == pytest.approx(math.e**2, rel=1e-12)
        assert exp_integral(t, t, 1.05) == pytest.approx(math.exp(1.05**2 / 2), rel=1e-12)

    def test_second_order(self):
        errs = []
        for n in (50, 100):
            t = np.linspace(0, 3, n + 1)
            errs.append(abs(exp_integral(np.cos(t), t, 3.0) - math.exp(math.sin(3.0))))
        assert 3.5 < errs[0] / errs[1] < 4.5

    def test_path(self):
        t = np.linspace(0, 1, 11)
        np.testing.assert_allclose(exp_integral_path(np.full(11, 2.0), t), np.exp(2 * t), rtol=1e-14)

    def test_errors(self):
        t = np.linspace(0, 1, 11)
        with pytest.raises(GridMismatch):
            exp_integral(np.ones(5), t, 0.5)
        with pytest.raises(OutOfRange):
            exp_integral(np.ones(11), t, 1.5)


class TestSolutionMaps:
    t = np.linspace(0, 2, 201)

    def test_pure_noise(self):
        dw = np.random.default_rng(0).normal(0, 0.1, 200)
        z = np.zeros(201)
        np.testing.assert_allclose(solution_map_G(0.5, z, z, z, dw, self.t), 0.5 + np.concatenate([[0], np.cumsum(dw)]), atol=1e-14)

    def test_mean_reversion(self):
        one, zero = np.ones(201), np.zeros(201)
        g = solution_map_G(3.0, zero, one, one, np.zeros(200), self.t)
        np.testing.assert_allclose(g, 1.0 + 2.0 * np.exp(-self.t), atol=1e-4)

    def test_gbar_no_drift(self):
        rng = np.random.default_rng(1)
        d1, d2 = rng.normal(size=200), rng.normal(size=200)
        np.testing.assert_allclose(solution_map_Gbar(1.0, np.zeros(201), d1, d2, self.t), 1.0 + np.concatenate([[0], np.cumsum(d1 + d2)]))

    def test_grid_mismatch(self):
        z = np.zeros(201)
        with pytest.raises(GridMismatch):
            solution_map_G(0.0, z, z, np.zeros(50), np.zeros(200), self.t)
        with pytest.raises(GridMismatch):
            solution_map_Gbar(0.0, z, np.zeros(200), np.zeros(10), self.t)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_lipschitz_in_coefficient(self, seed):
        rng = np.random.default_rng(seed)
        phi1 = rng.uniform(-1, 1) + 0.5 * np.sin(self.t)
        phi2 = rng.uniform(0, 2) * np.ones(201)
        phi3 = rng.normal() * np.ones(201)
        dw = rng.normal(0, 0.1, 200)
        direction = rng.normal(size=201)
        direction /= np.max(np.abs(direction))
        base = solution_map_G(1.0, phi1, phi2, phi3, dw, self.t)
        ratios = []
        for eps in (1e-1, 1e-2, 1e-3, 1e-4):
            moved = solution_map_G(1.0, phi1, phi2 + eps * direction, phi3, dw, self.t)
            ratios.append(np.max(np.abs(moved - base)) / eps)
        assert max(ratios) <= 2.0 * ratios[-1] + 1e-9
        assert abs(ratios[-1] - ratios[-2]) <= 0.05 * ratios[-1] + 1e-9


class TestRefinedGrid:
    def test_inserts_each_jump_once(self, base_spec):
        grid = refine_grid(base_spec.grid, JUMPY)
        assert grid.t.size == 502
        assert np.sum(grid.t == 1.234) == 1 and np.sum(np.isclose(grid.t, 3.0)) == 1
        np.testing.assert_array_equal(grid.t[grid.base_index], base_spec.grid.nodes)
        np.testing.assert_array_equal(grid.state, JUMPY.states_at(grid.t[:-1]))

    def test_horizon_mismatch(self, base_spec):
        with pytest.raises(GridMismatch):
            refine_grid(base_spec.grid, CtmcPath.constant(0, 4.0))

    def test_batch_padding(self, base_spec):
        batch = batch_grids([refine_grid(base_spec.grid, JUMPY), refine_grid(base_spec.grid, CtmcPath.constant(1, 5.0))])
        assert batch.dt.shape == (2, 501)
        assert batch.dt[1, -1] == 0.0
        np.testing.assert_array_equal(batch.lengths, [501, 500])


class TestMeanFieldPaths:
    def test_brownian_when_drift_vanishes(self):
        spec = _zero_cost()
        ric = solve_mfg_riccati(spec)
        rng = np.random.default_rng(4)
        out = simulate_mfg_path(spec, ric, JUMPY, np.random.default_rng(4))
        x0 = spec.initial.from_normals(rng.standard_normal())
        dw = np.sqrt(out.grid.dt) * rng.standard_normal(out.grid.n_steps)
        np.testing.assert_allclose(out.series["xhat"], x0 + np.concatenate([[0.0], np.cumsum(dw)]), atol=1e-12)
        assert np.all(out.series["mu"] == spec.initial.mu0)

    def test_mean_flow_first_order(self):
        errs = []
        for n in (100, 200):
            spec = _zero_cost(b1=[[[0.0, 0.0], [5.0, 1.0]], 0.4], n=n, initial={"mu0": 1.0, "nu0": 1.0})
            out = simulate_mfg_path(spec, solve_mfg_riccati(spec), CtmcPath.constant(0, 5.0), np.random.default_rng(0))
            exact = np.exp(out.grid.t**2 / 10)
            errs.append(np.max(np.abs(out.series["mu"] - exact)))
        assert 1.8 < errs[0] / errs[1] < 2.2

    def test_grid_mismatch(self, base_spec, base_ric):
        with pytest.raises(GridMismatch):
            simulate_mfg_path(base_spec.replace(n_steps=100), base_ric, JUMPY, np.random.default_rng(0))

    def test_csv(self, base_spec, base_ric):
        out = simulate_mfg_path(base_spec, base_ric, JUMPY, np.random.default_rng(0))
        rows = list(csv.DictReader(io.StringIO(out.to_csv(replica=3))))
        assert list(rows[0]) == ["t", "series_name", "replica", "value"]
        assert {r["series_name"] for r in rows} == {"xhat", "mu"}
        assert rows[0]["replica"] == "3"
        assert out.at_base("xhat").shape == (501,)


class TestMoments:
    def test_no_feedback(self):
        spec = _zero_cost(initial={"mu0": 0.0, "nu0": 2.0})
        mom = simulate_conditional_moments(spec, solve_mfg_riccati(spec), JUMPY)
        np.testing.assert_allclose(mom.nu, 2.0 + mom.t, atol=1e-12)

    def test_centred_law_and_positivity(self, base_spec, base_ric):
        mom = simulate_conditional_moments(base_spec, base_ric, JUMPY)
        assert np.all(mom.mu == 0.0)
        assert np.all(mom.nu - mom.mu**2 >= 0)

    def test_methods_agree_to_first_order(self, base_spec, base_ric):
        em = simulate_conditional_moments(base_spec, base_ric, JUMPY)
        eu = simulate_conditional_moments(base_spec, base_ric, JUMPY, method="euler")
        assert np.max(np.abs(em.nu - eu.nu)) < 0.05
        with pytest.raises(ValueError):
            simulate_conditional_moments(base_spec, base_ric, JUMPY, method="rk4")

    def test_variance_falls_in_low_cost_regime(self, base_spec, base_ric):
        _, nu = simulate_conditional_moments(base_spec, base_ric, CtmcPath.constant(0, 5.0)).at_base()
        assert np.all(np.diff(nu) < 0)

    def test_variance_rises_when_feedback_is_weak(self, base_spec, base_ric):
        # nu' = 1 - 4 a nu is positive once nu < 1 / (4 a); in state 1 near T, a ~ 1
        _, nu = simulate_conditional_moments(base_spec, base_ric, CtmcPath.constant(1, 5.0)).at_base()
        assert np.any(np.diff(nu) > 0)


class TestNPlayer:
    def test_brownian_players(self):
        spec = _zero_cost()
        red = solve_reduced(spec, 4)
        out = simulate_nplayer(spec, red, JUMPY, np.random.default_rng(7))
        rng = np.random.default_rng(7)
        x0 = spec.initial.from_normals(rng.standard_normal(4))
        dw = np.sqrt(out.grid.dt)[:, None] * rng.standard_normal((out.grid.n_steps, 4))
        expected = x0 + np.vstack([np.zeros(4), np.cumsum(dw, axis=0)])
        for i in range(4):
            np.testing.assert_allclose(out.series[f"x_{i + 1}"], expected[:, i], atol=1e-12)

    @pytest.mark.parametrize("b1", [0.0, 0.3])
    def test_mean_field_cancellation(self, base_spec, b1):
        spec = base_spec.replace(b1=[b1, -b1])
        out = simulate_nplayer(spec, solve_reduced(spec, 6), JUMPY, np.random.default_rng(3))
        assert np.max(np.abs(out.series["xbar"] - out.series["xbar_direct"])) <= 1e-12

    def test_permutation_symmetry(self, base_spec):
        red = solve_reduced(base_spec, 4)
        f = StreamFactory(5)
        perm = [2, 0, 3, 1]
        a = simulate_nplayer(base_spec, red, JUMPY, player_rngs=[f(0, "W", i) for i in range(4)])
        b = simulate_nplayer(base_spec, red, JUMPY, player_rngs=[f(0, "W", i) for i in perm])
        for k, i in enumerate(perm):
            np.testing.assert_allclose(b.series[f"x_{k + 1}"], a.series[f"x_{i + 1}"], atol=1e-13)

    def test_stream_count(self, base_spec):
        with pytest.raises(GridMismatch):
            simulate_nplayer(base_spec, solve_reduced(base_spec, 4), JUMPY, player_rngs=[np.random.default_rng(0)])


class TestCoupling:
    def test_zero_costs_gap_vanishes(self):
        spec = _zero_cost()
        run = simulate_coupled_pair(spec, solve_mfg_riccati(spec), solve_reduced(spec, 8), JUMPY, np.random.default_rng(0))
        assert np.all(run.gap == 0.0)

    def test_reproducible(self, base_spec, base_ric):
        red = solve_reduced(base_spec, 8)
        a = simulate_coupled_pair(base_spec, base_ric, red, JUMPY, np.random.default_rng(11))
        b = simulate_coupled_pair(base_spec, base_ric, red, JUMPY, np.random.default_rng(11))
        np.testing.assert_array_equal(a.z, b.z)
        assert set(a.to_path_set().series) == {"z", "xhat", "xbar", "mu", "gap"}

    def test_average_follows_solution_map(self):
        spec = _zero_cost(n=100)
        ric = solve_mfg_riccati(spec)
        N = 5
        run = simulate_coupled_pair(spec, ric, solve_reduced(spec, N), JUMPY, np.random.default_rng(2))
        rng = np.random.default_rng(2)
        x0 = spec.initial.from_normals(rng.standard_normal(N))
        dw = np.sqrt(run.grid.dt) * rng.standard_normal(run.grid.n_steps)
        db = np.sqrt(run.grid.dt) * rng.standard_normal(run.grid.n_steps)
        expected = solution_map_Gbar(x0.mean(), np.zeros(run.grid.t.size), dw / N, math.sqrt(N - 1) / N * db, run.grid.t)
        np.testing.assert_allclose(run.xbar, expected, atol=1e-12)

    def test_aux_count(self, base_spec, base_ric):
        with pytest.raises(GridMismatch):
            simulate_coupled_pair(base_spec, base_ric, solve_reduced(base_spec, 4), JUMPY, np.random.default_rng(0), n_aux=3)


class TestBatches:
    def test_batch_matches_single_replicas(self, base_spec, base_ric):
        f = StreamFactory(9)
        nodes = [100, 250, 500]
        both = run_mfg_batch(base_spec, base_ric, make_noise_batch(base_spec, f, [0, 1], with_b=False), nodes)
        for k in (0, 1):
            alone = run_mfg_batch(base_spec, base_ric, make_noise_batch(base_spec, f, [k], with_b=False), nodes)
            np.testing.assert_array_equal(both[0][k], alone[0][0])

    def test_noise_batch_reuses_paths(self, base_spec):
        f = StreamFactory(1)
        batch = make_noise_batch(base_spec, f, [4], n_init=3)
        assert batch.y_paths[0] == sample_path(base_spec.generator, 0, 5.0, f(4, "Y"))
        assert batch.z0.shape == (1, 3)

    def test_coupled_batch_needs_pool(self, base_spec, base_ric):
        batch = make_noise_batch(base_spec, StreamFactory(0), [0], n_init=2)
        with pytest.raises(GridMismatch):
            run_coupled_batch(base_spec, base_ric, solve_reduced(base_spec, 4), batch, [500])

    def test_fixed_regime_path(self, base_spec):
        batch = make_noise_batch(base_spec, StreamFactory(0), [0, 1, 2], with_b=False, y_path=JUMPY)
        assert all(p is JUMPY for p in batch.y_paths)
        assert batch.db is None
