from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from mfg_lqg.ctmc import CtmcPath, sample_path, state_at, transition_probability_oracle
from mfg_lqg.errors import OutOfRange, SchemaError
from mfg_lqg.model import validate_generator
from mfg_lqg.streams import StreamFactory, stream

TWO = validate_generator([[-0.5, 0.5], [0.6, -0.6]])


def _random_generator(seed: int, k: int):
    rng = np.random.default_rng(seed)
    q = rng.uniform(0, 2, (k, k))
    np.fill_diagonal(q, 0.0)
    np.fill_diagonal(q, -q.sum(axis=1))
    return validate_generator(q)


class TestSampling:
    def test_zero_generator(self):
        path = sample_path(validate_generator([[0.0, 0.0], [0.0, 0.0]]), 1, 10.0, np.random.default_rng(0))
        assert path.jump_times.size == 0
        assert state_at(path, 10.0) == 1

    def test_absorbing_state(self):
        gen = validate_generator([[0.0, 0.0], [1.0, -1.0]])
        path = sample_path(gen, 1, 50.0, np.random.default_rng(3))
        assert path.post_jump_states.tolist() == [0]

    def test_reproducible(self):
        a = sample_path(TWO, 0, 5.0, stream(7, 3, "Y"))
        b = sample_path(TWO, 0, 5.0, StreamFactory(7)(3, "Y"))
        assert a == b

    def test_bad_initial_state(self):
        with pytest.raises(OutOfRange):
            sample_path(TWO, 2, 1.0, np.random.default_rng(0))

    def test_alternates_and_increases(self):
        path = sample_path(TWO, 0, 100.0, np.random.default_rng(1))
        assert np.all(np.diff(path.jump_times) > 0)
        assert path.post_jump_states.tolist() == [(k + 1) % 2 for k in range(path.jump_times.size)]

    def test_stationary_law(self):
        rng = np.random.default_rng(2024)
        finals = np.array([state_at(sample_path(TWO, 0, 10.0, rng), 10.0) for _ in range(100_000)])
        p = transition_probability_oracle(TWO, 10.0)[0, 1]
        assert p == pytest.approx(0.45455, abs=1e-4)
        se = np.sqrt(p * (1 - p) / finals.size)
        assert abs(finals.mean() - p) <= 3 * se

    def test_mean_holding_time(self):
        rng = np.random.default_rng(5)
        first = [sample_path(TWO, 0, 50.0, rng).jump_times[0] for _ in range(20_000)]
        assert np.mean(first) == pytest.approx(2.0, abs=3 * 2.0 / np.sqrt(20_000))

    def test_three_state_chi_square(self):
        gen = _random_generator(11, 3)
        t = 0.8
        rng = np.random.default_rng(6)
        counts = np.bincount([state_at(sample_path(gen, 2, t, rng), t) for _ in range(30_000)], minlength=3)
        expected = transition_probability_oracle(gen, t)[2] * counts.sum()
        assert stats.chisquare(counts, expected).pvalue > 1e-3


class TestOracle:
    def test_identity(self):
        np.testing.assert_allclose(transition_probability_oracle(TWO, 0.0), np.eye(2))

    def test_negative_time(self):
        with pytest.raises(OutOfRange):
            transition_probability_oracle(TWO, -1.0)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 5), st.floats(0, 20))
    def test_stochastic_matrix(self, seed, k, t):
        p = transition_probability_oracle(_random_generator(seed, k), t)
        assert np.all(p >= -1e-12)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-10)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0, 3), st.floats(0, 3))
    def test_semigroup(self, seed, s, t):
        gen = _random_generator(seed, 3)
        lhs = transition_probability_oracle(gen, s + t)
        rhs = transition_probability_oracle(gen, s) @ transition_probability_oracle(gen, t)
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)


class TestPathObject:
    path = CtmcPath(0, np.array([1.0, 3.0]), np.array([1, 0]), 5.0)

    def test_right_continuous(self):
        assert state_at(self.path, 0.0) == 0
        assert state_at(self.path, 1.0) == 1
        assert state_at(self.path, 2.0) == 1
        assert state_at(self.path, 3.0) == 0
        assert state_at(self.path, np.nextafter(3.0, 0.0)) == 1
        np.testing.assert_array_equal(self.path.states_at([0.5, 1.5, 4.0]), [0, 1, 0])

    def test_out_of_range(self):
        with pytest.raises(OutOfRange):
            state_at(self.path, 5.5)

    def test_invalid_paths(self):
        with pytest.raises(OutOfRange):
            CtmcPath(0, np.array([2.0, 1.0]), np.array([1, 0]), 5.0)
        with pytest.raises(OutOfRange):
            CtmcPath(0, np.array([1.0]), np.array([0]), 5.0)

    def test_csv_round_trip(self):
        text = self.path.to_csv()
        assert text.splitlines()[0] == "y0,T"
        assert CtmcPath.from_csv(text) == self.path
        sampled = sample_path(TWO, 1, 30.0, np.random.default_rng(9))
        assert CtmcPath.from_csv(sampled.to_csv()) == sampled
        with pytest.raises(SchemaError):
            CtmcPath.from_csv("garbage")

    def test_constant(self):
        p = CtmcPath.constant(1, 2.0)
        assert state_at(p, 2.0) == 1 and p.jump_times.size == 0


class TestStreams:
    def test_roles_independent(self):
        f = StreamFactory(0)
        draws = {role: f(0, role).standard_normal(4).tolist() for role in ("W", "B", "Y", "init")}
        assert len({tuple(v) for v in draws.values()}) == 4

    def test_index_and_replica(self):
        f = StreamFactory(3)
        assert f(1, "W", 0).random() != f(1, "W", 1).random()
        assert f(1, "W").random() != f(2, "W").random()
        assert f(1, "W").random() == stream(3, 1, "W").random()

    def test_unknown_role(self):
        with pytest.raises((KeyError, ValueError)):
            stream(0, 0, "Z")
