import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drmanifold.env import (
    MANIFOLDS,
    EnvironmentConfig,
    ManifoldEmbedding,
    OverlapError,
    TrigPoly,
    chart_quadrature,
    draw_logged_dataset,
    margin_diagnostic,
    one_hot_policy,
    oracle_value_and_policy,
    sine_environment,
    true_policy_value,
    uniform_policy,
)
from drmanifold.config import preset_environment


def finite_env(rewards, logging=None, sigma=0.0, kind="circle", ambient_dim=4, **kw):
    logging = logging or [0.0] * len(rewards)
    cfg = EnvironmentConfig(kind=kind, ambient_dim=ambient_dim, noise_sigma=sigma,
                            rewards=tuple(r if isinstance(r, (int, float)) else r.to_config() for r in rewards),
                            logging=tuple(g if isinstance(g, (int, float)) else g.to_config() for g in logging),
                            **kw)
    return cfg.build()


class TestEmbedding:
    def test_circle_quarter_turn(self):
        emb = ManifoldEmbedding.create("circle", 2, seed=None)
        np.testing.assert_allclose(emb.embed(np.array([[0.25]]))[0], [0.0, 1.0], atol=1e-15)

    @pytest.mark.parametrize("kind", ["circle", "sphere2"])
    @pytest.mark.parametrize("scale", [0.5, 1.0, 3.0])
    def test_norm_equals_scale(self, kind, scale, rng):
        emb = ManifoldEmbedding.create(kind, 12, seed=3, scale=scale)
        x = emb.embed(rng.random((500, MANIFOLDS[kind][0])))
        np.testing.assert_allclose(np.linalg.norm(x, axis=1), scale, atol=1e-12)

    def test_circle_mean_clt(self, rng):
        scale = 2.0
        emb = ManifoldEmbedding.create("circle", 6, seed=1, scale=scale)
        x = emb.embed(rng.random((100_000, 1)))
        assert np.all(np.abs(x.mean(axis=0)) <= 3 * scale / math.sqrt(2 * 100_000))

    @pytest.mark.parametrize("kind", sorted(MANIFOLDS))
    def test_intrinsic_roundtrip(self, kind, rng):
        emb = ManifoldEmbedding.create(kind, 9, seed=5)
        t = rng.uniform(0.01, 0.99, size=(300, MANIFOLDS[kind][0]))
        np.testing.assert_allclose(emb.to_intrinsic(emb.embed(t)), t, atol=1e-9)

    def test_too_small_ambient(self):
        with pytest.raises(ValueError):
            ManifoldEmbedding.create("sphere2", 2)

    def test_sphere_uniform_height(self, rng):
        emb = ManifoldEmbedding.create("sphere2", 3, seed=None)
        z = emb.embed(rng.random((50_000, 2)))[:, 2]
        # uniform on the sphere gives a uniform height on [-1, 1]
        assert abs(np.mean(z)) < 0.02
        assert abs(np.mean(z**2) - 1 / 3) < 0.01


class TestDraw:
    def test_noiseless_rewards(self, rng):
        env = finite_env([TrigPoly.sine(), TrigPoly.cosine(0.5), 0.2], sigma=0.0)
        data = env.draw(2000, 0.5, rng)
        mu = env.mean_rewards(data.intrinsic)[np.arange(2000), data.actions]
        np.testing.assert_array_equal(data.rewards, mu)

    def test_uniform_logging_frequencies(self, rng):
        env = finite_env([0.0, 0.0])
        data = env.draw(100_000, 0.5, rng)
        freq = np.bincount(data.actions, minlength=2) / 100_000
        assert np.all((freq >= 0.494) & (freq <= 0.506))

    def test_split(self, rng, sine_env):
        data = draw_logged_dataset(sine_env, 1000, 0.5, rng)
        assert len(data.first_stage) == 500 and len(data.second_stage) == 500

    def test_rewards_bounded(self, rng):
        env = finite_env([1.0, -1.0], sigma=2.0, reward_bound=1.5)
        data = env.draw(5000, 0.5, rng)
        assert np.abs(data.rewards).max() <= 1.5

    def test_truncated_noise(self, rng):
        env = finite_env([0.0, 0.0], sigma=0.3)
        data = env.draw(50_000, 0.5, rng)
        assert np.abs(data.rewards).max() <= 0.9
        assert data.rewards.std() == pytest.approx(0.3 * 0.9866, rel=0.03)

    def test_reproducible(self, sine_env):
        a = sine_env.draw(300, 0.5, np.random.default_rng(7))
        b = sine_env.draw(300, 0.5, np.random.default_rng(7))
        np.testing.assert_array_equal(a.covariates, b.covariates)
        np.testing.assert_array_equal(a.rewards, b.rewards)
        np.testing.assert_array_equal(a.actions, b.actions)

    def test_csv_header(self, tmp_path, rng, sine_env):
        sine_env.draw(20, 0.5, rng).write_csv(tmp_path / "d.csv")
        lines = (tmp_path / "d.csv").read_text().splitlines()
        assert lines[0] == ",".join([f"x_{i}" for i in range(10)] + ["a", "y"])
        assert len(lines) == 21

    def test_overlap_floor_enforced(self):
        with pytest.raises(OverlapError):
            finite_env([0.0, 0.0], logging=[TrigPoly.cosine(5.0), 0.0], overlap_floor=0.05)

    def test_continuous_density_integrates_to_one(self):
        env = EnvironmentConfig.from_dict(preset_environment("quadratic-dose")).build()
        t = np.linspace(0, 1, 17)[:, None]
        assert np.allclose(env.cdf(t, np.ones((17, 1)))[:, 0], 1.0, atol=1e-12)
        assert env.density_grid(t).min() >= env.overlap

    def test_continuous_sampler_matches_cdf(self, rng):
        env = EnvironmentConfig.from_dict(preset_environment("quadratic-dose")).build()
        t = np.full((40_000, 1), 0.1)
        a = env.sample_actions(t, rng)
        for q in (0.2, 0.5, 0.8):
            expected = env.cdf(t[:1], np.array([[q]]))[0, 0]
            assert abs(np.mean(a <= q) - expected) < 4 * math.sqrt(expected * (1 - expected) / a.size)


class TestPolicyValue:
    def test_one_hot_sine_integrates_to_zero(self):
        env = finite_env([TrigPoly.sine(), 0.0])
        assert abs(true_policy_value(env, one_hot_policy(0, 2)).value) < 1e-12

    def test_uniform_constant_rewards(self):
        env = finite_env([1.0, 0.0])
        assert true_policy_value(env, uniform_policy(2)).value == pytest.approx(0.5, abs=1e-12)

    def test_quadrature_matches_monte_carlo(self, rng):
        env = finite_env([TrigPoly(0.1, ((0.7, (1,), 0.3), (0.2, (3,), 1.0))), TrigPoly.cosine(0.4)],
                         logging=[TrigPoly.sine(0.3), 0.0], kind="swiss-roll")

        def policy(x):
            t = env.embedding.to_intrinsic(x)[:, 0]
            p = 1 / (1 + np.exp(-3 * np.cos(2 * np.pi * t)))
            return np.stack([p, 1 - p], axis=1)

        q = true_policy_value(env, policy).value
        mc = true_policy_value(env, policy, "monte-carlo", 1_000_000, rng)
        assert abs(q - mc.value) <= 4 * mc.standard_error

    def test_panel_doubling(self, sine_env):
        pol = uniform_policy(2)
        coarse = true_policy_value(sine_env, lambda x: pol(x) + 0.0, panels=2048).value
        fine = true_policy_value(sine_env, lambda x: pol(x) + 0.0, panels=4096).value
        assert abs(coarse - fine) < 1e-9

    def test_sphere_quadrature_weights(self):
        t, w = chart_quadrature(2)
        assert w.sum() == pytest.approx(1.0, abs=1e-12)
        assert t.shape[1] == 2


class TestOracle:
    def test_dominated_action(self):
        env = finite_env([1.0, 0.0])
        value, choose = oracle_value_and_policy(env)
        assert value == pytest.approx(1.0)
        x = env.embedding.embed(np.linspace(0, 1, 50)[:, None])
        assert np.all(choose(x) == 0)

    def test_sine_oracle_value(self, sine_env):
        value, _ = oracle_value_and_policy(sine_env)
        assert value == pytest.approx(2 / math.pi, abs=1e-9)


class TestMargin:
    def test_empty_event(self, rng):
        env = finite_env([1.0, 0.0])
        est = margin_diagnostic(env, [0.5 / env.margin_scale], 2000, rng)
        assert est[0].probability == 0.0

    def test_full_event(self, rng, sine_env):
        assert margin_diagnostic(sine_env, [1.0], 2000, rng)[0].probability == 1.0

    @pytest.mark.parametrize("s", [0.05, 0.1, 0.2])
    def test_arcsin_formula(self, s, rng, sine_env):
        est = margin_diagnostic(sine_env, [s], 200_000, rng, scale=1.0)[0]
        exact = 2 / math.pi * math.asin(s / 2)
        assert abs(est.probability - exact) <= 3 * est.standard_error + 1e-12

    def test_needs_enough_draws(self, rng, sine_env):
        with pytest.raises(ValueError):
            margin_diagnostic(sine_env, [0.1], 10, rng)


class TestConfig:
    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            EnvironmentConfig.from_dict({"kind": "circle", "d": 2, "rewards": [0.0, 1.0]})

    def test_intrinsic_hash_ignores_ambient(self):
        a = sine_environment(ambient_dim=3).intrinsic_hash()
        b = sine_environment(ambient_dim=30).intrinsic_hash()
        assert a == b

    @given(st.integers(2, 5), st.integers(0, 1000))
    @settings(max_examples=20, deadline=None)
    def test_propensities_on_simplex(self, k, seed):
        r = np.random.default_rng(seed)
        logits = [TrigPoly.cosine(float(r.uniform(-1, 1)), (int(r.integers(1, 3)),)) for _ in range(k)]
        env = finite_env([0.0] * k, logging=logits, overlap_floor=1e-3)
        p = env.propensities(np.linspace(0, 1, 1001)[:, None])
        assert np.all(np.abs(p.sum(axis=1) - 1) < 1e-12)
        assert p.min() >= env.eta - 1e-15
