"""Water-tank benchmark: configuration, simulation, and the five scenarios."""

import numpy as np
import pytest

from gumkf import (
    ConfigError,
    RngStreamPlan,
    TankConfig,
    frequency_knowledge,
    linear_model,
    scenario,
    simulate,
    state_prior,
)

TWO_PI = 2.0 * np.pi


class TestTankConfig:
    def test_reference_defaults(self):
        cfg = TankConfig()
        assert (cfg.L0, cfg.xs, cfg.theta) == (100.0, 0.01, 0.8)
        assert (cfg.tau, cfg.sigma) == (0.01, 1.0)
        assert cfg.u_theta == pytest.approx(0.008)
        assert cfg.alpha == pytest.approx(0.008 / 100.0)
        assert (cfg.dt, cfg.n_steps) == (0.01, 1000)

    def test_roundtrip(self, tmp_path):
        cfg = TankConfig(theta=0.9, n_steps=50, u_theta=0.02)
        path = tmp_path / "cfg.json"
        cfg.save(path)
        assert TankConfig.load(path) == cfg

    def test_schema_version_checked(self, tmp_path):
        d = TankConfig().to_dict()
        d["schema_version"] = 99
        with pytest.raises(ConfigError, match="schema_version"):
            TankConfig.from_dict(d)

    def test_unknown_keys_rejected(self):
        d = TankConfig().to_dict()
        d["bogus"] = 1
        with pytest.raises(ConfigError, match="bogus"):
            TankConfig.from_dict(d)

    @pytest.mark.parametrize(
        "kwargs", [dict(tau=-0.1), dict(sigma=-1.0), dict(dt=0.0), dict(n_steps=0)]
    )
    def test_invalid_values_rejected(self, kwargs):
        with pytest.raises(ConfigError):
            TankConfig(**kwargs)


class TestLinearModel:
    def test_state_matrix_at_first_step(self):
        cfg = TankConfig()
        F = linear_model(cfg).F(1, None)
        np.testing.assert_allclose(F, [[1.0, TWO_PI * 0.8], [0.0, 1.0]], rtol=1e-15)

    def test_observation_and_noise(self):
        cfg = TankConfig()
        model = linear_model(cfg)
        np.testing.assert_array_equal(model.C(1, None), [[1.0, 0.0]])
        np.testing.assert_array_equal(model.Q(1), np.diag([0.0, cfg.tau**2]))
        np.testing.assert_array_equal(model.R(1), [[cfg.sigma**2]])

    def test_batched_theta_matrices(self):
        cfg = TankConfig()
        model = linear_model(cfg)
        thetas = np.array([[0.7], [0.8], [0.9]])
        F = model.F(5, thetas)
        assert F.shape == (3, 2, 2)
        for i, th in enumerate(thetas[:, 0]):
            np.testing.assert_allclose(F[i], model.F(5, np.array([th])), rtol=1e-15)

    def test_prior_and_knowledge(self):
        cfg = TankConfig()
        prior = state_prior(cfg)
        np.testing.assert_array_equal(prior.mean, [cfg.L0, cfg.xs])
        np.testing.assert_allclose(prior.cov, np.diag([0.0, cfg.tau**2]), atol=1e-18)
        pk = frequency_knowledge(cfg)
        assert pk.estimate[0] == cfg.theta
        assert pk.cov[0, 0] == pytest.approx(cfg.u_theta**2)


class TestSimulate:
    def test_noise_free_dynamics(self):
        cfg = TankConfig(tau=0.0, sigma=0.0, n_steps=40)
        rec = simulate(cfg, RngStreamPlan(1))
        np.testing.assert_allclose(rec.states[:, 1], cfg.xs, atol=1e-15)
        for k in range(1, cfg.n_steps + 1):
            t_prev = (k - 1) * cfg.dt
            inc = cfg.xs * TWO_PI * cfg.theta * np.cos(TWO_PI * cfg.theta * t_prev)
            assert rec.states[k, 0] - rec.states[k - 1, 0] == pytest.approx(inc, abs=1e-14)
        np.testing.assert_allclose(rec.measurements, rec.states[1:, 0], atol=1e-15)

    def test_zero_frequency_freezes_level(self):
        cfg = TankConfig(theta=0.0, n_steps=30)
        rec = simulate(cfg, RngStreamPlan(1))
        np.testing.assert_allclose(rec.states[:, 0], cfg.L0, atol=1e-12)

    def test_deterministic_under_plan(self):
        cfg = TankConfig(n_steps=30)
        a = simulate(cfg, RngStreamPlan(42))
        b = simulate(cfg, RngStreamPlan(42))
        np.testing.assert_array_equal(a.states, b.states)
        np.testing.assert_array_equal(a.measurements, b.measurements)

    def test_times_and_shapes(self):
        cfg = TankConfig(n_steps=12)
        rec = simulate(cfg, RngStreamPlan(0))
        assert rec.states.shape == (13, 2)
        assert rec.measurements.shape == (12,)
        np.testing.assert_allclose(rec.times, np.arange(13) * cfg.dt, rtol=1e-15)


class TestScenarios:
    def test_unknown_name_rejected(self):
        with pytest.raises(ConfigError, match="unknown scenario"):
            scenario("nope", TankConfig(n_steps=5), RngStreamPlan(1))

    def test_lkf_known_tracks_truth_at_low_noise(self):
        cfg = TankConfig(tau=0.0, sigma=1e-6, n_steps=100)
        rep = scenario("lkf-known", cfg, RngStreamPlan(42))
        err = np.abs(rep.state_est[1:, 0] - rep.record.states[1:, 0])
        assert err.max() < 1e-5
        assert rep.theta_est is None

    def test_shared_record_across_scenarios(self):
        cfg = TankConfig(n_steps=30)
        a = scenario("lkf-known", cfg, RngStreamPlan(42))
        b = scenario("ekf-augmented", cfg, RngStreamPlan(42))
        np.testing.assert_array_equal(a.record.measurements, b.record.measurements)

    def test_uncertainties_non_negative_and_shapes_uniform(self):
        cfg = TankConfig(n_steps=25)
        plan = RngStreamPlan(42)
        for name, kwargs in [
            ("lkf-known", {}),
            ("ekf-augmented", {}),
            ("mc-lkf-uncertain", dict(trials=50)),
            ("mc-ekf", dict(trials=50)),
            ("pf", dict(n_particles=200)),
        ]:
            rep = scenario(name, cfg, plan, **kwargs)
            assert rep.state_est.shape == (26, 2)
            assert rep.state_u.shape == (26, 2)
            assert np.all(rep.state_u >= 0.0)
            if name != "lkf-known":
                assert rep.theta_est.shape == (26,)
                assert np.all(rep.theta_u >= 0.0)

    def test_ekf_theta_uncertainty_decreases(self):
        cfg = TankConfig(n_steps=400)
        rep = scenario("ekf-augmented", cfg, RngStreamPlan(42))
        assert rep.theta_u[0] == pytest.approx(cfg.u_theta)
        assert rep.theta_u[-1] < rep.theta_u[0]
        # the trend is monotone up to the drift-noise floor
        assert np.all(np.diff(rep.theta_u) <= cfg.alpha)

    def test_mc_linear_amplitude_uncertainty_dominates_ekf(self):
        cfg = TankConfig(n_steps=300)
        ekf = scenario("ekf-augmented", cfg, RngStreamPlan(42))
        mc = scenario("mc-lkf-uncertain", cfg, RngStreamPlan(42), trials=2000)
        late = slice(200, None)
        assert np.mean(mc.state_u[late, 1] - ekf.state_u[late, 1]) > 0.0

    def test_lkf_known_equals_mc_with_certain_theta(self):
        cfg = TankConfig(n_steps=60, u_theta=0.0)
        lkf = scenario("lkf-known", cfg, RngStreamPlan(42))
        mc = scenario("mc-lkf-uncertain", cfg, RngStreamPlan(42), trials=5000)
        sig = np.maximum(lkf.state_u[1:], 1e-12)
        err = np.abs(mc.state_est[1:] - lkf.state_est[1:])
        assert np.all(err <= 4.0 * sig / np.sqrt(5000))

    def test_marginal_snapshots_keyed_by_seconds(self):
        cfg = TankConfig(n_steps=50)
        rep = scenario(
            "pf", cfg, RngStreamPlan(42), n_particles=300, record_at_times=(0.2, 0.5)
        )
        assert set(rep.marginals) == {0.2, 0.5}
        samples, weights = rep.marginals[0.5]
        assert samples.shape == (300, 3)
        assert weights.sum() == pytest.approx(1.0, abs=1e-9)

    def test_out_of_horizon_time_rejected(self):
        cfg = TankConfig(n_steps=10)
        with pytest.raises(ConfigError, match="horizon"):
            scenario("pf", cfg, RngStreamPlan(1), n_particles=100, record_at_times=(2.0,))
