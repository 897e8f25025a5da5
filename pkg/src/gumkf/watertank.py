"""Sloshing water-tank benchmark system and its five estimation scenarios.

The water level oscillates harmonically: the two-dimensional state is
(level x_L, sloshing amplitude x_s) with transition matrix
[[1, 2*pi*theta*cos(2*pi*theta*t_k)], [0, 1]] and a level-only observation.
The sloshing frequency theta may be known exactly or only up to a standard
uncertainty, which is what the different scenarios exercise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .core import (
    ConfigError,
    GaussianBelief,
    LinearModel,
    ParameterKnowledge,
    RngStreamPlan,
    psd_sqrt,
)
from .ekf import AugmentedModel, augment, ekf_correct, ekf_predict
from .gum_mc import mc_sequential
from .kalman import kf_correct, kf_predict
from .particle import pf_run

SCHEMA_VERSION = 1
SCENARIOS = ("lkf-known", "mc-lkf-uncertain", "ekf-augmented", "mc-ekf", "pf")
COMPONENTS = {"xL": 0, "xs": 1, "theta": 2}


@dataclass(frozen=True)
class TankConfig:
    """Benchmark parameters; defaults are the reference values of the system.

    u_theta defaults to 1% of theta, alpha (artificial process noise on the
    augmented frequency state) to u_theta / 100.
    """

    L0: float = 100.0
    xs: float = 0.01
    theta: float = 0.8
    tau: float = 0.01
    sigma: float = 1.0
    dt: float = 0.01
    n_steps: int = 1000
    u_theta: Optional[float] = None
    alpha: Optional[float] = None

    def __post_init__(self):
        if self.u_theta is None:
            object.__setattr__(self, "u_theta", 0.01 * self.theta)
        if self.alpha is None:
            object.__setattr__(self, "alpha", self.u_theta / 100.0)
        if self.tau < 0 or self.sigma < 0 or self.u_theta < 0 or self.alpha < 0:
            raise ConfigError("noise standard deviations must be non-negative")
        if self.dt <= 0:
            raise ConfigError("sampling interval dt must be positive")
        if self.n_steps < 1:
            raise ConfigError("n_steps must be at least 1")

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "L0": self.L0,
            "xs": self.xs,
            "theta": self.theta,
            "tau": self.tau,
            "sigma": self.sigma,
            "dt": self.dt,
            "n_steps": self.n_steps,
            "u_theta": self.u_theta,
            "alpha": self.alpha,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TankConfig":
        data = dict(data)
        version = data.pop("schema_version", None)
        if version != SCHEMA_VERSION:
            raise ConfigError(
                f"unsupported config schema_version {version!r}, expected {SCHEMA_VERSION}"
            )
        allowed = {"L0", "xs", "theta", "tau", "sigma", "dt", "n_steps", "u_theta", "alpha"}
        unknown = set(data) - allowed
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "TankConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# models


def linear_model(config: TankConfig) -> LinearModel:
    """Theta-parameterized linear tank model; matrix callables accept either a
    single parameter vector or an (M, 1) batch."""
    dt = config.dt

    def state_matrix(k, theta):
        if theta is None:
            th = np.asarray(config.theta, dtype=float)
        else:
            th = np.asarray(theta, dtype=float)[..., 0]
        t = (k - 1) * dt
        coupling = 2.0 * np.pi * th * np.cos(2.0 * np.pi * th * t)
        out = np.zeros(np.shape(th) + (2, 2))
        out[..., 0, 0] = 1.0
        out[..., 0, 1] = coupling
        out[..., 1, 1] = 1.0
        return out

    def obs_matrix(k, theta):
        c = np.array([[1.0, 0.0]])
        if theta is not None:
            th = np.asarray(theta, dtype=float)
            if th.ndim == 2:
                return np.broadcast_to(c, (th.shape[0], 1, 2))
        return c

    return LinearModel(
        state_matrix=state_matrix,
        obs_matrix=obs_matrix,
        process_noise=np.diag([0.0, config.tau**2]),
        obs_noise=np.array([[config.sigma**2]]),
        vectorized=True,
    )


def _augmented_jacobian(config: TankConfig):
    dt = config.dt

    def jac(z, _theta, k):
        z = np.asarray(z, dtype=float)
        t = (k - 1) * dt
        xs = z[..., 1]
        th = z[..., 2]
        u = 2.0 * np.pi * th * t
        c = np.cos(u)
        s = np.sin(u)
        out = np.zeros(z.shape[:-1] + (3, 3))
        out[..., 0, 0] = 1.0
        out[..., 0, 1] = 2.0 * np.pi * th * c
        out[..., 0, 2] = xs * 2.0 * np.pi * (c - u * s)
        out[..., 1, 1] = 1.0
        out[..., 2, 2] = 1.0
        return out

    return jac


def _augmented_obs_jacobian(z, _theta, k):
    z = np.asarray(z, dtype=float)
    h = np.array([[1.0, 0.0, 0.0]])
    if z.ndim == 2:
        return np.broadcast_to(h, (z.shape[0], 1, 3))
    return h


def state_prior(config: TankConfig) -> GaussianBelief:
    """Initial belief over (x_L, x_s): exactly known level, amplitude known
    to the state-noise standard deviation."""
    return GaussianBelief(
        np.array([config.L0, config.xs]), np.diag([0.0, config.tau**2])
    )


def frequency_knowledge(config: TankConfig) -> ParameterKnowledge:
    return ParameterKnowledge(
        np.array([config.theta]), np.array([[config.u_theta**2]])
    )


def augmented_model(config: TankConfig) -> Tuple[AugmentedModel, GaussianBelief]:
    """Three-state augmented system (x_L, x_s, theta) with its initial
    belief diag(0, tau^2, u_theta^2)."""
    aug, belief = augment(
        linear_model(config),
        state_prior(config),
        frequency_knowledge(config),
        config.alpha,
        state_jacobian=_augmented_jacobian(config),
        obs_jacobian=_augmented_obs_jacobian,
    )
    return aug, belief


# ---------------------------------------------------------------------------
# simulation


@dataclass(frozen=True)
class SimulationRecord:
    """Ground truth trajectory and noisy level measurements.

    states has shape (n_steps + 1, 2); measurements[k-1] is the level
    observation at time index k.
    """

    times: np.ndarray
    states: np.ndarray
    measurements: np.ndarray


def simulate(config: TankConfig, plan: RngStreamPlan) -> SimulationRecord:
    """Iterate the discrete system; state noise enters the amplitude
    component only.  Deterministic under the plan."""
    n = config.n_steps
    states = np.empty((n + 1, 2))
    measurements = np.empty(n)
    states[0] = (config.L0, config.xs)
    two_pi = 2.0 * np.pi
    for k in range(1, n + 1):
        t_prev = (k - 1) * config.dt
        level, amp = states[k - 1]
        level = level + amp * two_pi * config.theta * np.cos(two_pi * config.theta * t_prev)
        amp = amp + config.tau * plan.normal_rows(k, "sim/state", 0, 1, 1)[0, 0]
        states[k] = (level, amp)
        measurements[k - 1] = level + config.sigma * plan.normal_rows(k, "sim/obs", 0, 1, 1)[0, 0]
    times = np.arange(n + 1) * config.dt
    return SimulationRecord(times, states, measurements)


# ---------------------------------------------------------------------------
# scenarios


@dataclass
class EstimationReport:
    """Uniform per-scenario result: estimates and standard uncertainties for
    the physical states, the frequency trajectory where applicable, and
    optional marginal sample snapshots keyed by time in seconds (sample
    columns ordered xL, xs, theta)."""

    scenario: str
    config: TankConfig
    times: np.ndarray
    state_est: np.ndarray
    state_u: np.ndarray
    theta_est: Optional[np.ndarray]
    theta_u: Optional[np.ndarray]
    record: SimulationRecord
    marginals: Dict[float, Tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    ess: Optional[np.ndarray] = None


def _times_to_indices(config: TankConfig, times_s) -> Dict[int, float]:
    out = {}
    for t in times_s:
        k = int(round(float(t) / config.dt))
        if not 0 <= k <= config.n_steps:
            raise ConfigError(
                f"requested time {t} s is outside the simulated horizon "
                f"[0, {config.n_steps * config.dt}] s"
            )
        out[k] = float(t)
    return out


def _std_from_covs(covs: np.ndarray, i: int) -> np.ndarray:
    return np.sqrt(np.maximum(covs[:, i, i], 0.0))


def scenario(
    name: str,
    config: TankConfig,
    plan: RngStreamPlan,
    *,
    trials: int = 100_000,
    n_particles: int = 100_000,
    gamma: float = 0.9,
    record_at_times: Tuple[float, ...] = (),
    threads: int = 1,
) -> EstimationReport:
    """Run one estimation scenario on a freshly simulated record.

    All scenarios under the same plan consume the identical SimulationRecord,
    so cross-scenario comparisons are paired.
    """
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}; choose from {SCENARIOS}")
    record = simulate(config, plan)
    ys = record.measurements
    n = config.n_steps
    rec_idx = _times_to_indices(config, record_at_times)

    if name == "lkf-known":
        model = linear_model(config)
        theta_true = np.array([config.theta])
        belief = state_prior(config)
        est = np.empty((n + 1, 2))
        u = np.empty((n + 1, 2))
        est[0], u[0] = belief.mean, np.sqrt(np.diag(belief.cov))
        for k in range(1, n + 1):
            predicted = kf_predict(belief, model, theta_true, k)
            belief = kf_correct(predicted, ys[k - 1 : k], model, theta_true, k).corrected
            est[k] = belief.mean
            u[k] = np.sqrt(np.diag(belief.cov))
        return EstimationReport(
            name, config, record.times, est, u, None, None, record
        )

    if name == "ekf-augmented":
        aug, belief = augmented_model(config)
        est = np.empty((n + 1, 3))
        u = np.empty((n + 1, 3))
        est[0], u[0] = belief.mean, np.sqrt(np.diag(belief.cov))
        marginals = {}
        for k in range(1, n + 1):
            predicted = ekf_predict(belief, aug.model, k)
            belief = ekf_correct(predicted, ys[k - 1 : k], aug.model, k).corrected
            est[k] = belief.mean
            u[k] = np.sqrt(np.diag(belief.cov))
        return EstimationReport(
            name,
            config,
            record.times,
            est[:, :2],
            u[:, :2],
            est[:, 2],
            u[:, 2],
            record,
            marginals,
        )

    if name == "mc-lkf-uncertain":
        res = mc_sequential(
            ys,
            linear_model(config),
            state_prior(config),
            frequency_knowledge(config),
            plan,
            trials,
            record_at=tuple(rec_idx),
            threads=threads,
        )
        marginals = {rec_idx[k]: (res.records[k], np.full(trials, 1.0 / trials)) for k in res.records}
        return EstimationReport(
            name,
            config,
            record.times,
            res.state_means,
            np.stack([_std_from_covs(res.state_covs, 0), _std_from_covs(res.state_covs, 1)], axis=1),
            res.param_means[:, 0],
            _std_from_covs(res.param_covs, 0),
            record,
            marginals,
        )

    if name == "mc-ekf":
        aug, belief0 = augmented_model(config)
        res = mc_sequential(
            ys,
            aug.model,
            belief0,
            None,
            plan,
            trials,
            record_at=tuple(rec_idx),
            threads=threads,
        )
        marginals = {rec_idx[k]: (res.records[k], np.full(trials, 1.0 / trials)) for k in res.records}
        return EstimationReport(
            name,
            config,
            record.times,
            res.state_means[:, :2],
            np.stack([_std_from_covs(res.state_covs, 0), _std_from_covs(res.state_covs, 1)], axis=1),
            res.state_means[:, 2],
            _std_from_covs(res.state_covs, 2),
            record,
            marginals,
        )

    # particle filter on the augmented system
    aug, belief0 = augmented_model(config)
    mean0 = belief0.mean
    chol0 = psd_sqrt(belief0.cov)

    def prior_sampler(p: RngStreamPlan, count: int) -> np.ndarray:
        z = p.normal_rows(0, "pf/init", 0, count, 3)
        return mean0 + np.einsum("ij,mj->mi", chol0, z)

    res = pf_run(
        ys, aug.model, prior_sampler, n_particles, gamma, plan, record_at=tuple(rec_idx)
    )
    marginals = {rec_idx[k]: res.records[k] for k in res.records}
    return EstimationReport(
        name,
        config,
        record.times,
        res.means[:, :2],
        np.stack([_std_from_covs(res.covs, 0), _std_from_covs(res.covs, 1)], axis=1),
        res.means[:, 2],
        _std_from_covs(res.covs, 2),
        record,
        marginals,
        ess=res.ess,
    )
