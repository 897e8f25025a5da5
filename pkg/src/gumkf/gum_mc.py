"""Monte Carlo propagation of state-of-knowledge PDFs through a Kalman-type
estimation model, in batch and sequential form.

Every trial m carries a joint sample (x, theta) together with its own
deterministic filter covariance recursion; the Kalman gain inside a trial is
computed from that recursion, which depends on the trial's sampled parameters
through the system matrices.  Draws are addressed by (trial, time, label)
through the RngStreamPlan, so batch mode (trial-major) and sequential mode
(time-major) perform the identical computation in a different storage order
and produce bit-identical per-trial trajectories.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple, Union

import numpy as np

from .core import (
    CapacityError,
    GaussianBelief,
    LinearModel,
    NonlinearModel,
    NumericError,
    ParameterKnowledge,
    RngStreamPlan,
    psd_sqrt,
    symmetrize,
)

LABEL_INIT_STATE = "mc/init-state"
LABEL_INIT_PARAM = "mc/init-param"
LABEL_OBS = "mc/obs"
LABEL_PROCESS = "mc/process"


@dataclass(frozen=True)
class McEnsemble:
    """M joint samples (x, theta) representing the PDF at time index k.

    State and parameter rows with the same trial index belong together and
    are never recombined across trials; the joint PDF does not factorize.
    """

    states: np.ndarray
    params: np.ndarray
    k: int

    def __post_init__(self):
        states = np.atleast_2d(np.asarray(self.states, dtype=float))
        params = np.asarray(self.params, dtype=float)
        if params.ndim == 1:
            params = params.reshape(states.shape[0], -1)
        if params.shape[0] != states.shape[0]:
            raise NumericError("state/parameter trial counts differ")
        if not (np.all(np.isfinite(states)) and np.all(np.isfinite(params))):
            raise NumericError(f"non-finite ensemble at time index {self.k}")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "params", params)

    @property
    def trial_count(self) -> int:
        return self.states.shape[0]

    def joined(self) -> np.ndarray:
        if self.params.shape[1]:
            return np.hstack([self.states, self.params])
        return self.states.copy()


class RunningMoments:
    """Streaming mean/covariance with shifted extended-precision accumulation.

    After feeding all samples the results agree with the two-pass formulas to
    better than 1e-10 relative, independent of feed order.
    """

    def __init__(self, dim: int):
        self.dim = dim
        self.count = 0
        self._shift: Optional[np.ndarray] = None
        self._s1 = np.zeros(dim, dtype=np.longdouble)
        self._s2 = np.zeros((dim, dim), dtype=np.longdouble)

    def push(self, x: np.ndarray) -> None:
        self.push_block(np.asarray(x, dtype=float)[np.newaxis, :])

    def push_block(self, block: np.ndarray) -> None:
        block = np.atleast_2d(np.asarray(block, dtype=float))
        if block.shape[0] == 0:
            return
        if self._shift is None:
            self._shift = block[0].copy()
        dev = block - self._shift
        self._s1 += dev.sum(axis=0, dtype=np.longdouble)
        self._s2 += np.einsum("mi,mj->ij", dev, dev, dtype=np.longdouble)
        self.count += block.shape[0]

    def mean(self) -> np.ndarray:
        if self.count < 1:
            raise NumericError("RunningMoments: no samples")
        return np.asarray(self._shift + self._s1 / self.count, dtype=float)

    def cov(self) -> np.ndarray:
        if self.count < 2:
            return np.zeros((self.dim, self.dim))
        s2 = self._s2 - np.outer(self._s1, self._s1) / self.count
        return symmetrize(np.asarray(s2 / (self.count - 1), dtype=float))


def _mean_cov(samples: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Mean and unbiased covariance via extended-precision accumulation."""
    m = samples.shape[0]
    if samples.shape[1] == 0:
        return np.zeros(0), np.zeros((0, 0))
    mean = np.asarray(samples.sum(axis=0, dtype=np.longdouble) / m, dtype=float)
    if m < 2:
        return mean, np.zeros((samples.shape[1],) * 2)
    dev = samples - mean
    cov = np.einsum("mi,mj->ij", dev, dev, dtype=np.longdouble) / (m - 1)
    return mean, symmetrize(np.asarray(cov, dtype=float))


def finalize_stats(
    ensemble: McEnsemble, probs: Tuple[float, ...] = (0.025, 0.975)
) -> Tuple[GaussianBelief, np.ndarray]:
    """Summarize a joint ensemble: mean/covariance belief plus per-coordinate
    empirical quantiles (nearest-rank on the sorted marginal sample)."""
    if ensemble.trial_count < 2:
        raise NumericError("finalize_stats requires at least 2 samples")
    joined = ensemble.joined()
    mean, cov = _mean_cov(joined)
    m = joined.shape[0]
    srt = np.sort(joined, axis=0)
    idx = [min(max(int(np.ceil(p * m)), 1), m) - 1 for p in probs]
    quantiles = srt[idx].T  # (dim, len(probs))
    return GaussianBelief(mean, cov), quantiles


# ---------------------------------------------------------------------------
# batched model evaluation


def _batch_linear_matrix(fn, k, params, count, rows):
    """Stack of (count, rows, cols) matrices from a (k, theta) callable."""
    if params.shape[1] == 0:
        m = np.atleast_2d(np.asarray(fn(k, None), dtype=float))
        return np.broadcast_to(m, (count,) + m.shape)
    return np.stack([np.atleast_2d(np.asarray(fn(k, params[i]), dtype=float)) for i in range(count)])


def _batch_linear_matrix_vec(model, fn, k, params, count):
    if model.vectorized and params.shape[1]:
        out = np.asarray(fn(k, params), dtype=float)
        if out.ndim == 3 and out.shape[0] == count:
            return out
    return None


def _state_matrices(model: LinearModel, k, params, count):
    out = _batch_linear_matrix_vec(model, model.F, k, params, count)
    if out is None:
        out = _batch_linear_matrix(model.F, k, params, count, None)
    return out


def _obs_matrices(model: LinearModel, k, params, count):
    if model.vectorized and params.shape[1]:
        out = np.asarray(model.C(k, params), dtype=float)
        if out.ndim == 3 and out.shape[0] == count:
            return out
        if out.ndim == 2 and out.shape[0] == count:
            return out[:, np.newaxis, :]
    return _batch_linear_matrix(model.C, k, params, count, None)


def _theta_arg(params):
    return params if params.shape[1] else None


def _batch_f(model: NonlinearModel, states, params, k):
    th = _theta_arg(params)
    if model.vectorized:
        return np.asarray(model.f(states, th, k), dtype=float)
    return np.stack(
        [model.f(states[i], None if th is None else th[i], k) for i in range(states.shape[0])]
    )


def _batch_h(model: NonlinearModel, states, params, k):
    th = _theta_arg(params)
    if model.vectorized:
        out = np.asarray(model.h(states, th, k), dtype=float)
        if out.ndim == 1:
            out = out[:, np.newaxis]
        return out
    return np.stack(
        [
            np.atleast_1d(model.h(states[i], None if th is None else th[i], k))
            for i in range(states.shape[0])
        ]
    )


def _batch_state_jac(model: NonlinearModel, states, params, k):
    th = _theta_arg(params)
    if model.vectorized:
        return np.asarray(model.F(states, th, k), dtype=float)
    return np.stack(
        [model.F(states[i], None if th is None else th[i], k) for i in range(states.shape[0])]
    )


def _batch_obs_jac(model: NonlinearModel, states, params, k):
    th = _theta_arg(params)
    if model.vectorized and model.obs_jacobian is not None:
        out = np.asarray(model.obs_jacobian(states, th, k), dtype=float)
        if out.ndim == 2 and out.shape[0] == states.shape[0]:
            return out[:, np.newaxis, :]
        if out.ndim == 3:
            return out
    return np.stack(
        [
            np.atleast_2d(model.H(states[i], None if th is None else th[i], k))
            for i in range(states.shape[0])
        ]
    )


# ---------------------------------------------------------------------------
# the per-step Monte Carlo propagation


def mc_step(
    ensemble: McEnsemble,
    y_hat: np.ndarray,
    model: Union[LinearModel, NonlinearModel],
    filter_state: np.ndarray,
    plan: RngStreamPlan,
    k: int,
    trial_start: int = 0,
) -> Tuple[McEnsemble, np.ndarray]:
    """Advance every trial from k-1 to k.

    For each trial: draw a measurement sample around y_hat with covariance R
    and a process-noise sample from N(0, Q); propagate through the dynamics,
    add the process noise ("x tilde", carrying the state-covariance
    contribution) and apply the correction with the gain from the trial's own
    deterministic covariance recursion.  `filter_state` holds the per-trial
    predicted-covariance recursion, shape (M, n, n).
    """
    states = ensemble.states
    params = ensemble.params
    covs = np.asarray(filter_state, dtype=float)
    m_trials, n = states.shape
    y_hat = np.atleast_1d(np.asarray(y_hat, dtype=float))
    p = y_hat.shape[0]

    Q = np.atleast_2d(model.Q(k))
    R = np.atleast_2d(model.R(k))
    lq = psd_sqrt(Q)
    lr = psd_sqrt(R)
    z = np.einsum(
        "ij,mj->mi", lq, plan.normal_rows(k, LABEL_PROCESS, trial_start, m_trials, n)
    )
    y_samples = y_hat + np.einsum(
        "ij,mj->mi", lr, plan.normal_rows(k, LABEL_OBS, trial_start, m_trials, p)
    )

    # prediction: mean push-forward and the deterministic covariance recursion
    if isinstance(model, LinearModel):
        F = _state_matrices(model, k, params, m_trials)
        x_pred = np.einsum("mij,mj->mi", F, states)
    else:
        x_pred = _batch_f(model, states, params, k)
        F = _batch_state_jac(model, states, params, k)
    cov_pred = np.einsum("mij,mjk,mlk->mil", F, covs, F) + Q

    x_tilde = x_pred + z

    # correction at x_tilde
    if isinstance(model, LinearModel):
        H = _obs_matrices(model, k, params, m_trials)
        h_val = np.einsum("mij,mj->mi", H, x_tilde)
    else:
        H = _batch_obs_jac(model, x_tilde, params, k)
        h_val = _batch_h(model, x_tilde, params, k)
    s_mat = np.einsum("mij,mjk,mlk->mil", H, cov_pred, H) + R
    try:
        gain = np.linalg.solve(s_mat, np.einsum("mij,mjk->mik", H, cov_pred))
    except np.linalg.LinAlgError as exc:
        raise NumericError(
            f"singular innovation covariance at time index {k}: {exc}"
        ) from exc
    gain = gain.transpose(0, 2, 1)  # (M, n, p)

    innovation = y_samples - h_val
    x_new = x_tilde + np.einsum("mij,mj->mi", gain, innovation)
    a_mat = np.eye(n) - np.einsum("mip,mpj->mij", gain, H)
    cov_new = np.einsum("mij,mjk,mlk->mil", a_mat, cov_pred, a_mat) + np.einsum(
        "mip,pq,mjq->mij", gain, R, gain
    )
    cov_new = (cov_new + cov_new.transpose(0, 2, 1)) / 2.0

    bad = ~np.all(np.isfinite(x_new), axis=1)
    if bad.any():
        first = int(np.argmax(bad))
        raise NumericError(
            f"non-finite sample in trial {trial_start + first} at time index {k}"
        )
    return McEnsemble(x_new, params, k), cov_new


def _init_trials(prior, theta_knowledge, plan, trials, trial_start):
    n = prior.dim
    lx = psd_sqrt(prior.cov)
    z0 = plan.normal_rows(0, LABEL_INIT_STATE, trial_start, trials, n)
    states = prior.mean + np.einsum("ij,mj->mi", lx, z0)
    if theta_knowledge is not None and theta_knowledge.dim > 0:
        lt = psd_sqrt(theta_knowledge.cov)
        zt = plan.normal_rows(0, LABEL_INIT_PARAM, trial_start, trials, theta_knowledge.dim)
        params = theta_knowledge.estimate + np.einsum("ij,mj->mi", lt, zt)
    else:
        params = np.zeros((trials, 0))
    covs = np.repeat(prior.cov[np.newaxis], trials, axis=0)
    return McEnsemble(states, params, 0), covs


@dataclass
class McRunResult:
    """Per-time-step summaries of a Monte Carlo run (row 0 = initial time)."""

    state_means: np.ndarray
    state_covs: np.ndarray
    param_means: np.ndarray
    param_covs: np.ndarray
    trial_count: int
    samples_states: Optional[np.ndarray] = None
    samples_params: Optional[np.ndarray] = None
    records: Dict[int, np.ndarray] = field(default_factory=dict)


def _check_store(n_steps, trials, width, max_store_bytes):
    need = (n_steps + 1) * trials * width * 8
    if need > max_store_bytes:
        raise CapacityError(
            f"full sample store needs {need} bytes, exceeding the budget of "
            f"{max_store_bytes}; raise max_store_bytes or disable store_samples"
        )


def _normalize_measurements(measurements):
    ys = np.asarray(measurements, dtype=float)
    if ys.ndim == 1:
        ys = ys[:, np.newaxis]
    if ys.shape[0] < 1:
        raise NumericError("need at least one measurement")
    return ys


def mc_sequential(
    measurements,
    model: Union[LinearModel, NonlinearModel],
    prior: GaussianBelief,
    theta_knowledge: Optional[ParameterKnowledge],
    plan: RngStreamPlan,
    trials: int,
    *,
    store_samples: bool = False,
    record_at: Tuple[int, ...] = (),
    threads: int = 1,
    max_store_bytes: int = 1 << 30,
) -> McRunResult:
    """Time-major Monte Carlo: one live ensemble, statistics per step.

    Memory use is independent of the number of time steps unless
    store_samples is requested.
    """
    ys = _normalize_measurements(measurements)
    n_steps = ys.shape[0]
    n = prior.dim
    n_t = theta_knowledge.dim if theta_knowledge is not None else 0
    record_at = set(int(r) for r in record_at)

    if store_samples:
        _check_store(n_steps, trials, n + n_t, max_store_bytes)
        samples_states = np.empty((n_steps + 1, trials, n))
        samples_params = np.empty((n_steps + 1, trials, n_t))
    else:
        samples_states = samples_params = None

    ensemble, covs = _init_trials(prior, theta_knowledge, plan, trials, 0)
    state_means = np.empty((n_steps + 1, n))
    state_covs = np.empty((n_steps + 1, n, n))
    param_means = np.empty((n_steps + 1, n_t))
    param_covs = np.empty((n_steps + 1, n_t, n_t))
    records: Dict[int, np.ndarray] = {}

    chunks = None
    executor = None
    if threads > 1 and trials >= threads:
        bounds = np.linspace(0, trials, threads + 1).astype(int)
        chunks = [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
        executor = ThreadPoolExecutor(max_workers=threads)

    def summarize(k):
        state_means[k], state_covs[k] = _mean_cov(ensemble.states)
        param_means[k], param_covs[k] = _mean_cov(ensemble.params)
        if store_samples:
            samples_states[k] = ensemble.states
            samples_params[k] = ensemble.params
        if k in record_at:
            records[k] = ensemble.joined()

    try:
        summarize(0)
        for k in range(1, n_steps + 1):
            if chunks is None:
                ensemble, covs = mc_step(ensemble, ys[k - 1], model, covs, plan, k)
            else:
                parts = list(
                    executor.map(
                        lambda ab: mc_step(
                            McEnsemble(
                                ensemble.states[ab[0] : ab[1]],
                                ensemble.params[ab[0] : ab[1]],
                                ensemble.k,
                            ),
                            ys[k - 1],
                            model,
                            covs[ab[0] : ab[1]],
                            plan,
                            k,
                            trial_start=ab[0],
                        ),
                        chunks,
                    )
                )
                ensemble = McEnsemble(
                    np.concatenate([e.states for e, _ in parts]),
                    np.concatenate([e.params for e, _ in parts]),
                    k,
                )
                covs = np.concatenate([c for _, c in parts])
            summarize(k)
    finally:
        if executor is not None:
            executor.shutdown()

    return McRunResult(
        state_means,
        state_covs,
        param_means,
        param_covs,
        trials,
        samples_states,
        samples_params,
        records,
    )


def mc_batch(
    measurements,
    model: Union[LinearModel, NonlinearModel],
    prior: GaussianBelief,
    theta_knowledge: Optional[ParameterKnowledge],
    plan: RngStreamPlan,
    trials: int,
    *,
    store_samples: bool = False,
    record_at: Tuple[int, ...] = (),
    max_store_bytes: int = 1 << 30,
) -> McRunResult:
    """Trial-major Monte Carlo: the whole-sequence estimation model is run per
    trial.  With a shared RngStreamPlan the per-trial trajectories are
    bit-identical to the sequential mode."""
    ys = _normalize_measurements(measurements)
    n_steps = ys.shape[0]
    n = prior.dim
    n_t = theta_knowledge.dim if theta_knowledge is not None else 0
    record_at = set(int(r) for r in record_at)

    if store_samples:
        _check_store(n_steps, trials, n + n_t, max_store_bytes)
        samples_states = np.empty((n_steps + 1, trials, n))
        samples_params = np.empty((n_steps + 1, trials, n_t))
    else:
        samples_states = samples_params = None

    state_moms = [RunningMoments(n) for _ in range(n_steps + 1)]
    param_moms = [RunningMoments(n_t) for _ in range(n_steps + 1)]
    rec_buf = {k: np.empty((trials, n + n_t)) for k in record_at if k <= n_steps}

    for m in range(trials):
        ensemble, covs = _init_trials(prior, theta_knowledge, plan, 1, m)
        for k in range(0, n_steps + 1):
            if k > 0:
                ensemble, covs = mc_step(
                    ensemble, ys[k - 1], model, covs, plan, k, trial_start=m
                )
            state_moms[k].push(ensemble.states[0])
            param_moms[k].push(ensemble.params[0])
            if store_samples:
                samples_states[k, m] = ensemble.states[0]
                samples_params[k, m] = ensemble.params[0]
            if k in rec_buf:
                rec_buf[k][m] = ensemble.joined()[0]

    state_means = np.stack([sm.mean() for sm in state_moms])
    state_covs = np.stack([sm.cov() for sm in state_moms])
    if n_t:
        param_means = np.stack([pm.mean() for pm in param_moms])
        param_covs = np.stack([pm.cov() for pm in param_moms])
    else:
        param_means = np.zeros((n_steps + 1, 0))
        param_covs = np.zeros((n_steps + 1, 0, 0))
    return McRunResult(
        state_means,
        state_covs,
        param_means,
        param_covs,
        trials,
        samples_states,
        samples_params,
        dict(rec_buf),
    )
