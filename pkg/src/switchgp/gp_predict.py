"""Within-state GP posterior prediction and exact dense segment likelihoods.

These are the grid-agnostic reference computations: everything here builds
covariances entry by entry and factorizes them densely. The fast FFT path in
`circulant` and the state-space filter both defer to this module as their
oracle, and partial observation masks are handled here by plain Gaussian
marginalization (dropping unobserved rows/columns).

An emission object provides ``temporal`` (MaternKernel), ``task``
(TaskCovariance) and ``mean`` (P-vector); noise is a NoiseModel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NonPositiveDefiniteError, UndefinedMetricError
from .kernels import JITTER, NoiseModel, matern_eval, task_cov_assemble

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class PosteriorSummary:
    """Posterior mean and covariance over the query points."""

    mean: np.ndarray
    covariance: np.ndarray

    @property
    def variance(self) -> np.ndarray:
        return np.diag(self.covariance)


def _entry_cov(emission, times_a, feats_a, times_b, feats_b) -> np.ndarray:
    """Prior covariance between two sets of (time, feature) entries."""
    KY = task_cov_assemble(emission.task)
    lags = np.subtract.outer(np.asarray(times_a, float), np.asarray(times_b, float))
    return matern_eval(emission.temporal, lags) * KY[np.ix_(feats_a, feats_b)]


def posterior_predict(
    emission,
    noise: NoiseModel,
    obs_times,
    obs_features,
    obs_values,
    query_times,
    query_feature,
) -> PosteriorSummary:
    """GP posterior for one feature at query times, given in-segment observations.

    Observations are entry-level triplets (time, feature index, value), which
    covers partial masks naturally. With no observations the prior is
    returned: state mean and k^Y_ll * K^T over the query grid. The posterior
    covariance is over the noise-free process values.
    """
    obs_times = np.asarray(obs_times, dtype=float)
    obs_features = np.asarray(obs_features, dtype=int)
    obs_values = np.asarray(obs_values, dtype=float)
    query_times = np.asarray(query_times, dtype=float)
    mean_vec = np.asarray(emission.mean, dtype=float)
    q_feats = np.full(query_times.shape[0], int(query_feature))

    prior_qq = _entry_cov(emission, query_times, q_feats, query_times, q_feats)
    prior_mean = np.full(query_times.shape[0], mean_vec[int(query_feature)])
    if obs_times.size == 0:
        return PosteriorSummary(prior_mean, prior_qq)

    K_oo = _entry_cov(emission, obs_times, obs_features, obs_times, obs_features)
    K_oo[np.diag_indices_from(K_oo)] += noise.per_feature_variance[obs_features]
    K_oo[np.diag_indices_from(K_oo)] += JITTER * emission.temporal.variance
    K_qo = _entry_cov(emission, query_times, q_feats, obs_times, obs_features)
    try:
        L = np.linalg.cholesky(K_oo)
    except np.linalg.LinAlgError as exc:
        raise NonPositiveDefiniteError(
            "observation covariance not positive definite in posterior_predict"
        ) from exc
    resid = obs_values - mean_vec[obs_features]
    alpha = scipy.linalg.cho_solve((L, True), resid)
    V = scipy.linalg.solve_triangular(L, K_qo.T, lower=True)
    mean = prior_mean + K_qo @ alpha
    cov = prior_qq - V.T @ V
    cov = 0.5 * (cov + cov.T)
    d = np.diag(cov).copy()
    np.fill_diagonal(cov, np.maximum(d, 0.0))
    return PosteriorSummary(mean, cov)


def joint_conditional(
    emission,
    noise: NoiseModel,
    obs_times,
    obs_features,
    obs_values,
    query_times,
    query_features,
    include_noise: bool = False,
):
    """Joint Gaussian over arbitrary (time, feature) query entries.

    Generalizes `posterior_predict` to heterogeneous query entries and can
    include observation noise on the queries, which is what one-step-ahead
    row densities in the filter need. Returns (mean, covariance).
    """
    obs_times = np.asarray(obs_times, dtype=float)
    obs_features = np.asarray(obs_features, dtype=int)
    obs_values = np.asarray(obs_values, dtype=float)
    query_times = np.asarray(query_times, dtype=float)
    query_features = np.asarray(query_features, dtype=int)
    mean_vec = np.asarray(emission.mean, dtype=float)

    prior_qq = _entry_cov(emission, query_times, query_features, query_times, query_features)
    if include_noise:
        prior_qq = prior_qq + np.diag(noise.per_feature_variance[query_features])
    prior_mean = mean_vec[query_features].astype(float)
    if obs_times.size == 0:
        return prior_mean, 0.5 * (prior_qq + prior_qq.T)

    K_oo = _entry_cov(emission, obs_times, obs_features, obs_times, obs_features)
    K_oo[np.diag_indices_from(K_oo)] += noise.per_feature_variance[obs_features]
    K_oo[np.diag_indices_from(K_oo)] += JITTER * emission.temporal.variance
    K_qo = _entry_cov(emission, query_times, query_features, obs_times, obs_features)
    try:
        L = np.linalg.cholesky(K_oo)
    except np.linalg.LinAlgError as exc:
        raise NonPositiveDefiniteError(
            "observation covariance not positive definite in joint_conditional"
        ) from exc
    resid = obs_values - mean_vec[obs_features]
    alpha = scipy.linalg.cho_solve((L, True), resid)
    V = scipy.linalg.solve_triangular(L, K_qo.T, lower=True)
    mean = prior_mean + K_qo @ alpha
    cov = prior_qq - V.T @ V
    return mean, 0.5 * (cov + cov.T)


def segment_emission_loglik(
    emission,
    noise: NoiseModel,
    values: np.ndarray,
    mask: np.ndarray | None = None,
    means: np.ndarray | None = None,
) -> float:
    """Log-density of the observed entries of a d x P window under state j.

    Unobserved entries (mask False) are marginalized out by row/column
    deletion. A fully masked window carries no evidence and scores 0.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim != 2:
        raise ValueError("window must be a d x P matrix")
    d, P = values.shape
    if mask is None:
        mask = np.ones((d, P), dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != values.shape:
            raise ValueError("mask shape must match window shape")
    t_idx, p_idx = np.nonzero(mask)
    if t_idx.size == 0:
        return 0.0

    if means is None:
        mean_entries = np.asarray(emission.mean, dtype=float)[p_idx]
    else:
        means = np.asarray(means, dtype=float)
        if means.shape == (P,):
            mean_entries = means[p_idx]
        else:
            mean_entries = means[t_idx, p_idx]
    resid = values[t_idx, p_idx] - mean_entries

    cov = _entry_cov(emission, t_idx.astype(float), p_idx, t_idx.astype(float), p_idx)
    cov[np.diag_indices_from(cov)] += noise.per_feature_variance[p_idx]
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NonPositiveDefiniteError(
            "window covariance not positive definite in segment_emission_loglik"
        ) from exc
    w = scipy.linalg.solve_triangular(L, resid, lower=True)
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    return float(-0.5 * (w @ w + logdet + t_idx.size * LOG_2PI))


def exact_segment_loglik(
    emission,
    noise: NoiseModel,
    values: np.ndarray,
    means: np.ndarray | None = None,
) -> float:
    """Exact dense log-density of a fully observed segment.

    Oracle counterpart of `circulant.fast_segment_loglik`: same quantity, no
    embedding, O((TP)^3).
    """
    return segment_emission_loglik(emission, noise, values, mask=None, means=means)


def trajectory_metrics(predicted: np.ndarray, truth: np.ndarray, eval_mask: np.ndarray):
    """Mean squared and mean absolute error over the masked entries."""
    predicted = np.asarray(predicted, dtype=float)
    truth = np.asarray(truth, dtype=float)
    eval_mask = np.asarray(eval_mask, dtype=bool)
    if predicted.shape != truth.shape or predicted.shape != eval_mask.shape:
        raise ValueError("predicted, truth, and eval_mask must share a shape")
    if not np.any(eval_mask):
        raise UndefinedMetricError("no entries selected for metric evaluation")
    err = predicted[eval_mask] - truth[eval_mask]
    return float(np.mean(err**2)), float(np.mean(np.abs(err)))
