"""Explicit-duration forward filtering over the semi-Markov switching-GP model.

The filter table is indexed by (state j, elapsed duration d): alpha_t(j, d)
is the log joint probability of the observations so far and the hypothesis
that state j's current segment started d-1 steps ago and is still running
(duration >= d, the Gamma survival mass). Published explicit-duration
recursions often score only segments that end at t; the elapsed-duration
form carries the same information while giving every timestep a proper
filtered posterior, and the two are tied together by the segmentation
enumeration oracle in the test suite.

Per-step emission terms are conditional densities of the new row given the
buffered in-segment window under each hypothesis. Two interchangeable
backends compute them: dense Gaussian conditioning on the window (reference,
grid-agnostic, cubic in window length) and the exact Kalman recursion of
`statespace` (constant per step). They agree to floating-point accuracy on
the uniform grid.

All recursion arithmetic is in log space with logsumexp; nothing accumulates
in probability domain. Continuous Gamma durations are discretized to unit
bins by CDF differences, truncated at the model's duration cap and
renormalized. A single-state model reenters itself on segment end (the one
exception to the zero-diagonal transition convention).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.special
import scipy.stats

from .errors import FilterCollapseError
from .gp_predict import joint_conditional
from .model import SwitchingGPModel
from . import statespace

LOG_2PI = math.log(2.0 * math.pi)
NEG_INF = -np.inf


@dataclass(frozen=True)
class DurationTable:
    """Log-domain duration masses, survival ratios, and rebirth transitions."""

    log_g: np.ndarray  # (A, D) discretized duration masses g_j(d), d = 1..D
    log_S: np.ndarray  # (A, D) survival masses S_j(d) = P(duration >= d)
    cont_ratio: np.ndarray  # (A, D) log S_j(d+1) - log S_j(d); -inf at d = D
    hazard: np.ndarray  # (A, D) log g_j(d) - log S_j(d)
    log_p: np.ndarray  # (A, A) rebirth transition log-probs (untrained excluded)
    log_pi: np.ndarray  # (A,) initial distribution


def build_duration_table(model: SwitchingGPModel) -> DurationTable:
    A, D = model.num_states, model.duration_cap
    log_g = np.full((A, D), NEG_INF)
    log_S = np.full((A, D), NEG_INF)
    cont = np.full((A, D), NEG_INF)
    edges = np.arange(0, D + 1, dtype=float)
    for j, gam in enumerate(model.durations):
        cdf = scipy.stats.gamma.cdf(edges, a=gam.shape, scale=gam.scale)
        total = cdf[-1]
        masses = np.diff(cdf) / total
        surv = (total - cdf[:-1]) / total
        with np.errstate(divide="ignore"):
            log_g[j] = np.log(masses)
            log_S[j] = np.log(surv)
        cont[j, :-1] = log_S[j, 1:] - log_S[j, :-1]
    hazard = log_g - log_S

    with np.errstate(divide="ignore"):
        if A == 1:
            log_p = np.zeros((1, 1))  # single state reenters itself
        else:
            probs = np.array(model.transitions.probs, copy=True)
            for u in model.untrained_states:
                probs[:, u] = 0.0
            rows = probs.sum(axis=1, keepdims=True)
            rows[rows == 0] = 1.0
            log_p = np.log(probs / rows)
        pi = np.array(model.initial, copy=True)
        for u in model.untrained_states:
            pi[u] = 0.0
        pi = pi / pi.sum()
        log_pi = np.log(pi)
    return DurationTable(log_g, log_S, cont, hazard, log_p, log_pi)


def duration_transition(i: int, d_prime: int, j: int, d: int, model: SwitchingGPModel) -> float:
    """Duration-dependent transition kernel a_{(i,d')(j,d)}.

    Normalized over (j, d) at fixed (i, d'), the kernel reduces to
    p_ij * g_j(d): the source-duration mass cancels in the normalization.
    States are 1-based labels, durations 1-based steps.
    """
    if not (1 <= d <= model.duration_cap and 1 <= d_prime <= model.duration_cap):
        raise ValueError("durations must lie in 1..duration_cap")
    if i == j:
        return 0.0
    table = build_duration_table(model)
    val = table.log_p[i - 1, j - 1] + table.log_g[j - 1, d - 1]
    return float(np.exp(val))


@dataclass(frozen=True)
class ForwardState:
    """Filter state after consuming ``time_index`` rows.

    ``log_alpha`` is normalized (logsumexp zero); the per-step normalizers
    accumulate in ``log_evidence``. ``window_values``/``window_mask`` buffer
    the last duration_cap rows. Backend hypothesis caches (Kalman means and
    covariances per state) ride along; entries whose table weight is -inf
    hold unused placeholder values.
    """

    log_alpha: np.ndarray
    time_index: int
    log_evidence: float
    window_values: np.ndarray
    window_mask: np.ndarray
    backend: object
    hyp_means: tuple | None = None
    hyp_covs: tuple | None = None


@dataclass(frozen=True)
class PredictiveMixture:
    """Gaussian mixture over the next row restricted to a feature group."""

    log_weights: np.ndarray
    means: np.ndarray  # (C, |m|)
    covariances: np.ndarray  # (C, |m|, |m|)
    group: tuple

    @property
    def components(self) -> list:
        """(log-weight, mean, covariance) triples."""
        return [
            (float(w), self.means[c], self.covariances[c])
            for c, w in enumerate(self.log_weights)
        ]

    def logpdf(self, y: np.ndarray) -> float:
        y = np.atleast_2d(np.asarray(y, dtype=float))
        L = np.linalg.cholesky(self.covariances)
        diff = y[None, :, :] - self.means[:, None, :]  # (C, n, m)
        w = np.linalg.solve(L, diff.swapaxes(1, 2))  # (C, m, n)
        quad = np.sum(w**2, axis=1)
        logdet = 2.0 * np.sum(np.log(np.diagonal(L, axis1=1, axis2=2)), axis=1)
        comp = -0.5 * (quad + logdet[:, None] + len(self.group) * LOG_2PI)
        out = scipy.special.logsumexp(self.log_weights[:, None] + comp, axis=0)
        return float(out[0]) if out.shape[0] == 1 else out

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        w = np.exp(self.log_weights)
        idx = rng.choice(self.log_weights.shape[0], size=n, p=w / w.sum())
        z = rng.standard_normal((n, self.means.shape[1]))
        L = np.linalg.cholesky(self.covariances)
        return self.means[idx] + np.einsum("nij,nj->ni", L[idx], z)


@dataclass(frozen=True)
class Predictives:
    """One-step-ahead hypothesis conditionals before seeing the next row.

    Continuing entries are indexed by the current table slot (j, d); their
    weight already includes the survival ratio into d+1. Fresh entries pool
    all segment-end rebirth mass per destination state (every (i, d') source
    shares the same fresh-segment Gaussian, so merging them is exact).
    """

    cont_logw: np.ndarray  # (A, D)
    cont_mean: np.ndarray  # (A, D, P)
    cont_cov: np.ndarray  # (A, D, P, P)
    fresh_logw: np.ndarray  # (A,)
    fresh_mean: np.ndarray  # (A, P)
    fresh_cov: np.ndarray  # (A, P, P)
    pred_means: tuple | None  # Kalman internals, reused by apply_row
    pred_covs: tuple | None


class KalmanBackend:
    """Constant-cost-per-row emission backend (exact on the uniform grid)."""

    name = "kalman"

    def __init__(self, model: SwitchingGPModel):
        self.model = model
        self.table = build_duration_table(model)
        self.spaces = [
            statespace.build_statespace(e, model.noise) for e in model.emissions
        ]
        self.fresh_obs = [
            statespace.stationary_observation(ss, e.mean, model.noise)
            for ss, e in zip(self.spaces, model.emissions)
        ]


class ReferenceBackend:
    """Dense-window emission backend; cubic per step, used as the oracle."""

    name = "reference"

    def __init__(self, model: SwitchingGPModel):
        self.model = model
        self.table = build_duration_table(model)
        self.fresh_obs = []
        for e in model.emissions:
            mean, cov = joint_conditional(
                e,
                model.noise,
                np.empty(0),
                np.empty(0, dtype=int),
                np.empty(0),
                np.zeros(model.num_features),
                np.arange(model.num_features),
                include_noise=True,
            )
            self.fresh_obs.append((mean, cov))


def get_backend(model: SwitchingGPModel, backend: str = "kalman"):
    if backend == "kalman":
        return KalmanBackend(model)
    if backend == "reference":
        return ReferenceBackend(model)
    raise ValueError(f"unknown backend {backend!r}")


def forward_init(model: SwitchingGPModel, row, mask=None, backend="kalman") -> ForwardState:
    """Start a stream: alpha_1(j, 1) proportional to pi_j * b_j(y_1)."""
    be = get_backend(model, backend) if isinstance(backend, str) else backend
    row = np.asarray(row, dtype=float)
    mask = np.ones(row.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    A, D, P = model.num_states, model.duration_cap, model.num_features
    tbl = be.table

    log_alpha = np.full((A, D), NEG_INF)
    hyp_means = None
    hyp_covs = None
    if isinstance(be, KalmanBackend):
        means, covs = [], []
        for j, ss in enumerate(be.spaces):
            n = ss.A.shape[0]
            jm = np.zeros((D, n))
            jc = np.zeros((D, n, n))
            pm = np.zeros((1, n))
            pc = ss.P0[None, :, :]
            um, uc, ld = statespace.update(
                ss, model.emissions[j].mean, model.noise, pm, pc, row, mask
            )
            jm[0], jc[0] = um[0], uc[0]
            jc[1:] = np.eye(n)[None, :, :]
            log_alpha[j, 0] = tbl.log_pi[j] + ld[0]
            means.append(jm)
            covs.append(jc)
        hyp_means, hyp_covs = tuple(means), tuple(covs)
    else:
        for j in range(A):
            mean, cov = be.fresh_obs[j]
            ld = _gaussian_logpdf_single(row, mask, mean, cov)
            log_alpha[j, 0] = tbl.log_pi[j] + ld

    norm = scipy.special.logsumexp(log_alpha)
    if not np.isfinite(norm):
        raise FilterCollapseError("no state explains the first observation", time_index=1)
    return ForwardState(
        log_alpha=log_alpha - norm,
        time_index=1,
        log_evidence=float(norm),
        window_values=row[None, :].copy(),
        window_mask=mask[None, :].copy(),
        backend=be,
        hyp_means=hyp_means,
        hyp_covs=hyp_covs,
    )


def step_predictives(state: ForwardState, model: SwitchingGPModel) -> Predictives:
    """Hypothesis-level one-step-ahead Gaussians and their log-weights."""
    be = state.backend
    tbl = be.table
    A, D, P = model.num_states, model.duration_cap, model.num_features
    cont_logw = state.log_alpha + tbl.cont_ratio

    # Rebirth mass per destination: end hazard pooled over (i, d'), then p_ij.
    end_mass = scipy.special.logsumexp(state.log_alpha + tbl.hazard, axis=1)  # (A,)
    fresh_logw = scipy.special.logsumexp(end_mass[:, None] + tbl.log_p, axis=0)

    fresh_mean = np.stack([be.fresh_obs[j][0] for j in range(A)])
    fresh_cov = np.stack([be.fresh_obs[j][1] for j in range(A)])

    cont_mean = np.zeros((A, D, P))
    cont_cov = np.tile(np.eye(P), (A, D, 1, 1))
    pred_means = pred_covs = None
    if isinstance(be, KalmanBackend):
        pms, pcs = [], []
        for j, ss in enumerate(be.spaces):
            pm, pc = statespace.predict(ss, state.hyp_means[j], state.hyp_covs[j])
            om, oc = statespace.observation_conditionals(
                ss, model.emissions[j].mean, model.noise, pm, pc
            )
            cont_mean[j], cont_cov[j] = om, oc
            pms.append(pm)
            pcs.append(pc)
        pred_means, pred_covs = tuple(pms), tuple(pcs)
    else:
        W = state.window_values.shape[0]
        for j in range(A):
            e = model.emissions[j]
            for d_idx in range(min(W, D)):
                if not np.isfinite(cont_logw[j, d_idx]):
                    continue
                d = d_idx + 1
                win_v = state.window_values[W - d :]
                win_m = state.window_mask[W - d :]
                t_idx, p_idx = np.nonzero(win_m)
                mean, cov = joint_conditional(
                    e,
                    model.noise,
                    t_idx.astype(float),
                    p_idx,
                    win_v[t_idx, p_idx],
                    np.full(P, float(d)),
                    np.arange(P),
                    include_noise=True,
                )
                cont_mean[j, d_idx] = mean
                cont_cov[j, d_idx] = cov

    return Predictives(
        cont_logw=cont_logw,
        cont_mean=cont_mean,
        cont_cov=cont_cov,
        fresh_logw=fresh_logw,
        fresh_mean=fresh_mean,
        fresh_cov=fresh_cov,
        pred_means=pred_means,
        pred_covs=pred_covs,
    )


def apply_row(
    state: ForwardState,
    model: SwitchingGPModel,
    pred: Predictives,
    row,
    mask=None,
) -> ForwardState:
    """Finish a forward step: score the row, update the table and backends."""
    be = state.backend
    row = np.asarray(row, dtype=float)
    mask = np.ones(row.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    A, D = model.num_states, model.duration_cap

    if np.any(mask):
        idx = np.nonzero(mask)[0]
        y = row[idx]
        cont_dens = _batched_logpdf(
            y, pred.cont_mean[:, :, idx], pred.cont_cov[:, :, idx[:, None], idx[None, :]]
        )
        fresh_dens = _batched_logpdf(
            y, pred.fresh_mean[:, idx], pred.fresh_cov[:, idx[:, None], idx[None, :]]
        )
    else:
        cont_dens = np.zeros((A, D))
        fresh_dens = np.zeros(A)

    new_alpha = np.full((A, D), NEG_INF)
    new_alpha[:, 1:] = pred.cont_logw[:, :-1] + cont_dens[:, :-1]
    new_alpha[:, 0] = pred.fresh_logw + fresh_dens

    norm = scipy.special.logsumexp(new_alpha)
    if not np.isfinite(norm):
        raise FilterCollapseError(
            "all forward hypotheses vanished", time_index=state.time_index + 1
        )

    hyp_means = hyp_covs = None
    if isinstance(be, KalmanBackend):
        means, covs = [], []
        for j, ss in enumerate(be.spaces):
            um, uc, _ = statespace.update(
                ss,
                model.emissions[j].mean,
                model.noise,
                pred.pred_means[j],
                pred.pred_covs[j],
                row,
                mask,
            )
            n = ss.A.shape[0]
            jm = np.zeros((D, n))
            jc = np.zeros((D, n, n))
            jm[1:] = um[:-1]
            jc[1:] = uc[:-1]
            fm, fc, _ = statespace.update(
                ss,
                model.emissions[j].mean,
                model.noise,
                np.zeros((1, n)),
                ss.P0[None, :, :],
                row,
                mask,
            )
            jm[0], jc[0] = fm[0], fc[0]
            means.append(jm)
            covs.append(jc)
        hyp_means, hyp_covs = tuple(means), tuple(covs)

    win_v = np.vstack([state.window_values, row[None, :]])[-D:]
    win_m = np.vstack([state.window_mask, mask[None, :]])[-D:]
    return ForwardState(
        log_alpha=new_alpha - norm,
        time_index=state.time_index + 1,
        log_evidence=state.log_evidence + float(norm),
        window_values=win_v,
        window_mask=win_m,
        backend=be,
        hyp_means=hyp_means,
        hyp_covs=hyp_covs,
    )


def forward_step(state: ForwardState, row, model: SwitchingGPModel, mask=None) -> ForwardState:
    """One filtering step: predictive hypotheses, then the measurement update."""
    pred = step_predictives(state, model)
    return apply_row(state, model, pred, row, mask)


def map_state(state: ForwardState) -> int:
    """MAP state label (1-based); exact ties go to the lowest label."""
    return int(np.argmax(state_posterior(state))) + 1


def state_posterior(state: ForwardState) -> np.ndarray:
    """Filtered distribution over states: p(j) proportional to sum_d alpha(j, d)."""
    logp = scipy.special.logsumexp(state.log_alpha, axis=1)
    p = np.exp(logp - scipy.special.logsumexp(logp))
    return p / p.sum()


PRUNE_LOG_WEIGHT = 30.0


def predictive_mixture(state: ForwardState, model: SwitchingGPModel, group) -> PredictiveMixture:
    """One-step predictive Gaussian mixture restricted to a feature group.

    Components more than PRUNE_LOG_WEIGHT below the heaviest are pruned and
    the remainder renormalized.
    """
    group = tuple(int(g) for g in group)
    if len(group) == 0:
        raise ValueError("feature group must be non-empty")
    pred = step_predictives(state, model)
    return mixture_from_predictives(pred, group)


def mixture_from_predictives(pred: Predictives, group) -> PredictiveMixture:
    group = tuple(int(g) for g in group)
    idx = np.array(group, dtype=int)
    logw, means, covs = [], [], []
    A, D = pred.cont_logw.shape
    for j in range(A):
        if np.isfinite(pred.fresh_logw[j]):
            logw.append(pred.fresh_logw[j])
            means.append(pred.fresh_mean[j, idx])
            covs.append(pred.fresh_cov[j][np.ix_(idx, idx)])
    for j in range(A):
        for d in range(D):
            if np.isfinite(pred.cont_logw[j, d]):
                logw.append(pred.cont_logw[j, d])
                means.append(pred.cont_mean[j, d, idx])
                covs.append(pred.cont_cov[j, d][np.ix_(idx, idx)])
    logw = np.array(logw)
    keep = logw >= logw.max() - PRUNE_LOG_WEIGHT
    logw = logw[keep]
    means = np.array(means)[keep]
    covs = np.array(covs)[keep]
    logw = logw - scipy.special.logsumexp(logw)
    return PredictiveMixture(logw, means, covs, group)


def _gaussian_logpdf_single(row, mask, mean, cov) -> float:
    if not np.any(mask):
        return 0.0
    idx = np.nonzero(mask)[0]
    diff = row[idx] - mean[idx]
    sub = cov[np.ix_(idx, idx)]
    L = np.linalg.cholesky(sub)
    w = scipy.linalg.solve_triangular(L, diff, lower=True)
    return float(
        -0.5 * (w @ w + 2.0 * np.sum(np.log(np.diag(L))) + idx.size * LOG_2PI)
    )


def _batched_logpdf(y, means, covs):
    """Gaussian log-density of one observation under stacked (..., m, m) laws."""
    L = np.linalg.cholesky(covs)
    diff = y - means
    w = np.linalg.solve(L, diff[..., :, None])[..., 0]
    quad = np.sum(w**2, axis=-1)
    logdet = 2.0 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)
    return -0.5 * (quad + logdet + y.shape[-1] * LOG_2PI)
