"""Small model factories shared across test modules."""

import numpy as np

from switchgp.kernels import MaternKernel, NoiseModel, TaskCovariance
from switchgp.model import (
    GammaDuration,
    SegmentedSeries,
    StateEmission,
    SwitchingGPModel,
    TransitionMatrix,
)


def random_tril(P, rng, scale=0.4, diag_floor=0.8):
    """Lower-triangular task factor with a safely positive diagonal."""
    L = np.tril(rng.normal(size=(P, P)) * scale)
    np.fill_diagonal(L, np.abs(np.diag(L)) + diag_floor)
    return L


def random_model(A=2, P=2, cap=2, seed=0, lengthscale=2.0, noise_floor=0.3):
    """Generic well-conditioned model with distinct per-state emissions."""
    rng = np.random.default_rng(seed)
    emissions = [
        StateEmission(
            mean=rng.normal(size=P),
            temporal=MaternKernel(
                variance=1.0 + 0.3 * j,
                lengthscale=lengthscale + 0.5 * j,
                smoothness=1.5,
            ),
            task=TaskCovariance(random_tril(P, rng)),
        )
        for j in range(A)
    ]
    durations = [GammaDuration(2.0 + 0.5 * j, 1.0 + 0.2 * j) for j in range(A)]
    if A == 1:
        trans = TransitionMatrix(np.zeros((1, 1)))
        initial = None
    else:
        raw = rng.uniform(0.2, 1.0, size=(A, A))
        np.fill_diagonal(raw, 0.0)
        trans = TransitionMatrix(raw / raw.sum(axis=1, keepdims=True))
        initial = rng.uniform(0.2, 1.0, size=A)
        initial /= initial.sum()
    return SwitchingGPModel(
        durations=durations,
        transitions=trans,
        emissions=emissions,
        noise=NoiseModel(rng.uniform(noise_floor, noise_floor + 0.3, size=P)),
        duration_cap=cap,
        initial=initial,
        shared_task=False,
    )


def separated_model(P=1, gap=10.0, cap=20, lengthscale=3.0, noise=0.25):
    """Two states with emission means separated by many noise sigmas."""
    sigma = np.sqrt(noise)
    emissions = [
        StateEmission(
            mean=np.full(P, 0.0),
            temporal=MaternKernel(0.5, lengthscale, 1.5),
            task=TaskCovariance(np.eye(P)),
        ),
        StateEmission(
            mean=np.full(P, gap * sigma),
            temporal=MaternKernel(0.5, lengthscale, 1.5),
            task=TaskCovariance(np.eye(P)),
        ),
    ]
    return SwitchingGPModel(
        durations=[GammaDuration(8.0, 1.0), GammaDuration(8.0, 1.0)],
        transitions=TransitionMatrix(np.array([[0.0, 1.0], [1.0, 0.0]])),
        emissions=emissions,
        noise=NoiseModel(np.full(P, noise)),
        duration_cap=cap,
    )


def symmetric_model(P=1, cap=3):
    """Two states that are exact mirror images; symmetric data stays uniform."""
    emission = StateEmission(
        mean=np.zeros(P),
        temporal=MaternKernel(1.0, 2.0, 1.5),
        task=TaskCovariance(np.eye(P)),
    )
    return SwitchingGPModel(
        durations=[GammaDuration(2.0, 1.0), GammaDuration(2.0, 1.0)],
        transitions=TransitionMatrix(np.array([[0.0, 1.0], [1.0, 0.0]])),
        emissions=[emission, emission],
        noise=NoiseModel(np.full(P, 0.5)),
        duration_cap=cap,
    )


def labeled_series(model, labels, seed=0, subject_id=0):
    """Series with iid-per-row draws from each state's marginal (fast, rough)."""
    rng = np.random.default_rng(seed)
    labels = np.asarray(labels, dtype=int)
    P = model.num_features
    rows = np.empty((labels.size, P))
    for t, lab in enumerate(labels):
        e = model.emissions[lab - 1]
        KY = e.task.cholesky_factor @ e.task.cholesky_factor.T
        cov = KY * e.temporal.variance + np.diag(model.noise.per_feature_variance)
        rows[t] = rng.multivariate_normal(np.asarray(e.mean, float), cov)
    return SegmentedSeries(observations=rows, labels=labels, subject_id=subject_id)
