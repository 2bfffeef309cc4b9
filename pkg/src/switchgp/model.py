"""Model container and closed-form estimators: durations, transitions, means.

States are indexed 0..A-1 internally; data labels are 1..A and converted at
the boundaries. A single-state model is the one permitted exception to the
zero-diagonal transition invariant: its 1x1 matrix is [[0]] and rebirth into
the same state is handled by the filter directly.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.stats

from .errors import DegenerateDurationError, InsufficientDataError
from .kernels import MaternKernel, NoiseModel, TaskCovariance

TRANSITION_ROW_TOL = 1e-12


@dataclass(frozen=True)
class GammaDuration:
    """Gamma segment-duration distribution (shape k, scale beta, time steps)."""

    shape: float
    scale: float

    def __post_init__(self):
        if not (self.shape > 0 and math.isfinite(self.shape)):
            raise ValueError(f"shape must be positive and finite, got {self.shape}")
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValueError(f"scale must be positive and finite, got {self.scale}")

    @property
    def mean(self) -> float:
        return self.shape * self.scale


@dataclass(frozen=True)
class TransitionMatrix:
    """Row-stochastic state transition matrix with zero diagonal."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise ValueError("transition matrix must be square")
        if np.any(p < 0):
            raise ValueError("transition probabilities must be non-negative")
        if np.any(np.diag(p) != 0.0):
            raise ValueError("transition matrix diagonal must be exactly zero")
        if p.shape[0] > 1:
            rows = p.sum(axis=1)
            if np.any(np.abs(rows - 1.0) > TRANSITION_ROW_TOL):
                raise ValueError(f"rows must sum to 1, got sums {rows}")
        object.__setattr__(self, "probs", p)

    @property
    def num_states(self) -> int:
        return self.probs.shape[0]


@dataclass(frozen=True)
class StateEmission:
    """Per-state GP emission: constant mean plus temporal and task covariances."""

    mean: np.ndarray
    temporal: MaternKernel
    task: TaskCovariance

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.mean, dtype=float))
        if m.ndim != 1:
            raise ValueError("mean must be a vector")
        if m.shape[0] != self.task.num_features:
            raise ValueError("mean length must match task covariance size")
        object.__setattr__(self, "mean", m)

    @property
    def num_features(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class FitReport:
    """Optimizer outcome for the emission-parameter fit."""

    initial_objective: float
    final_objective: float
    iterations: int
    converged: bool
    message: str = ""


@dataclass(frozen=True)
class SwitchingGPModel:
    """Complete parameter set of the switching-GP semi-Markov model."""

    durations: tuple
    transitions: TransitionMatrix
    emissions: tuple
    noise: NoiseModel
    duration_cap: int
    initial: np.ndarray = None
    shared_task: bool = True
    untrained_states: tuple = ()
    pca: dict | None = None
    fit_report: FitReport | None = field(default=None, compare=False)

    def __post_init__(self):
        A = len(self.durations)
        if len(self.emissions) != A or self.transitions.num_states != A:
            raise ValueError("inconsistent state counts across model components")
        P = self.noise.num_features
        for e in self.emissions:
            if e.num_features != P:
                raise ValueError("inconsistent feature counts across model components")
        if self.duration_cap < 1:
            raise ValueError("duration_cap must be >= 1")
        if self.initial is None:
            init = np.full(A, 1.0 / A)
        else:
            init = np.asarray(self.initial, dtype=float)
            if init.shape != (A,) or np.any(init < 0) or abs(init.sum() - 1.0) > 1e-9:
                raise ValueError("initial distribution must be a probability vector over states")
        object.__setattr__(self, "initial", init)
        object.__setattr__(self, "durations", tuple(self.durations))
        object.__setattr__(self, "emissions", tuple(self.emissions))
        object.__setattr__(self, "untrained_states", tuple(self.untrained_states))

    @property
    def num_states(self) -> int:
        return len(self.durations)

    @property
    def num_features(self) -> int:
        return self.noise.num_features


@dataclass(frozen=True)
class SegmentedSeries:
    """Uniformly sampled multivariate series with optional labels and masks."""

    observations: np.ndarray
    labels: np.ndarray | None = None
    mask: np.ndarray | None = None
    subject_id: object = None
    step: float = 1.0

    def __post_init__(self):
        obs = np.asarray(self.observations, dtype=float)
        if obs.ndim != 2:
            raise ValueError("observations must be a T x P matrix")
        object.__setattr__(self, "observations", obs)
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=int)
            if lab.shape != (obs.shape[0],):
                raise ValueError("labels must have one entry per row")
            object.__setattr__(self, "labels", lab)
        if self.mask is None:
            object.__setattr__(self, "mask", np.ones(obs.shape, dtype=bool))
        else:
            mask = np.asarray(self.mask, dtype=bool)
            if mask.shape != obs.shape:
                raise ValueError("mask shape must match observations")
            object.__setattr__(self, "mask", mask)

    @property
    def num_steps(self) -> int:
        return self.observations.shape[0]

    @property
    def num_features(self) -> int:
        return self.observations.shape[1]


def segment_series(labels) -> list:
    """Run-length encode a label sequence into (state, start, duration) triples."""
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] == 0:
        raise ValueError("labels must be a non-empty vector")
    change = np.nonzero(np.diff(labels))[0] + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change, [labels.shape[0]]])
    return [(int(labels[s]), int(s), int(e - s)) for s, e in zip(starts, ends)]


def fit_duration_gamma(durations) -> GammaDuration:
    """Closed-form approximate Gamma MLE from positive duration samples.

    Uses the standard statistic v = log(mean) - mean(log) and the rational
    approximation k = (3 - v + sqrt((v-3)^2 + 24 v)) / (12 v).
    """
    s = np.asarray(durations, dtype=float)
    if s.ndim != 1 or s.shape[0] < 2:
        raise InsufficientDataError(
            f"need at least 2 duration samples, got {s.shape[0] if s.ndim == 1 else 'non-vector'}"
        )
    if np.any(s <= 0):
        raise ValueError("durations must be positive")
    if np.all(s == s[0]):
        raise DegenerateDurationError("all duration samples are equal; Gamma MLE undefined")
    v = math.log(float(np.mean(s))) - float(np.mean(np.log(s)))
    if v <= 0:
        raise DegenerateDurationError(f"degenerate duration statistic v={v:.3e}")
    k = (3.0 - v + math.sqrt((v - 3.0) ** 2 + 24.0 * v)) / (12.0 * v)
    beta = float(np.mean(s)) / k
    return GammaDuration(shape=k, scale=beta)


def fit_transitions(segment_lists, num_states: int) -> TransitionMatrix:
    """Pooled transition counts across subjects, normalized per row.

    ``segment_lists`` is a list of per-subject segment lists as returned by
    `segment_series` (labels 1..A). States with no outgoing transitions get a
    uniform row over the other states, with a warning.
    """
    A = num_states
    counts = np.zeros((A, A))
    for segs in segment_lists:
        states = [s - 1 for s, _, _ in segs]
        for a, b in zip(states[:-1], states[1:]):
            counts[a, b] += 1
    if A == 1:
        return TransitionMatrix(np.zeros((1, 1)))
    probs = np.zeros((A, A))
    for i in range(A):
        row = counts[i]
        total = row.sum()
        if total == 0:
            warnings.warn(
                f"state {i + 1} has no outgoing transitions; backfilling uniform row",
                stacklevel=2,
            )
            probs[i] = 1.0 / (A - 1)
            probs[i, i] = 0.0
        else:
            probs[i] = row / total
    return TransitionMatrix(probs)


def compute_state_means(data, num_states: int) -> np.ndarray:
    """Per-state population means of the observed entries across all series."""
    P = data[0].num_features
    sums = np.zeros((num_states, P))
    counts = np.zeros((num_states, P))
    for series in data:
        if series.labels is None:
            raise InsufficientDataError("state means require labeled data")
        for j in range(num_states):
            rows = series.labels == j + 1
            m = series.mask[rows]
            sums[j] += np.where(m, series.observations[rows], 0.0).sum(axis=0)
            counts[j] += m.sum(axis=0)
    means = np.zeros((num_states, P))
    nz = counts > 0
    means[nz] = sums[nz] / counts[nz]
    return means


def duration_cap_from(durations, quantile: float = 0.999) -> int:
    """Common duration cap: the largest per-state Gamma quantile, rounded up."""
    caps = [
        scipy.stats.gamma.ppf(quantile, a=g.shape, scale=g.scale) for g in durations
    ]
    return max(1, int(math.ceil(max(caps))))


def fit(skeleton: SwitchingGPModel, data, config=None) -> SwitchingGPModel:
    """Full training pipeline on labeled data.

    Runs per-state duration MLE, pooled transition counting, per-state mean
    computation, then numerical emission-parameter optimization. States with
    no segments in the data are flagged untrained and keep the skeleton's
    parameters; the filter excludes them.
    """
    from .fit import FitConfig, fit_emissions

    if config is None:
        config = FitConfig()
    A = skeleton.num_states
    segment_lists = []
    for series in data:
        if series.labels is None:
            raise InsufficientDataError("fit requires labeled data")
        segment_lists.append(segment_series(series.labels))

    per_state = [[] for _ in range(A)]
    for segs in segment_lists:
        for state, _, dur in segs:
            if not 1 <= state <= A:
                raise ValueError(f"label {state} outside 1..{A}")
            per_state[state - 1].append(float(dur))

    untrained = tuple(j for j in range(A) if len(per_state[j]) == 0)
    durations = list(skeleton.durations)
    for j in range(A):
        if j not in untrained:
            durations[j] = fit_duration_gamma(per_state[j])

    transitions = fit_transitions(segment_lists, A)
    means = compute_state_means(data, A)
    emissions = []
    for j, e in enumerate(skeleton.emissions):
        mean = e.mean if j in untrained else means[j]
        emissions.append(replace(e, mean=mean))

    trained = [durations[j] for j in range(A) if j not in untrained]
    cap = duration_cap_from(trained if trained else durations)
    if config.duration_cap is not None:
        cap = int(config.duration_cap)

    model = replace(
        skeleton,
        durations=tuple(durations),
        transitions=transitions,
        emissions=tuple(emissions),
        duration_cap=cap,
        untrained_states=untrained,
    )
    return fit_emissions(data, model, config)


# ---------------------------------------------------------------------------
# Model file round-trip. JSON with repr floats: decimal shortest round-trip,
# so save -> load reproduces every parameter bit-exactly.
# ---------------------------------------------------------------------------


def model_to_dict(model: SwitchingGPModel) -> dict:
    doc = {
        "format": "switchgp-model",
        "version": 1,
        "num_states": model.num_states,
        "num_features": model.num_features,
        "duration_cap": model.duration_cap,
        "initial": model.initial.tolist(),
        "durations": [{"shape": g.shape, "scale": g.scale} for g in model.durations],
        "transitions": model.transitions.probs.tolist(),
        "shared_task": model.shared_task,
        "noise_variances": model.noise.per_feature_variance.tolist(),
        "untrained_states": list(model.untrained_states),
        "pca": model.pca,
    }
    if model.shared_task:
        doc["task_cholesky"] = model.emissions[0].task.cholesky_factor.tolist()
    emissions = []
    for e in model.emissions:
        entry = {
            "mean": e.mean.tolist(),
            "variance": e.temporal.variance,
            "lengthscale": e.temporal.lengthscale,
            "smoothness": e.temporal.smoothness,
        }
        if not model.shared_task:
            entry["task_cholesky"] = e.task.cholesky_factor.tolist()
        emissions.append(entry)
    doc["emissions"] = emissions
    return doc


def model_from_dict(doc: dict) -> SwitchingGPModel:
    if doc.get("format") != "switchgp-model":
        raise ValueError("not a switchgp model document")
    shared = bool(doc["shared_task"])
    shared_task = TaskCovariance(np.array(doc["task_cholesky"])) if shared else None
    emissions = []
    for entry in doc["emissions"]:
        task = shared_task if shared else TaskCovariance(np.array(entry["task_cholesky"]))
        kern = MaternKernel(
            variance=entry["variance"],
            lengthscale=entry["lengthscale"],
            smoothness=entry["smoothness"],
        )
        emissions.append(StateEmission(np.array(entry["mean"]), kern, task))
    return SwitchingGPModel(
        durations=tuple(GammaDuration(d["shape"], d["scale"]) for d in doc["durations"]),
        transitions=TransitionMatrix(np.array(doc["transitions"])),
        emissions=tuple(emissions),
        noise=NoiseModel(np.array(doc["noise_variances"])),
        duration_cap=int(doc["duration_cap"]),
        initial=np.array(doc["initial"]),
        shared_task=shared,
        untrained_states=tuple(doc.get("untrained_states", ())),
        pca=doc.get("pca"),
    )


def save_model(model: SwitchingGPModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=2)
        fh.write("\n")


def load_model(path) -> SwitchingGPModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))
