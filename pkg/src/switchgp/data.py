"""Dataset ingestion, PCA preprocessing, and the synthetic generator.

The activity-recognition corpus ships as whitespace-delimited text: a
feature matrix (rows x 561), an integer activity label per row (1..6), and
a subject id per row, in parallel train/ and test/ files. Rows are treated
as a uniform time grid. By default each subject's rows are concatenated in
file order into one series; a flag switches to one series per contiguous
subject block instead (the two agree on the published files, where every
subject's rows are contiguous).

The synthetic generator samples the exact generative model the filter
assumes, including the discretized, truncated duration law, so generated
streams double as oracles for parameter-recovery and consistency tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InsufficientRankError
from .filtering import build_duration_table
from .kernels import add_jitter, chol_or_raise, gram_matrix
from .model import SegmentedSeries, SwitchingGPModel

NUM_ACTIVITY_LABELS = 6
DEFAULT_NUM_COMPONENTS = 10

_SPLIT_FILES = {
    "train": ("train", "X_train.txt", "y_train.txt", "subject_train.txt"),
    "test": ("test", "X_test.txt", "y_test.txt", "subject_test.txt"),
}


def _read_matrix(path: Path) -> np.ndarray:
    try:
        return np.loadtxt(path, dtype=float, ndmin=2)
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}", path=str(path)) from exc
    except ValueError as exc:
        line = None
        import re

        m = re.search(r"(?:line|row) (\d+)", str(exc))
        if m:
            line = int(m.group(1))
        raise FormatError(f"malformed matrix in {path}: {exc}", path=str(path), line=line) from exc


def _read_int_vector(path: Path, name: str) -> np.ndarray:
    mat = _read_matrix(path)
    if mat.shape[1] != 1:
        raise FormatError(
            f"{name} file must have one column, found {mat.shape[1]}", path=str(path)
        )
    vec = mat[:, 0]
    if not np.all(vec == np.round(vec)):
        bad = int(np.nonzero(vec != np.round(vec))[0][0])
        raise FormatError(
            f"{name} file contains a non-integer at line {bad + 1}",
            path=str(path),
            line=bad + 1,
        )
    return vec.astype(int)


def load_har(
    data_dir,
    split: str = "both",
    concatenate_subjects: bool = True,
) -> list:
    """Load the activity corpus into per-subject series.

    ``split`` is "train", "test", or "both" (train first). Labels must lie
    in 1..6 and the three files of a split must agree on row count.
    """
    data_dir = Path(data_dir)
    if split == "both":
        return load_har(data_dir, "train", concatenate_subjects) + load_har(
            data_dir, "test", concatenate_subjects
        )
    if split not in _SPLIT_FILES:
        raise ValueError("split must be 'train', 'test', or 'both'")
    sub, xf, yf, sf = _SPLIT_FILES[split]
    base = data_dir / sub
    X = _read_matrix(base / xf)
    y = _read_int_vector(base / yf, "label")
    subj = _read_int_vector(base / sf, "subject")

    if not (X.shape[0] == y.shape[0] == subj.shape[0]):
        raise FormatError(
            f"row counts disagree in {base}: features {X.shape[0]}, "
            f"labels {y.shape[0]}, subjects {subj.shape[0]}",
            path=str(base),
        )
    bad = np.nonzero((y < 1) | (y > NUM_ACTIVITY_LABELS))[0]
    if bad.size:
        raise FormatError(
            f"label {y[bad[0]]} outside 1..{NUM_ACTIVITY_LABELS} at line {bad[0] + 1}",
            path=str(base / yf),
            line=int(bad[0] + 1),
        )

    series = []
    if concatenate_subjects:
        seen = []
        for s in subj:
            if s not in seen:
                seen.append(s)
        for s in seen:
            rows = np.nonzero(subj == s)[0]
            series.append(
                SegmentedSeries(observations=X[rows], labels=y[rows], subject_id=int(s))
            )
    else:
        start = 0
        for i in range(1, subj.shape[0] + 1):
            if i == subj.shape[0] or subj[i] != subj[start]:
                series.append(
                    SegmentedSeries(
                        observations=X[start:i],
                        labels=y[start:i],
                        subject_id=int(subj[start]),
                    )
                )
                start = i
    return series


@dataclass(frozen=True)
class PcaProjection:
    """Centered orthonormal projection onto the top principal components."""

    component_matrix: np.ndarray  # (k, F), rows orthonormal
    feature_means: np.ndarray  # (F,)
    explained_variance: np.ndarray  # (k,), non-increasing

    def __post_init__(self):
        cm = np.asarray(self.component_matrix, dtype=float)
        fm = np.asarray(self.feature_means, dtype=float)
        ev = np.asarray(self.explained_variance, dtype=float)
        if cm.ndim != 2 or fm.shape != (cm.shape[1],) or ev.shape != (cm.shape[0],):
            raise ValueError("inconsistent projection shapes")
        if np.any(np.diff(ev) > 0):
            raise ValueError("explained variance must be non-increasing")
        object.__setattr__(self, "component_matrix", cm)
        object.__setattr__(self, "feature_means", fm)
        object.__setattr__(self, "explained_variance", ev)

    @property
    def num_components(self) -> int:
        return self.component_matrix.shape[0]

    def to_dict(self) -> dict:
        return {
            "component_matrix": self.component_matrix.tolist(),
            "feature_means": self.feature_means.tolist(),
            "explained_variance": self.explained_variance.tolist(),
        }

    @staticmethod
    def from_dict(doc: dict) -> "PcaProjection":
        return PcaProjection(
            np.array(doc["component_matrix"], dtype=float),
            np.array(doc["feature_means"], dtype=float),
            np.array(doc["explained_variance"], dtype=float),
        )


def fit_pca(features, num_components: int = DEFAULT_NUM_COMPONENTS) -> PcaProjection:
    """Fit the projection on training rows only.

    Signs are fixed deterministically (largest-magnitude loading positive)
    so refits reproduce byte-identical projections.
    """
    X = np.asarray(features, dtype=float)
    if X.ndim != 2:
        raise ValueError("features must be a 2-D matrix")
    n = X.shape[0]
    means = X.mean(axis=0)
    centered = X - means
    _, S, Vt = np.linalg.svd(centered, full_matrices=False)
    tol = S[0] * 1e-10 if S.size and S[0] > 0 else 0.0
    rank = int(np.sum(S > tol))
    if rank < num_components:
        raise InsufficientRankError(
            f"requested {num_components} components but data rank is {rank}"
        )
    comps = Vt[:num_components].copy()
    for r in range(num_components):
        pivot = int(np.argmax(np.abs(comps[r])))
        if comps[r, pivot] < 0:
            comps[r] = -comps[r]
    explained = (S[:num_components] ** 2) / (n - 1)
    return PcaProjection(comps, means, explained)


def apply_pca(proj: PcaProjection, features, whiten: bool = False) -> np.ndarray:
    """Project rows onto the components; optionally scale to unit variance."""
    X = np.asarray(features, dtype=float)
    scores = (X - proj.feature_means) @ proj.component_matrix.T
    if whiten:
        ev = proj.explained_variance
        if np.any(ev <= 0):
            raise ValueError("cannot whiten with non-positive explained variance")
        scores = scores / np.sqrt(ev)
    return scores


def generate_synthetic(model: SwitchingGPModel, num_steps: int, seed=0) -> SegmentedSeries:
    """Sample a labeled stream from the model, deterministic per seed.

    State and duration draws follow the same discretized, truncated laws the
    filter uses (initial distribution, zero-diagonal transitions with the
    single-state self-loop exception, per-step Gamma CDF-difference masses).
    Segment values are exact GP draws plus independent noise; the final
    segment is cut at ``num_steps``.
    """
    if num_steps < 1:
        raise ValueError("num_steps must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    table = build_duration_table(model)
    masses = np.exp(table.log_g)
    trans = np.exp(table.log_p)
    init = np.exp(table.log_pi)
    A, D = masses.shape
    P = model.num_features
    Dn = model.noise.per_feature_variance

    obs = np.empty((num_steps, P))
    labels = np.empty(num_steps, dtype=int)
    t = 0
    state = int(rng.choice(A, p=init / init.sum()))
    while t < num_steps:
        row = masses[state]
        dur = int(rng.choice(D, p=row / row.sum())) + 1
        take = min(dur, num_steps - t)
        e = model.emissions[state]
        K_T = gram_matrix(e.temporal, dur - 1)
        Lt = chol_or_raise(
            add_jitter(K_T, e.temporal.variance), "generate_synthetic", state=state
        )
        Z = rng.standard_normal((dur, P))
        F = Lt @ Z @ e.task.cholesky_factor.T
        Y = F + e.mean[None, :] + rng.standard_normal((dur, P)) * np.sqrt(Dn)[None, :]
        obs[t : t + take] = Y[:take]
        labels[t : t + take] = state + 1
        t += take
        prow = trans[state]
        state = int(rng.choice(A, p=prow / prow.sum()))
    return SegmentedSeries(observations=obs, labels=labels, subject_id=0)
