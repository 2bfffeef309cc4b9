"""Corpus ingestion, PCA preprocessing, and the synthetic generator."""

from dataclasses import replace

import numpy as np
import pytest

import helpers
import oracles
from switchgp.data import (
    PcaProjection,
    apply_pca,
    fit_pca,
    generate_synthetic,
    load_har,
)
from switchgp.errors import FormatError, InsufficientRankError
from switchgp.kernels import MaternKernel, NoiseModel
from switchgp.model import segment_series


def write_split(root, split, X, y, subjects):
    d = root / split
    d.mkdir(parents=True, exist_ok=True)
    np.savetxt(d / f"X_{split}.txt", np.asarray(X, dtype=float), fmt="%.6f")
    np.savetxt(d / f"y_{split}.txt", np.asarray(y).reshape(-1, 1), fmt="%d")
    np.savetxt(d / f"subject_{split}.txt", np.asarray(subjects).reshape(-1, 1), fmt="%d")


class TestLoadHar:
    def test_three_row_fixture(self, tmp_path):
        X = np.arange(12.0).reshape(3, 4)
        write_split(tmp_path, "train", X, [1, 1, 2], [5, 5, 5])
        series = load_har(tmp_path, split="train")
        assert len(series) == 1
        s = series[0]
        assert s.subject_id == 5
        np.testing.assert_array_equal(s.labels, [1, 1, 2])
        np.testing.assert_allclose(s.observations, X, atol=1e-6)
        segs = segment_series(s.labels)
        assert segs == [(1, 0, 2), (2, 2, 1)]

    def test_subject_grouping_modes(self, tmp_path):
        X = np.ones((5, 2))
        write_split(tmp_path, "train", X, [1, 1, 2, 2, 1], [1, 1, 2, 2, 1])
        merged = load_har(tmp_path, split="train")
        assert [s.subject_id for s in merged] == [1, 2]
        assert merged[0].observations.shape == (3, 2)
        blocks = load_har(tmp_path, split="train", concatenate_subjects=False)
        assert [s.subject_id for s in blocks] == [1, 2, 1]
        assert [s.observations.shape[0] for s in blocks] == [2, 2, 1]

    def test_both_splits_train_first(self, tmp_path):
        write_split(tmp_path, "train", np.zeros((2, 3)), [1, 1], [1, 1])
        write_split(tmp_path, "test", np.ones((2, 3)), [2, 2], [9, 9])
        series = load_har(tmp_path, split="both")
        assert [s.subject_id for s in series] == [1, 9]
        with pytest.raises(ValueError):
            load_har(tmp_path, split="validation")

    def test_row_count_mismatch(self, tmp_path):
        write_split(tmp_path, "train", np.zeros((3, 2)), [1, 1], [1, 1])
        with pytest.raises(FormatError, match="row counts disagree"):
            load_har(tmp_path, split="train")

    def test_label_out_of_range_reports_line(self, tmp_path):
        write_split(tmp_path, "train", np.zeros((3, 2)), [1, 7, 2], [1, 1, 1])
        with pytest.raises(FormatError, match="outside 1..6") as err:
            load_har(tmp_path, split="train")
        assert err.value.line == 2

    def test_non_integer_label_reports_line(self, tmp_path):
        d = tmp_path / "train"
        d.mkdir(parents=True)
        np.savetxt(d / "X_train.txt", np.zeros((2, 2)), fmt="%.3f")
        (d / "y_train.txt").write_text("1\n2.5\n")
        np.savetxt(d / "subject_train.txt", np.ones((2, 1)), fmt="%d")
        with pytest.raises(FormatError) as err:
            load_har(tmp_path, split="train")
        assert err.value.line == 2

    def test_multi_column_label_file_rejected(self, tmp_path):
        d = tmp_path / "train"
        d.mkdir(parents=True)
        np.savetxt(d / "X_train.txt", np.zeros((2, 2)), fmt="%.3f")
        (d / "y_train.txt").write_text("1 1\n2 2\n")
        np.savetxt(d / "subject_train.txt", np.ones((2, 1)), fmt="%d")
        with pytest.raises(FormatError, match="one column"):
            load_har(tmp_path, split="train")

    def test_missing_file_reports_path(self, tmp_path):
        (tmp_path / "train").mkdir()
        with pytest.raises(FormatError) as err:
            load_har(tmp_path, split="train")
        assert "X_train" in err.value.path


class TestPca:
    def test_rows_orthonormal(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(60, 15))
        proj = fit_pca(X, 10)
        gram = proj.component_matrix @ proj.component_matrix.T
        np.testing.assert_allclose(gram, np.eye(10), atol=1e-8)

    def test_explained_variance_descending(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(50, 12)) * np.linspace(3.0, 0.5, 12)
        proj = fit_pca(X, 10)
        assert np.all(np.diff(proj.explained_variance) <= 1e-12)

    def test_full_rank_projection_preserves_distances(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(40, 10))
        proj = fit_pca(X, 10)
        scores = apply_pca(proj, X)
        centered = X - X.mean(axis=0)
        for i in range(0, 40, 7):
            for j in range(0, 40, 5):
                d_orig = np.linalg.norm(centered[i] - centered[j])
                d_proj = np.linalg.norm(scores[i] - scores[j])
                assert d_proj == pytest.approx(d_orig, abs=1e-6)

    def test_insufficient_rank_rejected(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(50, 3)) @ rng.normal(size=(3, 12))
        with pytest.raises(InsufficientRankError):
            fit_pca(X, 10)

    def test_reconstruction_improves_with_components(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(80, 20)) * np.linspace(4.0, 0.2, 20)
        err = {}
        for k in (9, 10):
            proj = fit_pca(X, k)
            recon = apply_pca(proj, X) @ proj.component_matrix + proj.feature_means
            err[k] = float(np.linalg.norm(X - recon))
        assert err[10] <= err[9] + 1e-12

    def test_refit_is_byte_identical(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(30, 11))
        a = fit_pca(X, 10)
        b = fit_pca(X.copy(), 10)
        assert np.array_equal(a.component_matrix, b.component_matrix)
        assert np.array_equal(a.feature_means, b.feature_means)
        assert np.array_equal(a.explained_variance, b.explained_variance)
        for r in range(10):
            pivot = int(np.argmax(np.abs(a.component_matrix[r])))
            assert a.component_matrix[r, pivot] > 0

    def test_whiten_gives_unit_variance_scores(self):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(200, 12)) * np.linspace(5.0, 0.5, 12)
        proj = fit_pca(X, 10)
        scores = apply_pca(proj, X, whiten=True)
        np.testing.assert_allclose(scores.var(axis=0, ddof=1), 1.0, atol=1e-8)

    def test_dict_round_trip(self):
        rng = np.random.default_rng(7)
        proj = fit_pca(rng.normal(size=(25, 10)), 10)
        back = PcaProjection.from_dict(proj.to_dict())
        assert np.array_equal(back.component_matrix, proj.component_matrix)
        assert np.array_equal(back.feature_means, proj.feature_means)
        assert np.array_equal(back.explained_variance, proj.explained_variance)

    def test_increasing_variance_rejected(self):
        with pytest.raises(ValueError):
            PcaProjection(np.eye(2), np.zeros(2), np.array([1.0, 2.0]))


class TestGenerateSynthetic:
    def test_deterministic_per_seed(self):
        model = helpers.random_model(A=2, P=2, cap=4, seed=0)
        a = generate_synthetic(model, 50, seed=3)
        b = generate_synthetic(model, 50, seed=3)
        c = generate_synthetic(model, 50, seed=4)
        assert np.array_equal(a.observations, b.observations)
        assert np.array_equal(a.labels, b.labels)
        assert not np.array_equal(a.observations, c.observations)

    def test_duration_means_converge(self):
        # ~1000 segments; the discretized mean sits ~+0.5 above k*beta, so
        # k*beta = 32 keeps offset plus MC noise inside the 5% band
        from switchgp.model import GammaDuration

        model = helpers.random_model(A=2, P=1, cap=77, seed=1)
        model = replace(
            model, durations=(GammaDuration(8.0, 4.0), GammaDuration(8.0, 4.0))
        )
        series = generate_synthetic(model, 33000, seed=2)
        segs = oracles.run_lengths(series.labels)[:-1]  # final segment is cut
        for state in (1, 2):
            durs = [d for lab, _, d in segs if lab == state]
            assert len(durs) > 300
            assert np.mean(durs) == pytest.approx(32.0, rel=0.05)

    def test_transition_frequencies_converge(self):
        model = helpers.random_model(A=3, P=1, cap=6, seed=5)
        series = generate_synthetic(model, 8000, seed=6)
        segs = oracles.run_lengths(series.labels)
        counts = np.zeros((3, 3))
        for (a, _, _), (b, _, _) in zip(segs[:-1], segs[1:]):
            counts[a - 1, b - 1] += 1
        assert counts.sum() >= 1000
        freqs = counts / counts.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(freqs, model.transitions.probs, atol=0.03)

    def test_degenerate_generator_recovers_labels_by_nearest_mean(self):
        model = helpers.random_model(A=3, P=2, cap=4, seed=7)
        emissions = tuple(
            replace(
                e,
                temporal=MaternKernel(1e-12, e.temporal.lengthscale, 1.5),
            )
            for e in model.emissions
        )
        model = replace(
            model, emissions=emissions, noise=NoiseModel(np.full(2, 1e-12))
        )
        series = generate_synthetic(model, 200, seed=8)
        means = np.stack([e.mean for e in model.emissions])
        dists = np.linalg.norm(
            series.observations[:, None, :] - means[None, :, :], axis=2
        )
        recovered = np.argmin(dists, axis=1) + 1
        np.testing.assert_array_equal(recovered, series.labels)

    def test_rejects_empty_stream(self):
        model = helpers.random_model(A=1, P=1, cap=2, seed=9)
        with pytest.raises(ValueError):
            generate_synthetic(model, 0)

    def test_labels_align_and_cover_model_states(self):
        model = helpers.random_model(A=2, P=2, cap=3, seed=10)
        series = generate_synthetic(model, 300, seed=11)
        assert series.labels.shape == (300,)
        assert set(np.unique(series.labels)) <= {1, 2}
        assert series.observations.shape == (300, 2)
