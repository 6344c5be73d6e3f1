"""Synthetic mixture generator and its Bayes oracle."""
import numpy as np
import pytest

from nnfs.episodes import EpisodeConfig, run_evaluation
from nnfs.errors import ConfigError
from nnfs.store import roundtrip_bytes
from nnfs.synthetic import (
    OracleParams,
    SyntheticSpec,
    bayes_assign,
    generate,
    simplex_means,
    write_dataset_dir,
)


def spec_with(**kw):
    base = dict(
        dim=8,
        num_classes=3,
        class_separation=10.0,
        shift_vector_norm=10.0,
        per_split_counts=(600, 300, 600),
        noise_sigma=1.0,
        seed=0,
    )
    base.update(kw)
    return SyntheticSpec(**base)


class TestSpecValidation:
    def test_negative_sigma(self):
        with pytest.raises(ConfigError, match="noise_sigma"):
            spec_with(noise_sigma=-1.0).validate()

    def test_dim_below_classes(self):
        with pytest.raises(ConfigError, match="dim 2"):
            spec_with(dim=2).validate()

    def test_dict_round_trip(self):
        spec = spec_with(seed=77)
        assert SyntheticSpec.from_dict(spec.to_dict()) == spec


class TestSimplexMeans:
    def test_pairwise_distances_equal(self):
        means = simplex_means(4, 7, 3.5)
        for i in range(4):
            for j in range(i + 1, 4):
                assert np.linalg.norm(means[i] - means[j]) == pytest.approx(3.5, abs=1e-9)


class TestGenerate:
    def test_same_seed_byte_identical(self):
        a = generate(spec_with(seed=5))
        b = generate(spec_with(seed=5))
        for split in ("train", "dev", "test"):
            assert roundtrip_bytes(a.source[split]) == roundtrip_bytes(b.source[split])
        for split in ("dev", "test"):
            assert roundtrip_bytes(a.target[split]) == roundtrip_bytes(b.target[split])
        assert np.array_equal(a.mean_src.values, b.mean_src.values)

    def test_different_seed_differs(self):
        a = generate(spec_with(seed=5))
        b = generate(spec_with(seed=6))
        assert roundtrip_bytes(a.source["dev"]) != roundtrip_bytes(b.source["dev"])

    def test_split_sizes_and_balance(self):
        data = generate(spec_with(per_split_counts=(601, 299, 600)))
        assert data.source["train"].num_samples == 601
        assert data.source["dev"].num_samples == 299
        assert data.target["test"].num_samples == 600
        counts = np.bincount(data.target["test"].labels, minlength=3)
        assert counts.max() - counts.min() <= 1

    def test_zero_shift_targets_match_source_distribution(self):
        spec = spec_with(shift_vector_norm=0.0, seed=18)
        data = generate(spec)
        n = data.source["dev"].num_samples
        diff = data.target["dev"].features.astype(np.float64).mean(0) - data.source[
            "dev"
        ].features.astype(np.float64).mean(0)
        tol = 3.0 * spec.noise_sigma / np.sqrt(n)
        assert np.abs(diff).max() < tol
        assert np.linalg.norm(data.oracle.offset) == 0.0

    def test_offset_norm_recorded(self):
        data = generate(spec_with(shift_vector_norm=7.0))
        assert np.linalg.norm(data.oracle.offset) == pytest.approx(7.0, abs=1e-9)

    def test_per_class_shift_matches_offset(self):
        spec = spec_with(seed=19)
        data = generate(spec)
        src = data.source["test"]
        tgt = data.target["test"]
        n_cls = src.num_samples // 3
        tol = 4.0 * spec.noise_sigma / np.sqrt(n_cls)
        for c in range(3):
            src_mean = src.features[src.labels == c].astype(np.float64).mean(0)
            tgt_mean = tgt.features[tgt.labels == c].astype(np.float64).mean(0)
            np.testing.assert_allclose(
                tgt_mean - src_mean, data.oracle.offset, atol=tol
            )

    def test_mean_src_covers_train_and_dev(self):
        data = generate(spec_with())
        feats = np.vstack(
            [
                data.source["train"].features.astype(np.float64),
                data.source["dev"].features.astype(np.float64),
            ]
        )
        np.testing.assert_allclose(data.mean_src.values, feats.mean(0), atol=1e-9)

    def test_logits_present_everywhere(self):
        data = generate(spec_with())
        for ds in [*data.source.values(), *data.target.values()]:
            assert ds.has_logits

    def test_source_zero_shot_is_strong(self):
        # the stored logits implement the source-optimal classifier, so on
        # unshifted source data argmax(logits) must be near-perfect at 10 sigma
        data = generate(spec_with(seed=23))
        ds = data.source["test"]
        acc = (np.argmax(ds.logits, axis=1) == ds.labels).mean()
        assert acc > 0.999

    def test_dataset_dir_layout(self, tmp_path):
        data = generate(spec_with(per_split_counts=(30, 30, 30)))
        write_dataset_dir(data, tmp_path / "synthetic")
        root = tmp_path / "synthetic"
        for rel in (
            "src/train.emb1", "src/dev.emb1", "src/test.emb1",
            "tgt/dev.emb1", "tgt/test.emb1", "mean_src.emb1",
        ):
            assert (root / rel).exists(), rel


class TestBayesOracle:
    def test_sample_at_mean_assigned_to_class(self):
        data = generate(spec_with())
        X = data.oracle.means_for("source")
        assert list(bayes_assign(data.oracle, X, "source")) == [0, 1, 2]

    def test_high_separation_near_perfect(self):
        spec = spec_with(per_split_counts=(600, 300, 10_002), seed=31)
        data = generate(spec)
        ds = data.target["test"]
        got = bayes_assign(data.oracle, ds.features.astype(np.float64), "target")
        assert (got == ds.labels).mean() >= 0.999

    def test_zero_separation_chance_level(self):
        spec = spec_with(class_separation=0.0, per_split_counts=(600, 300, 10_002), seed=37)
        data = generate(spec)
        ds = data.source["test"]
        got = bayes_assign(data.oracle, ds.features.astype(np.float64), "source")
        assert (got == ds.labels).mean() == pytest.approx(1 / 3, abs=0.02)

    def test_matches_likelihood_brute_force(self):
        spec = spec_with(seed=43, per_split_counts=(300, 300, 1000))
        data = generate(spec)
        X = data.target["test"].features.astype(np.float64)[:1000]
        means = data.oracle.means_for("target")
        sigma = data.oracle.noise_sigma
        # full Gaussian log-likelihood per class, constants included
        d = X.shape[1]
        const = -0.5 * d * np.log(2 * np.pi * sigma**2)
        ll = np.stack(
            [
                const - 0.5 * ((X - mu) ** 2).sum(axis=1) / sigma**2
                for mu in means
            ],
            axis=1,
        )
        assert np.array_equal(np.argmax(ll, axis=1), bayes_assign(data.oracle, X, "target"))

    def test_dim_mismatch(self):
        oracle = OracleParams(
            source_means=np.zeros((2, 3)), offset=np.zeros(3), noise_sigma=1.0
        )
        with pytest.raises(Exception, match="dim 3"):
            bayes_assign(oracle, np.zeros((1, 2)))


class TestShiftCorrectionClaim:
    def test_norm_shift_recovers_unshifted_accuracy(self):
        cfg = EpisodeConfig(ways=3, shots=5, queries_per_class=15,
                            num_episodes=60, base_seed=71)
        clean = generate(spec_with(shift_vector_norm=0.0, seed=53))
        baseline = run_evaluation(
            clean.target["dev"], clean.target["test"], "nn", None, cfg
        ).mean_accuracy
        shifted = generate(spec_with(shift_vector_norm=10.0, seed=53))
        corrected = run_evaluation(
            shifted.target["dev"], shifted.target["test"], "nn+norm",
            shifted.mean_src, cfg,
        ).mean_accuracy
        assert corrected >= 0.95 * baseline
