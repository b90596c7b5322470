"""Tests for chain running, summaries, checkpoints and resume."""

import numpy as np
import pytest

from bmdl.core.chain import (
    ChainRunner,
    active_factor_count,
    factor_sharing,
    resume_chain,
    run_chain,
    summary_from_checkpoint,
)
from bmdl.core.dist import RandomStream
from bmdl.core.errors import CheckpointError, PreconditionError
from bmdl.io.persistence import load_checkpoint
from bmdl.models.config import ChainConfig, ModelVariant
from bmdl.models.state import CountTensor, PosteriorSummary


@pytest.mark.unit
class TestActiveFactors:

    def test_relative_threshold(self):
        r = np.array([[10.0, 0.0], [0.05, 0.0], [2.0, 0.0]])
        z = np.array([[1, 0], [1, 0], [0, 0]])
        assert active_factor_count(r, z) == [1, 0]
        assert active_factor_count(r, z, relative=0.001) == [2, 0]

    def test_factor_sharing(self):
        summary = PosteriorSummary(
            phi_mean=np.full((3, 4), 1 / 3),
            r_last=np.array([[1.0, 1.0], [1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]),
            z_activation=np.array([[1.0, 0.9], [0.8, 0.0], [0.0, 0.6], [0.1, 0.2]]),
            log_joint_trace=[],
            active_factor_count=[2, 2],
            domain_names=["source", "target"],
        )
        sharing = factor_sharing(summary)
        assert sharing.shared == 1
        assert sharing.specific == {"source": 1, "target": 1}
        assert sharing.inactive == 1


@pytest.mark.integration
class TestChainRunner:

    def test_collection_counts(self, small_tensor, hp):
        config = ChainConfig(iterations=20, burn_in=10, thin=3)
        summary = run_chain(small_tensor, hp, ModelVariant.BMDL, config, RandomStream(0))
        # iterations 11, 14, 17, 20
        assert summary.samples_collected == 4
        assert summary.iterations == 20
        assert len(summary.log_joint_trace) == 20

    def test_summary_shapes(self, small_tensor, hp, short_chain):
        summary = run_chain(small_tensor, hp, ModelVariant.BMDL, short_chain, RandomStream(1))
        np.testing.assert_allclose(summary.phi_mean.sum(axis=0), 1.0, atol=1e-9)
        assert summary.r_last.shape == (hp.K, small_tensor.D)
        assert np.all((summary.z_activation >= 0) & (summary.z_activation <= 1))
        assert summary.gene_ids == small_tensor.gene_ids
        assert summary.domain_names == ["source", "target"]
        assert summary.target_index == 1
        assert len(summary.active_factor_count) == small_tensor.D

    def test_collect_subset(self, small_tensor, hp):
        config = ChainConfig(iterations=8, burn_in=4, collect=["phi"])
        summary = run_chain(small_tensor, hp, ModelVariant.BMDL, config, RandomStream(1))
        assert summary.log_joint_trace == []
        assert summary.r_mean is None

    def test_same_seed_same_chain(self, small_tensor, hp, short_chain):
        a = run_chain(small_tensor, hp, ModelVariant.BMDL, short_chain, RandomStream(3))
        b = run_chain(small_tensor, hp, ModelVariant.BMDL, short_chain, RandomStream(3))
        np.testing.assert_array_equal(a.phi_mean, b.phi_mean)
        assert a.log_joint_trace == b.log_joint_trace

    def test_pinned_variant_summary(self, small_tensor, hp, short_chain):
        summary = run_chain(small_tensor, hp, ModelVariant.HGNBP, short_chain, RandomStream(2))
        assert np.all(summary.z_activation == 1.0)
        assert summary.variant == "HGNBP"

    def test_target_only_fits_target_domain(self, small_tensor, hp, short_chain):
        summary = run_chain(small_tensor, hp, ModelVariant.TARGET_ONLY, short_chain, RandomStream(2))
        assert summary.domain_names == ["target"]
        assert summary.r_last.shape == (hp.K, 1)
        assert summary.target_index == 0
        assert summary.variant == "TARGET_ONLY"

    def test_target_only_needs_target(self, small_tensor, hp, short_chain):
        tensor = CountTensor(domains=small_tensor.domains)
        with pytest.raises(PreconditionError):
            ChainRunner(tensor, hp, ModelVariant.TARGET_ONLY, short_chain)

    def test_step_before_start(self, small_tensor, hp, short_chain):
        with pytest.raises(PreconditionError):
            ChainRunner(small_tensor, hp, ModelVariant.BMDL, short_chain).step()

    def test_progress_callback(self, small_tensor, hp, short_chain):
        seen = []
        run_chain(small_tensor, hp, ModelVariant.BMDL, short_chain, RandomStream(0),
                  progress=lambda done, total: seen.append((done, total)))
        assert seen[0] == (1, 12)
        assert seen[-1] == (12, 12)


@pytest.mark.integration
class TestCheckpointResume:

    def test_resume_is_bit_identical(self, small_tensor, hp, tmp_path):
        config = ChainConfig(iterations=16, burn_in=5, thin=2)
        uninterrupted = run_chain(small_tensor, hp, ModelVariant.BMDL, config, RandomStream(12))

        path = tmp_path / "checkpoint.npz"
        runner = ChainRunner(small_tensor, hp, ModelVariant.BMDL, config)
        runner.start(RandomStream(12))
        assert runner.run(checkpoint_path=path, stop_after=7) is None
        assert load_checkpoint(path).iteration == 7

        resumed = resume_chain(small_tensor, path)
        np.testing.assert_array_equal(resumed.phi_mean, uninterrupted.phi_mean)
        np.testing.assert_array_equal(resumed.r_last, uninterrupted.r_last)
        np.testing.assert_array_equal(resumed.z_activation, uninterrupted.z_activation)
        assert resumed.log_joint_trace == uninterrupted.log_joint_trace
        assert resumed.samples_collected == uninterrupted.samples_collected

    def test_periodic_checkpoints(self, small_tensor, hp, tmp_path):
        config = ChainConfig(iterations=10, burn_in=4, checkpoint_every=3)
        path = tmp_path / "chain.npz"
        run_chain(small_tensor, hp, ModelVariant.BMDL, config, RandomStream(0), checkpoint_path=path)
        saved = load_checkpoint(path)
        assert saved.iteration == 10
        assert saved.extra["gene_ids"] == small_tensor.gene_ids
        assert saved.extra["domain_names"] == small_tensor.domain_names

    def test_summary_from_checkpoint_matches(self, small_tensor, hp, short_chain, tmp_path):
        path = tmp_path / "chain.npz"
        summary = run_chain(small_tensor, hp, ModelVariant.BMDL, short_chain, RandomStream(4), checkpoint_path=path)
        rebuilt = summary_from_checkpoint(load_checkpoint(path))
        np.testing.assert_array_equal(rebuilt.phi_mean, summary.phi_mean)
        assert rebuilt.gene_ids == summary.gene_ids
        assert rebuilt.target_index == summary.target_index

    def test_resume_rejects_other_data(self, small_tensor, hp, short_chain, tmp_path):
        path = tmp_path / "chain.npz"
        runner = ChainRunner(small_tensor, hp, ModelVariant.BMDL, short_chain)
        runner.start(RandomStream(0))
        runner.run(checkpoint_path=path, stop_after=3)

        changed = small_tensor.domains[0].select_samples([0, 1, 2])
        other = small_tensor.replace_domain(0, changed)
        with pytest.raises(CheckpointError):
            ChainRunner.from_checkpoint(other, load_checkpoint(path))

    def test_corrupt_checkpoint(self, tmp_path):
        path = tmp_path / "broken.npz"
        path.write_bytes(b"not an archive")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)
