"""Shared fixtures: tiny tensors, prior settings and short chains."""

import numpy as np
import pytest

from bmdl.core.dist import RandomStream
from bmdl.core.model import init_state
from bmdl.models.config import ChainConfig, Hyperparameters, ModelVariant
from bmdl.models.state import CountTensor, DomainCounts


def dense_counts(seed: int, V: int, J: int, rate: float = 3.0) -> np.ndarray:
    counts = np.random.default_rng(seed).poisson(rate, size=(V, J))
    counts[0] += 1  # every sample has at least one count
    return counts


@pytest.fixture
def gene_ids():
    return [f"g{v}" for v in range(6)]


@pytest.fixture
def small_tensor(gene_ids):
    """Two domains over six genes; domain 1 is the labeled target."""
    source = DomainCounts.from_dense("source", dense_counts(0, 6, 5), gene_ids=gene_ids,
                                     labels=[0, 1, 0, 1, 0])
    target = DomainCounts.from_dense("target", dense_counts(1, 6, 4), gene_ids=gene_ids,
                                     labels=[0, 1, 0, 1], role="target")
    return CountTensor(domains=[source, target], target_index=1)


@pytest.fixture
def hp():
    return Hyperparameters.uniform(1.0, K=4)


@pytest.fixture
def short_chain():
    return ChainConfig(iterations=12, burn_in=6)


@pytest.fixture
def small_state(small_tensor, hp):
    return init_state(small_tensor, hp, ModelVariant.BMDL, RandomStream(7))
