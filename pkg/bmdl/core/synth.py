"""
Synthetic two-domain count data with a controllable number of shared factors.

Every random quantity comes from its own split stream, and pools are drawn at
a fixed size whatever the number of shared factors or target samples. Two
configs that differ only in ``shared_factors`` therefore differ only in the
target's loading matrix (and its consequences), which makes sweeps over
domain relevance paired comparisons.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from .dist import GammaParams, RandomStream, beta_draws, dirichlet_columns, gamma_draws, nb_draws, sample_gamma
from ..models.config import SynthConfig
from ..models.state import CountTensor, DomainCounts

SOURCE_LOADINGS = 0
UNIQUE_LOADINGS = 1
MASSES = 2
DISPERSIONS = 3
SOURCE_SAMPLES = 4
TARGET_SAMPLES = 5
TEST_SAMPLES = 6
LABELS = 7


@dataclass
class SynthDataset:
    tensor: CountTensor
    test: DomainCounts
    true_phi: List[np.ndarray]             # per domain V x K_true
    true_theta: List[np.ndarray]           # per domain K_true x J_d (train samples)
    true_r: List[np.ndarray]               # per domain K_true
    true_p: List[np.ndarray]               # per domain J_d
    true_c: List[np.ndarray]               # per domain J_d
    shared_mask: np.ndarray                # K_true, target columns copied from the source
    labels: np.ndarray                     # target train labels
    test_theta: np.ndarray
    masses: Dict[str, Any] = field(default_factory=dict)

    @property
    def target_index(self) -> int:
        return self.tensor.target_index

    def ground_truth(self) -> Dict[str, np.ndarray]:
        """Flat arrays for the sidecar file written next to the count matrices."""
        out = {"shared_mask": self.shared_mask, "labels": self.labels, "test_labels": self.test.labels,
               "test_theta": self.test_theta, "s": self.masses["s"]}
        for d, name in enumerate(self.tensor.domain_names):
            out[f"phi_{name}"] = self.true_phi[d]
            out[f"theta_{name}"] = self.true_theta[d]
            out[f"r_{name}"] = self.true_r[d]
            out[f"p_{name}"] = self.true_p[d]
            out[f"c_{name}"] = self.true_c[d]
        return out


def _labels(count: int, balanced: bool, rng: RandomStream) -> np.ndarray:
    if balanced:
        return np.arange(count, dtype=np.int64) % 2
    return (rng.generator.random(count) < 0.5).astype(np.int64)


def _draw_samples(phi: np.ndarray, r: np.ndarray, labels: np.ndarray, config: SynthConfig,
                  rng: RandomStream):
    """Per-sample class scale, depth, scores and counts; sample j uses ``rng.split(j)``."""
    V, K = phi.shape
    J = labels.size
    theta = np.zeros((K, J))
    p = np.zeros(J)
    c = np.zeros(J)
    counts = np.zeros((V, J), dtype=np.int64)
    for j in range(J):
        stream = rng.split(j)
        a = config.class_scale_a[int(labels[j])]
        c[j] = sample_gamma(GammaParams(a, config.class_scale_scale), stream)
        p[j] = float(beta_draws(config.p_beta[0], config.p_beta[1], stream))
        theta[:, j] = gamma_draws(r, 1.0 / c[j], stream)
        counts[:, j] = nb_draws(phi @ theta[:, j], p[j], stream)
    return theta, p, c, counts


def generate(config: SynthConfig, rng: Optional[RandomStream] = None) -> SynthDataset:
    """
    Source and target domains drawn through the model's own generative chain.

    Target loadings are the first ``shared_factors`` source columns followed by
    unique columns. A target sample's class is the index of the class scale
    shape that generated its c_j. With ``source_samples = 0`` the tensor holds
    the target domain alone.

    By default the masses are fixed (gamma0 = K, c0 = c_d = 1) and p_j is drawn
    from Beta(500, 5). For the recipe with drawn masses, set
    ``hyper_prior=(shape, rate)`` so gamma0, c0 and c_d come from
    Gamma(shape, 1/rate), and set ``p_beta=(a0, b0)`` for a Beta(a0, b0) p_j.
    """
    rng = rng or RandomStream(config.seed)
    V, K = config.num_features, config.factors_per_domain
    shared = config.shared_factors

    source_phi = dirichlet_columns(np.full((V, K), config.dirichlet_eta), rng.split(SOURCE_LOADINGS))
    unique_pool = dirichlet_columns(np.full((V, K), config.dirichlet_eta), rng.split(UNIQUE_LOADINGS))
    target_phi = np.concatenate([source_phi[:, :shared], unique_pool[:, :K - shared]], axis=1)
    shared_mask = np.arange(K) < shared

    masses_rng = rng.split(MASSES)
    if config.hyper_prior is not None:
        shape, rate = config.hyper_prior
        gamma0 = sample_gamma(GammaParams(shape, 1.0 / rate), masses_rng)
        c0 = sample_gamma(GammaParams(shape, 1.0 / rate), masses_rng)
        c_d = [sample_gamma(GammaParams(shape, 1.0 / rate), masses_rng) for _ in range(2)]
    else:
        gamma0 = config.gamma0 if config.gamma0 is not None else float(K)
        c0 = config.c0
        c_d = [config.c_d, config.c_d]

    # factor ids: 0..K-1 source factors, K..2K-1 unique target factors
    disp_rng = rng.split(DISPERSIONS)
    s = gamma_draws(np.full(2 * K, gamma0 / K), 1.0 / c0, disp_rng)
    r_source = gamma_draws(s[:K], 1.0 / c_d[0], disp_rng)
    r_target_pool = gamma_draws(s, 1.0 / c_d[1], disp_rng)
    target_ids = np.concatenate([np.arange(shared), K + np.arange(K - shared)])
    r_target = r_target_pool[target_ids]

    label_rng = rng.split(LABELS)
    source_labels = _labels(config.source_samples, True, label_rng.split(0))
    target_labels = _labels(config.target_samples, config.balanced, label_rng.split(1))
    test_labels = _labels(config.num_test, config.balanced, label_rng.split(2))

    gene_ids = [f"gene{v:05d}" for v in range(V)]
    domains, true_phi, true_theta, true_r, true_p, true_c = [], [], [], [], [], []
    if config.source_samples > 0:
        theta, p, c, counts = _draw_samples(source_phi, r_source, source_labels, config, rng.split(SOURCE_SAMPLES))
        domains.append(DomainCounts.from_dense(
            "source", counts, gene_ids=gene_ids, labels=source_labels,
            sample_ids=[f"source_{j:04d}" for j in range(config.source_samples)]))
        true_phi.append(source_phi)
        true_theta.append(theta)
        true_r.append(r_source)
        true_p.append(p)
        true_c.append(c)

    theta, p, c, counts = _draw_samples(target_phi, r_target, target_labels, config, rng.split(TARGET_SAMPLES))
    domains.append(DomainCounts.from_dense(
        "target", counts, gene_ids=gene_ids, labels=target_labels, role="target",
        sample_ids=[f"target_{j:04d}" for j in range(config.target_samples)]))
    true_phi.append(target_phi)
    true_theta.append(theta)
    true_r.append(r_target)
    true_p.append(p)
    true_c.append(c)

    test_theta, _, _, test_counts = _draw_samples(target_phi, r_target, test_labels, config, rng.split(TEST_SAMPLES))
    test = DomainCounts.from_dense(
        "target_test", test_counts, gene_ids=gene_ids, labels=test_labels, role="target",
        sample_ids=[f"test_{j:04d}" for j in range(config.num_test)])

    return SynthDataset(
        tensor=CountTensor(domains=domains, target_index=len(domains) - 1),
        test=test,
        true_phi=true_phi,
        true_theta=true_theta,
        true_r=true_r,
        true_p=true_p,
        true_c=true_c,
        shared_mask=shared_mask,
        labels=target_labels,
        test_theta=test_theta,
        masses={"gamma0": gamma0, "c0": c0, "c_d": c_d if config.source_samples > 0 else c_d[1:], "s": s},
    )
