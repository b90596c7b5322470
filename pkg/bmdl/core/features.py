"""
Feature extraction for target-domain samples against frozen global factors.

phi, r (and c_d, through r) stay fixed. Each sample runs its own blocked Gibbs
chain over its locals: sub-counts, theta_.j, p_j and c_j. Sample j draws only
from ``rng.split(j)``, so results do not depend on which other samples are
extracted alongside it.
"""

from typing import Optional

import numpy as np

from .dist import GammaParams, RandomStream, beta_draws, gamma_draws, sample_crt_counts, sample_gamma
from .errors import GeneAxisMismatchError, PreconditionError
from ..models.config import Hyperparameters, ModelVariant
from ..models.state import DomainCounts, FeatureMatrix, FrozenFactors


def check_gene_axis(samples: DomainCounts, frozen: FrozenFactors) -> None:
    if samples.num_genes != frozen.phi.shape[0]:
        raise GeneAxisMismatchError(
            f"samples have {samples.num_genes} genes, the fitted factors have {frozen.phi.shape[0]}")
    if frozen.gene_ids and list(samples.gene_ids) != list(frozen.gene_ids):
        first = next(i for i, (a, b) in enumerate(zip(samples.gene_ids, frozen.gene_ids)) if a != b)
        raise GeneAxisMismatchError(
            f"gene axis differs from the fitted factors at position {first}: "
            f"{samples.gene_ids[first]!r} != {frozen.gene_ids[first]!r}")


def extract_sample(genes: np.ndarray, counts: np.ndarray, frozen: FrozenFactors, hp: Hyperparameters,
                   variant: ModelVariant, iters: int, collect_last: int, rng: RandomStream) -> np.ndarray:
    """Posterior mean of theta_.j over the last ``collect_last`` of ``iters`` sweeps."""
    phi, r = frozen.phi, frozen.r_target
    K = phi.shape[1]
    phi_rows = phi[genes]
    total = float(counts.sum())

    c = 1.0 if variant.pins_c_j else sample_gamma(GammaParams(hp.e0, 1.0 / hp.f0), rng)
    p = 0.5 if variant.pins_p else float(beta_draws(hp.a0, hp.b0, rng))
    theta = gamma_draws(r, 1.0 / c, rng)

    theta_sum = np.zeros(K)
    start = iters - collect_last
    for it in range(iters):
        ell_k = np.zeros(K, dtype=np.int64)
        if genes.size:
            rates = phi_rows @ theta
            ell, _ = sample_crt_counts(counts, rates, rng, cutoff=hp.crt_cutoff)
            active = ell > 0
            if active.any():
                weights = phi_rows[active] * theta[None, :]
                probs = weights / weights.sum(axis=1, keepdims=True)
                ell_k = rng.generator.multinomial(ell[active], probs).sum(axis=0)
        q = -np.log1p(-p)
        theta = gamma_draws(r + ell_k, 1.0 / (c + q), rng)
        if not variant.pins_p:
            p = float(beta_draws(hp.a0 + total, hp.b0 + theta.sum(), rng))
        if not variant.pins_c_j:
            c = sample_gamma(GammaParams(hp.e0 + float(r.sum()), 1.0 / (hp.f0 + theta.sum())), rng)
        if it >= start:
            theta_sum += theta
    return theta_sum / collect_last


def extract(samples: DomainCounts, frozen: FrozenFactors, iters: int = 1000, collect_last: int = 500,
            rng: Optional[RandomStream] = None) -> FeatureMatrix:
    """
    Factor scores theta_bar (J x K) for every sample of ``samples``.

    Raises:
        PreconditionError: collect_last outside [1, iters]
        GeneAxisMismatchError: samples and factors disagree on genes
    """
    if iters < 1 or not 1 <= collect_last <= iters:
        raise PreconditionError(f"need 1 <= collect_last ({collect_last}) <= iters ({iters})")
    check_gene_axis(samples, frozen)
    rng = rng or RandomStream(0)
    hp = frozen.hyperparameters
    variant = ModelVariant(frozen.variant)
    if variant.target_only:
        variant = ModelVariant.BMDL

    order = np.argsort(samples.samples, kind="stable")
    bounds = np.searchsorted(samples.samples[order], np.arange(samples.num_samples + 1))
    theta_bar = np.zeros((samples.num_samples, frozen.phi.shape[1]))
    for j in range(samples.num_samples):
        idx = order[bounds[j]:bounds[j + 1]]
        theta_bar[j] = extract_sample(samples.genes[idx], samples.counts[idx], frozen, hp, variant,
                                      iters, collect_last, rng.split(j))
    return FeatureMatrix(theta_bar=theta_bar, sample_ids=list(samples.sample_ids),
                         labels=None if samples.labels is None else samples.labels.copy())
