"""
Joint-distribution ("getting it right") test of the sweep conditionals.

Two simulators of p(latents, counts) are compared on a tiny instance:

    forward     draw the block's latent variables from the prior, then counts
    successive  alternate one pass of the block's conditionals with a fresh
                draw of counts given the current latents

Latent variables outside the block stay at one base state drawn from the prior,
so every block is tested against its own conditional target. Any bug in a
conditional (or in the sweep order) shifts the successive-conditional marginals.
"""

from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from .dist import RandomStream, nb_draws
from .gibbs import SWEEP_ORDER, build_schedule
from .model import PRIOR_ORDER, draw_prior, init_state
from .orchestrator import SweepContext
from ..models.config import Hyperparameters, ModelVariant
from ..models.report import GewekeReport, GewekeStatistic
from ..models.state import CountTensor, LatentState

GEWEKE_BATCHES = 50


@dataclass(frozen=True)
class GewekeBlock:
    steps: Tuple[str, ...]
    forward: Tuple[str, ...]


# a collapsed conditional is tested together with redraws of the variables it integrates out
GEWEKE_BLOCKS: Dict[str, GewekeBlock] = {
    "full": GewekeBlock(SWEEP_ORDER, PRIOR_ORDER),
    "phi": GewekeBlock(("latent_counts", "phi"), ("phi",)),
    "eta": GewekeBlock(("latent_counts", "eta", "phi"), ("eta", "phi")),
    "theta": GewekeBlock(("latent_counts", "theta"), ("theta",)),
    "r": GewekeBlock(("latent_counts", "r", "theta"), ("r", "theta")),
    "z": GewekeBlock(("latent_counts", "z", "r", "theta"), ("z", "r", "theta")),
    "s": GewekeBlock(("latent_counts", "tables", "s", "r", "theta"), ("s", "r", "theta")),
    "gamma0": GewekeBlock(("latent_counts", "tables", "gamma0", "s", "r", "theta"), ("gamma0", "s", "r", "theta")),
    "hierarchy": GewekeBlock(("latent_counts", "tables", "gamma0", "s", "z", "r", "theta"),
                             ("gamma0", "s", "z", "r", "theta")),
    "pi": GewekeBlock(("latent_counts", "tables", "z", "r", "theta", "pi"), ("pi", "z", "r", "theta")),
    "p": GewekeBlock(("p",), ("p",)),
    "scales": GewekeBlock(("latent_counts", "tables", "s", "r", "theta", "scales"),
                          ("c0", "c_d", "c_j", "s", "r", "theta")),
}

# name -> (extractor, positive-valued)
STATISTICS: Dict[str, Tuple[Callable[[LatentState, CountTensor], float], bool]] = {
    "gamma0": (lambda s, t: s.gamma0, True),
    "eta": (lambda s, t: s.eta, True),
    "c0": (lambda s, t: s.c0, True),
    "s1": (lambda s, t: float(s.s[0]), True),
    "pi1": (lambda s, t: float(s.pi[0]), False),
    "p11": (lambda s, t: float(s.p[0][0]), False),
    "c11": (lambda s, t: float(s.c_j[0][0]), True),
    "r11": (lambda s, t: float(s.r[0, 0]), True),
    "total": (lambda s, t: float(sum(int(d.counts.sum()) for d in t.domains)), True),
}


def simulate_counts(state: LatentState, gene_ids: Sequence[str], rng: RandomStream) -> CountTensor:
    """Counts n_vj ~ NB(sum_k phi_vk theta_kj, p_j) for every domain."""
    matrices = [nb_draws(state.phi @ state.theta[d], state.p[d], rng) for d in range(state.D)]
    return CountTensor.from_dense(matrices, gene_ids=gene_ids)


def _record(state: LatentState, tensor: CountTensor, transform: bool) -> np.ndarray:
    values = []
    for extract, positive in STATISTICS.values():
        x = extract(state, tensor)
        values.append(x / (1.0 + x) if transform and positive else x)
    return np.asarray(values)


def batch_means_se(samples: np.ndarray, batches: int = GEWEKE_BATCHES) -> np.ndarray:
    """Standard error of the mean of a correlated sequence, per column."""
    n = samples.shape[0] // batches * batches
    if n < batches or batches < 2:
        return samples.std(axis=0, ddof=1) / np.sqrt(samples.shape[0])
    means = samples[:n].reshape(batches, -1, samples.shape[1]).mean(axis=1)
    return means.std(axis=0, ddof=1) / np.sqrt(batches)


def _z_scores(mean_a, se_a, mean_b, se_b) -> np.ndarray:
    diff = mean_a - mean_b
    denom = np.sqrt(se_a ** 2 + se_b ** 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = diff / denom
    return np.where(denom > 0, z, np.where(diff == 0, 0.0, np.inf))


def geweke_test(hp: Hyperparameters, V: int = 5, J: Sequence[int] = (3, 3), rounds: int = 10_000,
                block: str = "full", rng: Optional[RandomStream] = None,
                variant: ModelVariant = ModelVariant.BMDL, thin: int = 1, threshold: float = 3.0,
                transform: bool = True) -> GewekeReport:
    """
    Compare forward and successive-conditional marginals for one sweep block.

    Args:
        hp: Hyperparameters (K is the truncation level of the tiny instance)
        V: Number of genes
        J: Samples per domain
        rounds: Draws per simulator
        block: Key of ``GEWEKE_BLOCKS``
        rng: Random stream; seed 0 when omitted
        variant: Model variant whose pins apply to both simulators
        thin: Conditional passes (each followed by a count redraw) per recorded draw
        threshold: Largest |z| that still passes
        transform: Map positive statistics through x / (1 + x)

    Returns:
        GewekeReport: one z-score per statistic
    """
    if block not in GEWEKE_BLOCKS:
        raise ValueError(f"unknown block {block!r}; choose from {sorted(GEWEKE_BLOCKS)}")
    if rounds < 2 or thin < 1:
        raise ValueError("rounds must be >= 2 and thin >= 1")
    rng = rng or RandomStream(0)
    spec = GEWEKE_BLOCKS[block]
    gene_ids = [f"g{v}" for v in range(V)]
    blank = CountTensor.from_dense([np.zeros((V, j), dtype=np.int64) for j in J], gene_ids=gene_ids)
    base = init_state(blank, hp, variant, rng.split(0))

    forward_rng = rng.split(1)
    forward = np.empty((rounds, len(STATISTICS)))
    for i in range(rounds):
        state = draw_prior(base.copy(), hp, variant, forward_rng, spec.forward)
        forward[i] = _record(state, simulate_counts(state, gene_ids, forward_rng), transform)

    gibbs_rng = rng.split(2)
    schedule = build_schedule(variant, steps=spec.steps)
    state = draw_prior(base.copy(), hp, variant, gibbs_rng, spec.forward)
    tensor = simulate_counts(state, gene_ids, gibbs_rng)
    successive = np.empty_like(forward)
    for i in range(rounds):
        for _ in range(thin):
            schedule.execute(SweepContext(tensor=tensor, state=state, hp=hp, variant=variant, rng=gibbs_rng))
            tensor = simulate_counts(state, gene_ids, gibbs_rng)
        successive[i] = _record(state, tensor, transform)

    f_mean, f_se = forward.mean(axis=0), forward.std(axis=0, ddof=1) / np.sqrt(rounds)
    g_mean, g_se = successive.mean(axis=0), batch_means_se(successive)
    z = _z_scores(f_mean, f_se, g_mean, g_se)
    statistics = [
        GewekeStatistic(name=name, forward_mean=float(f_mean[i]), forward_se=float(f_se[i]),
                        gibbs_mean=float(g_mean[i]), gibbs_se=float(g_se[i]), z_score=float(z[i]))
        for i, name in enumerate(STATISTICS)
    ]
    return GewekeReport(block=block, rounds=rounds, threshold=threshold, statistics=statistics)
