"""
Closed-form Gibbs conditionals of the multi-domain NB factor model.

Augmentation chain (all CRT draws use the configured cutoff):

    l_vj      ~ CRT(n_vj, sum_k phi_vk theta_kj), split multinomially over k
    l~_jk     ~ CRT(l_.jk, r_kd)            theta integrated out
    l~~_kd    ~ CRT(l~_.k, z_kd s_k)         r integrated out
    l'_k      ~ CRT(sum_d l~~_kd, gamma0/K)  s integrated out

With q_j = -ln(1 - p_j), q~_j = ln(1 + q_j / c_j) and Q_d = ln(1 + sum_j q~_j / c_d)
every scale below is written in the additive-positive form 1 / (rate + log term).
"""

from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .dist import (
    GammaParams,
    RandomStream,
    beta_draws,
    dirichlet_columns,
    gamma_draws,
    sample_crt_counts,
    sample_gamma,
)
from .model import entry_rates, sample_pi
from .orchestrator import SweepContext, SweepOrchestrator
from ..models.config import Hyperparameters, ModelVariant
from ..models.state import AugmentedCounts, CountTensor, LatentState

_SPLIT_CHUNK = 1 << 22

# blocked order: each collapsed draw happens before the variable it integrates out is redrawn
SWEEP_ORDER = ("latent_counts", "eta", "phi", "tables", "gamma0", "s", "z", "r", "theta", "pi", "p", "scales")


def sample_latent_counts(tensor: CountTensor, state: LatentState, hp: Hyperparameters,
                         rng: RandomStream, keep_split: bool = False) -> AugmentedCounts:
    """Draw l_vj for every stored entry and split it over factors."""
    K, V = state.K, state.V
    ell_vk = np.zeros((V, K), dtype=np.int64)
    ells, ell_jks, q_js = [], [], []
    splits: Optional[List[np.ndarray]] = [] if keep_split else None
    degenerate = 0
    draws = 0
    step = max(1, _SPLIT_CHUNK // K)

    for d, domain in enumerate(tensor.domains):
        rates = entry_rates(state.phi, state.theta[d], domain.genes, domain.samples)
        degenerate += int(np.count_nonzero((rates <= 0) & (domain.counts > 0)))
        ell, used = sample_crt_counts(domain.counts, np.maximum(rates, 0.0), rng, cutoff=hp.crt_cutoff)
        draws += used

        ell_jk = np.zeros((K, domain.num_samples), dtype=np.int64)
        split_d = np.zeros((domain.nnz, K), dtype=np.int64) if keep_split else None
        active = np.flatnonzero(ell > 0)
        for start in range(0, active.size, step):
            idx = active[start:start + step]
            g, j = domain.genes[idx], domain.samples[idx]
            weights = state.phi[g] * state.theta[d][:, j].T
            probs = weights / weights.sum(axis=1, keepdims=True)
            split = rng.generator.multinomial(ell[idx], probs)
            np.add.at(ell_vk, g, split)
            np.add.at(ell_jk.T, j, split)
            if split_d is not None:
                split_d[idx] = split

        ells.append(ell)
        ell_jks.append(ell_jk)
        q_js.append(-np.log1p(-state.p[d]))
        if splits is not None:
            splits.append(split_d)

    return AugmentedCounts(ell=ells, ell_vk=ell_vk, ell_jk=ell_jks, q_j=q_js, ell_split=splits,
                           degenerate=degenerate, crt_draws=draws)


def log1p_ratio(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """ln(1 + a / b) for a >= 0, b > 0, without overflow when b is near TINY."""
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    with np.errstate(over="ignore", divide="ignore"):
        ratio = a / b
        return np.where(np.isfinite(ratio), np.log1p(ratio), np.log(a) - np.log(b))


def domain_log_terms(state: LatentState) -> Tuple[np.ndarray, np.ndarray]:
    """(sum_j q~_j per domain, Q_d per domain)."""
    q_tilde_sum = np.array([
        float(np.sum(log1p_ratio(-np.log1p(-p), c))) for p, c in zip(state.p, state.c_j)
    ])
    return q_tilde_sum, log1p_ratio(q_tilde_sum, state.c_d)


def _draw_ell_tilde(aug: AugmentedCounts, state: LatentState, hp: Hyperparameters, rng: RandomStream):
    tables = []
    for d, ell_jk in enumerate(aug.ell_jk):
        drawn, used = sample_crt_counts(ell_jk, np.broadcast_to(state.r[:, d:d + 1], ell_jk.shape), rng,
                                       cutoff=hp.crt_cutoff)
        aug.crt_draws += used
        tables.append(drawn)
    aug.ell_tilde = tables
    aug.ell_tilde2 = None
    aug.ell_acute = None


def _tilde_totals(aug: AugmentedCounts) -> np.ndarray:
    return np.stack([t.sum(axis=1) for t in aug.ell_tilde], axis=1)


def _draw_ell_tilde2(aug: AugmentedCounts, state: LatentState, hp: Hyperparameters, rng: RandomStream):
    if aug.ell_tilde is None:
        _draw_ell_tilde(aug, state, hp, rng)
    drawn, used = sample_crt_counts(_tilde_totals(aug), state.z * state.s[:, None], rng, cutoff=hp.crt_cutoff)
    aug.crt_draws += used
    aug.ell_tilde2 = drawn
    aug.ell_acute = None


def _draw_ell_acute(aug: AugmentedCounts, state: LatentState, hp: Hyperparameters, rng: RandomStream):
    if aug.ell_tilde2 is None:
        _draw_ell_tilde2(aug, state, hp, rng)
    drawn, used = sample_crt_counts(aug.ell_tilde2.sum(axis=1), state.gamma0 / hp.K, rng, cutoff=hp.crt_cutoff)
    aug.crt_draws += used
    aug.ell_acute = drawn


def propagate_tables(aug: AugmentedCounts, state: LatentState, hp: Hyperparameters,
                     rng: RandomStream) -> AugmentedCounts:
    """Upward CRT pass l -> l~ -> l~~ -> l'."""
    _draw_ell_tilde(aug, state, hp, rng)
    _draw_ell_tilde2(aug, state, hp, rng)
    _draw_ell_acute(aug, state, hp, rng)
    return aug


def update_eta(aug: AugmentedCounts, state: LatentState, hp: Hyperparameters, rng: RandomStream) -> float:
    """Resample eta with phi integrated out; factors without counts are skipped."""
    V, K = state.V, state.K
    totals = aug.ell_vk.sum(axis=0)
    used = totals > 0
    q = np.full(K, np.nan)
    u = np.zeros((V, K), dtype=np.int64)
    log_sum = 0.0
    if used.any():
        q[used] = beta_draws(totals[used], state.eta * V, rng)
        u[:, used], drawn = sample_crt_counts(aug.ell_vk[:, used], state.eta, rng, cutoff=hp.crt_cutoff)
        aug.crt_draws += drawn
        log_sum = float(np.sum(np.log1p(-q[used])))
    state.eta = sample_gamma(GammaParams(hp.s0 + float(u.sum()), 1.0 / (hp.w0 - V * log_sum)), rng)
    aug.q_aux = q
    aug.u_vk = u
    return state.eta


def update_phi(aug: AugmentedCounts, state: LatentState, hp: Hyperparameters, rng: RandomStream) -> np.ndarray:
    state.phi = dirichlet_columns(state.eta + aug.ell_vk, rng)
    return state.phi


def update_theta(aug: AugmentedCounts, state: LatentState, hp: Hyperparameters,
                 rng: RandomStream) -> List[np.ndarray]:
    for d, ell_jk in enumerate(aug.ell_jk):
        q = -np.log1p(-state.p[d])
        shape = state.r[:, d:d + 1] + ell_jk
        state.theta[d] = gamma_draws(shape, np.broadcast_to(1.0 / (state.c_j[d] + q), shape.shape), rng)
    return state.theta


def update_r(aug: AugmentedCounts, state: LatentState, hp: Hyperparameters,
             rng: RandomStream) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Resample r with theta integrated out; draws l~ first when absent."""
    if aug.ell_tilde is None:
        _draw_ell_tilde(aug, state, hp, rng)
    q_tilde_sum, _ = domain_log_terms(state)
    shape = state.z * state.s[:, None] + _tilde_totals(aug)
    scale = np.broadcast_to(1.0 / (state.c_d + q_tilde_sum), shape.shape)
    state.r = gamma_draws(shape, scale, rng)
    return state.r, aug.ell_tilde


def update_s(aug: AugmentedCounts, state: LatentState, hp: Hyperparameters,
             rng: RandomStream) -> Tuple[np.ndarray, np.ndarray]:
    """Resample s with r integrated out; only domains with z = 1 carry evidence."""
    if aug.ell_tilde2 is None:
        _draw_ell_tilde2(aug, state, hp, rng)
    _, Q = domain_log_terms(state)
    shape = state.gamma0 / hp.K + aug.ell_tilde2.sum(axis=1)
    rate = state.c0 + (state.z * Q[None, :]).sum(axis=1)
    state.s = gamma_draws(shape, 1.0 / rate, rng)
    return state.s, aug.ell_tilde2


def update_gamma0(aug: AugmentedCounts, state: LatentState, hp: Hyperparameters,
                  rng: RandomStream) -> Tuple[float, np.ndarray]:
    if aug.ell_acute is None:
        _draw_ell_acute(aug, state, hp, rng)
    _, Q = domain_log_terms(state)
    evidence = (state.z * Q[None, :]).sum(axis=1)
    # -ln(1 - P_k) with P_k = evidence / (c0 + evidence)
    rate = hp.b0 + float(np.sum(log1p_ratio(evidence, state.c0))) / hp.K
    state.gamma0 = sample_gamma(GammaParams(hp.a0 + float(aug.ell_acute.sum()), 1.0 / rate), rng)
    return state.gamma0, aug.ell_acute


def update_z(aug: AugmentedCounts, state: LatentState, hp: Hyperparameters, rng: RandomStream,
             variant: ModelVariant = ModelVariant.BMDL) -> np.ndarray:
    """
    z_kd = 1 when factor k seats any table in domain d, otherwise a Bernoulli
    weighing pi_k exp(-s_k Q_d) against 1 - pi_k.
    """
    if variant.pins_z:
        state.z = np.ones_like(state.z)
        return state.z
    if aug.ell_tilde is None:
        _draw_ell_tilde(aug, state, hp, rng)
    _, Q = domain_log_terms(state)
    keep = state.pi[:, None] * np.exp(-state.s[:, None] * Q[None, :])
    prob = keep / (keep + (1.0 - state.pi[:, None]))
    draws = rng.generator.random(state.z.shape) < prob
    state.z = np.where(_tilde_totals(aug) > 0, 1, draws).astype(np.int64)
    return state.z


def update_pi(state: LatentState, hp: Hyperparameters, rng: RandomStream) -> np.ndarray:
    active = state.z.sum(axis=1)
    state.pi = sample_pi(active, state.D - active, hp, rng)
    return state.pi


def update_p(tensor: CountTensor, state: LatentState, hp: Hyperparameters, rng: RandomStream,
             variant: ModelVariant = ModelVariant.BMDL) -> List[np.ndarray]:
    if variant.pins_p:
        return state.p
    for d, domain in enumerate(tensor.domains):
        state.p[d] = beta_draws(hp.a0 + domain.sample_totals(), hp.b0 + state.theta[d].sum(axis=0), rng)
    return state.p


def update_scales(aug: Optional[AugmentedCounts], state: LatentState, hp: Hyperparameters, rng: RandomStream,
                  variant: ModelVariant = ModelVariant.BMDL) -> Tuple[List[np.ndarray], np.ndarray, float]:
    """Gamma-gamma conjugate redraws of c_j, c_d and c0."""
    if not variant.pins_c_j:
        for d in range(state.D):
            J = state.c_j[d].size
            shape = np.full(J, hp.e0 + float(state.r[:, d].sum()))
            state.c_j[d] = gamma_draws(shape, 1.0 / (hp.f0 + state.theta[d].sum(axis=0)), rng)
    state.c_d = gamma_draws(hp.h0 + (state.z * state.s[:, None]).sum(axis=0), 1.0 / (hp.u0 + state.r.sum(axis=0)), rng)
    state.c0 = sample_gamma(GammaParams(hp.s0 + state.gamma0, 1.0 / (hp.t0 + float(state.s.sum()))), rng)
    return state.c_j, state.c_d, state.c0


# ---------------------------------------------------------------------------
# Sweep schedules
# ---------------------------------------------------------------------------

def _latent_counts_step(ctx: SweepContext):
    ctx.aug = sample_latent_counts(ctx.tensor, ctx.state, ctx.hp, ctx.rng, keep_split=ctx.keep_split)
    return ctx.aug


_STEP_FUNCTIONS = {
    "latent_counts": _latent_counts_step,
    "eta": lambda ctx: update_eta(ctx.aug, ctx.state, ctx.hp, ctx.rng),
    "phi": lambda ctx: update_phi(ctx.aug, ctx.state, ctx.hp, ctx.rng),
    "tables": lambda ctx: propagate_tables(ctx.aug, ctx.state, ctx.hp, ctx.rng),
    "gamma0": lambda ctx: update_gamma0(ctx.aug, ctx.state, ctx.hp, ctx.rng),
    "s": lambda ctx: update_s(ctx.aug, ctx.state, ctx.hp, ctx.rng),
    "z": lambda ctx: update_z(ctx.aug, ctx.state, ctx.hp, ctx.rng, ctx.variant),
    "r": lambda ctx: update_r(ctx.aug, ctx.state, ctx.hp, ctx.rng),
    "theta": lambda ctx: update_theta(ctx.aug, ctx.state, ctx.hp, ctx.rng),
    "pi": lambda ctx: update_pi(ctx.state, ctx.hp, ctx.rng),
    "p": lambda ctx: update_p(ctx.tensor, ctx.state, ctx.hp, ctx.rng, ctx.variant),
    "scales": lambda ctx: update_scales(ctx.aug, ctx.state, ctx.hp, ctx.rng, ctx.variant),
}


def schedule_steps(variant: ModelVariant, fix_pi: bool = False, fix_scales: bool = False,
                   steps: Optional[Iterable[str]] = None) -> List[str]:
    """Steps a sweep runs for ``variant``, in sweep order."""
    wanted = set(SWEEP_ORDER if steps is None else steps)
    unknown = wanted - set(SWEEP_ORDER)
    if unknown:
        raise ValueError(f"unknown sweep steps: {sorted(unknown)}")
    if variant.pins_z:
        wanted -= {"z", "pi"}
    if variant.pins_p:
        wanted.discard("p")
    if fix_pi:
        wanted.discard("pi")
    if fix_scales:
        wanted.discard("scales")
    return [name for name in SWEEP_ORDER if name in wanted]


def build_schedule(variant: ModelVariant = ModelVariant.BMDL, fix_pi: bool = False, fix_scales: bool = False,
                   steps: Optional[Sequence[str]] = None, verbose: bool = False) -> SweepOrchestrator:
    """Orchestrator whose steps form a chain in sweep order."""
    orchestrator = SweepOrchestrator(verbose=verbose)
    previous: Optional[str] = None
    for name in schedule_steps(variant, fix_pi, fix_scales, steps):
        orchestrator.register_step(name, _STEP_FUNCTIONS[name], [previous] if previous else None)
        previous = name
    return orchestrator


def sweep(tensor: CountTensor, state: LatentState, hp: Hyperparameters, variant: ModelVariant,
          rng: RandomStream, fix_pi: bool = False, fix_scales: bool = False, keep_split: bool = False,
          schedule: Optional[SweepOrchestrator] = None) -> AugmentedCounts:
    """One full Gibbs sweep; updates ``state`` in place and returns the sweep's augmentation."""
    if schedule is None:
        schedule = build_schedule(variant, fix_pi, fix_scales)
    context = SweepContext(tensor=tensor, state=state, hp=hp, variant=variant, rng=rng, keep_split=keep_split)
    schedule.execute(context)
    if context.aug is None:
        context.aug = AugmentedCounts(ell=[], ell_vk=np.zeros((state.V, state.K), dtype=np.int64),
                                      ell_jk=[], q_j=[])
    return context.aug
