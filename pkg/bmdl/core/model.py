"""
Count-tensor validation, prior draws and the joint density of the model.

Generative story, per domain d, gene v, sample j:

    n_vj ~ NB(sum_k phi_vk theta_kj, p_j)
    theta_kj ~ Gamma(r_kd, 1/c_j),   r_kd ~ Gamma(z_kd s_k, 1/c_d)
    z_kd ~ Bernoulli(pi_k),          pi_k ~ Beta(c/K, c(1 - 1/K))
    s_k ~ Gamma(gamma0/K, 1/c0),     phi_k ~ Dir(eta, ..., eta)
"""

from typing import Iterable, Optional

import numpy as np
from scipy import special

from .dist import (
    BETA_EPS,
    TINY,
    GammaParams,
    RandomStream,
    beta_draws,
    dirichlet_columns,
    gamma_draws,
    sample_gamma,
)
from .errors import PreconditionError
from ..models.config import Hyperparameters, ModelVariant
from ..models.state import CountTensor, LatentState, ValidationReport, Violation

# ancestral order: every variable comes after its parents
PRIOR_ORDER = ("gamma0", "c0", "eta", "s", "pi", "z", "c_d", "r", "phi", "p", "c_j", "theta")

_RATE_CHUNK = 1 << 22


def validate(tensor: CountTensor) -> ValidationReport:
    """Collect every structural problem of ``tensor``; an empty report means valid."""
    report = ValidationReport()
    add = report.violations.append
    if not tensor.domains:
        add(Violation("empty_tensor", "tensor has no domains"))
        return report
    reference = list(tensor.domains[0].gene_ids)
    if not reference:
        add(Violation("empty_gene_axis", "tensor has no genes"))
    if len(set(reference)) != len(reference):
        add(Violation("duplicate_gene", "gene ids are not unique"))

    for d, domain in enumerate(tensor.domains):
        if list(domain.gene_ids) != reference:
            add(Violation("gene_axis_mismatch",
                          f"domain {d} ({domain.name}) does not share the gene axis of domain 0", domain=d))
        if domain.num_samples == 0:
            add(Violation("empty_domain", f"domain {d} ({domain.name}) has no samples", domain=d))
        if not domain.genes.shape == domain.samples.shape == domain.counts.shape:
            add(Violation("malformed_entries", f"domain {d} entry arrays differ in length", domain=d))
            continue
        if domain.nnz == 0:
            continue
        in_range = ((domain.genes >= 0) & (domain.genes < domain.num_genes)
                    & (domain.samples >= 0) & (domain.samples < domain.num_samples))
        if not in_range.all():
            add(Violation("index_out_of_range", f"domain {d} has entries outside its V x J shape", domain=d))
            continue
        for i in np.flatnonzero(domain.counts < 0):
            v, j = int(domain.genes[i]), int(domain.samples[i])
            add(Violation("negative_count", f"count {int(domain.counts[i])} at (d={d}, v={v}, j={j})",
                          domain=d, gene=v, sample=j))
        for i in np.flatnonzero(domain.counts == 0):
            add(Violation("zero_entry", f"stored zero at (d={d}, v={int(domain.genes[i])}, "
                          f"j={int(domain.samples[i])})", domain=d, gene=int(domain.genes[i]),
                          sample=int(domain.samples[i])))
        keys = domain.samples * max(domain.num_genes, 1) + domain.genes
        if np.unique(keys).size != keys.size:
            add(Violation("duplicate_entry", f"domain {d} stores a (gene, sample) pair twice", domain=d))
        if domain.labels is not None and len(domain.labels) != domain.num_samples:
            add(Violation("label_coverage", f"domain {d} has {len(domain.labels)} labels for "
                          f"{domain.num_samples} samples", domain=d))
    return report


def entry_rates(phi: np.ndarray, theta: np.ndarray, genes: np.ndarray, samples: np.ndarray) -> np.ndarray:
    """sum_k phi[v, k] theta[k, j] for every stored (v, j) entry."""
    out = np.empty(genes.size)
    step = max(1, _RATE_CHUNK // max(phi.shape[1], 1))
    for start in range(0, genes.size, step):
        g = genes[start:start + step]
        j = samples[start:start + step]
        out[start:start + step] = np.einsum("ik,ki->i", phi[g], theta[:, j])
    return out


def sample_pi(successes: np.ndarray, failures: np.ndarray, hp: Hyperparameters, rng: RandomStream) -> np.ndarray:
    """Beta(c/K + successes, c(1 - 1/K) + failures); K = 1 is the point mass at 1."""
    if hp.K == 1:
        return np.full(np.shape(successes), 1.0 - BETA_EPS)
    a = hp.c_ibp / hp.K + np.asarray(successes, dtype=float)
    b = hp.c_ibp * (1.0 - 1.0 / hp.K) + np.asarray(failures, dtype=float)
    return beta_draws(a, b, rng)


def _empty_state(tensor: CountTensor, K: int) -> LatentState:
    D = tensor.D
    return LatentState(
        phi=np.full((tensor.V, K), 1.0 / tensor.V),
        theta=[np.zeros((K, J)) for J in tensor.J],
        r=np.zeros((K, D)),
        s=np.zeros(K),
        z=np.ones((K, D), dtype=np.int64),
        pi=np.full(K, 0.5),
        p=[np.full(J, 0.5) for J in tensor.J],
        c_j=[np.ones(J) for J in tensor.J],
        c_d=np.ones(D),
        c0=1.0,
        gamma0=1.0,
        eta=1.0,
    )


def draw_prior(state: LatentState, hp: Hyperparameters, variant: ModelVariant, rng: RandomStream,
               variables: Optional[Iterable[str]] = None) -> LatentState:
    """
    Redraw ``variables`` (default: all) from the prior given the rest of ``state``.

    Draws follow ``PRIOR_ORDER`` so a redrawn child sees its redrawn parents.
    Variant pins are applied in place of the corresponding draws.
    """
    wanted = set(PRIOR_ORDER if variables is None else variables)
    unknown = wanted - set(PRIOR_ORDER)
    if unknown:
        raise PreconditionError(f"unknown latent variables: {sorted(unknown)}")
    K, D, V = state.K, state.D, state.V

    for name in PRIOR_ORDER:
        if name not in wanted:
            continue
        if name == "gamma0":
            state.gamma0 = sample_gamma(GammaParams(hp.a0, 1.0 / hp.b0), rng)
        elif name == "c0":
            state.c0 = sample_gamma(GammaParams(hp.s0, 1.0 / hp.t0), rng)
        elif name == "eta":
            state.eta = sample_gamma(GammaParams(hp.s0, 1.0 / hp.w0), rng)
        elif name == "s":
            state.s = gamma_draws(np.full(K, state.gamma0 / K), 1.0 / state.c0, rng)
        elif name == "pi":
            state.pi = sample_pi(np.zeros(K), np.zeros(K), hp, rng)
        elif name == "z":
            if variant.pins_z:
                state.z = np.ones((K, D), dtype=np.int64)
            else:
                state.z = (rng.generator.random((K, D)) < state.pi[:, None]).astype(np.int64)
        elif name == "c_d":
            state.c_d = gamma_draws(np.full(D, hp.h0), 1.0 / hp.u0, rng)
        elif name == "r":
            state.r = gamma_draws(state.z * state.s[:, None], 1.0 / state.c_d[None, :], rng)
        elif name == "phi":
            state.phi = dirichlet_columns(np.full((V, K), state.eta), rng)
        elif name == "p":
            if variant.pins_p:
                state.p = [np.full(p.size, 0.5) for p in state.p]
            else:
                state.p = [beta_draws(np.full(p.size, hp.a0), hp.b0, rng) for p in state.p]
        elif name == "c_j":
            if variant.pins_c_j:
                state.c_j = [np.ones(c.size) for c in state.c_j]
            else:
                state.c_j = [gamma_draws(np.full(c.size, hp.e0), 1.0 / hp.f0, rng) for c in state.c_j]
        elif name == "theta":
            state.theta = [
                gamma_draws(np.broadcast_to(state.r[:, d:d + 1], (K, state.c_j[d].size)),
                            1.0 / state.c_j[d][None, :], rng)
                for d in range(D)
            ]
    return state


def init_state(tensor: CountTensor, hp: Hyperparameters, variant: ModelVariant,
               rng: RandomStream) -> LatentState:
    """Draw every latent variable from its prior, then apply the variant's pins."""
    report = validate(tensor)
    if not report.is_valid:
        raise PreconditionError(f"invalid count tensor: {report.violations[0].message}")
    return draw_prior(_empty_state(tensor, hp.K), hp, variant, rng)


def _gamma_logpdf(x, shape, scale) -> float:
    x, shape, scale = np.broadcast_arrays(np.asarray(x, float), np.asarray(shape, float), np.asarray(scale, float))
    point_mass = shape == 0
    if np.any(x[point_mass] != 0) or np.any(x[~point_mass] <= 0):
        return -np.inf
    a, xs, sc = shape[~point_mass], x[~point_mass], scale[~point_mass]
    return float(np.sum((a - 1.0) * np.log(xs) - xs / sc - a * np.log(sc) - special.gammaln(a)))


def _beta_logpdf(x, a, b) -> float:
    x, a, b = np.broadcast_arrays(np.asarray(x, float), np.asarray(a, float), np.asarray(b, float))
    if np.any((x <= 0) | (x >= 1)):
        return -np.inf
    return float(np.sum((a - 1.0) * np.log(x) + (b - 1.0) * np.log1p(-x) - special.betaln(a, b)))


def log_joint(tensor: CountTensor, state: LatentState, hp: Hyperparameters,
              variant: ModelVariant = ModelVariant.BMDL) -> float:
    """
    Un-normalized log joint density of counts and latent state.

    Counts enter through the NB marginal of their sub-counts. Pinned
    coordinates and point masses add 0 when consistent and make the
    result -inf otherwise. phi entries are floored at the smallest positive
    double inside the Dirichlet log density.
    """
    K, D = hp.K, tensor.D
    if state.phi.shape != (tensor.V, K) or state.r.shape != (K, D):
        raise PreconditionError("state shape does not match tensor and hyperparameters")
    if np.any(state.phi < 0) or not np.allclose(state.phi.sum(axis=0), 1.0, rtol=0, atol=1e-9):
        raise PreconditionError("phi columns must be non-negative and sum to 1")

    total = 0.0
    for d, domain in enumerate(tensor.domains):
        theta, p = state.theta[d], state.p[d]
        total += float(np.sum(np.log1p(-p) * theta.sum(axis=0)))
        if domain.nnz:
            shape = entry_rates(state.phi, theta, domain.genes, domain.samples)
            if np.any(shape <= 0):
                return -np.inf
            n = domain.counts.astype(float)
            total += float(np.sum(special.gammaln(n + shape) - special.gammaln(shape)
                                  - special.gammaln(n + 1.0) + n * np.log(p[domain.samples])))

    V = tensor.V
    log_phi = np.log(np.maximum(state.phi, TINY))
    total += K * (special.gammaln(V * state.eta) - V * special.gammaln(state.eta))
    total += float((state.eta - 1.0) * log_phi.sum())

    for d in range(D):
        total += _gamma_logpdf(state.theta[d], state.r[:, d:d + 1], 1.0 / state.c_j[d][None, :])
        if variant.pins_p:
            total += 0.0 if np.all(state.p[d] == 0.5) else -np.inf
        else:
            total += _beta_logpdf(state.p[d], hp.a0, hp.b0)
        if variant.pins_c_j:
            total += 0.0 if np.all(state.c_j[d] == 1.0) else -np.inf
        else:
            total += _gamma_logpdf(state.c_j[d], hp.e0, 1.0 / hp.f0)

    total += _gamma_logpdf(state.r, state.z * state.s[:, None], 1.0 / state.c_d[None, :])
    if variant.pins_z:
        total += 0.0 if np.all(state.z == 1) else -np.inf
    else:
        total += float(np.sum(state.z * np.log(state.pi)[:, None] + (1 - state.z) * np.log1p(-state.pi)[:, None]))
        if K == 1:
            total += 0.0 if np.all(state.pi >= 1.0 - BETA_EPS) else -np.inf
        else:
            total += _beta_logpdf(state.pi, hp.c_ibp / K, hp.c_ibp * (1.0 - 1.0 / K))

    total += _gamma_logpdf(state.s, state.gamma0 / K, 1.0 / state.c0)
    total += _gamma_logpdf(state.c_d, hp.h0, 1.0 / hp.u0)
    total += _gamma_logpdf(state.c0, hp.s0, 1.0 / hp.t0)
    total += _gamma_logpdf(state.gamma0, hp.a0, 1.0 / hp.b0)
    total += _gamma_logpdf(state.eta, hp.s0, 1.0 / hp.w0)
    return float(total)


def expected_counts(state: LatentState, domain: int) -> np.ndarray:
    """Depth-adjusted mean expression sum_k phi_vk theta_kj p_j / (1 - p_j)."""
    p = state.p[domain]
    return (state.phi @ state.theta[domain]) * (p / (1.0 - p))[None, :]
