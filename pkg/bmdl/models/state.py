"""
Plain dataclass containers for count data, sampler state and chain output.

These stay free of pydantic: they hold numpy arrays that are rewritten every
sweep, so validation happens in explicit ``validate``/``check_invariants``
calls instead of on assignment.
"""

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np


@dataclass
class DomainCounts:
    """One domain's V x J count matrix stored as (gene, sample, count) triples."""
    name: str
    gene_ids: List[str]
    sample_ids: List[str]
    genes: np.ndarray
    samples: np.ndarray
    counts: np.ndarray
    labels: Optional[np.ndarray] = None
    role: str = "source"

    @property
    def num_genes(self) -> int:
        return len(self.gene_ids)

    @property
    def num_samples(self) -> int:
        return len(self.sample_ids)

    @property
    def nnz(self) -> int:
        return int(self.counts.size)

    @classmethod
    def from_dense(cls, name: str, matrix: np.ndarray, gene_ids: Optional[Sequence[str]] = None,
                   sample_ids: Optional[Sequence[str]] = None, labels: Optional[Sequence[int]] = None,
                   role: str = "source") -> "DomainCounts":
        """Build from a dense V x J matrix; entries are ordered sample-major."""
        matrix = np.asarray(matrix)
        num_genes, num_samples = matrix.shape
        samples, genes = np.nonzero(matrix.T)
        return cls(
            name=name,
            gene_ids=list(gene_ids) if gene_ids is not None else [f"g{v}" for v in range(num_genes)],
            sample_ids=list(sample_ids) if sample_ids is not None else [f"{name}_s{j}" for j in range(num_samples)],
            genes=genes.astype(np.int64),
            samples=samples.astype(np.int64),
            counts=matrix.T[samples, genes].astype(np.int64),
            labels=None if labels is None else np.asarray(labels, dtype=np.int64),
            role=role,
        )

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.num_genes, self.num_samples), dtype=np.int64)
        np.add.at(dense, (self.genes, self.samples), self.counts)
        return dense

    def sample_totals(self) -> np.ndarray:
        return np.bincount(self.samples, weights=self.counts, minlength=self.num_samples)

    def gene_totals(self) -> np.ndarray:
        return np.bincount(self.genes, weights=self.counts, minlength=self.num_genes)

    def select_samples(self, indices: Sequence[int], name: Optional[str] = None,
                       role: Optional[str] = None) -> "DomainCounts":
        """New domain holding the given samples, in the given order."""
        indices = np.asarray(indices, dtype=np.int64)
        position = np.full(self.num_samples, -1, dtype=np.int64)
        position[indices] = np.arange(indices.size)
        keep = position[self.samples] >= 0
        new_samples = position[self.samples[keep]]
        order = np.lexsort((self.genes[keep], new_samples))
        return DomainCounts(
            name=name or self.name,
            gene_ids=list(self.gene_ids),
            sample_ids=[self.sample_ids[i] for i in indices],
            genes=self.genes[keep][order],
            samples=new_samples[order],
            counts=self.counts[keep][order],
            labels=None if self.labels is None else self.labels[indices],
            role=role or self.role,
        )

    def reindex_genes(self, gene_ids: Sequence[str]) -> "DomainCounts":
        """Project onto a new gene axis; genes not in ``gene_ids`` are dropped."""
        lookup = {gene: i for i, gene in enumerate(gene_ids)}
        mapping = np.array([lookup.get(gene, -1) for gene in self.gene_ids], dtype=np.int64)
        new_genes = mapping[self.genes] if self.genes.size else self.genes
        keep = new_genes >= 0
        order = np.lexsort((new_genes[keep], self.samples[keep]))
        return replace(
            self,
            gene_ids=list(gene_ids),
            genes=new_genes[keep][order],
            samples=self.samples[keep][order],
            counts=self.counts[keep][order],
        )


@dataclass
class GeneFilterReport:
    """Genes removed while assembling a tensor, by reason."""
    not_shared: Dict[str, List[str]] = field(default_factory=dict)
    not_allowlisted: List[str] = field(default_factory=list)
    low_count: List[str] = field(default_factory=list)

    @property
    def total_dropped(self) -> int:
        unshared = set()
        for genes in self.not_shared.values():
            unshared.update(genes)
        return len(unshared) + len(self.not_allowlisted) + len(self.low_count)


@dataclass
class CountTensor:
    """Ragged domains x genes x samples counts sharing one gene axis."""
    domains: List[DomainCounts]
    target_index: Optional[int] = None
    filter_report: Optional[GeneFilterReport] = None

    @property
    def gene_ids(self) -> List[str]:
        return self.domains[0].gene_ids if self.domains else []

    @property
    def V(self) -> int:
        return len(self.gene_ids)

    @property
    def D(self) -> int:
        return len(self.domains)

    @property
    def J(self) -> List[int]:
        return [domain.num_samples for domain in self.domains]

    @property
    def domain_names(self) -> List[str]:
        return [domain.name for domain in self.domains]

    @property
    def target(self) -> DomainCounts:
        if self.target_index is None:
            raise ValueError("tensor has no target domain")
        return self.domains[self.target_index]

    def subset_domains(self, indices: Sequence[int]) -> "CountTensor":
        indices = list(indices)
        target = None
        if self.target_index is not None and self.target_index in indices:
            target = indices.index(self.target_index)
        return CountTensor(domains=[self.domains[d] for d in indices], target_index=target,
                           filter_report=self.filter_report)

    def replace_domain(self, index: int, domain: DomainCounts) -> "CountTensor":
        domains = list(self.domains)
        domains[index] = domain
        return CountTensor(domains=domains, target_index=self.target_index,
                           filter_report=self.filter_report)

    @classmethod
    def from_dense(cls, matrices: Sequence[np.ndarray], gene_ids: Optional[Sequence[str]] = None,
                   names: Optional[Sequence[str]] = None, target_index: Optional[int] = None) -> "CountTensor":
        names = list(names) if names is not None else [f"domain{d}" for d in range(len(matrices))]
        domains = []
        for d, matrix in enumerate(matrices):
            role = "target" if d == target_index else "source"
            domains.append(DomainCounts.from_dense(names[d], matrix, gene_ids=gene_ids, role=role))
        return cls(domains=domains, target_index=target_index)

    def to_dense(self) -> List[np.ndarray]:
        return [domain.to_dense() for domain in self.domains]


@dataclass
class Violation:
    kind: str
    message: str
    domain: Optional[int] = None
    gene: Optional[int] = None
    sample: Optional[int] = None


@dataclass
class ValidationReport:
    violations: List[Violation] = field(default_factory=list)

    @property
    def is_valid(self) -> bool:
        return not self.violations

    def kinds(self) -> List[str]:
        return [violation.kind for violation in self.violations]

    def __len__(self) -> int:
        return len(self.violations)


@dataclass
class LatentState:
    """One assignment of every latent variable of the model."""
    phi: np.ndarray                 # V x K, column-stochastic
    theta: List[np.ndarray]         # per domain K x J_d
    r: np.ndarray                   # K x D
    s: np.ndarray                   # K
    z: np.ndarray                   # K x D, 0/1
    pi: np.ndarray                  # K
    p: List[np.ndarray]             # per domain J_d
    c_j: List[np.ndarray]           # per domain J_d
    c_d: np.ndarray                 # D
    c0: float
    gamma0: float
    eta: float

    @property
    def K(self) -> int:
        return int(self.phi.shape[1])

    @property
    def V(self) -> int:
        return int(self.phi.shape[0])

    @property
    def D(self) -> int:
        return int(self.r.shape[1])

    def copy(self) -> "LatentState":
        return LatentState(
            phi=self.phi.copy(),
            theta=[t.copy() for t in self.theta],
            r=self.r.copy(),
            s=self.s.copy(),
            z=self.z.copy(),
            pi=self.pi.copy(),
            p=[p.copy() for p in self.p],
            c_j=[c.copy() for c in self.c_j],
            c_d=self.c_d.copy(),
            c0=float(self.c0),
            gamma0=float(self.gamma0),
            eta=float(self.eta),
        )

    def arrays(self) -> Dict[str, np.ndarray]:
        """Flat name -> array view, used for checkpoints and equality checks."""
        out = {"phi": self.phi, "r": self.r, "s": self.s, "z": self.z, "pi": self.pi,
               "c_d": self.c_d, "scalars": np.array([self.c0, self.gamma0, self.eta])}
        for d in range(len(self.theta)):
            out[f"theta_{d}"] = self.theta[d]
            out[f"p_{d}"] = self.p[d]
            out[f"c_j_{d}"] = self.c_j[d]
        return out

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays().values())

    def check_invariants(self, pins_z: bool = False, pins_c_j: bool = False,
                         pins_p: bool = False) -> List[str]:
        """Names of violated state invariants; empty when the state is valid."""
        problems = []
        if np.any(self.phi < 0) or not np.allclose(self.phi.sum(axis=0), 1.0, rtol=0, atol=1e-9):
            problems.append("phi columns must be non-negative and sum to 1")
        if any(np.any(t < 0) for t in self.theta):
            problems.append("theta must be non-negative")
        if np.any(self.r < 0) or np.any(self.s < 0):
            problems.append("r and s must be non-negative")
        if not np.all(np.isin(self.z, (0, 1))):
            problems.append("z must be binary")
        if np.any((self.pi <= 0) | (self.pi >= 1)):
            problems.append("pi must lie in (0, 1)")
        if any(np.any((p <= 0) | (p >= 1)) for p in self.p):
            problems.append("p must lie in (0, 1)")
        if any(np.any(c <= 0) for c in self.c_j) or np.any(self.c_d <= 0):
            problems.append("scales must be positive")
        if min(self.c0, self.gamma0, self.eta) <= 0:
            problems.append("c0, gamma0 and eta must be positive")
        for d in range(self.D):
            dead = self.r[:, d] == 0
            if np.any(self.theta[d][dead] != 0):
                problems.append(f"theta must vanish where r is 0 (domain {d})")
        if pins_z and np.any(self.z != 1):
            problems.append("pinned z moved")
        if pins_c_j and any(np.any(c != 1.0) for c in self.c_j):
            problems.append("pinned c_j moved")
        if pins_p and any(np.any(p != 0.5) for p in self.p):
            problems.append("pinned p moved")
        if not self.all_finite():
            problems.append("non-finite values")
        return problems


@dataclass
class AugmentedCounts:
    """Auxiliary counts of one sweep. Never persisted."""
    ell: List[np.ndarray]                         # per domain, aligned with stored entries
    ell_vk: np.ndarray                            # V x K, summed over domains and samples
    ell_jk: List[np.ndarray]                      # per domain K x J_d
    q_j: List[np.ndarray]                         # per domain -ln(1 - p_j)
    ell_split: Optional[List[np.ndarray]] = None  # per domain nnz x K, only when requested
    ell_tilde: Optional[List[np.ndarray]] = None  # per domain K x J_d
    ell_tilde2: Optional[np.ndarray] = None       # K x D
    ell_acute: Optional[np.ndarray] = None        # K
    u_vk: Optional[np.ndarray] = None             # V x K
    q_aux: Optional[np.ndarray] = None            # K, NaN where the factor has no counts
    degenerate: int = 0
    crt_draws: int = 0


@dataclass
class ChainAccumulators:
    """Running sums over collected samples plus chain diagnostics."""
    phi_sum: np.ndarray
    r_sum: np.ndarray
    s_sum: np.ndarray
    z_sum: np.ndarray
    collected: int = 0
    trace: List[float] = field(default_factory=list)
    degenerate: int = 0
    crt_draws: int = 0

    @classmethod
    def zeros(cls, V: int, K: int, D: int) -> "ChainAccumulators":
        return cls(phi_sum=np.zeros((V, K)), r_sum=np.zeros((K, D)), s_sum=np.zeros(K),
                   z_sum=np.zeros((K, D)))


@dataclass
class PosteriorSummary:
    phi_mean: np.ndarray
    r_last: np.ndarray
    z_activation: np.ndarray
    log_joint_trace: List[float]
    active_factor_count: List[int]
    r_mean: Optional[np.ndarray] = None
    s_mean: Optional[np.ndarray] = None
    samples_collected: int = 0
    iterations: int = 0
    final_state: Optional[LatentState] = None
    gene_ids: List[str] = field(default_factory=list)
    domain_names: List[str] = field(default_factory=list)
    target_index: Optional[int] = None
    variant: str = "BMDL"
    degenerate_entries: int = 0
    crt_draws: int = 0
    warnings: List[str] = field(default_factory=list)


@dataclass
class FrozenFactors:
    """Global factors held fixed while extracting per-sample scores."""
    phi: np.ndarray
    r_target: np.ndarray
    gene_ids: List[str]
    hyperparameters: object
    variant: str = "BMDL"

    @classmethod
    def from_summary(cls, summary: PosteriorSummary, hyperparameters, target_domain: Optional[int] = None,
                     variant: Optional[str] = None) -> "FrozenFactors":
        if target_domain is None:
            target_domain = summary.target_index if summary.target_index is not None else summary.r_last.shape[1] - 1
        return cls(
            phi=summary.phi_mean.copy(),
            r_target=summary.r_last[:, target_domain].copy(),
            gene_ids=list(summary.gene_ids),
            hyperparameters=hyperparameters,
            variant=variant or summary.variant,
        )


@dataclass
class FeatureMatrix:
    theta_bar: np.ndarray           # J x K
    sample_ids: List[str]
    labels: Optional[np.ndarray] = None

    @property
    def num_samples(self) -> int:
        return int(self.theta_bar.shape[0])

    @property
    def num_factors(self) -> int:
        return int(self.theta_bar.shape[1])
