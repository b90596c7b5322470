"""
Validated configuration models.

Every configurable surface of the toolkit is a pydantic model so that YAML
files, ``--set`` overrides and programmatic use share one set of checks.
"""

from enum import Enum
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator


class ModelVariant(str, Enum):
    """Model family members; the baselines are BMDL with coordinates pinned."""
    BMDL = "BMDL"
    HGNBP = "HGNBP"
    HDP_NBFA = "HDP_NBFA"
    NB_HDP = "NB_HDP"
    TARGET_ONLY = "TARGET_ONLY"

    @property
    def pins_z(self) -> bool:
        return self in (ModelVariant.HGNBP, ModelVariant.HDP_NBFA, ModelVariant.NB_HDP)

    @property
    def pins_c_j(self) -> bool:
        return self in (ModelVariant.HDP_NBFA, ModelVariant.NB_HDP)

    @property
    def pins_p(self) -> bool:
        return self is ModelVariant.NB_HDP

    @property
    def target_only(self) -> bool:
        return self is ModelVariant.TARGET_ONLY


class Hyperparameters(BaseModel):
    """Fixed scalars of the prior plus truncation level and CRT cutoff."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    K: int = Field(100, ge=1)
    a0: float = Field(0.01, gt=0)
    b0: float = Field(0.01, gt=0)
    e0: float = Field(0.01, gt=0)
    f0: float = Field(0.01, gt=0)
    h0: float = Field(0.01, gt=0)
    u0: float = Field(0.01, gt=0)
    s0: float = Field(0.01, gt=0)
    w0: float = Field(0.01, gt=0)
    t0: float = Field(0.01, gt=0)
    c_ibp: float = Field(1.0, gt=0)
    crt_cutoff: int = Field(1000, ge=1)

    @classmethod
    def uniform(cls, value: float, K: int, crt_cutoff: int = 1000) -> "Hyperparameters":
        """All prior scalars set to ``value``."""
        names = ("a0", "b0", "e0", "f0", "h0", "u0", "s0", "w0", "t0", "c_ibp")
        return cls(K=K, crt_cutoff=crt_cutoff, **{name: value for name in names})


SummaryName = Literal["phi", "r", "s", "z", "log_joint"]


class ChainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    iterations: int = Field(3000, ge=1)
    burn_in: int = Field(1500, ge=0)
    thin: int = Field(1, ge=1)
    collect: List[SummaryName] = Field(default_factory=lambda: ["phi", "r", "s", "z", "log_joint"])
    fix_pi: bool = False
    fix_scales: bool = False
    checkpoint_every: int = Field(0, ge=0)
    keep_split: bool = False

    @model_validator(mode="after")
    def _burn_in_before_end(self) -> "ChainConfig":
        if self.burn_in >= self.iterations:
            raise ValueError(f"burn_in ({self.burn_in}) must be < iterations ({self.iterations})")
        return self


class ExtractionConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    iterations: int = Field(1000, ge=1)
    collect_last: int = Field(500, ge=1)

    @model_validator(mode="after")
    def _collect_within_run(self) -> "ExtractionConfig":
        if self.collect_last > self.iterations:
            raise ValueError("collect_last must not exceed iterations")
        return self


class EvaluationConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    runs: int = Field(10, ge=1)
    C: float = Field(1.0, gt=0)
    standardize: bool = True
    tol: float = Field(1e-6, gt=0)
    max_iter: int = Field(100_000, ge=1)
    train_per_class: int = Field(10, ge=1)
    test_per_class: int = Field(10, ge=1)


class SynthConfig(BaseModel):
    """Two-domain synthetic data with a controllable number of shared factors."""
    model_config = ConfigDict(extra="forbid")

    num_features: int = Field(1000, ge=1)
    factors_per_domain: int = Field(50, ge=1)
    shared_factors: int = Field(25, ge=0)
    source_samples: int = Field(200, ge=0)
    target_samples: int = Field(20, ge=2)
    test_samples: Optional[int] = Field(None, ge=2)
    balanced: bool = True
    class_scale_a: Tuple[float, float] = (100.0, 150.0)
    class_scale_scale: float = Field(0.01, gt=0)
    dirichlet_eta: float = Field(0.1, gt=0)
    p_beta: Tuple[float, float] = (500.0, 5.0)
    gamma0: Optional[float] = Field(None, gt=0)
    c0: float = Field(1.0, gt=0)
    c_d: float = Field(1.0, gt=0)
    hyper_prior: Optional[Tuple[float, float]] = None
    seed: int = Field(0, ge=0)

    @property
    def num_test(self) -> int:
        return self.test_samples if self.test_samples is not None else self.target_samples

    @model_validator(mode="after")
    def _check_sizes(self) -> "SynthConfig":
        if self.shared_factors > self.factors_per_domain:
            raise ValueError("shared_factors must not exceed factors_per_domain")
        if self.balanced and (self.target_samples % 2 or self.num_test % 2):
            raise ValueError("balanced target and test sizes must be even")
        if min(self.class_scale_a) <= 0 or min(self.p_beta) <= 0:
            raise ValueError("class_scale_a and p_beta entries must be positive")
        if self.hyper_prior is not None and min(self.hyper_prior) <= 0:
            raise ValueError("hyper_prior entries must be positive")
        return self


class ExperimentConfig(BaseModel):
    """Grid of conditions for a method-comparison sweep."""
    model_config = ConfigDict(extra="forbid")

    variants: List[ModelVariant] = Field(default_factory=lambda: [ModelVariant.BMDL, ModelVariant.TARGET_ONLY])
    shared_factors: Optional[List[int]] = None
    target_samples: Optional[List[int]] = None
    runs: Optional[int] = Field(None, ge=1)
    workers: int = Field(1, ge=1)


class DomainEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    counts: str
    role: Literal["source", "target"] = "source"
    labels: Optional[str] = None


class DomainManifest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    domains: List[DomainEntry] = Field(min_length=1)
    min_total_count: Optional[int] = Field(50, ge=0)
    gene_allowlist: Optional[str] = None

    @model_validator(mode="after")
    def _one_target(self) -> "DomainManifest":
        targets = [entry.name for entry in self.domains if entry.role == "target"]
        if len(targets) != 1:
            raise ValueError(f"manifest needs exactly one target domain, found {len(targets)}")
        names = [entry.name for entry in self.domains]
        if len(set(names)) != len(names):
            raise ValueError("domain names must be unique")
        return self

    @property
    def target_index(self) -> int:
        return next(i for i, entry in enumerate(self.domains) if entry.role == "target")


class RunConfig(BaseModel):
    """Root of a YAML config file."""
    model_config = ConfigDict(extra="forbid")

    hyperparameters: Hyperparameters = Field(default_factory=Hyperparameters)
    variant: ModelVariant = ModelVariant.BMDL
    chain: ChainConfig = Field(default_factory=ChainConfig)
    extraction: ExtractionConfig = Field(default_factory=ExtractionConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)
    synth: SynthConfig = Field(default_factory=SynthConfig)
    experiment: ExperimentConfig = Field(default_factory=ExperimentConfig)
    seed: int = Field(0, ge=0)
    output_dir: Optional[str] = None
