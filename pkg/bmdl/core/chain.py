"""
Chain runner: init, burn-in, thinned collection, checkpoint and resume.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np
from rich.console import Console

from .dist import RandomStream
from .errors import CheckpointError, NumericError, PreconditionError
from .gibbs import build_schedule, sweep
from .model import init_state, log_joint
from ..io.persistence import Checkpoint, load_checkpoint, save_checkpoint, tensor_fingerprint
from ..models.config import ChainConfig, Hyperparameters, ModelVariant
from ..models.state import ChainAccumulators, CountTensor, LatentState, PosteriorSummary

ACTIVE_RELATIVE_THRESHOLD = 0.01

ProgressCallback = Callable[[int, int], None]


def active_factor_count(r: np.ndarray, z: np.ndarray, relative: float = ACTIVE_RELATIVE_THRESHOLD) -> List[int]:
    """Per domain, factors with z = 1 and r above ``relative`` times the domain's largest r."""
    counts = []
    for d in range(r.shape[1]):
        top = float(r[:, d].max()) if r.shape[0] else 0.0
        if top <= 0:
            counts.append(0)
            continue
        counts.append(int(np.count_nonzero((z[:, d] == 1) & (r[:, d] > relative * top))))
    return counts


class ChainRunner:
    """
    Runs one Gibbs chain and accumulates its posterior summaries.

    Collection keeps every ``thin``-th post-burn-in sweep counted back from
    the final one, so the last sample is always included.
    """

    def __init__(self, tensor: CountTensor, hp: Hyperparameters, variant: ModelVariant = ModelVariant.BMDL,
                 config: Optional[ChainConfig] = None, verbose: bool = False,
                 data_source: Optional[str] = None):
        self.source_tensor = tensor
        self.hp = hp
        self.variant = ModelVariant(variant)
        self.config = config or ChainConfig()
        self.verbose = verbose
        self.console = Console() if verbose else None
        self.data_source = data_source
        self.fingerprint = tensor_fingerprint(tensor)

        if self.variant.target_only:
            if tensor.target_index is None:
                raise PreconditionError("TARGET_ONLY needs a tensor with a target domain")
            self.tensor = tensor.subset_domains([tensor.target_index])
            self.sampling_variant = ModelVariant.BMDL
        else:
            self.tensor = tensor
            self.sampling_variant = self.variant

        self.schedule = build_schedule(self.sampling_variant, self.config.fix_pi, self.config.fix_scales)
        self.rng: Optional[RandomStream] = None
        self.state: Optional[LatentState] = None
        self.acc: Optional[ChainAccumulators] = None
        self.iteration = 0

    def start(self, rng: RandomStream) -> LatentState:
        self.rng = rng
        self.state = init_state(self.tensor, self.hp, self.sampling_variant, rng)
        self.acc = ChainAccumulators.zeros(self.tensor.V, self.hp.K, self.tensor.D)
        self.iteration = 0
        return self.state

    @property
    def finished(self) -> bool:
        return self.iteration >= self.config.iterations

    def _collects(self, iteration: int) -> bool:
        cfg = self.config
        return iteration > cfg.burn_in and (cfg.iterations - iteration) % cfg.thin == 0

    def step(self) -> None:
        """One sweep plus bookkeeping."""
        if self.state is None:
            raise PreconditionError("chain not started")
        aug = sweep(self.tensor, self.state, self.hp, self.sampling_variant, self.rng,
                    fix_pi=self.config.fix_pi, fix_scales=self.config.fix_scales,
                    keep_split=self.config.keep_split, schedule=self.schedule)
        self.iteration += 1
        acc = self.acc
        acc.degenerate += aug.degenerate
        acc.crt_draws += aug.crt_draws

        if not self.state.all_finite():
            problems = self.state.check_invariants()
            raise NumericError(f"non-finite state after iteration {self.iteration}: {'; '.join(problems)}")

        collect = self.config.collect
        if "log_joint" in collect:
            acc.trace.append(log_joint(self.tensor, self.state, self.hp, self.sampling_variant))
        if self._collects(self.iteration):
            acc.collected += 1
            if "phi" in collect:
                acc.phi_sum += self.state.phi
            if "r" in collect:
                acc.r_sum += self.state.r
            if "s" in collect:
                acc.s_sum += self.state.s
            if "z" in collect:
                acc.z_sum += self.state.z

    def run(self, checkpoint_path: Optional[Path] = None, stop_after: Optional[int] = None,
            progress: Optional[ProgressCallback] = None) -> Optional[PosteriorSummary]:
        """
        Sweep until the configured iteration count or ``stop_after``.

        Returns the summary when the chain finished, None when it stopped early
        (a checkpoint is written at the stop point if a path is given).
        """
        every = self.config.checkpoint_every
        while not self.finished:
            if stop_after is not None and self.iteration >= stop_after:
                if checkpoint_path is not None:
                    self.save(checkpoint_path)
                if self.console is not None:
                    self.console.log(f"stopped at iteration {self.iteration}")
                return None
            self.step()
            if progress is not None:
                progress(self.iteration, self.config.iterations)
            if checkpoint_path is not None and every and self.iteration % every == 0:
                self.save(checkpoint_path)
        if checkpoint_path is not None:
            self.save(checkpoint_path)
        return self.summary()

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(
            state=self.state,
            accumulators=self.acc,
            iteration=self.iteration,
            rng_state=self.rng.get_state(),
            variant=self.variant.value,
            hyperparameters=self.hp.model_dump(),
            chain_config=self.config.model_dump(),
            tensor_fingerprint=self.fingerprint,
            data_source=self.data_source,
            extra={
                "gene_ids": list(self.tensor.gene_ids),
                "domain_names": self.tensor.domain_names,
                "target_index": self.tensor.target_index,
            },
        )

    def save(self, path: Path) -> Path:
        written = save_checkpoint(path, self.checkpoint())
        if self.console is not None:
            self.console.log(f"checkpoint at iteration {self.iteration} -> {written}")
        return written

    @classmethod
    def from_checkpoint(cls, tensor: CountTensor, checkpoint: Checkpoint, verbose: bool = False) -> "ChainRunner":
        """Rebuild a runner exactly where the checkpoint left off."""
        if tensor_fingerprint(tensor) != checkpoint.tensor_fingerprint:
            raise CheckpointError("checkpoint was written for different count data")
        runner = cls(
            tensor,
            Hyperparameters(**checkpoint.hyperparameters),
            ModelVariant(checkpoint.variant),
            ChainConfig(**checkpoint.chain_config),
            verbose=verbose,
            data_source=checkpoint.data_source,
        )
        runner.rng = RandomStream.from_state(checkpoint.rng_state)
        runner.state = checkpoint.state
        runner.acc = checkpoint.accumulators
        runner.iteration = checkpoint.iteration
        return runner

    def summary(self) -> PosteriorSummary:
        if self.state is None:
            raise PreconditionError("chain not started")
        return build_summary(self.state, self.acc, self.config, self.iteration, self.variant,
                             list(self.tensor.gene_ids), self.tensor.domain_names, self.tensor.target_index)


def build_summary(state: LatentState, acc: ChainAccumulators, config: ChainConfig, iteration: int,
                  variant: ModelVariant, gene_ids: List[str], domain_names: List[str],
                  target_index: Optional[int]) -> PosteriorSummary:
    warnings = []
    collected = max(acc.collected, 1)
    if "phi" in config.collect and acc.collected:
        phi_mean = acc.phi_sum / collected
        phi_mean = phi_mean / phi_mean.sum(axis=0, keepdims=True)
    else:
        phi_mean = state.phi.copy()
    z_activation = acc.z_sum / collected if "z" in config.collect else state.z.astype(float)
    if acc.degenerate:
        warnings.append(f"{acc.degenerate} positive counts met a zero NB shape")
    return PosteriorSummary(
        phi_mean=phi_mean,
        r_last=state.r.copy(),
        z_activation=np.clip(z_activation, 0.0, 1.0),
        log_joint_trace=list(acc.trace),
        active_factor_count=active_factor_count(state.r, state.z),
        r_mean=acc.r_sum / collected if "r" in config.collect else None,
        s_mean=acc.s_sum / collected if "s" in config.collect else None,
        samples_collected=acc.collected,
        iterations=iteration,
        final_state=state.copy(),
        gene_ids=list(gene_ids),
        domain_names=list(domain_names),
        target_index=target_index,
        variant=ModelVariant(variant).value,
        degenerate_entries=acc.degenerate,
        crt_draws=acc.crt_draws,
        warnings=warnings,
    )


def summary_from_checkpoint(checkpoint: Checkpoint) -> PosteriorSummary:
    """Summary of a finished (or partial) chain without reloading its count data."""
    extra = checkpoint.extra
    return build_summary(checkpoint.state, checkpoint.accumulators, ChainConfig(**checkpoint.chain_config),
                         checkpoint.iteration, ModelVariant(checkpoint.variant), extra.get("gene_ids", []),
                         extra.get("domain_names", []), extra.get("target_index"))


def run_chain(tensor: CountTensor, hp: Hyperparameters, variant: ModelVariant, config: ChainConfig,
              rng: RandomStream, verbose: bool = False, checkpoint_path: Optional[Path] = None,
              progress: Optional[ProgressCallback] = None) -> PosteriorSummary:
    """Initialize from the prior and run ``config.iterations`` sweeps."""
    runner = ChainRunner(tensor, hp, variant, config, verbose=verbose)
    runner.start(rng)
    return runner.run(checkpoint_path=checkpoint_path, progress=progress)


def resume_chain(tensor: CountTensor, checkpoint_path: Path, verbose: bool = False,
                 progress: Optional[ProgressCallback] = None) -> PosteriorSummary:
    runner = ChainRunner.from_checkpoint(tensor, load_checkpoint(checkpoint_path), verbose=verbose)
    return runner.run(checkpoint_path=checkpoint_path, progress=progress)


@dataclass
class FactorSharing:
    """How the factors of a fitted chain are spread over domains."""
    shared: int
    specific: Dict[str, int] = field(default_factory=dict)
    inactive: int = 0


def factor_sharing(summary: PosteriorSummary, threshold: float = 0.5,
                   relative: float = ACTIVE_RELATIVE_THRESHOLD) -> FactorSharing:
    """
    Count factors used by every domain, by exactly one domain, and by none.

    A factor is used in a domain when its activation frequency reaches
    ``threshold`` and its last-sample weight is above ``relative`` times the
    domain's largest weight.
    """
    r = summary.r_last
    top = r.max(axis=0, keepdims=True)
    used = (summary.z_activation >= threshold) & (r > relative * top) & (top > 0)
    per_factor = used.sum(axis=1)
    names = summary.domain_names or [f"domain{d}" for d in range(r.shape[1])]
    only = used & (per_factor[:, None] == 1)
    return FactorSharing(
        shared=int(np.count_nonzero(per_factor == r.shape[1])),
        specific={names[d]: int(only[:, d].sum()) for d in range(r.shape[1])},
        inactive=int(np.count_nonzero(per_factor == 0)),
    )
