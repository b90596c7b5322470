"""
Method-comparison harness: fit, extract, classify, repeat.

A job is one (condition, run, variant) triple and is a pure function of its
inputs, so jobs can run in worker processes. Run i of every condition uses the
same data seed, which pairs conditions that differ only along the studied axis.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from rich.console import Console
from scipy import stats

from .chain import run_chain
from .classifier import evaluate, train_linear
from .dist import RandomStream
from .errors import DataError, PreconditionError
from .features import extract
from .synth import generate
from ..models.config import (
    ChainConfig,
    EvaluationConfig,
    ExtractionConfig,
    Hyperparameters,
    ModelVariant,
    RunConfig,
    SynthConfig,
)
from ..models.report import ExperimentReport
from ..models.state import CountTensor, DomainCounts, FrozenFactors

VARIANT_CODES = {variant: code for code, variant in enumerate(ModelVariant)}


@dataclass
class Condition:
    """One point of the grid: synthetic settings or a user tensor, plus its axis value."""
    name: str
    synth: Optional[SynthConfig] = None
    tensor: Optional[CountTensor] = None
    axis_value: Optional[float] = None
    details: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if (self.synth is None) == (self.tensor is None):
            raise PreconditionError(f"condition {self.name!r} needs exactly one of synth or tensor")


@dataclass
class ExperimentJob:
    condition_index: int
    condition: Condition
    run: int
    seed: int
    variant: ModelVariant
    hp: Hyperparameters
    chain: ChainConfig
    extraction: ExtractionConfig
    evaluation: EvaluationConfig


@dataclass
class JobResult:
    condition_index: int
    run: int
    variant: ModelVariant
    seed: int
    accuracy: float
    source_samples: int
    warnings: List[str] = field(default_factory=list)


def run_seed(base_seed: int, run: int) -> int:
    """Data seed of run ``run``; identical for every condition."""
    return int(np.random.SeedSequence([base_seed, run]).generate_state(1, dtype=np.uint64)[0] >> 1)


def split_target(tensor: CountTensor, train_per_class: int, test_per_class: int,
                 rng: RandomStream) -> Tuple[CountTensor, DomainCounts]:
    """
    Draw a class-balanced train/test split of the target domain.

    Returns the tensor with its target reduced to the train samples, and the
    test samples as a separate domain.
    """
    target = tensor.target
    if target.labels is None:
        raise DataError(f"target domain {target.name!r} has no labels")
    train, test = [], []
    for cls in np.unique(target.labels):
        members = np.flatnonzero(target.labels == cls)
        if members.size < train_per_class + test_per_class:
            raise DataError(f"class {cls} has {members.size} samples, need "
                            f"{train_per_class + test_per_class}")
        chosen = rng.generator.permutation(members)
        train.extend(chosen[:train_per_class])
        test.extend(chosen[train_per_class:train_per_class + test_per_class])
    train_domain = target.select_samples(sorted(train))
    test_domain = target.select_samples(sorted(test), name=f"{target.name}_test")
    return tensor.replace_domain(tensor.target_index, train_domain), test_domain


def _job_data(job: ExperimentJob) -> Tuple[CountTensor, DomainCounts]:
    if job.condition.synth is not None:
        dataset = generate(job.condition.synth.model_copy(update={"seed": job.seed}))
        return dataset.tensor, dataset.test
    ev = job.evaluation
    return split_target(job.condition.tensor, ev.train_per_class, ev.test_per_class,
                        RandomStream(job.seed).split(0))


def run_job(job: ExperimentJob) -> JobResult:
    """Fit one chain, extract train and test features, score the classifier."""
    tensor, test = _job_data(job)
    code = VARIANT_CODES[job.variant]
    streams = RandomStream(job.seed).split(1 + code)
    summary = run_chain(tensor, job.hp, job.variant, job.chain, streams.split(0))
    frozen = FrozenFactors.from_summary(summary, job.hp, variant=job.variant.value)
    ex = job.extraction
    train_features = extract(tensor.target, frozen, ex.iterations, ex.collect_last, streams.split(1))
    test_features = extract(test, frozen, ex.iterations, ex.collect_last, streams.split(2))
    ev = job.evaluation
    model = train_linear(train_features, C=ev.C, standardize=ev.standardize, tol=ev.tol, max_iter=ev.max_iter)
    source = 0 if job.variant.target_only else sum(
        d.num_samples for i, d in enumerate(tensor.domains) if i != tensor.target_index)
    return JobResult(
        condition_index=job.condition_index,
        run=job.run,
        variant=job.variant,
        seed=job.seed,
        accuracy=evaluate(model, test_features),
        source_samples=source,
        warnings=summary.warnings + model.warnings,
    )


def run_experiment(conditions: Sequence[Condition], variants: Sequence[ModelVariant], runs: int,
                   hp: Hyperparameters, chain: ChainConfig, extraction: ExtractionConfig,
                   evaluation: EvaluationConfig, seed: int = 0, workers: int = 1, verbose: bool = False,
                   progress: Optional[Callable[[JobResult], None]] = None) -> List[ExperimentReport]:
    """
    Every variant on every condition, ``runs`` times.

    Reports come back in (condition, variant) order with runs in order,
    whatever the number of workers.
    """
    if runs < 1:
        raise PreconditionError("runs must be >= 1")
    console = Console() if verbose else None
    jobs = [
        ExperimentJob(c, condition, run, run_seed(seed, run), ModelVariant(variant), hp, chain, extraction,
                      evaluation)
        for (c, condition), run, variant in product(enumerate(conditions), range(runs), variants)
    ]
    results: List[JobResult] = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for result in pool.map(run_job, jobs):
                results.append(result)
                if progress is not None:
                    progress(result)
    else:
        for job in jobs:
            result = run_job(job)
            results.append(result)
            if progress is not None:
                progress(result)
    if console is not None:
        for warning in sorted({w for r in results for w in r.warnings}):
            console.log(f"[yellow]warning:[/yellow] {warning}")

    reports = []
    for c, condition in enumerate(conditions):
        for variant in variants:
            variant = ModelVariant(variant)
            mine = sorted((r for r in results if r.condition_index == c and r.variant == variant),
                          key=lambda r: r.run)
            fingerprint = {
                "condition": condition.name,
                "variant": variant.value,
                "axis_value": condition.axis_value,
                "source_samples": mine[0].source_samples,
                "seeds": [r.seed for r in mine],
                "test_split": "fresh draw" if condition.synth is not None else "class-balanced holdout",
                **condition.details,
            }
            reports.append(ExperimentReport(condition=condition.name, variant=variant.value,
                                            accuracies=[r.accuracy for r in mine],
                                            seeds=[r.seed for r in mine], fingerprint=fingerprint))
    return reports


def synthetic_conditions(base: SynthConfig, shared_factors: Optional[Sequence[int]] = None,
                         target_samples: Optional[Sequence[int]] = None) -> List[Condition]:
    """
    Grid over shared-factor counts and/or target sizes.

    The axis value is the shared-factor count when that axis varies, else the
    target size.
    """
    shared_values = list(shared_factors) if shared_factors else [base.shared_factors]
    target_values = list(target_samples) if target_samples else [base.target_samples]
    axis_is_shared = bool(shared_factors) or not target_samples
    conditions = []
    for shared, target in product(shared_values, target_values):
        synth = SynthConfig.model_validate({**base.model_dump(), "shared_factors": shared, "target_samples": target})
        conditions.append(Condition(
            name=f"shared={shared},target={target}",
            synth=synth,
            axis_value=float(shared if axis_is_shared else target),
            details={"shared_factors": shared, "target_samples": target},
        ))
    return conditions


def experiment_from_config(config: RunConfig, workers: Optional[int] = None, verbose: bool = False,
                           progress: Optional[Callable[[JobResult], None]] = None) -> List[ExperimentReport]:
    """Run the synthetic grid a ``RunConfig`` describes."""
    grid = config.experiment
    conditions = synthetic_conditions(config.synth, grid.shared_factors, grid.target_samples)
    return run_experiment(conditions, grid.variants, grid.runs or config.evaluation.runs, config.hyperparameters,
                          config.chain, config.extraction, config.evaluation, seed=config.seed,
                          workers=workers or grid.workers, verbose=verbose, progress=progress)


@dataclass
class TrendSummary:
    variant: str
    axis: List[float]
    mean_error: List[float]
    spearman: float
    pooled_se: float


def pooled_standard_error(reports: Sequence[ExperimentReport]) -> float:
    """sqrt of the average squared standard error of the per-condition means."""
    if not reports:
        return 0.0
    return float(np.sqrt(np.mean([r.std ** 2 / len(r.accuracies) for r in reports])))


def summarize_trend(reports: Sequence[ExperimentReport]) -> Dict[str, TrendSummary]:
    """Per variant: Spearman correlation of axis value against mean error, and pooled SE."""
    by_variant: Dict[str, List[ExperimentReport]] = {}
    for report in reports:
        by_variant.setdefault(report.variant, []).append(report)
    out = {}
    for variant, group in by_variant.items():
        group = sorted(group, key=lambda r: r.fingerprint.get("axis_value") or 0.0)
        axis = [float(r.fingerprint.get("axis_value") or 0.0) for r in group]
        errors = [1.0 - r.mean for r in group]
        if len(group) > 1 and len(set(axis)) > 1 and len(set(errors)) > 1:
            rho = float(stats.spearmanr(axis, errors).correlation)
        else:
            rho = 0.0
        out[variant] = TrendSummary(variant=variant, axis=axis, mean_error=errors, spearman=rho,
                                    pooled_se=pooled_standard_error(group))
    return out
