"""
Main CLI interface for BMDL.

Provides commands to fit multi-domain chains, extract target-domain features,
evaluate classifiers, generate synthetic data, run method-comparison sweeps
and check the sampler with the joint-distribution test.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure.
"""

import sys
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

import click
import typer
from pydantic import ValidationError
from rich.console import Console
from rich.panel import Panel
from rich.progress import BarColumn, Progress, SpinnerColumn, TextColumn, TimeElapsedColumn
from rich.table import Table

from .. import __version__
from ..core.chain import ChainRunner, factor_sharing, summary_from_checkpoint
from ..core.classifier import evaluate, train_linear
from ..core.dist import RandomStream
from ..core.errors import (
    CheckpointError,
    ClassifierError,
    ConfigError,
    DataError,
    GeneAxisMismatchError,
    NumericError,
    ParameterDomainError,
    PreconditionError,
)
from ..core.experiment import JobResult, experiment_from_config, summarize_trend
from ..core.features import extract
from ..core.geweke import GEWEKE_BLOCKS, geweke_test
from ..core.synth import generate
from ..io.config import config_payload, load_run_config, resolve_output_dir
from ..io.counts import assemble, attach_labels, load_count_matrix, load_labels, load_manifest, write_dataset
from ..io.persistence import (
    build_provenance,
    load_checkpoint,
    read_feature_matrix,
    write_feature_matrix,
    write_posterior_summary,
    write_provenance,
    write_report_tables,
)
from ..models.config import Hyperparameters, ModelVariant, RunConfig
from ..models.report import ExperimentReport, GewekeReport
from ..models.state import DomainCounts, FrozenFactors, PosteriorSummary
from ..utils.helpers import atomic_write_json

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


def version_callback(value: bool):
    """Print version and exit."""
    if value:
        typer.echo(f"bmdl version {__version__}")
        raise typer.Exit()


app = typer.Typer(
    name="bmdl",
    help="BMDL - multi-domain negative binomial factor analysis for count data",
    add_completion=False,
)
console = Console()
err_console = Console(stderr=True)
_invocation: List[str] = []


@app.callback()
def _root(
    version: Optional[bool] = typer.Option(
        None, "--version", callback=version_callback, is_eager=True, help="Show version and exit"
    ),
) -> None:
    """Fit, extract, evaluate and simulate with the BMDL model."""


ConfigOption = typer.Option(None, "--config", "-c", help="YAML run configuration")
SetOption = typer.Option(None, "--set", help="Override a config field: dotted.key=value (repeatable)")
OutputDirOption = typer.Option(None, "--output-dir", "-o", help="Output directory (default: $BMDL_OUTPUT_DIR)")
SeedOption = typer.Option(None, "--seed", help="Override the config seed")
VerboseOption = typer.Option(False, "--verbose", help="Enable verbose output")


def _load_config(config: Optional[Path], overrides: Optional[List[str]], seed: Optional[int] = None,
                 variant: Optional[ModelVariant] = None) -> RunConfig:
    extra = list(overrides or [])
    if seed is not None:
        extra.append(f"seed={seed}")
    if variant is not None:
        extra.append(f"variant={variant.value}")
    return load_run_config(config, extra)


def _record(path: Path, command: str, config: Dict[str, Any], seed: int, inputs: Iterable[Path],
            outputs: Iterable[Path]) -> None:
    record = build_provenance(command, _invocation, config, seed, inputs=inputs, outputs=outputs)
    write_provenance(path, record)


def _manifest_inputs(manifest_path: Path) -> List[Path]:
    manifest = load_manifest(manifest_path)
    inputs = [Path(manifest_path)]
    for entry in manifest.domains:
        inputs.append(Path(entry.counts))
        if entry.labels:
            inputs.append(Path(entry.labels))
    if manifest.gene_allowlist:
        inputs.append(Path(manifest.gene_allowlist))
    return inputs


def _run_with_progress(runner: ChainRunner, checkpoint_path: Path,
                       stop_after: Optional[int]) -> Optional[PosteriorSummary]:
    with Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        TextColumn("{task.completed}/{task.total}"),
        TimeElapsedColumn(),
        console=console,
        transient=True,
    ) as progress:
        task = progress.add_task("Gibbs sweeps", total=runner.config.iterations, completed=runner.iteration)
        return runner.run(checkpoint_path=checkpoint_path, stop_after=stop_after,
                          progress=lambda done, total: progress.update(task, completed=done))


def _display_summary(summary: PosteriorSummary) -> None:
    table = Table(title="Chain Summary")
    table.add_column("Domain", style="cyan")
    table.add_column("Active factors", justify="right")
    table.add_column("Mean z activation", justify="right")
    for d, name in enumerate(summary.domain_names):
        table.add_row(name, str(summary.active_factor_count[d]), f"{summary.z_activation[:, d].mean():.3f}")
    console.print(table)

    sharing = factor_sharing(summary)
    specific = ", ".join(f"{name}: {count}" for name, count in sharing.specific.items())
    last = f"{summary.log_joint_trace[-1]:.2f}" if summary.log_joint_trace else "n/a"
    console.print(Panel(
        f"iterations: {summary.iterations}   collected: {summary.samples_collected}\n"
        f"shared factors: {sharing.shared}   specific: {specific}   inactive: {sharing.inactive}\n"
        f"final log joint: {last}",
        title=f"{summary.variant}",
    ))
    for warning in summary.warnings:
        console.print(f"[yellow]warning:[/yellow] {warning}")


def _finish_fit(summary: Optional[PosteriorSummary], runner: ChainRunner, out: Path, checkpoint_path: Path,
                command: str, config: Dict[str, Any], seed: int, inputs: List[Path]) -> None:
    outputs = [checkpoint_path]
    if summary is None:
        console.print(f"[yellow]Stopped at iteration {runner.iteration}[/yellow]; "
                      f"continue with: bmdl resume {checkpoint_path}")
    else:
        outputs += write_posterior_summary(summary, out)
        _display_summary(summary)
    _record(out / "provenance.json", command, config, seed, inputs, outputs)
    console.print(f"[green]✓[/green] Outputs written to: {out}")


@app.command()
def fit(
    manifest: Path = typer.Argument(..., help="Domain manifest (YAML)"),
    config: Optional[Path] = ConfigOption,
    overrides: Optional[List[str]] = SetOption,
    variant: Optional[ModelVariant] = typer.Option(None, "--variant", help="Model variant"),
    output_dir: Optional[Path] = OutputDirOption,
    seed: Optional[int] = SeedOption,
    stop_after: Optional[int] = typer.Option(None, "--stop-after", help="Checkpoint and stop at this iteration"),
    verbose: bool = VerboseOption,
) -> None:
    """
    Fit a chain on the domains of a manifest.

    Writes checkpoint.npz, posterior summary tables and provenance.json.
    """
    run_config = _load_config(config, overrides, seed, variant)
    tensor = assemble(load_manifest(manifest))
    out = resolve_output_dir(output_dir, run_config)
    checkpoint_path = out / "checkpoint.npz"
    console.print(f"[green]Fitting {run_config.variant.value}:[/green] {tensor.D} domains, {tensor.V} genes, "
                  f"samples {tensor.J}")
    if tensor.filter_report is not None and tensor.filter_report.total_dropped:
        console.print(f"[blue]Dropped {tensor.filter_report.total_dropped} genes while assembling[/blue]")

    runner = ChainRunner(tensor, run_config.hyperparameters, run_config.variant, run_config.chain,
                         verbose=verbose, data_source=str(Path(manifest).resolve()))
    runner.start(RandomStream(run_config.seed))
    summary = _run_with_progress(runner, checkpoint_path, stop_after)
    _finish_fit(summary, runner, out, checkpoint_path, "fit", config_payload(run_config), run_config.seed,
                _manifest_inputs(manifest))


@app.command()
def resume(
    checkpoint: Path = typer.Argument(..., help="Checkpoint written by fit"),
    manifest: Optional[Path] = typer.Option(None, "--manifest", help="Manifest (default: the one fit used)"),
    output_dir: Optional[Path] = OutputDirOption,
    stop_after: Optional[int] = typer.Option(None, "--stop-after", help="Checkpoint and stop at this iteration"),
    verbose: bool = VerboseOption,
) -> None:
    """Continue a chain from its checkpoint; the result equals an uninterrupted fit."""
    saved = load_checkpoint(checkpoint)
    source = manifest or saved.data_source
    if source is None:
        raise DataError("checkpoint does not record its data source; pass --manifest")
    tensor = assemble(load_manifest(source))
    runner = ChainRunner.from_checkpoint(tensor, saved, verbose=verbose)
    out = Path(output_dir) if output_dir else Path(checkpoint).parent
    console.print(f"[green]Resuming at iteration {runner.iteration}[/green] of {runner.config.iterations}")
    summary = _run_with_progress(runner, Path(checkpoint), stop_after)
    config = {"variant": saved.variant, "hyperparameters": saved.hyperparameters, "chain": saved.chain_config}
    _finish_fit(summary, runner, out, Path(checkpoint), "resume", config, saved.rng_state["seed"],
                _manifest_inputs(Path(source)))


def _align_genes(domain: DomainCounts, frozen: FrozenFactors) -> DomainCounts:
    if not frozen.gene_ids or list(domain.gene_ids) == list(frozen.gene_ids):
        return domain
    missing = set(frozen.gene_ids) - set(domain.gene_ids)
    if missing:
        raise GeneAxisMismatchError(f"{len(missing)} fitted genes are absent from the samples "
                                    f"(e.g. {sorted(missing)[0]!r})")
    return domain.reindex_genes(frozen.gene_ids)


@app.command("extract")
def extract_features(
    checkpoint: Path = typer.Argument(..., help="Checkpoint of a finished fit"),
    samples: Path = typer.Argument(..., help="Count matrix of target-domain samples"),
    output: Path = typer.Option(..., "--output", "-o", help="Feature matrix TSV to write"),
    labels: Optional[Path] = typer.Option(None, "--labels", help="Sample labels TSV"),
    target_domain: Optional[str] = typer.Option(None, "--target-domain", help="Domain whose weights to use"),
    config: Optional[Path] = ConfigOption,
    overrides: Optional[List[str]] = SetOption,
    seed: Optional[int] = SeedOption,
    verbose: bool = VerboseOption,
) -> None:
    """Extract posterior-mean factor scores for samples against frozen factors."""
    run_config = _load_config(config, overrides, seed)
    saved = load_checkpoint(checkpoint)
    summary = summary_from_checkpoint(saved)
    domain_index = None
    if target_domain is not None:
        if target_domain not in summary.domain_names:
            raise DataError(f"checkpoint has no domain {target_domain!r}; domains: {summary.domain_names}")
        domain_index = summary.domain_names.index(target_domain)
    frozen = FrozenFactors.from_summary(summary, Hyperparameters(**saved.hyperparameters), domain_index,
                                        saved.variant)

    domain = load_count_matrix(samples)
    if labels is not None:
        attach_labels(domain, load_labels(labels))
    domain = _align_genes(domain, frozen)
    ex = run_config.extraction
    with console.status(f"Extracting {domain.num_samples} samples..."):
        features = extract(domain, frozen, ex.iterations, ex.collect_last, RandomStream(run_config.seed))
    written = write_feature_matrix(features, output)
    inputs = [checkpoint, samples] + ([labels] if labels else [])
    _record(Path(f"{output}.provenance.json"), "extract", config_payload(run_config), run_config.seed,
            inputs, [written])
    console.print(f"[green]✓[/green] {features.num_samples} x {features.num_factors} features saved to: {written}")


@app.command("evaluate")
def evaluate_features(
    train: Path = typer.Argument(..., help="Labeled training features (TSV)"),
    test: Path = typer.Argument(..., help="Labeled test features (TSV)"),
    C: Optional[float] = typer.Option(None, "--C", help="Regularization constant"),
    standardize: Optional[bool] = typer.Option(None, "--standardize/--no-standardize", help="Scale features"),
    config: Optional[Path] = ConfigOption,
    overrides: Optional[List[str]] = SetOption,
    output_dir: Optional[Path] = OutputDirOption,
    verbose: bool = VerboseOption,
) -> None:
    """Train the linear classifier on one feature file and score it on another."""
    extra = list(overrides or [])
    if C is not None:
        extra.append(f"evaluation.C={C}")
    if standardize is not None:
        extra.append(f"evaluation.standardize={str(standardize).lower()}")
    run_config = _load_config(config, extra)
    ev = run_config.evaluation
    train_features = read_feature_matrix(train)
    test_features = read_feature_matrix(test)
    model = train_linear(train_features, C=ev.C, standardize=ev.standardize, tol=ev.tol, max_iter=ev.max_iter)
    accuracy = evaluate(model, test_features)
    report = ExperimentReport(condition=Path(test).stem, variant="features", accuracies=[accuracy],
                              fingerprint={"train": str(train), "test": str(test), "C": ev.C})
    out = resolve_output_dir(output_dir, run_config)
    files = write_report_tables([report], out)
    _record(out / "provenance.json", "evaluate", config_payload(run_config), run_config.seed, [train, test], files)
    for warning in model.warnings:
        console.print(f"[yellow]warning:[/yellow] {warning}")
    console.print(Panel(f"accuracy: {accuracy:.4f}  (error {1 - accuracy:.4f})", title="Evaluation"))


@app.command()
def simulate(
    config: Optional[Path] = ConfigOption,
    overrides: Optional[List[str]] = SetOption,
    output_dir: Optional[Path] = OutputDirOption,
    seed: Optional[int] = typer.Option(None, "--seed", help="Override synth.seed"),
    verbose: bool = VerboseOption,
) -> None:
    """Generate a synthetic two-domain dataset with a manifest and ground truth."""
    extra = list(overrides or [])
    if seed is not None:
        extra.append(f"synth.seed={seed}")
    run_config = _load_config(config, extra)
    synth = run_config.synth
    dataset = generate(synth, RandomStream(synth.seed))
    out = resolve_output_dir(output_dir, run_config)
    files = write_dataset(dataset, out)
    _record(out / "provenance.json", "simulate", config_payload(run_config), synth.seed, [], files)

    table = Table(title="Synthetic Dataset")
    table.add_column("Domain", style="cyan")
    table.add_column("Samples", justify="right")
    table.add_column("Total count", justify="right")
    for domain in [*dataset.tensor.domains, dataset.test]:
        table.add_row(domain.name, str(domain.num_samples), str(int(domain.counts.sum())))
    console.print(table)
    console.print(f"[green]✓[/green] Dataset written to: {out} (shared factors: {synth.shared_factors})")


@app.command("sweep")
def sweep_experiment(
    config: Optional[Path] = ConfigOption,
    overrides: Optional[List[str]] = SetOption,
    output_dir: Optional[Path] = OutputDirOption,
    seed: Optional[int] = SeedOption,
    workers: Optional[int] = typer.Option(None, "--workers", help="Worker processes"),
    verbose: bool = VerboseOption,
) -> None:
    """Run the variant x condition grid of the config and write report tables."""
    run_config = _load_config(config, overrides, seed)
    with Progress(SpinnerColumn(), TextColumn("[progress.description]{task.description}"), BarColumn(),
                  TextColumn("{task.completed}/{task.total}"), console=console, transient=True) as progress:
        grid = run_config.experiment
        conditions = max(1, len(grid.shared_factors or [])) * max(1, len(grid.target_samples or []))
        total = conditions * len(grid.variants) * (grid.runs or run_config.evaluation.runs)
        task = progress.add_task("Experiment jobs", total=total)

        def advance(result: JobResult) -> None:
            progress.advance(task)

        reports = experiment_from_config(run_config, workers=workers, verbose=verbose, progress=advance)
    out = resolve_output_dir(output_dir, run_config)
    files = write_report_tables(reports, out)
    _record(out / "provenance.json", "sweep", config_payload(run_config), run_config.seed, [], files)

    table = Table(title="Experiment Summary")
    table.add_column("Condition", style="cyan")
    table.add_column("Variant")
    table.add_column("Mean accuracy", justify="right")
    table.add_column("Std", justify="right")
    for report in reports:
        table.add_row(report.condition, report.variant, f"{report.mean:.4f}", f"{report.std:.4f}")
    console.print(table)
    for variant, trend in summarize_trend(reports).items():
        console.print(f"{variant}: spearman(axis, error) = {trend.spearman:+.3f}, pooled SE = {trend.pooled_se:.4f}")
    console.print(f"[green]✓[/green] Report tables written to: {out}")


def _display_geweke(report: GewekeReport) -> None:
    table = Table(title=f"Joint-distribution test: {report.block} ({report.rounds} rounds)")
    table.add_column("Statistic", style="cyan")
    table.add_column("Forward", justify="right")
    table.add_column("Successive", justify="right")
    table.add_column("z", justify="right")
    for stat in report.statistics:
        color = "green" if abs(stat.z_score) <= report.threshold else "red"
        table.add_row(stat.name, f"{stat.forward_mean:.4f} ± {stat.forward_se:.4f}",
                      f"{stat.gibbs_mean:.4f} ± {stat.gibbs_se:.4f}", f"[{color}]{stat.z_score:+.2f}[/{color}]")
    console.print(table)


@app.command()
def geweke(
    block: str = typer.Option("full", "--block", help=f"One of {', '.join(GEWEKE_BLOCKS)} or 'all'"),
    rounds: int = typer.Option(10_000, "--rounds", min=2, help="Draws per simulator"),
    K: int = typer.Option(3, "--K", min=1, help="Truncation level"),
    genes: int = typer.Option(5, "--genes", min=1, help="Number of genes"),
    samples: str = typer.Option("3,3", "--samples", help="Samples per domain, comma separated"),
    prior_value: Optional[float] = typer.Option(None, "--prior-value", help="Set every prior scalar to this"),
    variant: ModelVariant = typer.Option(ModelVariant.BMDL, "--variant", help="Model variant"),
    threshold: float = typer.Option(3.0, "--threshold", help="Largest passing |z|"),
    seed: int = typer.Option(0, "--seed", help="Random seed"),
    output: Optional[Path] = typer.Option(None, "--output", help="Write reports as JSON"),
    verbose: bool = VerboseOption,
) -> None:
    """Compare forward and successive-conditional simulation of the model."""
    if block != "all" and block not in GEWEKE_BLOCKS:
        raise typer.BadParameter(f"unknown block {block!r}", param_hint="--block")
    try:
        J = tuple(int(x) for x in samples.split(",") if x.strip())
    except ValueError as exc:
        raise typer.BadParameter(f"cannot parse {samples!r}", param_hint="--samples") from exc
    hp = Hyperparameters.uniform(prior_value, K) if prior_value is not None else Hyperparameters(K=K)
    blocks = list(GEWEKE_BLOCKS) if block == "all" else [block]
    stream = RandomStream(seed)
    reports = []
    for i, name in enumerate(blocks):
        with console.status(f"block {name}..."):
            report = geweke_test(hp, V=genes, J=J, rounds=rounds, block=name, rng=stream.split(i),
                                 variant=variant, threshold=threshold)
        _display_geweke(report)
        reports.append(report)
    if output is not None:
        atomic_write_json(output, [r.model_dump() for r in reports])
    failed = [r.block for r in reports if not r.passed]
    if failed:
        console.print(f"[red]✗ blocks outside {threshold} SE: {', '.join(failed)}[/red]")
        raise typer.Exit(EXIT_NUMERIC)
    console.print("[green]✓ all blocks agree[/green]")


@app.command()
def version() -> None:
    """Show version information."""
    console.print(f"BMDL v{__version__}")


def cli(argv: Optional[List[str]] = None) -> int:
    """Run the CLI on ``argv`` and return its exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    _invocation[:] = argv
    verbose = "--verbose" in argv
    command = typer.main.get_command(app)
    try:
        result = command.main(args=argv, prog_name="bmdl", standalone_mode=False)
    except click.UsageError as exc:
        exc.show()
        return EXIT_USAGE
    except click.Abort:
        return EXIT_USAGE
    except (ValidationError, ConfigError, PreconditionError) as exc:
        err_console.print(f"[red]Configuration error:[/red] {exc}")
        return EXIT_USAGE
    except (DataError, CheckpointError, ClassifierError) as exc:
        err_console.print(f"[red]Data error:[/red] {exc}")
        return EXIT_DATA
    except (NumericError, ParameterDomainError) as exc:
        err_console.print(f"[red]Numeric failure:[/red] {exc}")
        if verbose:
            err_console.print_exception()
        return EXIT_NUMERIC
    except Exception as exc:  # noqa: BLE001
        err_console.print(f"[red]Unexpected error:[/red] {exc}")
        if verbose:
            err_console.print_exception()
        return EXIT_NUMERIC
    return result if isinstance(result, int) else EXIT_OK


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
