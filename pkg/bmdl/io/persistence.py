"""
On-disk formats: checkpoints, feature matrices, chain summaries, report tables
and provenance records. Every writer goes through an atomic rename.

Checkpoint layout (a single ``.npz`` archive):

    meta                JSON string: format "bmdl-checkpoint", version, iteration,
                        variant, hyperparameters, chain config, stream state,
                        tensor fingerprint, data source, extra
    state/<name>        LatentState arrays (phi, r, s, z, pi, c_d, scalars,
                        theta_<d>, p_<d>, c_j_<d>)
    acc/<name>          accumulators (phi_sum, r_sum, s_sum, z_sum, trace, counters)
"""

import importlib.metadata
import json
import platform
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

from ..core.errors import CheckpointError, DataError
from ..models.report import ExperimentReport
from ..models.state import ChainAccumulators, CountTensor, FeatureMatrix, LatentState, PosteriorSummary
from ..utils.helpers import (
    PathLike,
    array_hash,
    atomic_write,
    atomic_write_json,
    calculate_file_hash,
    canonical_hash,
)

CHECKPOINT_FORMAT = "bmdl-checkpoint"
CHECKPOINT_VERSION = 1
REPORT_COLUMNS = ["condition", "variant", "run", "seed", "accuracy"]


def tensor_fingerprint(tensor: CountTensor) -> str:
    """Hash of gene axis, sample ids and every stored count."""
    return canonical_hash({
        "genes": list(tensor.gene_ids),
        "domains": [
            {"name": domain.name, "samples": list(domain.sample_ids),
             "entries": array_hash(domain.genes, domain.samples, domain.counts)}
            for domain in tensor.domains
        ],
    })


@dataclass
class Checkpoint:
    state: LatentState
    accumulators: ChainAccumulators
    iteration: int
    rng_state: Dict[str, Any]
    variant: str
    hyperparameters: Dict[str, Any]
    chain_config: Dict[str, Any]
    tensor_fingerprint: str
    data_source: Optional[str] = None
    extra: Dict[str, Any] = field(default_factory=dict)


def save_checkpoint(path: PathLike, checkpoint: Checkpoint) -> Path:
    state = checkpoint.state
    acc = checkpoint.accumulators
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "iteration": checkpoint.iteration,
        "num_domains": state.D,
        "variant": checkpoint.variant,
        "hyperparameters": checkpoint.hyperparameters,
        "chain_config": checkpoint.chain_config,
        "rng_state": checkpoint.rng_state,
        "tensor_fingerprint": checkpoint.tensor_fingerprint,
        "data_source": checkpoint.data_source,
        "extra": checkpoint.extra,
    }
    arrays = {f"state/{name}": value for name, value in state.arrays().items()}
    arrays.update({
        "acc/phi_sum": acc.phi_sum,
        "acc/r_sum": acc.r_sum,
        "acc/s_sum": acc.s_sum,
        "acc/z_sum": acc.z_sum,
        "acc/trace": np.asarray(acc.trace, dtype=float),
        "acc/counters": np.array([acc.collected, acc.degenerate, acc.crt_draws], dtype=np.int64),
        "meta": np.array(json.dumps(meta, sort_keys=True)),
    })
    return atomic_write(path, lambda f: np.savez(f, **arrays), binary=True)


def load_checkpoint(path: PathLike) -> Checkpoint:
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as archive:
            meta = json.loads(str(archive["meta"]))
            if meta.get("format") != CHECKPOINT_FORMAT:
                raise CheckpointError(f"{path}: not a checkpoint (format {meta.get('format')!r})")
            if meta.get("version") != CHECKPOINT_VERSION:
                raise CheckpointError(f"{path}: unsupported checkpoint version {meta.get('version')!r}")
            D = int(meta["num_domains"])
            scalars = archive["state/scalars"]
            state = LatentState(
                phi=archive["state/phi"],
                theta=[archive[f"state/theta_{d}"] for d in range(D)],
                r=archive["state/r"],
                s=archive["state/s"],
                z=archive["state/z"],
                pi=archive["state/pi"],
                p=[archive[f"state/p_{d}"] for d in range(D)],
                c_j=[archive[f"state/c_j_{d}"] for d in range(D)],
                c_d=archive["state/c_d"],
                c0=float(scalars[0]),
                gamma0=float(scalars[1]),
                eta=float(scalars[2]),
            )
            counters = archive["acc/counters"]
            accumulators = ChainAccumulators(
                phi_sum=archive["acc/phi_sum"],
                r_sum=archive["acc/r_sum"],
                s_sum=archive["acc/s_sum"],
                z_sum=archive["acc/z_sum"],
                collected=int(counters[0]),
                trace=[float(x) for x in archive["acc/trace"]],
                degenerate=int(counters[1]),
                crt_draws=int(counters[2]),
            )
    except CheckpointError:
        raise
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint ({exc})") from exc

    return Checkpoint(
        state=state,
        accumulators=accumulators,
        iteration=int(meta["iteration"]),
        rng_state=meta["rng_state"],
        variant=meta["variant"],
        hyperparameters=meta["hyperparameters"],
        chain_config=meta["chain_config"],
        tensor_fingerprint=meta["tensor_fingerprint"],
        data_source=meta.get("data_source"),
        extra=meta.get("extra") or {},
    )


# ---------------------------------------------------------------------------
# Feature matrices
# ---------------------------------------------------------------------------

def _factor_columns(K: int) -> List[str]:
    return [f"k{k + 1}" for k in range(K)]


def write_feature_matrix(features: FeatureMatrix, path: PathLike) -> Path:
    """TSV: sample_id, optional label, then one column per factor (k1..kK)."""
    frame = pd.DataFrame(features.theta_bar, columns=_factor_columns(features.num_factors))
    if features.labels is not None:
        frame.insert(0, "label", np.asarray(features.labels, dtype=np.int64))
    frame.insert(0, "sample_id", list(features.sample_ids))
    return atomic_write(path, lambda f: frame.to_csv(f, sep="\t", index=False, float_format="%.17g"))


def read_feature_matrix(path: PathLike) -> FeatureMatrix:
    try:
        frame = pd.read_csv(path, sep="\t", dtype={"sample_id": str}, float_precision="round_trip")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataError(f"{path}: cannot read feature matrix ({exc})") from exc
    if "sample_id" not in frame.columns:
        raise DataError(f"{path}: missing sample_id column")
    factor_cols = [c for c in frame.columns if c.startswith("k") and c[1:].isdigit()]
    if not factor_cols:
        raise DataError(f"{path}: no factor columns")
    labels = frame["label"].to_numpy(dtype=np.int64) if "label" in frame.columns else None
    return FeatureMatrix(
        theta_bar=frame[factor_cols].to_numpy(dtype=float),
        sample_ids=frame["sample_id"].tolist(),
        labels=labels,
    )


# ---------------------------------------------------------------------------
# Chain summaries and reports
# ---------------------------------------------------------------------------

def write_posterior_summary(summary: PosteriorSummary, out_dir: PathLike) -> List[Path]:
    out_dir = Path(out_dir)
    K = summary.phi_mean.shape[1]
    factors = _factor_columns(K)
    domains = summary.domain_names or [f"domain{d}" for d in range(summary.r_last.shape[1])]
    tables = {
        "phi_mean.tsv": pd.DataFrame(summary.phi_mean, index=pd.Index(summary.gene_ids or None, name="gene_id"),
                                     columns=factors),
        "r_last.tsv": pd.DataFrame(summary.r_last, index=pd.Index(factors, name="factor"), columns=domains),
        "z_activation.tsv": pd.DataFrame(summary.z_activation, index=pd.Index(factors, name="factor"),
                                         columns=domains),
        "log_joint.tsv": pd.DataFrame({"log_joint": summary.log_joint_trace},
                                      index=pd.RangeIndex(len(summary.log_joint_trace), name="sample")),
    }
    written = []
    for name, frame in tables.items():
        written.append(atomic_write(out_dir / name,
                                    lambda f, frame=frame: frame.to_csv(f, sep="\t", float_format="%.17g")))
    written.append(atomic_write_json(out_dir / "summary.json", {
        "variant": summary.variant,
        "iterations": summary.iterations,
        "samples_collected": summary.samples_collected,
        "active_factor_count": list(summary.active_factor_count),
        "domains": domains,
        "target_index": summary.target_index,
        "degenerate_entries": summary.degenerate_entries,
        "crt_draws": summary.crt_draws,
        "warnings": list(summary.warnings),
    }))
    return written


def report_frames(reports: Sequence[ExperimentReport]) -> Dict[str, pd.DataFrame]:
    rows = [record.model_dump() for report in reports for record in report.records()]
    runs = pd.DataFrame(rows, columns=REPORT_COLUMNS)
    summary = pd.DataFrame(
        [{"condition": r.condition, "variant": r.variant, "runs": len(r.accuracies), "mean": r.mean, "std": r.std}
         for r in reports],
        columns=["condition", "variant", "runs", "mean", "std"],
    )
    return {"runs": runs, "summary": summary}


def write_report_tables(reports: Sequence[ExperimentReport], out_dir: PathLike) -> List[Path]:
    """runs.csv (condition, variant, run, seed, accuracy) and summary.csv (mean, std)."""
    out_dir = Path(out_dir)
    frames = report_frames(reports)
    return [
        atomic_write(out_dir / "runs.csv", lambda f: frames["runs"].to_csv(f, index=False, float_format="%.17g")),
        atomic_write(out_dir / "summary.csv",
                     lambda f: frames["summary"].to_csv(f, index=False, float_format="%.17g")),
    ]


def read_report_runs(path: PathLike) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")


# ---------------------------------------------------------------------------
# Provenance
# ---------------------------------------------------------------------------

def _package_version(name: str) -> Optional[str]:
    try:
        return importlib.metadata.version(name)
    except importlib.metadata.PackageNotFoundError:
        return None


def build_provenance(command: str, argv: Sequence[str], config: Dict[str, Any], seed: int,
                     inputs: Iterable[PathLike] = (), outputs: Iterable[PathLike] = ()) -> Dict[str, Any]:
    """Record sufficient to regenerate a command's outputs."""
    from .. import __version__

    return {
        "command": command,
        "argv": list(argv),
        "config": config,
        "config_sha256": canonical_hash(config),
        "seed": seed,
        "versions": {
            "bmdl": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": _package_version("scipy"),
            "pandas": pd.__version__,
        },
        "platform": sys.platform,
        "inputs": {str(p): calculate_file_hash(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "created_utc": datetime.now(timezone.utc).isoformat(),
    }


def write_provenance(path: PathLike, record: Dict[str, Any]) -> Path:
    return atomic_write_json(path, record)
