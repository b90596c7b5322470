"""
Count-matrix ingestion and tensor assembly.

Count matrices are tab-delimited text: the header row holds sample ids after a
leading gene-id column name, every further row is a gene id followed by one
non-negative integer per sample. Files are read in row chunks and only the
non-zero cells are kept.
"""

import re
from pathlib import Path
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import yaml
from pydantic import ValidationError

from ..core.errors import (
    CountMatrixParseError,
    DataError,
    EmptyIntersectionError,
    ManifestError,
)
from ..models.config import DomainManifest
from ..models.state import CountTensor, DomainCounts, GeneFilterReport
from ..utils.helpers import PathLike, atomic_write, atomic_write_text

if TYPE_CHECKING:
    from ..core.synth import SynthDataset

CHUNK_ROWS = 2000
_GENE_COLUMN = "\x00gene"
_SPARE_COLUMN = "\x00spare"
_FIELDS_RE = re.compile(r"Expected (\d+) fields in line (\d+), saw (\d+)")


def _read_header(path: Path) -> List[str]:
    with open(path, "r", newline="") as f:
        header = f.readline().rstrip("\r\n")
    if not header:
        raise CountMatrixParseError("empty file", str(path), 1)
    fields = header.split("\t")
    samples = fields[1:]
    if len(set(samples)) != len(samples):
        seen = set()
        duplicate = next(s for s in samples if s in seen or seen.add(s))
        raise CountMatrixParseError(f"duplicate sample id {duplicate!r}", str(path), 1)
    return samples


def load_count_matrix(path: PathLike, name: Optional[str] = None, chunk_rows: int = CHUNK_ROWS) -> DomainCounts:
    """
    Parse one genes x samples count matrix.

    Raises:
        DataError: file missing
        CountMatrixParseError: non-integer or negative cell, ragged row,
            duplicate gene or sample id; the message names line and column
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"count matrix not found: {path}")
    sample_ids = _read_header(path)
    gene_ids: List[str] = []
    seen: Dict[str, int] = {}
    genes, samples, counts = [], [], []

    # explicit names plus one spare column: short rows leave NaN, long rows fill the spare
    columns = [_GENE_COLUMN, *sample_ids, _SPARE_COLUMN]
    reader = pd.read_csv(path, sep="\t", dtype=str, header=None, skiprows=1, names=columns, index_col=False,
                         chunksize=chunk_rows, keep_default_na=False, quoting=3)
    line = 1
    try:
        for chunk in reader:
            too_long = chunk[_SPARE_COLUMN].notna().to_numpy()
            too_short = chunk[columns[:-1]].isna().any(axis=1).to_numpy()
            ragged = too_long | too_short
            if ragged.any():
                r = int(np.flatnonzero(ragged)[0])
                kind = "more" if too_long[r] else "fewer"
                raise CountMatrixParseError(f"row has {kind} fields than the header", str(path), line + 1 + r)
            values = chunk[columns[:-1]].to_numpy(dtype=str)
            for offset, gene in enumerate(values[:, 0]):
                if gene in seen:
                    raise CountMatrixParseError(f"duplicate gene id {gene!r} (first on line {seen[gene]})",
                                                str(path), line + 1 + offset)
                seen[gene] = line + 1 + offset
            cells = np.char.strip(values[:, 1:])
            ok = np.char.isdigit(cells) if cells.size else np.ones(cells.shape, dtype=bool)
            if not ok.all():
                r, c = map(int, np.argwhere(~ok)[0])
                raise CountMatrixParseError(f"cell {cells[r, c]!r} is not a non-negative integer",
                                            str(path), line + 1 + r, sample_ids[c])
            dense = cells.astype(np.int64) if cells.size else np.zeros(cells.shape, dtype=np.int64)
            rows, cols = np.nonzero(dense)
            genes.append(rows + len(gene_ids))
            samples.append(cols)
            counts.append(dense[rows, cols])
            gene_ids.extend(values[:, 0].tolist())
            line += chunk.shape[0]
    except pd.errors.ParserError as exc:
        match = _FIELDS_RE.search(str(exc))
        bad_line = int(match.group(2)) if match else None
        raise CountMatrixParseError(f"ragged row ({exc})", str(path), bad_line) from exc

    genes_arr = np.concatenate(genes) if genes else np.zeros(0, dtype=np.int64)
    samples_arr = np.concatenate(samples) if samples else np.zeros(0, dtype=np.int64)
    counts_arr = np.concatenate(counts) if counts else np.zeros(0, dtype=np.int64)
    order = np.lexsort((genes_arr, samples_arr))
    return DomainCounts(
        name=name or path.stem,
        gene_ids=gene_ids,
        sample_ids=sample_ids,
        genes=genes_arr[order].astype(np.int64),
        samples=samples_arr[order].astype(np.int64),
        counts=counts_arr[order].astype(np.int64),
    )


def write_count_matrix(domain: DomainCounts, path: PathLike, gene_column: str = "gene_id",
                       block_rows: int = CHUNK_ROWS) -> Path:
    """Write ``domain`` in the count-matrix format, one block of genes at a time."""
    by_gene = np.argsort(domain.genes, kind="stable")
    genes, samples, counts = domain.genes[by_gene], domain.samples[by_gene], domain.counts[by_gene]

    def writer(f):
        f.write("\t".join([gene_column, *domain.sample_ids]) + "\n")
        for start in range(0, domain.num_genes, block_rows):
            stop = min(start + block_rows, domain.num_genes)
            lo, hi = np.searchsorted(genes, [start, stop])
            block = np.zeros((stop - start, domain.num_samples), dtype=np.int64)
            np.add.at(block, (genes[lo:hi] - start, samples[lo:hi]), counts[lo:hi])
            frame = pd.DataFrame(block, index=domain.gene_ids[start:stop])
            frame.to_csv(f, sep="\t", header=False)

    return atomic_write(path, writer)


def load_labels(path: PathLike) -> Dict[str, int]:
    """Two-column TSV with header: sample id, integer label."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"labels file not found: {path}")
    frame = pd.read_csv(path, sep="\t", dtype=str, keep_default_na=False)
    if frame.shape[1] < 2:
        raise DataError(f"{path}: labels need a sample id and a label column")
    ids = frame.iloc[:, 0].tolist()
    raw = frame.iloc[:, 1].str.strip()
    bad = ~raw.str.fullmatch(r"-?\d+")
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise CountMatrixParseError(f"label {raw.iloc[row]!r} is not an integer", str(path), row + 2,
                                    frame.columns[1])
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate sample ids")
    return dict(zip(ids, raw.astype(np.int64).tolist()))


def write_labels(sample_ids: Sequence[str], labels: Sequence[int], path: PathLike) -> Path:
    lines = ["sample_id\tlabel"] + [f"{s}\t{int(l)}" for s, l in zip(sample_ids, labels)]
    return atomic_write_text(path, "\n".join(lines) + "\n")


def attach_labels(domain: DomainCounts, labels: Dict[str, int]) -> DomainCounts:
    missing = [s for s in domain.sample_ids if s not in labels]
    if missing:
        raise DataError(f"domain {domain.name!r}: no label for {len(missing)} samples (first {missing[0]!r})")
    domain.labels = np.array([labels[s] for s in domain.sample_ids], dtype=np.int64)
    return domain


def load_manifest(path: PathLike) -> DomainManifest:
    """Read a YAML manifest; relative paths resolve against its directory and must exist."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    try:
        payload = yaml.safe_load(path.read_text()) or {}
        manifest = DomainManifest.model_validate(payload)
    except yaml.YAMLError as exc:
        raise ManifestError(f"{path}: invalid YAML ({exc})") from exc
    except ValidationError as exc:
        raise ManifestError(f"{path}: {exc}") from exc

    base = path.parent

    def resolve(value: Optional[str]) -> Optional[str]:
        if value is None:
            return None
        resolved = Path(value) if Path(value).is_absolute() else base / value
        if not resolved.is_file():
            raise ManifestError(f"{path}: file not found: {resolved}")
        return str(resolved)

    for entry in manifest.domains:
        entry.counts = resolve(entry.counts)
        entry.labels = resolve(entry.labels)
    manifest.gene_allowlist = resolve(manifest.gene_allowlist)
    return manifest


def read_gene_allowlist(path: PathLike) -> List[str]:
    with open(path) as f:
        return [line.strip() for line in f if line.strip() and not line.startswith("#")]


def assemble(manifest: DomainManifest) -> CountTensor:
    """
    Load every domain and project them onto one gene axis.

    The axis is the sorted intersection of the domains' genes, restricted to
    the allowlist when given, minus genes whose total count across all domains
    is below ``min_total_count``.
    """
    domains = []
    for entry in manifest.domains:
        domain = load_count_matrix(entry.counts, name=entry.name)
        domain.role = entry.role
        if entry.labels is not None:
            attach_labels(domain, load_labels(entry.labels))
        domains.append(domain)

    shared = set(domains[0].gene_ids)
    for domain in domains[1:]:
        shared &= set(domain.gene_ids)
    if not shared:
        raise EmptyIntersectionError("no gene is present in every domain")
    report = GeneFilterReport(
        not_shared={d.name: sorted(set(d.gene_ids) - shared) for d in domains if set(d.gene_ids) - shared})

    if manifest.gene_allowlist is not None:
        allowed = set(read_gene_allowlist(manifest.gene_allowlist))
        report.not_allowlisted = sorted(shared - allowed)
        shared &= allowed
    axis = sorted(shared)
    domains = [d.reindex_genes(axis) for d in domains]

    if manifest.min_total_count:
        totals = sum(d.gene_totals() for d in domains)
        low = totals < manifest.min_total_count
        report.low_count = [g for g, drop in zip(axis, low) if drop]
        axis = [g for g, drop in zip(axis, low) if not drop]
        domains = [d.reindex_genes(axis) for d in domains]
    if not axis:
        raise EmptyIntersectionError("every shared gene was filtered out")
    return CountTensor(domains=domains, target_index=manifest.target_index, filter_report=report)


def write_manifest(path: PathLike, domains: Sequence[Dict[str, str]], min_total_count: Optional[int] = None) -> Path:
    payload = {"domains": list(domains), "min_total_count": min_total_count}
    return atomic_write_text(path, yaml.safe_dump(payload, sort_keys=False))


def write_dataset(dataset: "SynthDataset", out_dir: PathLike, min_total_count: Optional[int] = None) -> List[Path]:
    """
    Count matrices, label files, a manifest over the training domains, the
    held-out target test split and a ``truth.npz`` ground-truth sidecar.
    """
    out_dir = Path(out_dir)
    written: List[Path] = []
    entries = []
    for domain in dataset.tensor.domains:
        written.append(write_count_matrix(domain, out_dir / f"{domain.name}.tsv"))
        entry = {"name": domain.name, "counts": f"{domain.name}.tsv", "role": domain.role}
        if domain.labels is not None:
            written.append(write_labels(domain.sample_ids, domain.labels, out_dir / f"{domain.name}_labels.tsv"))
            entry["labels"] = f"{domain.name}_labels.tsv"
        entries.append(entry)
    test = dataset.test
    written.append(write_count_matrix(test, out_dir / f"{test.name}.tsv"))
    written.append(write_labels(test.sample_ids, test.labels, out_dir / f"{test.name}_labels.tsv"))
    written.append(write_manifest(out_dir / "manifest.yaml", entries, min_total_count))
    truth = dataset.ground_truth()
    written.append(atomic_write(out_dir / "truth.npz", lambda f: np.savez(f, **truth), binary=True))
    return written
