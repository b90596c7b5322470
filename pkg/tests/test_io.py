"""Tests for count-matrix ingestion, persistence formats and run configuration."""

import json

import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

from bmdl.core.errors import (
    CountMatrixParseError,
    ConfigError,
    DataError,
    EmptyIntersectionError,
    ManifestError,
)
from bmdl.core.synth import generate
from bmdl.io.config import (
    DEFAULT_OUTPUT_DIR,
    OUTPUT_DIR_ENV,
    apply_override,
    config_hash,
    dump_run_config,
    load_run_config,
    resolve_output_dir,
)
from bmdl.io.counts import (
    assemble,
    attach_labels,
    load_count_matrix,
    load_labels,
    load_manifest,
    write_count_matrix,
    write_dataset,
)
from bmdl.io.persistence import (
    build_provenance,
    read_feature_matrix,
    read_report_runs,
    tensor_fingerprint,
    write_feature_matrix,
    write_posterior_summary,
    write_report_tables,
)
from bmdl.models.config import ModelVariant, SynthConfig
from bmdl.models.report import ExperimentReport
from bmdl.models.state import FeatureMatrix, PosteriorSummary


def write_text(path, text):
    path.write_text(text)
    return path


@pytest.mark.unit
class TestCountMatrix:

    def test_parse(self, tmp_path):
        path = write_text(tmp_path / "d.tsv", "gene\ta\tb\tc\nG1\t0\t5\t1\nG2\t2\t0\t0\n")
        domain = load_count_matrix(path)
        assert domain.name == "d"
        assert domain.gene_ids == ["G1", "G2"]
        assert domain.sample_ids == ["a", "b", "c"]
        np.testing.assert_array_equal(domain.to_dense(), [[0, 5, 1], [2, 0, 0]])
        assert domain.nnz == 3
        # sample-major storage
        assert list(domain.samples) == sorted(domain.samples)

    def test_small_chunks(self, tmp_path):
        rows = "".join(f"G{v}\t{v}\t{v % 3}\n" for v in range(25))
        path = write_text(tmp_path / "d.tsv", "gene\ta\tb\n" + rows)
        domain = load_count_matrix(path, chunk_rows=4)
        assert domain.num_genes == 25
        assert domain.to_dense()[24].tolist() == [24, 0]

    @pytest.mark.parametrize("body, line, column", [
        ("G1\t1\tx\n", 2, "b"),
        ("G1\t1\t2\nG2\t-3\t0\n", 3, "a"),
        ("G1\t1.5\t2\n", 2, "a"),
    ])
    def test_bad_cells(self, tmp_path, body, line, column):
        path = write_text(tmp_path / "d.tsv", "gene\ta\tb\n" + body)
        with pytest.raises(CountMatrixParseError) as info:
            load_count_matrix(path)
        assert info.value.line == line
        assert info.value.column == column

    @pytest.mark.parametrize("body", ["G1\t1\n", "G1\t1\t2\t3\n"])
    def test_ragged_rows(self, tmp_path, body):
        path = write_text(tmp_path / "d.tsv", "gene\ta\tb\nG0\t0\t0\n" + body)
        with pytest.raises(CountMatrixParseError) as info:
            load_count_matrix(path)
        assert info.value.line == 3

    def test_duplicate_ids(self, tmp_path):
        genes = write_text(tmp_path / "g.tsv", "gene\ta\nG1\t1\nG1\t2\n")
        with pytest.raises(CountMatrixParseError, match="duplicate gene"):
            load_count_matrix(genes)
        samples = write_text(tmp_path / "s.tsv", "gene\ta\ta\nG1\t1\t2\n")
        with pytest.raises(CountMatrixParseError, match="duplicate sample"):
            load_count_matrix(samples)

    def test_missing_and_empty_files(self, tmp_path):
        with pytest.raises(DataError):
            load_count_matrix(tmp_path / "absent.tsv")
        with pytest.raises(CountMatrixParseError):
            load_count_matrix(write_text(tmp_path / "empty.tsv", ""))

    def test_write_then_read(self, tmp_path, small_tensor):
        domain = small_tensor.domains[0]
        path = write_count_matrix(domain, tmp_path / "out.tsv", block_rows=4)
        loaded = load_count_matrix(path)
        assert loaded.gene_ids == domain.gene_ids
        assert loaded.sample_ids == domain.sample_ids
        np.testing.assert_array_equal(loaded.to_dense(), domain.to_dense())


@pytest.mark.unit
class TestLabels:

    def test_load_and_attach(self, tmp_path, small_tensor):
        domain = small_tensor.domains[1]
        lines = ["sample_id\tlabel"] + [f"{s}\t{i % 2}" for i, s in enumerate(reversed(domain.sample_ids))]
        labels = load_labels(write_text(tmp_path / "l.tsv", "\n".join(lines) + "\n"))
        attach_labels(domain, labels)
        assert domain.labels.tolist() == [labels[s] for s in domain.sample_ids]

    def test_bad_label(self, tmp_path):
        with pytest.raises(CountMatrixParseError):
            load_labels(write_text(tmp_path / "l.tsv", "sample_id\tlabel\na\tyes\n"))

    def test_missing_label(self, small_tensor):
        with pytest.raises(DataError):
            attach_labels(small_tensor.domains[0], {"nobody": 1})


@pytest.fixture
def manifest_dir(tmp_path):
    write_text(tmp_path / "src.tsv", "gene\ts1\ts2\nA\t10\t20\nB\t30\t1\nC\t5\t5\nD\t1\t0\n")
    write_text(tmp_path / "tgt.tsv", "gene\tt1\tt2\nB\t3\t1\nA\t4\t4\nC\t0\t1\nE\t9\t9\n")
    write_text(tmp_path / "tgt_labels.tsv", "sample_id\tlabel\nt1\t0\nt2\t1\n")
    return tmp_path


def write_manifest_yaml(directory, extra=""):
    text = ("domains:\n"
            "  - {name: source, counts: src.tsv}\n"
            "  - {name: target, counts: tgt.tsv, role: target, labels: tgt_labels.tsv}\n"
            f"min_total_count: 0\n{extra}")
    return write_text(directory / "manifest.yaml", text)


@pytest.mark.unit
class TestManifest:

    def test_assemble_intersection(self, manifest_dir):
        tensor = assemble(load_manifest(write_manifest_yaml(manifest_dir)))
        assert tensor.gene_ids == ["A", "B", "C"]
        assert tensor.target_index == 1
        np.testing.assert_array_equal(tensor.domains[1].to_dense(), [[4, 4], [3, 1], [0, 1]])
        assert tensor.target.labels.tolist() == [0, 1]
        assert tensor.filter_report.not_shared == {"source": ["D"], "target": ["E"]}

    def test_min_total_count(self, manifest_dir):
        path = write_manifest_yaml(manifest_dir)
        path.write_text(path.read_text().replace("min_total_count: 0", "min_total_count: 12"))
        tensor = assemble(load_manifest(path))
        assert tensor.gene_ids == ["A", "B"]
        assert tensor.filter_report.low_count == ["C"]

    def test_allowlist(self, manifest_dir):
        write_text(manifest_dir / "allow.txt", "# keep\nB\nC\n")
        tensor = assemble(load_manifest(write_manifest_yaml(manifest_dir, "gene_allowlist: allow.txt\n")))
        assert tensor.gene_ids == ["B", "C"]
        assert tensor.filter_report.not_allowlisted == ["A"]

    def test_empty_intersection(self, manifest_dir):
        write_text(manifest_dir / "allow.txt", "Z\n")
        with pytest.raises(EmptyIntersectionError):
            assemble(load_manifest(write_manifest_yaml(manifest_dir, "gene_allowlist: allow.txt\n")))

    def test_missing_file(self, manifest_dir):
        (manifest_dir / "src.tsv").unlink()
        with pytest.raises(ManifestError, match="file not found"):
            load_manifest(write_manifest_yaml(manifest_dir))

    def test_needs_one_target(self, tmp_path):
        write_text(tmp_path / "a.tsv", "gene\tx\nA\t1\n")
        path = write_text(tmp_path / "m.yaml", "domains:\n  - {name: a, counts: a.tsv}\n")
        with pytest.raises(ManifestError):
            load_manifest(path)

    def test_write_dataset_round_trip(self, tmp_path):
        dataset = generate(SynthConfig(num_features=20, factors_per_domain=3, shared_factors=1, source_samples=4,
                                       target_samples=4))
        written = write_dataset(dataset, tmp_path)
        assert (tmp_path / "truth.npz") in written
        tensor = assemble(load_manifest(tmp_path / "manifest.yaml"))
        assert tensor_fingerprint(tensor) == tensor_fingerprint(dataset.tensor)
        test = load_count_matrix(tmp_path / "target_test.tsv")
        np.testing.assert_array_equal(test.to_dense(), dataset.test.to_dense())


@pytest.mark.unit
class TestPersistence:

    def test_feature_matrix_round_trip(self, tmp_path):
        features = FeatureMatrix(theta_bar=np.array([[0.1, 1e-300], [2.0 / 3.0, 5.5]]), sample_ids=["x", "007"],
                                 labels=np.array([0, 1]))
        loaded = read_feature_matrix(write_feature_matrix(features, tmp_path / "f.tsv"))
        np.testing.assert_array_equal(loaded.theta_bar, features.theta_bar)
        assert loaded.sample_ids == ["x", "007"]
        assert loaded.labels.tolist() == [0, 1]

    def test_feature_matrix_header(self, tmp_path):
        features = FeatureMatrix(theta_bar=np.ones((1, 3)), sample_ids=["a"])
        path = write_feature_matrix(features, tmp_path / "f.tsv")
        assert path.read_text().splitlines()[0] == "sample_id\tk1\tk2\tk3"
        assert read_feature_matrix(path).labels is None

    def test_bad_feature_matrix(self, tmp_path):
        with pytest.raises(DataError):
            read_feature_matrix(write_text(tmp_path / "f.tsv", "id\tk1\na\t1\n"))

    def test_posterior_summary_tables(self, tmp_path):
        summary = PosteriorSummary(phi_mean=np.full((2, 2), 0.5), r_last=np.ones((2, 1)),
                                   z_activation=np.ones((2, 1)), log_joint_trace=[-3.0, -2.5],
                                   active_factor_count=[2], gene_ids=["A", "B"], domain_names=["t"])
        written = write_posterior_summary(summary, tmp_path)
        assert {p.name for p in written} == {"phi_mean.tsv", "r_last.tsv", "z_activation.tsv", "log_joint.tsv",
                                            "summary.json"}
        phi = pd.read_csv(tmp_path / "phi_mean.tsv", sep="\t", index_col=0)
        assert phi.index.tolist() == ["A", "B"]
        assert json.loads((tmp_path / "summary.json").read_text())["active_factor_count"] == [2]

    def test_report_tables(self, tmp_path):
        reports = [ExperimentReport(condition="c", variant="BMDL", accuracies=[0.5, 0.75], seeds=[3, 4])]
        write_report_tables(reports, tmp_path)
        runs = read_report_runs(tmp_path / "runs.csv")
        assert runs.columns.tolist() == ["condition", "variant", "run", "seed", "accuracy"]
        assert runs["accuracy"].tolist() == [0.5, 0.75]
        summary = pd.read_csv(tmp_path / "summary.csv")
        assert summary.loc[0, "mean"] == pytest.approx(0.625)

    def test_report_rejects_inconsistent_mean(self):
        with pytest.raises(ValidationError):
            ExperimentReport(condition="c", variant="BMDL", accuracies=[0.5], mean=0.9)

    def test_provenance(self, tmp_path):
        source = write_text(tmp_path / "in.txt", "data")
        record = build_provenance("fit", ["fit", "m.yaml"], {"seed": 1}, 1, inputs=[source],
                                  outputs=[tmp_path / "out"])
        assert record["inputs"][str(source)] == "3a6eb0790f39ac87c94f3856b2dd2c5d110e6811602261a9a923d3bb23adc8b7"
        assert record["versions"]["bmdl"]
        assert len(record["config_sha256"]) == 64


@pytest.mark.unit
class TestRunConfig:

    def test_defaults(self):
        config = load_run_config()
        assert config.variant == ModelVariant.BMDL
        assert config.chain.iterations == 3000
        assert config.hyperparameters.K == 100

    def test_file_and_overrides(self, tmp_path):
        path = write_text(tmp_path / "c.yaml", "seed: 4\nchain: {iterations: 50, burn_in: 10}\n")
        config = load_run_config(path, ["chain.thin=5", "variant=HGNBP", "hyperparameters.K=8"])
        assert config.seed == 4
        assert config.chain.thin == 5
        assert config.chain.iterations == 50
        assert config.variant == ModelVariant.HGNBP
        assert config.hyperparameters.K == 8

    def test_override_parsing(self):
        payload = apply_override({}, "experiment.shared_factors=[0, 5, 10]")
        assert payload == {"experiment": {"shared_factors": [0, 5, 10]}}
        with pytest.raises(ConfigError):
            apply_override({}, "no_equals_sign")
        with pytest.raises(ConfigError):
            apply_override({"seed": 3}, "seed.inner=1")

    def test_validation_errors(self, tmp_path):
        with pytest.raises(ValidationError):
            load_run_config(overrides=["chain.burn_in=5000"])
        with pytest.raises(ValidationError):
            load_run_config(overrides=["unknown_section=1"])
        with pytest.raises(ConfigError):
            load_run_config(tmp_path / "missing.yaml")
        with pytest.raises(ConfigError):
            load_run_config(write_text(tmp_path / "list.yaml", "- 1\n- 2\n"))

    def test_dump_reloads_identically(self, tmp_path):
        config = load_run_config(overrides=["seed=9"])
        reloaded = load_run_config(write_text(tmp_path / "c.yaml", dump_run_config(config)))
        assert config_hash(reloaded) == config_hash(config)

    def test_output_dir_resolution(self, monkeypatch):
        monkeypatch.delenv(OUTPUT_DIR_ENV, raising=False)
        assert str(resolve_output_dir(None)) == DEFAULT_OUTPUT_DIR
        monkeypatch.setenv(OUTPUT_DIR_ENV, "/tmp/env_out")
        assert str(resolve_output_dir(None)) == "/tmp/env_out"
        config = load_run_config(overrides=["output_dir=cfg_out"])
        assert str(resolve_output_dir(None, config)) == "cfg_out"
        assert str(resolve_output_dir("cli_out", config)) == "cli_out"
