"""Tests for the command-line interface."""

import json

import pytest

from bmdl import __version__
from bmdl.cli.main import EXIT_DATA, EXIT_OK, EXIT_USAGE, cli

SYNTH = ["--set", "synth.num_features=20", "--set", "synth.factors_per_domain=3", "--set", "synth.shared_factors=1",
         "--set", "synth.source_samples=6", "--set", "synth.target_samples=4"]
FIT = ["--set", "hyperparameters.K=3", "--set", "chain.iterations=8", "--set", "chain.burn_in=3", "--seed", "2"]
EXTRACT = ["--set", "extraction.iterations=6", "--set", "extraction.collect_last=3"]


@pytest.fixture
def dataset_dir(tmp_path):
    out = tmp_path / "data"
    assert cli(["simulate", "--output-dir", str(out), *SYNTH]) == EXIT_OK
    return out


@pytest.mark.cli
class TestWorkflow:

    def test_simulate_outputs(self, dataset_dir):
        for name in ["manifest.yaml", "source.tsv", "target.tsv", "target_labels.tsv", "target_test.tsv",
                     "target_test_labels.tsv", "truth.npz", "provenance.json"]:
            assert (dataset_dir / name).exists(), name
        record = json.loads((dataset_dir / "provenance.json").read_text())
        assert record["command"] == "simulate"
        assert record["config"]["synth"]["num_features"] == 20

    def test_fit_extract_evaluate(self, dataset_dir, tmp_path):
        fit_dir = tmp_path / "fit"
        assert cli(["fit", str(dataset_dir / "manifest.yaml"), "-o", str(fit_dir), *FIT]) == EXIT_OK
        for name in ["checkpoint.npz", "phi_mean.tsv", "r_last.tsv", "z_activation.tsv", "summary.json",
                     "provenance.json"]:
            assert (fit_dir / name).exists(), name

        checkpoint = str(fit_dir / "checkpoint.npz")
        train = tmp_path / "train.tsv"
        test = tmp_path / "test.tsv"
        assert cli(["extract", checkpoint, str(dataset_dir / "target.tsv"), "-o", str(train),
                    "--labels", str(dataset_dir / "target_labels.tsv"), *EXTRACT]) == EXIT_OK
        assert cli(["extract", checkpoint, str(dataset_dir / "target_test.tsv"), "-o", str(test),
                    "--labels", str(dataset_dir / "target_test_labels.tsv"), *EXTRACT]) == EXIT_OK
        assert (tmp_path / "train.tsv.provenance.json").exists()

        eval_dir = tmp_path / "eval"
        assert cli(["evaluate", str(train), str(test), "-o", str(eval_dir), "--C", "2.0"]) == EXIT_OK
        assert (eval_dir / "runs.csv").exists()
        record = json.loads((eval_dir / "provenance.json").read_text())
        assert record["config"]["evaluation"]["C"] == 2.0

    def test_stop_and_resume_matches_full_fit(self, dataset_dir, tmp_path):
        manifest = str(dataset_dir / "manifest.yaml")
        full, split = tmp_path / "full", tmp_path / "split"
        assert cli(["fit", manifest, "-o", str(full), *FIT]) == EXIT_OK
        assert cli(["fit", manifest, "-o", str(split), "--stop-after", "4", *FIT]) == EXIT_OK
        assert not (split / "phi_mean.tsv").exists()
        assert cli(["resume", str(split / "checkpoint.npz")]) == EXIT_OK
        for name in ["phi_mean.tsv", "r_last.tsv", "log_joint.tsv"]:
            assert (split / name).read_text() == (full / name).read_text()

    def test_variant_option(self, dataset_dir, tmp_path):
        out = tmp_path / "target_only"
        assert cli(["fit", str(dataset_dir / "manifest.yaml"), "-o", str(out), "--variant", "TARGET_ONLY",
                    *FIT]) == EXIT_OK
        assert json.loads((out / "summary.json").read_text())["domains"] == ["target"]

    def test_geweke_block(self, tmp_path):
        output = tmp_path / "geweke.json"
        code = cli(["geweke", "--block", "p", "--rounds", "200", "--prior-value", "2.0", "--threshold", "6",
                    "--output", str(output)])
        assert code == EXIT_OK
        reports = json.loads(output.read_text())
        assert reports[0]["block"] == "p"
        assert {s["name"] for s in reports[0]["statistics"]} >= {"p11", "total"}


@pytest.mark.cli
class TestExitCodes:

    def test_version(self, capsys):
        assert cli(["--version"]) == EXIT_OK
        assert __version__ in capsys.readouterr().out
        assert cli(["version"]) == EXIT_OK

    def test_unknown_command(self):
        assert cli(["frobnicate"]) == EXIT_USAGE

    def test_unknown_geweke_block(self):
        assert cli(["geweke", "--block", "nope"]) == EXIT_USAGE

    def test_invalid_config_value(self, dataset_dir, tmp_path):
        code = cli(["fit", str(dataset_dir / "manifest.yaml"), "-o", str(tmp_path / "x"),
                    "--set", "chain.burn_in=999999"])
        assert code == EXIT_USAGE

    def test_malformed_override(self, dataset_dir):
        assert cli(["fit", str(dataset_dir / "manifest.yaml"), "--set", "chain.iterations"]) == EXIT_USAGE

    def test_missing_manifest(self, tmp_path):
        assert cli(["fit", str(tmp_path / "absent.yaml"), *FIT]) == EXIT_DATA

    def test_corrupt_checkpoint(self, dataset_dir, tmp_path):
        broken = tmp_path / "broken.npz"
        broken.write_bytes(b"junk")
        code = cli(["extract", str(broken), str(dataset_dir / "target.tsv"), "-o", str(tmp_path / "f.tsv")])
        assert code == EXIT_DATA

    def test_malformed_counts(self, tmp_path):
        (tmp_path / "a.tsv").write_text("gene\tx\nA\tone\n")
        (tmp_path / "m.yaml").write_text("domains:\n  - {name: a, counts: a.tsv, role: target}\n")
        assert cli(["fit", str(tmp_path / "m.yaml"), *FIT]) == EXIT_DATA
