"""
Integration tests for the desk-scale experiment.

Generates 2000 synthetic frames, cross-validates both mini networks, runs
the entropy baseline on the same folds and checks the headline outcomes.
Takes minutes on a 4-core CPU, so it only runs with `-m slow`.
"""

import time
from pathlib import Path

import pytest
from click.testing import CliRunner

from cle_triage.cli import main
from cle_triage.reporting import RunReport, report_digest

pytestmark = [pytest.mark.slow, pytest.mark.integration]

N_PER_CLASS = 1000
SEED = 2024


def _run(*args: str) -> None:
    result = CliRunner().invoke(main, ["--quiet", *args])
    assert result.exit_code == 0, result.output


def _train(manifest: Path, arch: str, out_dir: Path) -> RunReport:
    _run("train", "--manifest", str(manifest), "--arch", arch, "--out-dir", str(out_dir),
         "--threshold", "0.5", "--threshold", "0.00001")
    return RunReport.load(out_dir / "report.json")


@pytest.fixture(scope="module")
def desk_run(tmp_path_factory):
    """One full experiment: data, both CNNs and the entropy baseline."""
    root = tmp_path_factory.mktemp("desk")
    data_dir = root / "data"
    _run("gen-data", "--n-per-class", str(N_PER_CLASS), "--size", "64", "--seed", str(SEED),
         "--out", str(data_dir), "--k", "4")
    manifest = data_dir / "manifest.jsonl"

    started = time.perf_counter()
    alexnet = _train(manifest, "mini-alexnet", root / "alexnet")
    alexnet_seconds = time.perf_counter() - started
    inception = _train(manifest, "mini-inception", root / "inception")

    _run("entropy-eval", "--manifest", str(manifest), "--threshold", "0.5",
         "--best-threshold", "--out-dir", str(root / "entropy"))
    entropy = RunReport.load(root / "entropy" / "report.json")

    return {
        "root": root,
        "manifest": manifest,
        "alexnet": alexnet,
        "alexnet_seconds": alexnet_seconds,
        "inception": inception,
        "entropy": entropy,
    }


class TestDeskExperiment:
    """Headline outcomes of the synthetic cross-validation run."""

    def test_alexnet_accuracy_and_auc(self, desk_run):
        report = desk_run["alexnet"]
        assert report.mean.metrics[0].threshold == 0.5
        assert report.mean.metrics[0].accuracy >= 0.90
        assert report.mean.auc >= 0.95

    def test_alexnet_runtime(self, desk_run):
        assert desk_run["alexnet_seconds"] <= 15 * 60

    def test_entropy_baseline_is_weaker(self, desk_run):
        assert desk_run["alexnet"].mean.auc - desk_run["entropy"].mean.auc >= 0.10

    def test_entropy_favors_sensitivity_at_best_threshold(self, desk_run):
        best = desk_run["entropy"].mean.metrics[-1]
        assert best.sensitivity > best.specificity

    def test_low_threshold_raises_sensitivity(self, desk_run):
        report = desk_run["alexnet"]
        low = report.mean.metrics[1]
        assert low.threshold == 1e-5
        assert low.sensitivity >= 0.98
        assert low.sensitivity >= report.mean.metrics[0].sensitivity

    def test_inception_close_to_alexnet(self, desk_run):
        gap = abs(desk_run["inception"].mean.metrics[0].accuracy - desk_run["alexnet"].mean.metrics[0].accuracy)
        assert gap <= 0.02

    def test_rerun_is_identical(self, desk_run):
        root = desk_run["root"]
        again = _train(desk_run["manifest"], "mini-alexnet", root / "alexnet_again")
        assert report_digest(again) == report_digest(desk_run["alexnet"])
        for fold in range(1, 5):
            name = f"fold{fold}.clet"
            assert (root / "alexnet_again" / name).read_bytes() == (root / "alexnet" / name).read_bytes()

    def test_stream_matches_batch(self, desk_run):
        out = desk_run["root"] / "bench.json"
        _run("stream-bench", "--checkpoint", str(desk_run["root"] / "alexnet" / "fold1.clet"),
             "--manifest", str(desk_run["manifest"]), "--batch", "4", "--limit", "200",
             "--out", str(out))
        assert '"bit_identical": true' in out.read_text()
