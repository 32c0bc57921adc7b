"""End-to-end tests of the command-line interface.

Every command runs in process through `main`, on a tiny corpus and a
three-step training run, so the whole workflow — mixgen, train,
separate, evaluate, oracle-eval, sweep, grad-check — is exercised in a
few seconds.
"""

import csv
import hashlib

import numpy as np
import pytest

from sepkit.cli import main
from sepkit.datagen import load_manifest
from sepkit.nets import load_separator
from sepkit.signal import read_wav

TINY_INI = """\
[model]
arch = single
basis = learned
window_ms = 5.0
n_basis = 16
bottleneck = 8
conv_channels = 8
skip_channels = 8
kernel_taps = 3
blocks_per_repeat = 2
repeats = 1

[training]
steps = 3
batch_size = 2

[data]
sample_rate_hz = 8000
clip_s = 1.0
n_mixtures = 10
distinct_families = true
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A corpus, manifest, and trained (three-step) model for the CLI."""
    root = tmp_path_factory.mktemp("cli")
    config = root / "run.ini"
    config.write_text(TINY_INI)
    manifest = root / "data.manifest"
    assert main(["mixgen", "--config", str(config),
                 "--corpus-dir", str(root / "corpus"),
                 "--manifest", str(manifest),
                 "--synth-profile", "two-band", "--n-files", "20",
                 "--render-dir", str(root / "rendered")]) == 0
    assert main(["train", "--config", str(config),
                 "--manifest", str(manifest),
                 "--out-dir", str(root / "run")]) == 0
    return root


class TestMixgen:
    def test_writes_manifest_and_rendered_audio(self, workspace):
        manifest = load_manifest(workspace / "data.manifest")
        assert len(manifest.recipes) == 10
        assert (workspace / "corpus" / "corpus_index.json").exists()
        rendered = sorted((workspace / "rendered" / "train").glob("*.wav"))
        # 7 train mixtures, each with mixture + two reference files.
        assert len(rendered) == 7 * 3

    def test_manifest_is_reproducible_byte_for_byte(self, workspace, tmp_path):
        config = tmp_path / "run.ini"
        config.write_text(TINY_INI)
        again = tmp_path / "again.manifest"
        assert main(["mixgen", "--config", str(config),
                     "--corpus-dir", str(workspace / "corpus"),
                     "--manifest", str(again)]) == 0
        digest = lambda p: hashlib.sha256(p.read_bytes()).hexdigest()
        assert digest(again) == digest(workspace / "data.manifest")

    def test_rendered_mixture_is_sum_of_references(self, workspace):
        wavs = workspace / "rendered" / "test"
        mixture = read_wav(wavs / "mix-00009.wav")
        refs = [read_wav(wavs / f"mix-00009_ref{k}.wav") for k in range(2)]
        total = refs[0].samples + refs[1].samples
        assert np.allclose(mixture.samples, total, atol=1e-6)


class TestTrain:
    def test_writes_checkpoint_log_config_and_figure(self, workspace):
        run = workspace / "run"
        assert (run / "model.ckpt").exists()
        assert (run / "run_config.ini").exists()
        assert (run / "train_loss.png").exists()
        with open(run / "train_log.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["step", "loss", "permutation", "wall_time_s"]
        assert len(rows) == 1 + 3
        separator, metadata = load_separator(run / "model.ckpt")
        assert metadata["final_loss"] == pytest.approx(float(rows[-1][1]),
                                                       rel=1e-6)

    def test_no_figures_and_step_override(self, workspace, tmp_path):
        config = workspace / "run.ini"
        out = tmp_path / "run2"
        assert main(["train", "--config", str(config),
                     "--manifest", str(workspace / "data.manifest"),
                     "--out-dir", str(out), "--steps", "1",
                     "--no-figures"]) == 0
        assert not (out / "train_loss.png").exists()
        with open(out / "train_log.csv", newline="") as fh:
            assert len(list(csv.reader(fh))) == 2

    def test_rate_mismatch_fails_cleanly(self, workspace, tmp_path, capsys):
        config = tmp_path / "bad.ini"
        config.write_text(TINY_INI.replace("sample_rate_hz = 8000",
                                           "sample_rate_hz = 16000"))
        code = main(["train", "--config", str(config),
                     "--manifest", str(workspace / "data.manifest"),
                     "--out-dir", str(tmp_path / "out")])
        assert code == 2
        assert "error:" in capsys.readouterr().err


class TestSeparate:
    def test_writes_estimates_and_report(self, workspace, tmp_path):
        mixture = workspace / "rendered" / "test" / "mix-00009.wav"
        out = tmp_path / "sep"
        assert main(["separate", "--model", str(workspace / "run/model.ckpt"),
                     "--input", str(mixture), "--out-dir", str(out)]) == 0
        estimates = [read_wav(out / f"mix-00009_est{k}.wav") for k in range(2)]
        original = read_wav(mixture)
        total = estimates[0].samples + estimates[1].samples
        assert np.allclose(total, original.samples, atol=1e-5)
        assert (out / "mix-00009_report.png").exists()

    def test_wrong_rate_input_rejected(self, workspace, tmp_path, capsys):
        from sepkit.signal import Waveform, write_wav
        bad = tmp_path / "bad.wav"
        write_wav(Waveform(np.zeros(100), 16000), bad)
        code = main(["separate", "--model", str(workspace / "run/model.ckpt"),
                     "--input", str(bad), "--out-dir", str(tmp_path / "out")])
        assert code == 2
        assert "rate" in capsys.readouterr().err


class TestEvaluate:
    def test_model_evaluation_report(self, workspace, tmp_path):
        out = tmp_path / "eval"
        assert main(["evaluate", "--model", str(workspace / "run/model.ckpt"),
                     "--manifest", str(workspace / "data.manifest"),
                     "--split", "val", "--out-dir", str(out)]) == 0
        with open(out / "eval_rows.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0][0] == "mixture_id"
        assert len(rows) == 1 + 2 * 2  # two val mixtures, two sources
        assert (out / "eval_summary.csv").exists()
        assert (out / "improvement_hist.png").exists()

    def test_oracle_evaluation_beats_the_mixture(self, workspace, tmp_path):
        out = tmp_path / "oracle"
        assert main(["oracle-eval",
                     "--manifest", str(workspace / "data.manifest"),
                     "--split", "val", "--window-ms", "10.0",
                     "--out-dir", str(out), "--no-figures"]) == 0
        with open(out / "eval_summary.csv", newline="") as fh:
            header, values = list(csv.reader(fh))
        summary = dict(zip(header, values))
        assert float(summary["median_improvement_db"]) > 5.0
        assert not (out / "improvement_hist.png").exists()


class TestSweep:
    def test_sweep_table_and_figure(self, workspace, tmp_path):
        out = tmp_path / "sweep"
        assert main(["sweep", "--manifest", str(workspace / "data.manifest"),
                     "--split", "val", "--window-ms", "5.0", "25.0",
                     "--out-dir", str(out)]) == 0
        with open(out / "sweep.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0][0] == "window_ms"
        assert [r[0] for r in rows[1:]] == ["5", "25"]
        assert all(len(r) == 5 for r in rows[1:])
        assert (out / "sweep.png").exists()


class TestGradCheck:
    def test_passes_with_default_tolerance(self, capsys):
        assert main(["grad-check", "--probes", "10"]) == 0
        out = capsys.readouterr().out
        assert "OK" in out
        assert "worst relative gradient error" in out

    def test_fails_when_tolerance_is_impossible(self, capsys):
        assert main(["grad-check", "--probes", "5",
                     "--tolerance", "1e-15"]) == 1
        assert "FAIL" in capsys.readouterr().out


class TestErrors:
    def test_missing_manifest_reports_error(self, tmp_path, capsys):
        code = main(["oracle-eval", "--manifest", str(tmp_path / "no.manifest"),
                     "--out-dir", str(tmp_path)])
        assert code == 2
        assert "error:" in capsys.readouterr().err

    def test_unknown_command_exits_nonzero(self):
        with pytest.raises(SystemExit):
            main(["frobnicate"])
