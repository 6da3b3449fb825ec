"""End-to-end CLI runs on a tiny synthetic dataset: artifacts and exit codes."""
import json
import os

import pytest

from core.errors import EXIT_CONFIG, EXIT_FORMAT, EXIT_IO, EXIT_OK, EXIT_REJECT, EXIT_USAGE
from main import build_parser, run
from services.data_loader import load_capture, load_dataset
from services.evaluator import load_report
from services.quantizer import QuantizedModel, load_model


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = str(root / "data.rfiq")
    assert run(["generate", "--num-devices", "3", "--signals-per-device", "20", "--seed", "42", "--out", data]) == EXIT_OK
    model = str(root / "cnn.rffm")
    code = run(["train", "--data", data, "--arch", "cnn", "--epochs", "1", "--batch-size", "16",
                "--out", model, "--val-out", str(root / "val.rfiq")])
    assert code == EXIT_OK
    return root


def _read(capsys):
    return json.loads(capsys.readouterr().out)


def test_generate_is_byte_identical(tmp_path):
    a, b = str(tmp_path / "a.rfiq"), str(tmp_path / "b.rfiq")
    for path in (a, b):
        assert run(["generate", "--num-devices", "2", "--signals-per-device", "3", "--out", path]) == EXIT_OK
    with open(a, "rb") as fa, open(b, "rb") as fb:
        assert fa.read() == fb.read()
    assert load_dataset(a).num_classes == 2


def test_train_writes_model_history_and_split(workdir):
    assert os.path.exists(workdir / "cnn.rffm")
    assert os.path.exists(workdir / "cnn_history.csv")
    assert len(load_dataset(str(workdir / "val.rfiq"))) == 12


def test_quantize_and_eval(workdir, capsys):
    quant = str(workdir / "cnn_q.rffm")
    assert run(["quantize", "--model", str(workdir / "cnn.rffm"), "--out", quant]) == EXIT_OK
    sizes = _read(capsys)
    assert sizes["ratio"] <= 0.45
    assert isinstance(load_model(quant), QuantizedModel)

    report_path = str(workdir / "report.json")
    code = run(["eval", "--model", quant, "--data", str(workdir / "val.rfiq"),
                "--reference", str(workdir / "cnn.rffm"), "--out", report_path])
    assert code == EXIT_OK
    result = _read(capsys)
    assert 0.0 <= result["agreement"] <= 1.0
    assert load_report(report_path).num_samples == 12


def test_eval_randomized_csv(workdir, capsys):
    out = str(workdir / "shuffled.csv")
    code = run(["eval", "--model", str(workdir / "cnn.rffm"), "--data", str(workdir / "val.rfiq"),
                "--randomize", "--format", "csv", "--out", out])
    assert code == EXIT_OK
    assert load_report(out).confusion.shape == (3, 3)


def test_bench(workdir, capsys):
    assert run(["bench", "--model", str(workdir / "cnn.rffm"), "--runs", "3"]) == EXIT_OK
    assert _read(capsys)["runs"] == 3


def test_fingerprint_accept_and_reject(workdir, capsys):
    capture = str(workdir / "cap.rfiq")
    assert run(["extract", "--data", str(workdir / "val.rfiq"), "--index", "0", "--out", capture]) == EXIT_OK
    assert _read(capsys)["label"] == load_capture(capture).label == load_dataset(str(workdir / "val.rfiq")).labels[0]
    model = str(workdir / "cnn.rffm")
    assert run(["fingerprint", "--model", model, "--capture", capture, "--threshold", "0.01"]) == EXIT_OK
    accepted = _read(capsys)
    assert accepted["decision"] == "ACCEPT" and 0 <= accepted["class"] < 3
    assert run(["fingerprint", "--model", model, "--capture", capture, "--threshold", "1.0"]) == EXIT_REJECT
    assert _read(capsys)["decision"] == "REJECT"


def test_extract_index_out_of_range(workdir, tmp_path):
    code = run(["extract", "--data", str(workdir / "val.rfiq"), "--index", "12", "--out", str(tmp_path / "c.rfiq")])
    assert code == EXIT_CONFIG


def test_truncated_capture_is_a_format_error(workdir, tmp_path):
    with open(workdir / "val.rfiq", "rb") as f:
        blob = f.read()
    broken = tmp_path / "broken.rfiq"
    broken.write_bytes(blob[:100])
    assert run(["fingerprint", "--model", str(workdir / "cnn.rffm"), "--capture", str(broken)]) == EXIT_FORMAT


def test_missing_input_is_an_io_error(tmp_path):
    assert run(["eval", "--model", str(tmp_path / "none.rffm"), "--data", str(tmp_path / "none.rfiq")]) == EXIT_IO


def test_class_mismatch_is_a_config_error(workdir, tmp_path):
    other = str(tmp_path / "four.rfiq")
    assert run(["generate", "--num-devices", "4", "--signals-per-device", "2", "--out", other]) == EXIT_OK
    assert run(["eval", "--model", str(workdir / "cnn.rffm"), "--data", other]) == EXIT_CONFIG


def test_usage_errors():
    assert run(["train", "--bogus"]) == EXIT_USAGE
    assert run([]) == EXIT_USAGE
    assert run(["fingerprint", "--model", "m", "--capture", "c", "--threshold", "1.5"]) == EXIT_USAGE


def test_missing_config_file(tmp_path):
    code = run(["--config", str(tmp_path / "absent.json"), "generate", "--out", str(tmp_path / "x.rfiq")])
    assert code == EXIT_CONFIG


def test_config_file_overrides_defaults(tmp_path, capsys):
    config = tmp_path / "cfg.json"
    config.write_text(json.dumps({"seed": 7, "synthesis": {"num_devices": 2, "signals_per_device": 2}}))
    out = str(tmp_path / "x.rfiq")
    assert run(["--config", str(config), "generate", "--out", out]) == EXIT_OK
    result = _read(capsys)
    assert result["seed"] == 7 and result["records"] == 4


@pytest.mark.parametrize("override", [
    {"seed": "forty-two"},
    {"synthesis": {"num_devices": "ten"}},
    {"synthesis": {"waveform": "chirp"}},
])
def test_malformed_config_values_are_config_errors(tmp_path, override):
    config = tmp_path / "cfg.json"
    config.write_text(json.dumps(override))
    code = run(["--config", str(config), "generate", "--out", str(tmp_path / "x.rfiq")])
    assert code == EXIT_CONFIG


def test_bench_rejects_zero_runs(workdir):
    assert run(["bench", "--model", str(workdir / "cnn.rffm"), "--runs", "0"]) == EXIT_CONFIG


def test_help_lists_every_subcommand(capsys):
    help_text = build_parser().format_help()
    for command in ("generate", "train", "quantize", "eval", "bench", "fingerprint", "sweep", "summary", "extract"):
        assert command in help_text


def test_summary_prints_totals(capsys):
    assert run(["summary", "--arch", "transformer", "--num-classes", "28"]) == EXIT_OK
    assert "47,964" in capsys.readouterr().out
