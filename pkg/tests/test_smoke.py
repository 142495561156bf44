import json

import pytest
import yaml

from main import EXIT_FAILED, EXIT_INVALID, EXIT_OK, main


def write_config(tmp_path, tree):
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(tree))
    return str(path)


def test_run_smoke_preset(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", "--preset", "smoke", "--trials", "1", "--output-dir", str(out)]) == EXIT_OK
    printed = capsys.readouterr().out
    assert "student-l1" in printed and "ours-full" in printed
    assert len((out / "trials" / "trials.jsonl").read_text().splitlines()) == 6


def test_report_rebuilds_table(tmp_path, capsys):
    out = tmp_path / "run"
    main(["run", "--preset", "smoke", "--trials", "1", "--output-dir", str(out)])
    (out / "tables" / "table.txt").unlink()
    capsys.readouterr()

    assert main(["report", "--input", str(out), "--metric", "noisy"]) == EXIT_OK
    assert "noisy targets" in capsys.readouterr().out
    assert (out / "tables" / "table.txt").exists()


def test_invalid_config_exit_code(tmp_path, capsys):
    config = write_config(tmp_path, {"preset": "smoke", "trials": 0, "variants": []})
    assert main(["run", "-c", config, "--output-dir", str(tmp_path / "x")]) == EXIT_INVALID
    err = capsys.readouterr().err
    assert "trials" in err and "variants" in err


def test_strict_run_fails_on_failed_trial(tmp_path):
    config = write_config(tmp_path, {
        "preset": "smoke",
        "noise_stds": [3.0],
        "variants": ["only-tor"],
        "threshold": {"alpha": 50.0},
    })
    args = ["run", "-c", config, "--trials", "1", "--output-dir", str(tmp_path / "out")]
    assert main(args) == EXIT_OK
    assert main(args + ["--strict"]) == EXIT_FAILED


def test_train_teacher_then_student(tmp_path, capsys):
    out = tmp_path / "single"
    common = ["--preset", "smoke", "--output-dir", str(out), "--noise-std", "3"]
    assert main(["train-teacher"] + common) == EXIT_OK
    teacher = json.loads(capsys.readouterr().out)
    assert teacher["mae_clean"] is not None

    args = ["train-student", "--teacher", teacher["checkpoint"], "--variant", "only-tor", "--alpha", "0.95"]
    assert main(args + common) == EXIT_OK
    student = json.loads(capsys.readouterr().out)
    assert student["threshold"]["alpha"] == pytest.approx(0.95)
    assert 0.0 <= student["outlier_fraction"] <= 1.0
    assert (out / "trials" / "trace_only-tor_std3_trial0.jsonl").exists()


def test_threshold_sweep(tmp_path, capsys):
    config = write_config(tmp_path, {
        "trials": 1,
        "dataset": {"n": 600},
        "teacher": {"epochs": 2, "hidden_width": 16},
        "student": {"epochs": 2, "hidden_width": 8},
    })
    args = ["sweep-threshold", "-c", config, "--values", "7", "8", "--output-dir", str(tmp_path / "sweep")]
    assert main(args) == EXIT_OK
    printed = capsys.readouterr().out
    assert "only-tor (eps=7)" in printed and "only-tor (eps=8)" in printed
