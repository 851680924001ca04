"""End-to-end tests of the command line interface, run in process."""

import json

import numpy as np
import pytest

from tape_lab import cli
from tape_lab.compaction import load_curves
from tape_lab.latent import load_model, read_header
from tape_lab.metrics import load_report
from tape_lab.profile import decompose, load_profiles, save_micro_profiles


@pytest.fixture(scope="module")
def tiny_dir(tmp_path_factory):
    """A small generated dataset shared by the command tests."""
    root = tmp_path_factory.mktemp("cli_data")
    rc = cli.main(["generate", "--per-class", "2", "--points", "64", "--seed", "3",
                   "--out", str(root / "profiles.csv")])
    assert rc == 0
    rc = cli.main(["simulate", "--profiles", str(root / "profiles.csv"),
                   "--horizon", "64", "--out", str(root / "curves.csv"),
                   "--raw-out", str(root / "curves_raw.csv")])
    assert rc == 0
    return root


@pytest.fixture(scope="module")
def tiny_model(tiny_dir):
    path = tiny_dir / "model.ckpt"
    rc = cli.main(["train", "--data", str(tiny_dir / "profiles.csv"),
                   "--dic", str(tiny_dir / "curves.csv"),
                   "--epochs", "5", "--kmax", "2", "--d-latent", "8",
                   "--seed", "3", "--out", str(path)])
    assert rc == 0
    return path


def _config_line(path):
    with open(path) as fh:
        first = fh.readline()
    assert first.startswith("# {")
    return json.loads(first[2:])


def test_version_flag(capsys):
    assert cli.main(["--version"]) == 0
    out = capsys.readouterr().out
    assert "tape-lab" in out


def test_no_command_prints_help(capsys):
    assert cli.main([]) == 2
    assert "generate" in capsys.readouterr().out


def test_unknown_flag_exits_2():
    assert cli.main(["generate", "--nonsense", "1"]) == 2


def test_generate_embeds_run_config(tiny_dir):
    cfg = _config_line(tiny_dir / "profiles.csv")
    assert cfg["command"] == "generate"
    assert cfg["tool"] == "tape-lab"
    assert cfg["parameters"]["per_class"] == 2
    assert cfg["parameters"]["points"] == 64
    profiles = load_profiles(tiny_dir / "profiles.csv")
    assert len(profiles) == 24
    assert all(p.n_points == 64 for p in profiles)


def test_simulate_outputs_smoothed_and_raw(tiny_dir):
    smoothed = load_curves(tiny_dir / "curves.csv")
    raw = load_curves(tiny_dir / "curves_raw.csv")
    assert len(smoothed) == len(raw) == 24
    assert all(c.stage == "smoothed" for c in smoothed)
    assert all(c.stage == "raw" for c in raw)
    cfg = _config_line(tiny_dir / "curves.csv")
    assert cfg["command"] == "simulate"
    assert cfg["parameters"]["horizon"] == 64


def test_simulate_accepts_micro_csv(tiny_dir, tmp_path):
    profiles = load_profiles(tiny_dir / "profiles.csv")
    micros = [decompose(p) for p in profiles]
    micro_csv = tmp_path / "micros.csv"
    save_micro_profiles(micros, micro_csv)
    out = tmp_path / "curves.csv"
    assert cli.main(["simulate", "--profiles", str(micro_csv), "--horizon", "64",
                     "--out", str(out)]) == 0
    redone = load_curves(out)
    reference = load_curves(tiny_dir / "curves.csv")
    for a, b in zip(redone, reference):
        assert a.id == b.id
        np.testing.assert_array_equal(a.values, b.values)


def test_missing_input_exits_3_with_path(tmp_path, capsys):
    missing = tmp_path / "nope.csv"
    rc = cli.main(["simulate", "--profiles", str(missing), "--out", str(tmp_path / "x.csv")])
    assert rc == 3
    err = capsys.readouterr().err
    assert err.count("\n") == 1
    assert str(missing) in err


def test_invalid_option_value_exits_2(tiny_dir):
    rc = cli.main(["train", "--data", str(tiny_dir / "profiles.csv"),
                   "--dic", str(tiny_dir / "curves.csv"),
                   "--epochs", "0", "--out", "/tmp/never.ckpt"])
    assert rc == 2


def test_missing_required_option_exits_2(capsys):
    rc = cli.main(["generate", "--per-class", "1"])
    assert rc == 2
    assert "--out" in capsys.readouterr().err


def test_numeric_divergence_exits_4(tiny_dir, tmp_path, capsys):
    with np.errstate(over="ignore", invalid="ignore"):
        rc = cli.main(["train", "--data", str(tiny_dir / "profiles.csv"),
                       "--dic", str(tiny_dir / "curves.csv"),
                       "--epochs", "30", "--kmax", "2", "--d-latent", "8",
                       "--lr", "1e18", "--out", str(tmp_path / "m.ckpt")])
    assert rc == 4
    assert "non-finite" in capsys.readouterr().err


def test_config_file_supplies_defaults_flags_override(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"per_class": 3, "points": 32}))
    out = tmp_path / "p.csv"
    rc = cli.main(["generate", "--config", str(cfg_path), "--points", "48",
                   "--seed", "1", "--out", str(out)])
    assert rc == 0
    profiles = load_profiles(out)
    assert len(profiles) == 36
    assert profiles[0].n_points == 48


def test_unknown_config_key_exits_2(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"per_klass": 3}))
    rc = cli.main(["generate", "--config", str(cfg_path), "--out", str(tmp_path / "p.csv")])
    assert rc == 2
    assert "per_klass" in capsys.readouterr().err


def test_malformed_config_file_exits_2(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text("{not json")
    assert cli.main(["generate", "--config", str(cfg_path), "--out", str(tmp_path / "p.csv")]) == 2


def test_train_writes_checkpoint_and_history(tiny_dir, tiny_model):
    model = load_model(tiny_model)
    assert model.kind == "rrae"
    assert model.hyper["kmax"] == 2
    header = read_header(tiny_model)
    assert header["run_config"]["command"] == "train"
    assert header["run_config"]["version"]

    history = tiny_dir / "model.history.csv"
    cfg = _config_line(history)
    assert cfg["parameters"]["epochs"] == 5
    with open(history) as fh:
        lines = [l for l in fh.read().splitlines() if l and not l.startswith("#")]
    assert lines[0].split(",")[:2] == ["epoch", "lr"]
    assert lines[0].split(",")[-1] == "total"
    assert len(lines) == 1 + 5


def test_train_accepts_micro_csv_identically(tiny_dir, tiny_model, tmp_path):
    profiles = load_profiles(tiny_dir / "profiles.csv")
    micro_csv = tmp_path / "micros.csv"
    save_micro_profiles([decompose(p) for p in profiles], micro_csv)
    ckpt = tmp_path / "model.ckpt"
    rc = cli.main(["train", "--data", str(micro_csv), "--dic", str(tiny_dir / "curves.csv"),
                   "--epochs", "5", "--kmax", "2", "--d-latent", "8",
                   "--seed", "3", "--out", str(ckpt)])
    assert rc == 0
    assert ckpt.read_bytes() == tiny_model.read_bytes()


def test_evaluate_writes_report_and_figure_data(tiny_dir, tiny_model, tmp_path):
    report_path = tmp_path / "report.json"
    rc = cli.main(["evaluate", "--model", str(tiny_model),
                   "--data", str(tiny_dir / "profiles.csv"),
                   "--dic", str(tiny_dir / "curves.csv"),
                   "--report", str(report_path)])
    assert rc == 0
    report = load_report(report_path)
    assert report.split == "test"
    model = load_model(tiny_model)
    assert sorted(s.id for s in report.samples) == sorted(model.hyper["test_ids"])
    assert all(s.recon_error is not None for s in report.samples)
    assert report.config["command"] == "evaluate"
    assert (tmp_path / "report_histogram.csv").is_file()
    assert (tmp_path / "report_boxplot.csv").is_file()


def test_evaluate_full_split(tiny_dir, tiny_model, tmp_path):
    report_path = tmp_path / "report.json"
    rc = cli.main(["evaluate", "--model", str(tiny_model),
                   "--data", str(tiny_dir / "profiles.csv"),
                   "--dic", str(tiny_dir / "curves.csv"),
                   "--split", "all", "--report", str(report_path)])
    assert rc == 0
    assert len(load_report(report_path).samples) == 24


def test_evaluate_missing_reference_curve_exits_3(tiny_dir, tiny_model, tmp_path, capsys):
    curves = load_curves(tiny_dir / "curves.csv")
    from tape_lab.compaction import save_curves

    partial = tmp_path / "partial.csv"
    save_curves(curves[:3], partial)
    rc = cli.main(["evaluate", "--model", str(tiny_model),
                   "--data", str(tiny_dir / "profiles.csv"),
                   "--dic", str(partial), "--report", str(tmp_path / "r.json")])
    assert rc == 3
    assert "missing reference curve" in capsys.readouterr().err


def test_encdec_arch_reports_without_classifier(tiny_dir, tmp_path):
    ckpt = tmp_path / "encdec.ckpt"
    rc = cli.main(["train", "--arch", "encdec", "--data", str(tiny_dir / "profiles.csv"),
                   "--dic", str(tiny_dir / "curves.csv"), "--epochs", "4",
                   "--seed", "3", "--out", str(ckpt)])
    assert rc == 0
    report_path = tmp_path / "report.json"
    rc = cli.main(["evaluate", "--model", str(ckpt),
                   "--data", str(tiny_dir / "profiles.csv"),
                   "--dic", str(tiny_dir / "curves.csv"),
                   "--report", str(report_path)])
    assert rc == 0
    report = load_report(report_path)
    assert report.summary.accuracy is None
    assert all(s.predicted_class is None for s in report.samples)


def test_extended_arch_trains_through_cli(tiny_dir, tmp_path):
    ckpt = tmp_path / "ext.ckpt"
    rc = cli.main(["train", "--arch", "extended", "--data", str(tiny_dir / "profiles.csv"),
                   "--dic", str(tiny_dir / "curves.csv"), "--epochs", "3",
                   "--curve-epochs", "2", "--kmax", "2", "--rmax", "2",
                   "--d-latent", "8", "--seed", "3", "--out", str(ckpt)])
    assert rc == 0
    model = load_model(ckpt)
    assert model.kind == "extended"
    history = tmp_path / "ext.history.csv"
    with open(history) as fh:
        lines = [l for l in fh.read().splitlines() if l and not l.startswith("#")]
    assert lines[0].split(",")[0] == "stage"
    assert len(lines) == 1 + 2 + 3


def _run_repro(out_dir, seed="3"):
    return cli.main(["repro", "--per-class", "2", "--points", "64", "--horizon", "40",
                     "--epochs", "3", "--kmax", "2", "--d-latent", "8",
                     "--seed", seed, "--out-dir", str(out_dir)])


_REPRO_FILES = ["profiles.csv", "curves_raw.csv", "curves.csv", "model.ckpt",
                "model.history.csv", "report.json", "report_histogram.csv",
                "report_boxplot.csv"]


def test_repro_same_seed_byte_identical(tmp_path):
    assert _run_repro(tmp_path / "a") == 0
    assert _run_repro(tmp_path / "b") == 0
    for name in _REPRO_FILES:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_repro_jobs_changes_no_output_byte(tmp_path, monkeypatch):
    assert _run_repro(tmp_path / "a") == 0
    monkeypatch.setenv("TAPE_LAB_JOBS", "2")
    assert _run_repro(tmp_path / "b") == 0
    for name in _REPRO_FILES:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_repro_different_seed_differs(tmp_path):
    assert _run_repro(tmp_path / "a", seed="3") == 0
    assert _run_repro(tmp_path / "b", seed="4") == 0
    assert (tmp_path / "a" / "report.json").read_bytes() != (tmp_path / "b" / "report.json").read_bytes()


def test_invalid_jobs_env_exits_2(tiny_dir, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("TAPE_LAB_JOBS", "many")
    rc = cli.main(["simulate", "--profiles", str(tiny_dir / "profiles.csv"),
                   "--horizon", "40", "--out", str(tmp_path / "c.csv")])
    assert rc == 2
    assert "TAPE_LAB_JOBS" in capsys.readouterr().err
