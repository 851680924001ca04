"""Command line interface wiring the pipeline stages together.

Five subcommands cover the workflow: ``generate`` draws labelled synthetic
profiles, ``simulate`` runs the compaction automaton over a profile CSV,
``train`` fits a latent model on profiles plus contact curves, ``evaluate``
scores a checkpoint, and ``repro`` chains all four stages from one seed
into a directory.

Option values resolve as flags > config file > built-in defaults; the
``--config`` file is a flat JSON object keyed by option name.  Every output
artifact embeds the resolved run configuration and the tool version.  Only
content-determining parameters are serialized: file paths and the worker
count decide where results go and how fast, never a single output byte, so
recording them would break byte-level reproducibility across directories
and machines.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure.  Every failure prints a single diagnostic line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import errno
import json
import os
import sys
from dataclasses import dataclass

from . import __version__
from .compaction import load_curves, save_curves, simulate_profiles
from .errors import (
    InvalidArgumentError,
    InvalidDataError,
    NumericError,
    ParseError,
    ResourceLimitError,
    TapeLabError,
)
from .latent import (
    TrainConfig,
    load_model,
    predict,
    prepare_dataset,
    relative_l2,
    save_model,
    standardized_inputs,
    train_classical_ae,
    train_encdec,
    train_extended,
    train_rrae,
)
from .metrics import (
    PerSampleError,
    build_report,
    delta_dic_values,
    save_boxplot_csv,
    save_histogram_csv,
    save_report,
)
from .profile import (
    DEFAULT_CUTOFF_UM,
    RoughnessProfile,
    decompose,
    load_micro_profiles,
    load_profiles,
    save_profiles,
)
from .synth import default_recipes, generate, load_recipes

__all__ = ["main"]


# ---------------------------------------------------------------------------
# Option tables


@dataclass(frozen=True)
class _Option:
    """One CLI option: flag spelling, type, default, and config-file role.

    ``path`` marks filesystem options ("in" or "out"); they never enter the
    serialized run configuration.  ``required`` options must be supplied by
    flag or config file.
    """

    dest: str
    flag: str
    type: type
    default: object
    help: str
    choices: tuple = ()
    path: str = ""
    required: bool = False


def _opt(dest, flag, typ, default, help, **kw):
    return _Option(dest=dest, flag=flag, type=typ, default=default, help=help, **kw)


def _sim_options():
    return [
        _opt("eps_z", "--eps-z", float, 0.1, "vertical cell size in micrometres"),
        _opt("horizon", "--horizon", int, 352, "number of automaton steps to record"),
        _opt("window", "--window", int, 5, "moving-average window (odd) for curve smoothing"),
    ]


def _gen_options():
    return [
        _opt("recipes", "--recipes", str, None, "JSON recipe file (omit for the built-in recipes)", path="in"),
        _opt("per_class", "--per-class", int, 30, "profiles drawn per class"),
        _opt("points", "--points", int, 500, "grid points per profile"),
        _opt("eps_x", "--eps-x", float, 3.0, "lateral grid spacing in micrometres"),
    ]


def _train_options():
    return [
        _opt("arch", "--arch", str, "rrae", "model architecture",
             choices=("rrae", "extended", "ae", "encdec")),
        _opt("kmax", "--kmax", int, 4, "retained profile latent modes"),
        _opt("rmax", "--rmax", int, 3, "retained curve latent modes (extended only)"),
        _opt("d_latent", "--d-latent", int, 64, "width of the unconstrained latent layer"),
        _opt("epochs", "--epochs", int, 6000, "training epochs"),
        _opt("lr", "--lr", float, 1e-3, "initial learning rate"),
        _opt("lr_drop_every", "--lr-drop-every", int, 2000,
             "divide the learning rate by ten after this many epochs (0 keeps it constant)"),
        _opt("optimizer", "--optimizer", str, "sgd", "parameter update rule",
             choices=("sgd", "adam")),
        _opt("dropout", "--dropout", float, 0.1, "dropout rate of the plain encoder-decoder"),
        _opt("curve_epochs", "--curve-epochs", int, None,
             "pretraining epochs of the curve autoencoder (defaults to --epochs)"),
        _opt("test_fraction", "--test-fraction", float, 0.1, "held-out fraction per class"),
        _opt("cutoff", "--cutoff", float, DEFAULT_CUTOFF_UM,
             "waviness cutoff wavelength in micrometres, used when --data holds raw profiles"),
        _opt("weight_recon", "--weight-recon", float, 1.0, "reconstruction loss weight"),
        _opt("weight_class", "--weight-class", float, 1.0, "classification loss weight"),
        _opt("weight_dic", "--weight-dic", float, 1.0, "contact-curve loss weight"),
        _opt("joint_class", "--joint-class", float, 2.0, "extended-model classification weight"),
        _opt("joint_recon", "--joint-recon", float, 1.0, "extended-model profile reconstruction weight"),
        _opt("joint_curve_recon", "--joint-curve-recon", float, 1.0,
             "extended-model curve reconstruction weight"),
        _opt("joint_curve_pred", "--joint-curve-pred", float, 2.0,
             "extended-model curve prediction weight"),
    ]


def _seed_option(help="seed of the run"):
    return _opt("seed", "--seed", int, 0, help)


def _jobs_option():
    return _opt("jobs", "--jobs", int, None,
                "simulation worker processes (default: TAPE_LAB_JOBS or 1)")


_COMMANDS = {
    "generate": {
        "help": "draw labelled synthetic tape profiles",
        "options": _gen_options() + [
            _seed_option(),
            _opt("out", "--out", str, None, "profile CSV to write", path="out", required=True),
        ],
    },
    "simulate": {
        "help": "run the compaction automaton over a profile CSV",
        "options": [
            _opt("profiles", "--profiles", str, None, "profile or micro-profile CSV",
                 path="in", required=True),
        ] + _sim_options() + [
            _jobs_option(),
            _seed_option("recorded with the artifacts; the automaton itself is deterministic"),
            _opt("out", "--out", str, None, "smoothed curve CSV to write", path="out", required=True),
            _opt("raw_out", "--raw-out", str, None, "also write the raw curves here", path="out"),
        ],
    },
    "train": {
        "help": "fit a latent model on profiles plus contact curves",
        "options": [
            _opt("data", "--data", str, None, "profile or micro-profile CSV", path="in", required=True),
            _opt("dic", "--dic", str, None, "smoothed contact-curve CSV", path="in", required=True),
        ] + _train_options() + [
            _seed_option(),
            _opt("out", "--out", str, None, "checkpoint file to write", path="out", required=True),
            _opt("history", "--history", str, None,
                 "loss-history CSV (default: checkpoint path with a .history.csv suffix)", path="out"),
        ],
    },
    "evaluate": {
        "help": "score a trained model and write a report plus figure data",
        "options": [
            _opt("model", "--model", str, None, "checkpoint file", path="in", required=True),
            _opt("data", "--data", str, None, "profile or micro-profile CSV", path="in", required=True),
            _opt("dic", "--dic", str, None, "smoothed contact-curve CSV", path="in", required=True),
            _opt("split", "--split", str, "test", "which stored split to score",
                 choices=("test", "train", "all")),
            _opt("cutoff", "--cutoff", float, DEFAULT_CUTOFF_UM,
                 "waviness cutoff wavelength, used when --data holds raw profiles"),
            _opt("report", "--report", str, None, "report JSON to write", path="out", required=True),
        ],
    },
    "repro": {
        "help": "chain generate, simulate, train and evaluate from one seed",
        "options": _gen_options() + _sim_options() + _train_options() + [
            _jobs_option(),
            _seed_option(),
            _opt("out_dir", "--out-dir", str, None, "directory for all artifacts",
                 path="out", required=True),
        ],
    },
}


# ---------------------------------------------------------------------------
# Parsing and option resolution


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tape-lab",
        description="compaction simulation and latent roughness descriptors for composite tapes",
    )
    parser.add_argument("--version", action="version", version=f"tape-lab {__version__}")
    sub = parser.add_subparsers(dest="command")
    for name, spec in _COMMANDS.items():
        cmd = sub.add_parser(name, help=spec["help"], description=spec["help"])
        cmd.add_argument("--config", default=None, metavar="JSON",
                         help="JSON file with defaults for any option of this command")
        for opt in spec["options"]:
            kwargs = {"dest": opt.dest, "type": opt.type, "default": None, "help": opt.help}
            if opt.choices:
                kwargs["choices"] = opt.choices
            cmd.add_argument(opt.flag, **kwargs)
    return parser


def _load_config_file(path: str, options: list[_Option]) -> dict:
    _require_input(path)
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidArgumentError(f"config file {path}: {exc}") from None
    if not isinstance(data, dict):
        raise InvalidArgumentError(f"config file {path} must hold a JSON object")
    known = {o.dest: o for o in options}
    values = {}
    for key, raw in data.items():
        if key not in known:
            raise InvalidArgumentError(f"config file {path}: unknown option {key!r}")
        if raw is None:
            continue
        opt = known[key]
        if opt.choices and raw not in opt.choices:
            raise InvalidArgumentError(
                f"config file {path}: {key} must be one of {list(opt.choices)}, got {raw!r}")
        try:
            values[key] = opt.type(raw)
        except (TypeError, ValueError):
            raise InvalidArgumentError(
                f"config file {path}: cannot read {key}={raw!r} as {opt.type.__name__}") from None
    return values


def _default_jobs() -> int:
    raw = os.environ.get("TAPE_LAB_JOBS")
    if raw is None:
        return 1
    try:
        jobs = int(raw)
    except ValueError:
        raise InvalidArgumentError(f"TAPE_LAB_JOBS must be an integer, got {raw!r}") from None
    if jobs < 1:
        raise InvalidArgumentError(f"TAPE_LAB_JOBS must be positive, got {jobs}")
    return jobs


def _resolve(args: argparse.Namespace, options: list[_Option]) -> dict:
    overrides = _load_config_file(args.config, options) if args.config else {}
    values = {}
    for opt in options:
        value = getattr(args, opt.dest)
        if value is None:
            value = overrides.get(opt.dest)
        if value is None:
            value = _default_jobs() if opt.dest == "jobs" else opt.default
        if value is None and opt.required:
            raise InvalidArgumentError(f"missing required option {opt.flag}")
        values[opt.dest] = value
    return values


def _run_config(command: str, values: dict, options: list[_Option]) -> dict:
    params = {o.dest: values[o.dest] for o in options if not o.path and o.dest != "jobs"}
    return {
        "tool": "tape-lab",
        "version": __version__,
        "command": command,
        "parameters": params,
    }


# ---------------------------------------------------------------------------
# Input helpers


def _require_input(path: str) -> str:
    if not os.path.isfile(path):
        raise FileNotFoundError(errno.ENOENT, "input file not found", path)
    return path


_PROFILE_HEAD = ["id", "label", "spacing_um"]
_MICRO_HEAD = ["id", "label", "spacing_um", "component"]


def _csv_layout(path: str) -> str:
    """Detect whether a CSV holds raw profiles or decomposed micro profiles."""
    with open(path, newline="") as fh:
        for row_no, cells in enumerate(csv.reader(fh), start=1):
            if not cells or cells[0].startswith("#"):
                continue
            if cells[: len(_MICRO_HEAD)] == _MICRO_HEAD:
                return "micro"
            if cells[: len(_PROFILE_HEAD)] == _PROFILE_HEAD:
                return "profile"
            raise ParseError("unrecognized header, expected a profile or micro-profile CSV",
                             row=row_no)
    raise ParseError("empty file", row=1)


def _load_profiles_any(path: str) -> list[RoughnessProfile]:
    """Load full profiles; a micro-profile CSV is recombined losslessly."""
    if _csv_layout(path) == "profile":
        return load_profiles(path)
    return [
        RoughnessProfile(id=m.id, heights=m.reconstruct(), spacing=m.spacing, label=m.label)
        for m in load_micro_profiles(path)
    ]


def _load_micros_any(path: str, cutoff: float):
    """Load micro profiles; a raw-profile CSV is decomposed on the fly."""
    if _csv_layout(path) == "micro":
        return load_micro_profiles(path)
    return [decompose(p, cutoff=cutoff) for p in load_profiles(path)]


def _load_recipes_maybe(path):
    if path is None:
        return default_recipes()
    return load_recipes(_require_input(path))


# ---------------------------------------------------------------------------
# Artifact writers


def _save_history(rows: list[dict], path: str, config: dict) -> None:
    """Write the per-epoch loss history with the run configuration header."""
    keys = set()
    for row in rows:
        keys.update(row)
    leading = [k for k in ("stage", "epoch", "lr") if k in keys]
    terms = sorted(keys - set(leading) - {"total"})
    header = leading + terms + ["total"]
    with open(path, "w", newline="") as fh:
        fh.write("# " + json.dumps(config, sort_keys=True, separators=(",", ":")) + "\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            out = []
            for key in header:
                if key not in row:
                    out.append("")
                elif key in ("stage", "epoch"):
                    out.append(int(row[key]))
                else:
                    out.append(repr(float(row[key])))
            writer.writerow(out)


def _history_path(checkpoint_path: str) -> str:
    root, _ = os.path.splitext(checkpoint_path)
    return root + ".history.csv"


def _figure_paths(report_path: str) -> tuple[str, str]:
    root, _ = os.path.splitext(report_path)
    return root + "_histogram.csv", root + "_boxplot.csv"


# ---------------------------------------------------------------------------
# Stage cores shared by the single commands and repro


_TRAINERS = {
    "rrae": train_rrae,
    "ae": train_classical_ae,
    "encdec": train_encdec,
    "extended": train_extended,
}


def _train_config(p: dict) -> TrainConfig:
    drop = p["lr_drop_every"]
    return TrainConfig(
        epochs=p["epochs"],
        lr=p["lr"],
        lr_drop_every=None if drop == 0 else drop,
        optimizer=p["optimizer"],
        kmax=p["kmax"],
        rmax=p["rmax"],
        d_latent=p["d_latent"],
        weight_recon=p["weight_recon"],
        weight_class=p["weight_class"],
        weight_dic=p["weight_dic"],
        joint_class=p["joint_class"],
        joint_recon=p["joint_recon"],
        joint_curve_recon=p["joint_curve_recon"],
        joint_curve_pred=p["joint_curve_pred"],
        curve_epochs=p["curve_epochs"],
        dropout=p["dropout"],
        test_fraction=p["test_fraction"],
        seed=p["seed"],
    )


def _evaluate_model(model, micros, references, split: str, cfg: dict):
    """Score one stored split of a trained model against reference curves."""
    hyper = model.hyper
    if split == "test":
        wanted = set(hyper["test_ids"])
    elif split == "train":
        wanted = set(hyper["train_ids"])
    else:
        wanted = None
    selected = [m for m in micros if wanted is None or m.id in wanted]
    if not selected:
        raise InvalidDataError(f"no samples of the {split!r} split in the evaluated data")
    refs = {c.id: c for c in references}
    for m in selected:
        if m.id not in refs:
            raise InvalidDataError(f"missing reference curve for sample {m.id!r}")
    inputs = standardized_inputs(selected, hyper["stats_mean"], hyper["stats_sigma"])
    out = predict(model, inputs, ids=[m.id for m in selected])
    recon_per = None
    if out.reconstructions is not None:
        _, recon_per = relative_l2(out.reconstructions, inputs)
    samples = []
    for i, m in enumerate(selected):
        samples.append(PerSampleError(
            id=m.id,
            delta_dic=delta_dic_values(out.curves[i].values, refs[m.id].values),
            recon_error=None if recon_per is None else float(recon_per[i]),
            label=m.label,
            predicted_class=None if out.classes is None else int(out.classes[i]),
        ))
    return build_report(split, samples, config=cfg)


def _write_report(report, report_path: str) -> None:
    hist_path, box_path = _figure_paths(report_path)
    save_report(report, report_path)
    save_histogram_csv(report, hist_path)
    save_boxplot_csv(report, box_path)
    for path in (report_path, hist_path, box_path):
        print(f"wrote {path}")


# ---------------------------------------------------------------------------
# Subcommand runners


def _run_generate(p: dict, cfg: dict) -> None:
    recipes = _load_recipes_maybe(p["recipes"])
    profiles = generate(recipes, per_class=p["per_class"], n_points=p["points"],
                        spacing=p["eps_x"], seed=p["seed"])
    save_profiles(profiles, p["out"], config=cfg)
    print(f"wrote {p['out']} ({len(profiles)} profiles)")


def _run_simulate(p: dict, cfg: dict) -> None:
    profiles = _load_profiles_any(_require_input(p["profiles"]))
    raw, smoothed = simulate_profiles(profiles, eps_z=p["eps_z"], horizon=p["horizon"],
                                      window=p["window"], jobs=p["jobs"])
    save_curves(smoothed, p["out"], config=cfg)
    print(f"wrote {p['out']} ({len(smoothed)} curves)")
    if p["raw_out"]:
        save_curves(raw, p["raw_out"], config=cfg)
        print(f"wrote {p['raw_out']} ({len(raw)} curves)")


def _run_train(p: dict, cfg: dict) -> None:
    micros = _load_micros_any(_require_input(p["data"]), p["cutoff"])
    curves = load_curves(_require_input(p["dic"]))
    dataset = prepare_dataset(micros, curves, test_fraction=p["test_fraction"], seed=p["seed"])
    model, history = _TRAINERS[p["arch"]](dataset, _train_config(p))
    save_model(p["out"], model, run_config=cfg)
    print(f"wrote {p['out']}")
    history_path = p["history"] or _history_path(p["out"])
    _save_history(history, history_path, cfg)
    print(f"wrote {history_path} ({len(history)} epochs)")


def _run_evaluate(p: dict, cfg: dict) -> None:
    model = load_model(_require_input(p["model"]))
    micros = _load_micros_any(_require_input(p["data"]), p["cutoff"])
    references = load_curves(_require_input(p["dic"]))
    report = _evaluate_model(model, micros, references, p["split"], cfg)
    _write_report(report, p["report"])


def _run_repro(p: dict, cfg: dict) -> None:
    out_dir = p["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    path = {name: os.path.join(out_dir, name) for name in (
        "profiles.csv", "curves_raw.csv", "curves.csv", "model.ckpt",
        "model.history.csv", "report.json")}

    recipes = _load_recipes_maybe(p["recipes"])
    profiles = generate(recipes, per_class=p["per_class"], n_points=p["points"],
                        spacing=p["eps_x"], seed=p["seed"])
    save_profiles(profiles, path["profiles.csv"], config=cfg)
    print(f"wrote {path['profiles.csv']} ({len(profiles)} profiles)")

    raw, smoothed = simulate_profiles(profiles, eps_z=p["eps_z"], horizon=p["horizon"],
                                      window=p["window"], jobs=p["jobs"])
    save_curves(raw, path["curves_raw.csv"], config=cfg)
    save_curves(smoothed, path["curves.csv"], config=cfg)
    print(f"wrote {path['curves.csv']} ({len(smoothed)} curves)")

    micros = [decompose(prof, cutoff=p["cutoff"]) for prof in profiles]
    dataset = prepare_dataset(micros, smoothed, test_fraction=p["test_fraction"], seed=p["seed"])
    model, history = _TRAINERS[p["arch"]](dataset, _train_config(p))
    save_model(path["model.ckpt"], model, run_config=cfg)
    _save_history(history, path["model.history.csv"], cfg)
    print(f"wrote {path['model.ckpt']}")

    report = _evaluate_model(model, micros, smoothed, "test", cfg)
    _write_report(report, path["report.json"])


_RUNNERS = {
    "generate": _run_generate,
    "simulate": _run_simulate,
    "train": _run_train,
    "evaluate": _run_evaluate,
    "repro": _run_repro,
}


# ---------------------------------------------------------------------------
# Entry point


def _fail(code: int, message: str) -> int:
    print(f"tape-lab: error: {message}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else int(exc.code)
    if args.command is None:
        parser.print_help()
        return 2
    options = _COMMANDS[args.command]["options"]
    try:
        values = _resolve(args, options)
        cfg = _run_config(args.command, values, options)
        _RUNNERS[args.command](values, cfg)
        return 0
    except NumericError as exc:
        return _fail(4, str(exc))
    except InvalidDataError as exc:
        return _fail(3, str(exc))
    except (InvalidArgumentError, ResourceLimitError) as exc:
        return _fail(2, str(exc))
    except TapeLabError as exc:
        return _fail(2, str(exc))
    except FileNotFoundError as exc:
        return _fail(3, f"input file not found: {exc.filename or exc}")
    except OSError as exc:
        return _fail(3, str(exc))


if __name__ == "__main__":
    sys.exit(main())
