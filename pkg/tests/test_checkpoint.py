"""Checkpoint format: exact round trips, deterministic bytes, corruption."""

import numpy as np
import pytest

from tape_lab.errors import ParseError
from tape_lab.latent import (
    TrainConfig,
    load_model,
    param_checksum,
    predict,
    read_header,
    save_model,
    train_classical_ae,
    train_encdec,
    train_extended,
    train_rrae,
)

from test_training import toy_dataset

TRAINERS = {
    "rrae": train_rrae,
    "ae": train_classical_ae,
    "encdec": train_encdec,
    "extended": train_extended,
}


@pytest.fixture(scope="module")
def tiny_models():
    ds = toy_dataset(n=32, h=32)
    config = TrainConfig(epochs=2, curve_epochs=2, d_latent=8, kmax=2, rmax=2, seed=7)
    return ds, {kind: fn(ds, config)[0] for kind, fn in TRAINERS.items()}


@pytest.mark.parametrize("kind", sorted(TRAINERS))
def test_round_trip_preserves_everything(kind, tiny_models, tmp_path):
    ds, models = tiny_models
    model = models[kind]
    path = tmp_path / f"{kind}.ckpt"
    save_model(path, model, run_config={"command": "train", "seed": 7})
    loaded = load_model(path)
    assert loaded.kind == kind
    assert param_checksum(loaded) == param_checksum(model)
    assert loaded.stats == model.stats
    assert loaded.hyper["class_ids"] == [0, 1]
    before = predict(model, ds.inputs, ds.ids)
    after = predict(loaded, ds.inputs, ds.ids)
    for a, b in zip(before.curves, after.curves):
        assert np.array_equal(a.values, b.values)
    if before.classes is not None:
        assert np.array_equal(before.classes, after.classes)


def test_saved_bytes_are_deterministic(tiny_models, tmp_path):
    _, models = tiny_models
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_model(a, models["rrae"], run_config={"seed": 7})
    save_model(b, models["rrae"], run_config={"seed": 7})
    assert a.read_bytes() == b.read_bytes()


def test_header_carries_run_config(tiny_models, tmp_path):
    _, models = tiny_models
    path = tmp_path / "m.ckpt"
    save_model(path, models["encdec"], run_config={"command": "train", "jobs": 2})
    header = read_header(path)
    assert header["run_config"] == {"command": "train", "jobs": 2}
    assert header["kind"] == "encdec"
    assert header["format_version"] == 1


def test_bad_magic_rejected(tiny_models, tmp_path):
    _, models = tiny_models
    path = tmp_path / "m.ckpt"
    save_model(path, models["rrae"])
    data = bytearray(path.read_bytes())
    data[:8] = b"NOTMAGIC"
    path.write_bytes(bytes(data))
    with pytest.raises(ParseError):
        load_model(path)


def test_truncated_file_rejected(tiny_models, tmp_path):
    _, models = tiny_models
    path = tmp_path / "m.ckpt"
    save_model(path, models["rrae"])
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(ParseError):
        load_model(path)


def test_corrupt_header_rejected(tiny_models, tmp_path):
    _, models = tiny_models
    path = tmp_path / "m.ckpt"
    save_model(path, models["rrae"])
    data = bytearray(path.read_bytes())
    data[20] = 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(ParseError):
        load_model(path)


def test_untrained_model_cannot_be_saved(tmp_path):
    from tape_lab.latent import (
        NormalizationStats,
        RraeModel,
        build_head,
        build_profile_decoder,
        build_profile_encoder,
    )
    from tape_lab.errors import InvalidArgumentError

    model = RraeModel(
        encoder=build_profile_encoder(16, 8, seed=0),
        decoder=build_profile_decoder(16, 8, seed=1),
        clf_head=build_head(8, 2, seed=2),
        dic_head=build_head(8, 8, seed=3, final_sigmoid=True),
        basis=None,
        stats=NormalizationStats(0.5, 0.1),
    )
    with pytest.raises(InvalidArgumentError):
        save_model(tmp_path / "m.ckpt", model)
