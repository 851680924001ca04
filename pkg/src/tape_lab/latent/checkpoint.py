"""Binary checkpoint format for trained models.

Layout: an 8-byte magic string, a little-endian uint64 header length, a
JSON header (sorted keys, compact separators, UTF-8), then the raw tensor
blob.  Every tensor is stored as contiguous little-endian float64 bytes at
a byte offset recorded in the header, so a write is deterministic down to
the byte for identical models and the round trip is exact.

Tensor names are ``{network}/{layer_index}/{param}`` for network weights
and ``{basis}/modes`` / ``{basis}/singular_values`` for frozen bases.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from ..errors import InvalidArgumentError, ParseError
from .models import (
    ClassicalAeModel,
    EncDecModel,
    ExtendedModel,
    NormalizationStats,
    RraeModel,
)
from .nn import Network, layer_from_dict
from .svd import LatentBasis

__all__ = ["MAGIC", "FORMAT_VERSION", "save_model", "load_model", "read_header"]

MAGIC = b"TAPELAB1"
FORMAT_VERSION = 1

_MODEL_KINDS = {
    "rrae": RraeModel,
    "ae": ClassicalAeModel,
    "encdec": EncDecModel,
    "extended": ExtendedModel,
}


def _jsonify(value):
    if isinstance(value, dict):
        return {str(k): _jsonify(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonify(v) for v in value]
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return [_jsonify(v) for v in value.tolist()]
    return value


def _tensor_table(model):
    """Deterministic (name, array) sequence covering params and bases."""
    table = []
    for net_name in sorted(model.networks()):
        net = model.networks()[net_name]
        for i, group in enumerate(net.params):
            for key in sorted(group):
                table.append((f"{net_name}/{i}/{key}", group[key]))
    for basis_name in sorted(model.bases()):
        basis = model.bases()[basis_name]
        if basis is None:
            raise InvalidArgumentError(
                f"model has no frozen {basis_name}; only trained models can be saved"
            )
        table.append((f"{basis_name}/modes", basis.modes))
        table.append((f"{basis_name}/singular_values", basis.singular_values))
    return table


def save_model(path, model, run_config: dict | None = None):
    """Write ``model`` to ``path``.  ``run_config`` is embedded verbatim."""
    if model.kind not in _MODEL_KINDS:
        raise InvalidArgumentError(f"unknown model kind {model.kind!r}")
    table = _tensor_table(model)
    tensors = []
    offset = 0
    for name, arr in table:
        nbytes = int(arr.size) * 8
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += nbytes
    header = {
        "format_version": FORMAT_VERSION,
        "kind": model.kind,
        "hyper": _jsonify(model.hyper),
        "stats": {"mean": float(model.stats.mean), "sigma": float(model.stats.sigma)},
        "networks": {name: net.to_dict() for name, net in model.networks().items()},
        "bases": sorted(model.bases()),
        "tensors": tensors,
        "run_config": _jsonify(run_config) if run_config is not None else None,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, arr in table:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_header(path) -> dict:
    """Parse and return the JSON header of a checkpoint file."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ParseError(f"{path}: not a model checkpoint (bad magic)")
        raw_len = fh.read(8)
        if len(raw_len) != 8:
            raise ParseError(f"{path}: truncated header length")
        (header_len,) = struct.unpack("<Q", raw_len)
        raw = fh.read(header_len)
        if len(raw) != header_len:
            raise ParseError(f"{path}: truncated header")
    try:
        header = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: header is not valid JSON ({exc})") from None
    if not isinstance(header, dict):
        raise ParseError(f"{path}: header must be a JSON object")
    if header.get("format_version") != FORMAT_VERSION:
        raise ParseError(
            f"{path}: unsupported format version {header.get('format_version')!r}"
        )
    return header


def _read_tensors(path, header) -> dict:
    start = len(MAGIC) + 8 + len(
        json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    )
    with open(path, "rb") as fh:
        fh.seek(0, 2)
        total = fh.tell()
        blob_size = total - start
        fh.seek(start)
        blob = fh.read(blob_size)
    tensors = {}
    for entry in header.get("tensors", []):
        try:
            name = entry["name"]
            shape = tuple(int(s) for s in entry["shape"])
            offset = int(entry["offset"])
        except (KeyError, TypeError, ValueError):
            raise ParseError(f"{path}: malformed tensor table entry {entry!r}") from None
        size = 1
        for s in shape:
            size *= s
        end = offset + size * 8
        if offset < 0 or end > len(blob):
            raise ParseError(f"{path}: tensor {name!r} lies outside the data blob")
        tensors[name] = np.frombuffer(blob, dtype="<f8", count=size,
                                      offset=offset).reshape(shape).copy()
    return tensors


def _rebuild_network(name, spec, tensors) -> Network:
    try:
        layers = [layer_from_dict(entry) for entry in spec["layers"]]
        input_shape = tuple(int(s) for s in spec["input_shape"])
    except (KeyError, TypeError) as exc:
        raise ParseError(f"network {name!r} has a malformed spec ({exc})") from None
    params = [{} for _ in layers]
    prefix = name + "/"
    for tname, arr in tensors.items():
        if not tname.startswith(prefix):
            continue
        parts = tname.split("/")
        if len(parts) != 3:
            raise ParseError(f"malformed tensor name {tname!r}")
        idx, key = int(parts[1]), parts[2]
        if not (0 <= idx < len(layers)):
            raise ParseError(f"tensor {tname!r} addresses a missing layer")
        params[idx][key] = arr
    return Network(layers, input_shape=input_shape, params=params)


def load_model(path):
    """Rebuild a trained model from :func:`save_model` output."""
    header = read_header(path)
    tensors = _read_tensors(path, header)
    kind = header.get("kind")
    if kind not in _MODEL_KINDS:
        raise ParseError(f"{path}: unknown model kind {kind!r}")
    nets = {}
    for name, spec in header.get("networks", {}).items():
        nets[name] = _rebuild_network(name, spec, tensors)
    bases = {}
    for name in header.get("bases", []):
        try:
            bases[name] = LatentBasis(
                modes=tensors[f"{name}/modes"],
                singular_values=tensors[f"{name}/singular_values"],
            )
        except KeyError as exc:
            raise ParseError(f"{path}: basis tensor {exc} missing") from None
    stats_raw = header.get("stats", {})
    try:
        stats = NormalizationStats(mean=float(stats_raw["mean"]),
                                   sigma=float(stats_raw["sigma"]))
    except (KeyError, TypeError, ValueError):
        raise ParseError(f"{path}: malformed normalization stats") from None
    hyper = header.get("hyper", {})
    try:
        if kind == "rrae":
            return RraeModel(encoder=nets["encoder"], decoder=nets["decoder"],
                             clf_head=nets["clf_head"], dic_head=nets["dic_head"],
                             basis=bases["basis"], stats=stats, hyper=hyper)
        if kind == "ae":
            return ClassicalAeModel(encoder=nets["encoder"], down=nets["down"], up=nets["up"],
                                    decoder=nets["decoder"], clf_head=nets["clf_head"],
                                    dic_head=nets["dic_head"], stats=stats, hyper=hyper)
        if kind == "encdec":
            return EncDecModel(net=nets["net"], stats=stats, hyper=hyper)
        return ExtendedModel(encoder=nets["encoder"], decoder=nets["decoder"],
                             clf_head=nets["clf_head"], coeff_head=nets["coeff_head"],
                             basis=bases["basis"], curve_encoder=nets["curve_encoder"],
                             curve_decoder=nets["curve_decoder"],
                             curve_basis=bases["curve_basis"], stats=stats, hyper=hyper)
    except KeyError as exc:
        raise ParseError(f"{path}: checkpoint is missing component {exc}") from None
