"""Model containers and the architectures used by the training loops.

Four model families share the building blocks here:

* the rank-constrained autoencoder (conv encoder, SVD truncation in the
  latent space, conv decoder, classifier head, contact-evolution head),
* its two-stage extension (a coefficient head replaces the direct contact
  head; a second, separately trained autoencoder on the contact curves
  supplies a fixed curve basis and decoder),
* a classical autoencoder baseline where two bias-free linear maps replace
  the SVD truncation,
* a small supervised encoder-decoder baseline mapping a profile straight to
  its contact curve.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..compaction import DicCurve
from ..errors import InvalidArgumentError
from .nn import (
    Conv1d,
    ConvTranspose1d,
    Dense,
    Dropout,
    Flatten,
    MaxPool1d,
    Network,
    Relu,
    Reshape,
    Sigmoid,
)
from .svd import LatentBasis, project

__all__ = [
    "NormalizationStats",
    "RraeModel",
    "ClassicalAeModel",
    "EncDecModel",
    "ExtendedModel",
    "Prediction",
    "build_profile_encoder",
    "build_profile_decoder",
    "build_head",
    "build_curve_encoder",
    "build_curve_decoder",
    "build_encdec_network",
    "build_linear_map",
    "encode",
    "predict",
    "param_checksum",
]


@dataclass(frozen=True)
class NormalizationStats:
    """Population statistics applied after per-profile min-max scaling."""

    mean: float
    sigma: float


@dataclass(eq=False)
class RraeModel:
    encoder: Network
    decoder: Network
    clf_head: Network
    dic_head: Network
    basis: LatentBasis | None
    stats: NormalizationStats
    hyper: dict = field(default_factory=dict)

    kind = "rrae"

    def networks(self):
        return {"encoder": self.encoder, "decoder": self.decoder,
                "clf_head": self.clf_head, "dic_head": self.dic_head}

    def bases(self):
        return {"basis": self.basis}


@dataclass(eq=False)
class ClassicalAeModel:
    encoder: Network
    down: Network
    up: Network
    decoder: Network
    clf_head: Network
    dic_head: Network
    stats: NormalizationStats
    hyper: dict = field(default_factory=dict)

    kind = "ae"

    def networks(self):
        return {"encoder": self.encoder, "down": self.down, "up": self.up,
                "decoder": self.decoder, "clf_head": self.clf_head, "dic_head": self.dic_head}

    def bases(self):
        return {}


@dataclass(eq=False)
class EncDecModel:
    net: Network
    stats: NormalizationStats
    hyper: dict = field(default_factory=dict)

    kind = "encdec"

    def networks(self):
        return {"net": self.net}

    def bases(self):
        return {}


@dataclass(eq=False)
class ExtendedModel:
    encoder: Network
    decoder: Network
    clf_head: Network
    coeff_head: Network
    basis: LatentBasis | None
    curve_encoder: Network
    curve_decoder: Network
    curve_basis: LatentBasis | None
    stats: NormalizationStats
    hyper: dict = field(default_factory=dict)

    kind = "extended"

    def networks(self):
        return {"encoder": self.encoder, "decoder": self.decoder, "clf_head": self.clf_head,
                "coeff_head": self.coeff_head, "curve_encoder": self.curve_encoder,
                "curve_decoder": self.curve_decoder}

    def bases(self):
        return {"basis": self.basis, "curve_basis": self.curve_basis}


# ---------------------------------------------------------------------------
# Architectures


def _require_quarterable(n: int, what: str):
    if n % 4 != 0 or n < 8:
        raise InvalidArgumentError(f"{what} must be a positive multiple of 4, got {n}")


def build_profile_encoder(n_points: int, d_latent: int, seed=None) -> Network:
    """Conv encoder: two conv+pool stages shrink the resolution by four,
    then a dense layer maps to the latent width."""
    _require_quarterable(n_points, "profile length")
    return Network(
        [
            Conv1d(1, 16, 5, stride=1, padding=2), Relu(), MaxPool1d(2),
            Conv1d(16, 32, 3, stride=1, padding=1), Relu(), MaxPool1d(2),
            Flatten(), Dense(32 * (n_points // 4), d_latent),
        ],
        input_shape=(1, n_points),
        seed=seed,
    )


def build_profile_decoder(n_points: int, d_latent: int, seed=None) -> Network:
    """Mirror of the encoder: dense expansion, then two transposed convs."""
    _require_quarterable(n_points, "profile length")
    return Network(
        [
            Dense(d_latent, d_latent), Relu(),
            Dense(d_latent, 32 * (n_points // 4)), Relu(),
            Reshape(32, n_points // 4),
            ConvTranspose1d(32, 6, 4, stride=2, padding=1), Relu(),
            ConvTranspose1d(6, 1, 4, stride=2, padding=1),
            Flatten(),
        ],
        input_shape=(d_latent,),
        seed=seed,
    )


def build_head(d_latent: int, n_out: int, seed=None, final_sigmoid: bool = False) -> Network:
    """Six dense layers at the latent width; optional sigmoid output."""
    layers = []
    for _ in range(5):
        layers += [Dense(d_latent, d_latent), Relu()]
    layers.append(Dense(d_latent, n_out))
    if final_sigmoid:
        layers.append(Sigmoid())
    return Network(layers, input_shape=(d_latent,), seed=seed)


def build_curve_encoder(horizon: int, d_latent: int, seed=None) -> Network:
    """Same conv encoder shape, applied to contact curves."""
    return build_profile_encoder(horizon, d_latent, seed=seed)


def build_curve_decoder(horizon: int, d_latent: int, seed=None) -> Network:
    """Profile decoder plus a sigmoid, since contact lives in [0, 1]."""
    _require_quarterable(horizon, "curve horizon")
    return Network(
        [
            Dense(d_latent, d_latent), Relu(),
            Dense(d_latent, 32 * (horizon // 4)), Relu(),
            Reshape(32, horizon // 4),
            ConvTranspose1d(32, 6, 4, stride=2, padding=1), Relu(),
            ConvTranspose1d(6, 1, 4, stride=2, padding=1),
            Flatten(), Sigmoid(),
        ],
        input_shape=(d_latent,),
        seed=seed,
    )


def build_encdec_network(n_points: int, horizon: int, seed=None, dropout: float = 0.1,
                         gamma: int = 6) -> Network:
    """Small supervised profile-to-curve network (about 6.5k parameters at
    the 500-point scale): strided kernel-9 convs with pooling down to a
    ``gamma``-wide bottleneck, then transposed convs up to the horizon."""
    if horizon % 32 != 0:
        raise InvalidArgumentError(f"horizon must be a multiple of 32, got {horizon}")
    if gamma < 1:
        raise InvalidArgumentError(f"bottleneck width must be positive, got {gamma}")
    head = [
        Conv1d(1, 6, 9, stride=3, padding=4), Relu(), MaxPool1d(2),
        Conv1d(6, 12, 9, stride=3, padding=4), Relu(), MaxPool1d(2),
        Flatten(),
    ]
    probe = Network(head, input_shape=(1, n_points))
    flat = probe.output_shape[0]
    layers = head + [
        Dropout(dropout),
        Dense(flat, 24), Relu(),
        Dense(24, gamma), Relu(),
        Dense(gamma, 16 * (horizon // 32)), Relu(),
        Reshape(16, horizon // 32),
        ConvTranspose1d(16, 8, 4, stride=4), Relu(),
        Dropout(dropout),
        ConvTranspose1d(8, 1, 8, stride=8),
        Flatten(), Sigmoid(),
    ]
    return Network(layers, input_shape=(1, n_points), seed=seed)


def build_linear_map(n_in: int, n_out: int, seed=None) -> Network:
    """Single bias-free dense map (the classical-autoencoder rank bottleneck)."""
    return Network([Dense(n_in, n_out, bias=False)], input_shape=(n_in,), seed=seed)


# ---------------------------------------------------------------------------
# Inference


def encode(model, inputs: np.ndarray) -> np.ndarray:
    """Latent matrix (latent_dim x batch) of standardized inputs."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidArgumentError(f"expected a (batch, features) matrix, got shape {x.shape}")
    encoder = model.networks()["encoder"]
    y, _ = encoder.forward(x[:, None, :])
    return y.T


@dataclass(eq=False)
class Prediction:
    """Joint model outputs for a batch."""

    ids: list
    classes: np.ndarray | None
    curves: list[DicCurve]
    reconstructions: np.ndarray | None
    coefficients: np.ndarray | None = None


def _curves_from_matrix(values: np.ndarray, ids, eps_z: float) -> list[DicCurve]:
    clipped = np.clip(values, 0.0, 1.0)
    return [
        DicCurve(id=str(ids[i]), values=clipped[i], stage="smoothed", eps_z=eps_z)
        for i in range(clipped.shape[0])
    ]


def _map_classes(scores: np.ndarray, class_ids) -> np.ndarray:
    idx = scores.argmax(axis=1)
    lookup = np.asarray(class_ids, dtype=np.int64)
    return lookup[idx]


def predict(model, inputs: np.ndarray, ids=None) -> Prediction:
    """Run a trained model on standardized profile rows.

    Uses the frozen latent basis (never a fresh batch SVD), so repeated
    evaluation of one batch is deterministic down to the bit.
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidArgumentError(f"expected a (batch, features) matrix, got shape {x.shape}")
    if ids is None:
        ids = [str(i) for i in range(x.shape[0])]
    eps_z = float(model.hyper.get("eps_z", 0.1))
    class_ids = model.hyper.get("class_ids", [])

    if model.kind == "encdec":
        out, _ = model.net.forward(x[:, None, :])
        return Prediction(ids=list(ids), classes=None,
                          curves=_curves_from_matrix(out, ids, eps_z), reconstructions=None)

    y, _ = model.encoder.forward(x[:, None, :])
    if model.kind == "rrae":
        if model.basis is None:
            raise InvalidArgumentError("model has no frozen basis; train it first")
        coeff, z_t = project(model.basis, y.T)
        z = z_t.T
        recon, _ = model.decoder.forward(z)
        scores, _ = model.clf_head.forward(z)
        curves_mat, _ = model.dic_head.forward(z)
        return Prediction(ids=list(ids), classes=_map_classes(scores, class_ids),
                          curves=_curves_from_matrix(curves_mat, ids, eps_z),
                          reconstructions=recon, coefficients=coeff)
    if model.kind == "ae":
        down, _ = model.down.forward(y)
        z, _ = model.up.forward(down)
        recon, _ = model.decoder.forward(z)
        scores, _ = model.clf_head.forward(z)
        curves_mat, _ = model.dic_head.forward(z)
        return Prediction(ids=list(ids), classes=_map_classes(scores, class_ids),
                          curves=_curves_from_matrix(curves_mat, ids, eps_z),
                          reconstructions=recon, coefficients=down.T)
    if model.kind == "extended":
        if model.basis is None or model.curve_basis is None:
            raise InvalidArgumentError("model has no frozen bases; train it first")
        coeff, z_t = project(model.basis, y.T)
        z = z_t.T
        recon, _ = model.decoder.forward(z)
        scores, _ = model.clf_head.forward(z)
        beta, _ = model.coeff_head.forward(z)
        curve_latent = beta @ model.curve_basis.modes.T
        curves_mat, _ = model.curve_decoder.forward(curve_latent)
        return Prediction(ids=list(ids), classes=_map_classes(scores, class_ids),
                          curves=_curves_from_matrix(curves_mat, ids, eps_z),
                          reconstructions=recon, coefficients=beta.T)
    raise InvalidArgumentError(f"unknown model kind {model.kind!r}")


def param_checksum(model) -> str:
    """SHA-256 over every parameter tensor and basis, for repro checks."""
    import hashlib

    digest = hashlib.sha256()
    for name in sorted(model.networks()):
        for group in model.networks()[name].params:
            for key in sorted(group):
                digest.update(np.ascontiguousarray(group[key]).tobytes())
    for name in sorted(model.bases()):
        basis = model.bases()[name]
        if basis is not None:
            digest.update(np.ascontiguousarray(basis.modes).tobytes())
            digest.update(np.ascontiguousarray(basis.singular_values).tobytes())
    return digest.hexdigest()
