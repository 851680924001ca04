"""Latent-descriptor stack: networks, SVD truncation, training, storage."""

from .checkpoint import load_model, read_header, save_model
from .losses import relative_l2, relative_l2_grad
from .models import (
    ClassicalAeModel,
    EncDecModel,
    ExtendedModel,
    NormalizationStats,
    Prediction,
    RraeModel,
    build_curve_decoder,
    build_curve_encoder,
    build_encdec_network,
    build_head,
    build_linear_map,
    build_profile_decoder,
    build_profile_encoder,
    encode,
    param_checksum,
    predict,
)
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
    layer_from_dict,
)
from .svd import LatentBasis, project, truncate
from .training import (
    Dataset,
    TrainConfig,
    prepare_dataset,
    split_indices,
    standardized_inputs,
    train_classical_ae,
    train_encdec,
    train_curve_ae,
    train_extended,
    train_rrae,
)

__all__ = [
    "load_model",
    "read_header",
    "save_model",
    "relative_l2",
    "relative_l2_grad",
    "ClassicalAeModel",
    "EncDecModel",
    "ExtendedModel",
    "NormalizationStats",
    "Prediction",
    "RraeModel",
    "build_curve_decoder",
    "build_curve_encoder",
    "build_encdec_network",
    "build_head",
    "build_linear_map",
    "build_profile_decoder",
    "build_profile_encoder",
    "encode",
    "param_checksum",
    "predict",
    "Conv1d",
    "ConvTranspose1d",
    "Dense",
    "Dropout",
    "Flatten",
    "MaxPool1d",
    "Network",
    "Relu",
    "Reshape",
    "Sigmoid",
    "layer_from_dict",
    "LatentBasis",
    "project",
    "truncate",
    "Dataset",
    "TrainConfig",
    "prepare_dataset",
    "split_indices",
    "standardized_inputs",
    "train_classical_ae",
    "train_encdec",
    "train_curve_ae",
    "train_extended",
    "train_rrae",
]
