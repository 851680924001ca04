"""Full-batch training loops for the four model families.

All loops are deterministic: initialization seeds are spawned from the run
seed, the data split is stratified with its own spawned stream, and training
runs full batch, so two runs with one seed produce byte-identical parameters.
Every loss term is the batch *sum* of per-sample relative errors and the
history rows record those sums; gradients are taken of the weighted sum, so
the effective step size of plain gradient descent grows with the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidArgumentError, InvalidDataError, NumericError
from ..profile import normalize_minmax, population_mean_stats, standardize
from .losses import relative_l2, relative_l2_grad
from .models import (
    ClassicalAeModel,
    EncDecModel,
    ExtendedModel,
    NormalizationStats,
    RraeModel,
    build_curve_decoder,
    build_curve_encoder,
    build_encdec_network,
    build_head,
    build_linear_map,
    build_profile_decoder,
    build_profile_encoder,
)
from .svd import truncate

__all__ = [
    "TrainConfig",
    "Dataset",
    "split_indices",
    "prepare_dataset",
    "standardized_inputs",
    "train_rrae",
    "train_curve_ae",
    "train_classical_ae",
    "train_encdec",
    "train_extended",
]


@dataclass(frozen=True)
class TrainConfig:
    """Hyper-parameters shared by the training loops.

    ``lr_drop_every`` divides the learning rate by ten after that many
    epochs, repeatedly; None keeps it constant.  ``curve_epochs`` is the
    pretraining budget of the extended model's curve autoencoder (defaults
    to ``epochs``).  The ``weight_*`` values drive the single-stage joint
    loss, the ``joint_*`` values the extended stage-two loss.  Plain
    gradient descent with the decade schedule is the default; adam is
    available as an option.
    """

    epochs: int = 6000
    lr: float = 1e-3
    lr_drop_every: int | None = 2000
    optimizer: str = "sgd"
    kmax: int = 4
    rmax: int = 3
    d_latent: int = 64
    weight_recon: float = 1.0
    weight_class: float = 1.0
    weight_dic: float = 1.0
    joint_class: float = 2.0
    joint_recon: float = 1.0
    joint_curve_recon: float = 1.0
    joint_curve_pred: float = 2.0
    curve_epochs: int | None = None
    dropout: float = 0.1
    test_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidArgumentError(f"epochs must be positive, got {self.epochs}")
        if not (np.isfinite(self.lr) and self.lr > 0):
            raise InvalidArgumentError(f"lr must be positive, got {self.lr}")
        if self.lr_drop_every is not None and self.lr_drop_every < 1:
            raise InvalidArgumentError(f"lr_drop_every must be positive, got {self.lr_drop_every}")
        if self.optimizer not in ("adam", "sgd"):
            raise InvalidArgumentError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.kmax < 1 or self.rmax < 1 or self.d_latent < 1:
            raise InvalidArgumentError("kmax, rmax and d_latent must be positive")
        if not (0.0 <= self.test_fraction < 1.0):
            raise InvalidArgumentError(f"test_fraction must lie in [0, 1), got {self.test_fraction}")
        if not (0.0 <= self.dropout < 1.0):
            raise InvalidArgumentError(f"dropout must lie in [0, 1), got {self.dropout}")


@dataclass(eq=False)
class Dataset:
    """Standardized training matrices plus the split bookkeeping."""

    ids: list[str]
    labels: np.ndarray
    class_ids: list[int]
    inputs: np.ndarray
    onehot: np.ndarray
    curves: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray
    stats: NormalizationStats
    eps_z: float
    meta: dict = field(default_factory=dict)

    @property
    def n_points(self) -> int:
        return self.inputs.shape[1]

    @property
    def horizon(self) -> int:
        return self.curves.shape[1]


def split_indices(labels: np.ndarray, test_fraction: float, seed: int):
    """Stratified train/test indices, deterministic in ``seed``.

    Per class the samples are shuffled by a stream spawned from the seed and
    the first ``round(test_fraction * n)`` go to the test side (at least one
    when the fraction is positive and the class has more than one sample,
    and never the whole class).
    """
    labels = np.asarray(labels)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(97,))))
    train, test = [], []
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        members = members[rng.permutation(members.size)]
        n_test = 0
        if test_fraction > 0 and members.size > 1:
            n_test = max(1, min(int(round(test_fraction * members.size)), members.size - 1))
        test.extend(members[:n_test])
        train.extend(members[n_test:])
    return np.sort(np.array(train, dtype=np.int64)), np.sort(np.array(test, dtype=np.int64))


def prepare_dataset(micros, curves, test_fraction: float, seed: int) -> Dataset:
    """Normalize micro profiles, match their curves by id, and split.

    Population statistics come from the training split only; both splits are
    standardized with them.  Curve targets must be smoothed and share one
    horizon.
    """
    if not micros:
        raise InvalidArgumentError("no samples")
    by_id = {}
    for c in curves:
        if c.stage != "smoothed":
            raise InvalidDataError(f"curve {c.id!r} has stage {c.stage!r}, expected 'smoothed'")
        if c.id in by_id:
            raise InvalidDataError(f"duplicate curve id {c.id!r}")
        by_id[c.id] = c
    horizon = None
    matched = []
    for m in micros:
        if m.label is None:
            raise InvalidDataError(f"sample {m.id!r} has no class label")
        if m.id not in by_id:
            raise InvalidDataError(f"missing contact curve for sample {m.id!r}")
        c = by_id[m.id]
        if horizon is None:
            horizon = c.horizon
        elif c.horizon != horizon:
            raise InvalidDataError(f"curve {c.id!r} horizon {c.horizon} != {horizon}")
        matched.append(c)
    labels = np.array([m.label for m in micros], dtype=np.int64)
    train_idx, test_idx = split_indices(labels, test_fraction, seed)
    normed = [normalize_minmax(m) for m in micros]
    mean, sigma = population_mean_stats([normed[i] for i in train_idx])
    standardized = [standardize(n, mean, sigma) for n in normed]
    inputs = np.stack([s.values for s in standardized])
    class_ids = sorted(int(c) for c in np.unique(labels))
    index = {c: i for i, c in enumerate(class_ids)}
    onehot = np.zeros((len(micros), len(class_ids)))
    for row, lab in enumerate(labels):
        onehot[row, index[int(lab)]] = 1.0
    curve_matrix = np.stack([c.values for c in matched])
    return Dataset(
        ids=[m.id for m in micros],
        labels=labels,
        class_ids=class_ids,
        inputs=inputs,
        onehot=onehot,
        curves=curve_matrix,
        train_idx=train_idx,
        test_idx=test_idx,
        stats=NormalizationStats(mean=mean, sigma=sigma),
        eps_z=float(matched[0].eps_z),
    )


def standardized_inputs(micros, mean: float, sigma: float) -> np.ndarray:
    """Input matrix for a trained model, using its stored population statistics.

    Evaluation of new samples must reuse the statistics frozen at training
    time, never recompute them from the evaluated set.
    """
    rows = [standardize(normalize_minmax(m), mean, sigma).values for m in micros]
    return np.stack(rows)


# ---------------------------------------------------------------------------
# Optimizers


class _Sgd:
    def __init__(self, nets):
        pass

    def apply(self, nets, grads, lr):
        for name, net in nets.items():
            for group, ggroup in zip(net.params, grads[name]):
                for key in group:
                    group[key] -= lr * ggroup[key]


class _Adam:
    beta1 = 0.9
    beta2 = 0.999
    eps = 1e-8

    def __init__(self, nets):
        self.t = 0
        self.m = {name: [{k: np.zeros_like(v) for k, v in g.items()} for g in net.params]
                  for name, net in nets.items()}
        self.v = {name: [{k: np.zeros_like(v) for k, v in g.items()} for g in net.params]
                  for name, net in nets.items()}

    def apply(self, nets, grads, lr):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, net in nets.items():
            for group, ggroup, mg, vg in zip(net.params, grads[name], self.m[name], self.v[name]):
                for key in group:
                    g = ggroup[key]
                    mg[key] = self.beta1 * mg[key] + (1.0 - self.beta1) * g
                    vg[key] = self.beta2 * vg[key] + (1.0 - self.beta2) * g * g
                    group[key] -= lr * (mg[key] / c1) / (np.sqrt(vg[key] / c2) + self.eps)


def _make_optimizer(config: TrainConfig, nets):
    return _Adam(nets) if config.optimizer == "adam" else _Sgd(nets)


def _lr_at(config: TrainConfig, epoch: int) -> float:
    if config.lr_drop_every is None:
        return config.lr
    return config.lr * 0.1 ** (epoch // config.lr_drop_every)


def _check_finite(terms: dict, epoch: int):
    for name, value in terms.items():
        if not np.isfinite(value):
            raise NumericError(f"loss term {name!r} became non-finite at epoch {epoch}")


def _spawned_seed(seed: int, slot: int):
    return np.random.SeedSequence(entropy=seed, spawn_key=(slot,))


def _train_rows(dataset: Dataset):
    idx = dataset.train_idx
    if idx.size == 0:
        raise InvalidArgumentError("training split is empty")
    return dataset.inputs[idx], dataset.onehot[idx], dataset.curves[idx]


def _common_hyper(dataset: Dataset, config: TrainConfig) -> dict:
    return {
        "n_points": int(dataset.n_points),
        "horizon": int(dataset.horizon),
        "d_latent": config.d_latent,
        "class_ids": dataset.class_ids,
        "eps_z": dataset.eps_z,
        "seed": config.seed,
        "epochs": config.epochs,
        "lr": config.lr,
        "lr_drop_every": config.lr_drop_every,
        "optimizer": config.optimizer,
        "test_fraction": config.test_fraction,
        "stats_mean": dataset.stats.mean,
        "stats_sigma": dataset.stats.sigma,
        "train_ids": [dataset.ids[i] for i in dataset.train_idx],
        "test_ids": [dataset.ids[i] for i in dataset.test_idx],
    }


def train_rrae(dataset: Dataset, config: TrainConfig):
    """Train the rank-constrained joint model.

    Per epoch: encode the batch, truncate the latent matrix to ``kmax``
    modes by SVD, then decode, classify and regress the contact curve from
    the truncated latents.  Gradients flow through the mode coefficients
    only; the basis is constant within an epoch.  The basis frozen into the
    returned model is recomputed from the final parameters, so inference on
    the training batch reproduces a final forward pass bit for bit.

    Returns ``(model, history)``; history rows are dicts of batch-summed
    loss terms per epoch.
    """
    x, onehot, curves = _train_rows(dataset)
    b = x.shape[0]
    if config.kmax > min(config.d_latent, b):
        raise InvalidArgumentError(
            f"kmax {config.kmax} exceeds min(d_latent, batch) = {min(config.d_latent, b)}"
        )
    nets = {
        "encoder": build_profile_encoder(dataset.n_points, config.d_latent,
                                         seed=_spawned_seed(config.seed, 0)),
        "decoder": build_profile_decoder(dataset.n_points, config.d_latent,
                                         seed=_spawned_seed(config.seed, 1)),
        "clf_head": build_head(config.d_latent, len(dataset.class_ids),
                               seed=_spawned_seed(config.seed, 2)),
        "dic_head": build_head(config.d_latent, dataset.horizon,
                               seed=_spawned_seed(config.seed, 3), final_sigmoid=True),
    }
    opt = _make_optimizer(config, nets)
    history = []
    x3 = x[:, None, :]
    for epoch in range(config.epochs):
        lr = _lr_at(config, epoch)
        y, enc_caches = nets["encoder"].forward(x3, train=True)
        if not np.all(np.isfinite(y)):
            raise NumericError(f"latent matrix became non-finite at epoch {epoch}")
        basis, _, z_t = truncate(y.T, config.kmax)
        z = z_t.T
        xhat, dec_caches = nets["decoder"].forward(z, train=True)
        chat, clf_caches = nets["clf_head"].forward(z, train=True)
        dhat, dic_caches = nets["dic_head"].forward(z, train=True)
        loss_r, _ = relative_l2(xhat, x)
        loss_c, _ = relative_l2(chat, onehot)
        loss_d, _ = relative_l2(dhat, curves)
        terms = {
            "recon": loss_r,
            "class": loss_c,
            "dic": loss_d,
        }
        terms["total"] = (config.weight_recon * terms["recon"]
                          + config.weight_class * terms["class"]
                          + config.weight_dic * terms["dic"])
        _check_finite(terms, epoch)
        dx_dec, dec_grads = nets["decoder"].backward(
            config.weight_recon * relative_l2_grad(xhat, x), dec_caches)
        dx_clf, clf_grads = nets["clf_head"].backward(
            config.weight_class * relative_l2_grad(chat, onehot), clf_caches)
        dx_dic, dic_grads = nets["dic_head"].backward(
            config.weight_dic * relative_l2_grad(dhat, curves), dic_caches)
        dz = dx_dec + dx_clf + dx_dic
        dy = (basis.modes @ (basis.modes.T @ dz.T)).T
        _, enc_grads = nets["encoder"].backward(dy, enc_caches)
        opt.apply(nets, {"encoder": enc_grads, "decoder": dec_grads,
                         "clf_head": clf_grads, "dic_head": dic_grads}, lr)
        history.append({"epoch": epoch, "lr": lr, **terms})
    y, _ = nets["encoder"].forward(x3)
    basis, _, _ = truncate(y.T, config.kmax)
    hyper = _common_hyper(dataset, config)
    hyper.update({"kmax": config.kmax, "weights": [config.weight_recon, config.weight_class,
                                                   config.weight_dic]})
    model = RraeModel(encoder=nets["encoder"], decoder=nets["decoder"],
                      clf_head=nets["clf_head"], dic_head=nets["dic_head"],
                      basis=basis, stats=dataset.stats, hyper=hyper)
    return model, history


def train_classical_ae(dataset: Dataset, config: TrainConfig):
    """Baseline: the SVD truncation is replaced by two trainable bias-free
    linear maps (latent -> kmax -> latent); everything else matches
    :func:`train_rrae`, so the parameter count exceeds it by exactly
    ``2 * d_latent * kmax``."""
    x, onehot, curves = _train_rows(dataset)
    if config.kmax > config.d_latent:
        raise InvalidArgumentError(f"kmax {config.kmax} exceeds d_latent {config.d_latent}")
    nets = {
        "encoder": build_profile_encoder(dataset.n_points, config.d_latent,
                                         seed=_spawned_seed(config.seed, 0)),
        "decoder": build_profile_decoder(dataset.n_points, config.d_latent,
                                         seed=_spawned_seed(config.seed, 1)),
        "clf_head": build_head(config.d_latent, len(dataset.class_ids),
                               seed=_spawned_seed(config.seed, 2)),
        "dic_head": build_head(config.d_latent, dataset.horizon,
                               seed=_spawned_seed(config.seed, 3), final_sigmoid=True),
        "down": build_linear_map(config.d_latent, config.kmax, seed=_spawned_seed(config.seed, 4)),
        "up": build_linear_map(config.kmax, config.d_latent, seed=_spawned_seed(config.seed, 5)),
    }
    opt = _make_optimizer(config, nets)
    history = []
    x3 = x[:, None, :]
    for epoch in range(config.epochs):
        lr = _lr_at(config, epoch)
        y, enc_caches = nets["encoder"].forward(x3, train=True)
        coeff, down_caches = nets["down"].forward(y, train=True)
        z, up_caches = nets["up"].forward(coeff, train=True)
        xhat, dec_caches = nets["decoder"].forward(z, train=True)
        chat, clf_caches = nets["clf_head"].forward(z, train=True)
        dhat, dic_caches = nets["dic_head"].forward(z, train=True)
        loss_r, _ = relative_l2(xhat, x)
        loss_c, _ = relative_l2(chat, onehot)
        loss_d, _ = relative_l2(dhat, curves)
        terms = {
            "recon": loss_r,
            "class": loss_c,
            "dic": loss_d,
        }
        terms["total"] = (config.weight_recon * terms["recon"]
                          + config.weight_class * terms["class"]
                          + config.weight_dic * terms["dic"])
        _check_finite(terms, epoch)
        dx_dec, dec_grads = nets["decoder"].backward(
            config.weight_recon * relative_l2_grad(xhat, x), dec_caches)
        dx_clf, clf_grads = nets["clf_head"].backward(
            config.weight_class * relative_l2_grad(chat, onehot), clf_caches)
        dx_dic, dic_grads = nets["dic_head"].backward(
            config.weight_dic * relative_l2_grad(dhat, curves), dic_caches)
        dz = dx_dec + dx_clf + dx_dic
        dcoeff, up_grads = nets["up"].backward(dz, up_caches)
        dy, down_grads = nets["down"].backward(dcoeff, down_caches)
        _, enc_grads = nets["encoder"].backward(dy, enc_caches)
        opt.apply(nets, {"encoder": enc_grads, "decoder": dec_grads, "clf_head": clf_grads,
                         "dic_head": dic_grads, "down": down_grads, "up": up_grads}, lr)
        history.append({"epoch": epoch, "lr": lr, **terms})
    hyper = _common_hyper(dataset, config)
    hyper.update({"kmax": config.kmax, "weights": [config.weight_recon, config.weight_class,
                                                   config.weight_dic]})
    model = ClassicalAeModel(encoder=nets["encoder"], down=nets["down"], up=nets["up"],
                             decoder=nets["decoder"], clf_head=nets["clf_head"],
                             dic_head=nets["dic_head"], stats=dataset.stats, hyper=hyper)
    return model, history


def train_encdec(dataset: Dataset, config: TrainConfig):
    """Baseline: supervised profile-to-curve map with dropout, no latent
    bottleneck shared with other tasks and no classifier."""
    x, _, curves = _train_rows(dataset)
    net = build_encdec_network(dataset.n_points, dataset.horizon,
                               seed=_spawned_seed(config.seed, 0), dropout=config.dropout)
    nets = {"net": net}
    opt = _make_optimizer(config, nets)
    rng = np.random.Generator(np.random.PCG64(_spawned_seed(config.seed, 6)))
    history = []
    x3 = x[:, None, :]
    for epoch in range(config.epochs):
        lr = _lr_at(config, epoch)
        dhat, caches = net.forward(x3, train=True, rng=rng)
        loss_d, _ = relative_l2(dhat, curves)
        terms = {"dic": loss_d, "total": loss_d}
        _check_finite(terms, epoch)
        _, grads = net.backward(relative_l2_grad(dhat, curves), caches)
        opt.apply(nets, {"net": grads}, lr)
        history.append({"epoch": epoch, "lr": lr, **terms})
    hyper = _common_hyper(dataset, config)
    hyper.update({"dropout": config.dropout})
    model = EncDecModel(net=net, stats=dataset.stats, hyper=hyper)
    return model, history


def train_curve_ae(curves: np.ndarray, config: TrainConfig):
    """Rank-constrained autoencoder on contact curves alone.

    This is the curve half of the extended model, usable on its own.  The
    latent matrix is truncated to ``rmax`` modes each epoch; the training
    budget is ``curve_epochs`` (falling back to ``epochs``).  Returns
    ``(nets, basis, history)`` where ``basis`` holds the modes of the final
    parameters and ``nets`` maps ``curve_encoder`` and ``curve_decoder`` to
    their networks.
    """
    curves = np.asarray(curves, dtype=np.float64)
    if curves.ndim != 2:
        raise InvalidArgumentError(f"expected a (batch, horizon) matrix, got shape {curves.shape}")
    if config.rmax > min(config.d_latent, curves.shape[0]):
        raise InvalidArgumentError(
            f"rmax {config.rmax} exceeds min(d_latent, batch) = "
            f"{min(config.d_latent, curves.shape[0])}"
        )
    horizon = curves.shape[1]
    nets = {
        "curve_encoder": build_curve_encoder(horizon, config.d_latent,
                                             seed=_spawned_seed(config.seed, 10)),
        "curve_decoder": build_curve_decoder(horizon, config.d_latent,
                                             seed=_spawned_seed(config.seed, 11)),
    }
    opt = _make_optimizer(config, nets)
    history = []
    d3 = curves[:, None, :]
    epochs = config.curve_epochs if config.curve_epochs is not None else config.epochs
    for epoch in range(epochs):
        lr = _lr_at(config, epoch)
        yd, enc_caches = nets["curve_encoder"].forward(d3, train=True)
        if not np.all(np.isfinite(yd)):
            raise NumericError(f"curve latent matrix became non-finite at epoch {epoch}")
        basis, _, zd_t = truncate(yd.T, config.rmax)
        dstar, dec_caches = nets["curve_decoder"].forward(zd_t.T, train=True)
        loss, _ = relative_l2(dstar, curves)
        terms = {"curve_recon": loss, "total": loss}
        _check_finite(terms, epoch)
        dz, dec_grads = nets["curve_decoder"].backward(
            relative_l2_grad(dstar, curves), dec_caches)
        dyd = (basis.modes @ (basis.modes.T @ dz.T)).T
        _, enc_grads = nets["curve_encoder"].backward(dyd, enc_caches)
        opt.apply(nets, {"curve_encoder": enc_grads, "curve_decoder": dec_grads}, lr)
        history.append({"epoch": epoch, "lr": lr, **terms})
    yd, _ = nets["curve_encoder"].forward(d3)
    basis, _, _ = truncate(yd.T, config.rmax)
    return nets, basis, history


def train_extended(dataset: Dataset, config: TrainConfig):
    """Two-stage extended training.

    Stage one trains a rank-``rmax`` autoencoder on the smoothed contact
    curves alone; its basis is then frozen.  Stage two trains the profile
    model (encoder, decoder, classifier, coefficient head) jointly with the
    curve autoencoder under the four-term loss: classification, profile
    reconstruction, curve reconstruction through the frozen basis, and curve
    prediction from the coefficient head through the frozen basis and the
    curve decoder.  The curve networks keep learning in stage two; only the
    basis stays fixed.
    """
    x, onehot, curves = _train_rows(dataset)
    b = x.shape[0]
    if config.rmax > min(config.d_latent, b):
        raise InvalidArgumentError(
            f"rmax {config.rmax} exceeds min(d_latent, batch) = {min(config.d_latent, b)}"
        )
    if config.kmax > min(config.d_latent, b):
        raise InvalidArgumentError(
            f"kmax {config.kmax} exceeds min(d_latent, batch) = {min(config.d_latent, b)}"
        )
    curve_nets, curve_basis, curve_history = train_curve_ae(curves, config)
    history = [{"epoch": row["epoch"], "lr": row["lr"], "stage": 1,
                "curve_recon": row["curve_recon"], "total": row["total"]}
               for row in curve_history]
    curve_epochs = len(curve_history)
    d3 = curves[:, None, :]

    profile_nets = {
        "encoder": build_profile_encoder(dataset.n_points, config.d_latent,
                                         seed=_spawned_seed(config.seed, 0)),
        "decoder": build_profile_decoder(dataset.n_points, config.d_latent,
                                         seed=_spawned_seed(config.seed, 1)),
        "clf_head": build_head(config.d_latent, len(dataset.class_ids),
                               seed=_spawned_seed(config.seed, 2)),
        "coeff_head": build_head(config.d_latent, config.rmax,
                                 seed=_spawned_seed(config.seed, 3)),
    }
    all_nets = {**profile_nets, **curve_nets}
    opt = _make_optimizer(config, all_nets)
    x3 = x[:, None, :]
    v = curve_basis.modes
    for epoch in range(config.epochs):
        lr = _lr_at(config, epoch)
        y, enc_caches = profile_nets["encoder"].forward(x3, train=True)
        if not np.all(np.isfinite(y)):
            raise NumericError(f"latent matrix became non-finite at epoch {epoch}")
        basis, _, z_t = truncate(y.T, config.kmax)
        z = z_t.T
        xhat, dec_caches = profile_nets["decoder"].forward(z, train=True)
        chat, clf_caches = profile_nets["clf_head"].forward(z, train=True)
        beta, coeff_caches = profile_nets["coeff_head"].forward(z, train=True)
        yd, cenc_caches = curve_nets["curve_encoder"].forward(d3, train=True)
        zd = (v @ (v.T @ yd.T)).T
        dstar, cdec_caches_star = curve_nets["curve_decoder"].forward(zd, train=True)
        zpred = beta @ v.T
        dpred, cdec_caches_pred = curve_nets["curve_decoder"].forward(zpred, train=True)
        loss_c, _ = relative_l2(chat, onehot)
        loss_r, _ = relative_l2(xhat, x)
        loss_star, _ = relative_l2(dstar, curves)
        loss_pred, _ = relative_l2(dpred, curves)
        terms = {
            "class": loss_c,
            "recon": loss_r,
            "curve_recon": loss_star,
            "curve_pred": loss_pred,
        }
        terms["total"] = (config.joint_class * terms["class"]
                          + config.joint_recon * terms["recon"]
                          + config.joint_curve_recon * terms["curve_recon"]
                          + config.joint_curve_pred * terms["curve_pred"])
        _check_finite(terms, epoch)
        dx_dec, dec_grads = profile_nets["decoder"].backward(
            config.joint_recon * relative_l2_grad(xhat, x), dec_caches)
        dx_clf, clf_grads = profile_nets["clf_head"].backward(
            config.joint_class * relative_l2_grad(chat, onehot), clf_caches)
        dzd_star, cdec_grads_star = curve_nets["curve_decoder"].backward(
            config.joint_curve_recon * relative_l2_grad(dstar, curves), cdec_caches_star)
        dzpred, cdec_grads_pred = curve_nets["curve_decoder"].backward(
            config.joint_curve_pred * relative_l2_grad(dpred, curves), cdec_caches_pred)
        cdec_grads = [
            {key: ga[key] + gb[key] for key in ga}
            for ga, gb in zip(cdec_grads_star, cdec_grads_pred)
        ]
        dyd = (v @ (v.T @ dzd_star.T)).T
        _, cenc_grads = curve_nets["curve_encoder"].backward(dyd, cenc_caches)
        dbeta = dzpred @ v
        dx_coeff, coeff_grads = profile_nets["coeff_head"].backward(dbeta, coeff_caches)
        dz = dx_dec + dx_clf + dx_coeff
        dy = (basis.modes @ (basis.modes.T @ dz.T)).T
        _, enc_grads = profile_nets["encoder"].backward(dy, enc_caches)
        opt.apply(all_nets, {"encoder": enc_grads, "decoder": dec_grads, "clf_head": clf_grads,
                             "coeff_head": coeff_grads, "curve_encoder": cenc_grads,
                             "curve_decoder": cdec_grads}, lr)
        history.append({"epoch": epoch, "lr": lr, "stage": 2, **terms})
    y, _ = profile_nets["encoder"].forward(x3)
    basis, _, _ = truncate(y.T, config.kmax)
    hyper = _common_hyper(dataset, config)
    hyper.update({
        "kmax": config.kmax,
        "rmax": config.rmax,
        "curve_epochs": curve_epochs,
        "weights": [config.joint_class, config.joint_recon,
                    config.joint_curve_recon, config.joint_curve_pred],
    })
    model = ExtendedModel(encoder=profile_nets["encoder"], decoder=profile_nets["decoder"],
                          clf_head=profile_nets["clf_head"], coeff_head=profile_nets["coeff_head"],
                          basis=basis, curve_encoder=curve_nets["curve_encoder"],
                          curve_decoder=curve_nets["curve_decoder"], curve_basis=curve_basis,
                          stats=dataset.stats, hyper=hyper)
    return model, history
