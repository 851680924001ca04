"""Rank-k truncation of latent batches via the singular value decomposition."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidArgumentError, InvalidDataError

__all__ = ["LatentBasis", "truncate", "project"]


@dataclass(frozen=True, eq=False)
class LatentBasis:
    """Orthonormal modes spanning the retained latent subspace.

    ``modes`` has one column per retained mode (shape latent_dim x k);
    ``singular_values`` holds the corresponding singular values of the batch
    the basis was computed from, in non-increasing order.
    """

    modes: np.ndarray
    singular_values: np.ndarray

    def __post_init__(self):
        modes = np.asarray(self.modes, dtype=np.float64)
        sv = np.asarray(self.singular_values, dtype=np.float64)
        if modes.ndim != 2 or modes.shape[1] < 1:
            raise InvalidArgumentError(f"modes must be a (d, k) matrix, got shape {modes.shape}")
        if sv.shape != (modes.shape[1],):
            raise InvalidArgumentError(
                f"need one singular value per mode, got {sv.shape} for {modes.shape[1]} modes"
            )
        if not (np.all(np.isfinite(modes)) and np.all(np.isfinite(sv))):
            raise InvalidDataError("non-finite basis")
        modes = modes.copy()
        modes.flags.writeable = False
        sv = sv.copy()
        sv.flags.writeable = False
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "singular_values", sv)

    @property
    def k(self) -> int:
        return self.modes.shape[1]

    @property
    def latent_dim(self) -> int:
        return self.modes.shape[0]


def truncate(batch: np.ndarray, k: int):
    """Best rank-k approximation of a latent batch matrix.

    Parameters
    ----------
    batch : ndarray, shape (d, B)
        Latent vectors as columns.
    k : int
        Number of modes to retain, ``1 <= k <= min(d, B)``.

    Returns
    -------
    (basis, coefficients, reconstructed)
        ``basis.modes`` are the k leading left singular vectors,
        ``coefficients = modes.T @ batch`` (k x B) and
        ``reconstructed = modes @ coefficients``, the Frobenius-optimal
        rank-k approximation of ``batch``.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2:
        raise InvalidArgumentError(f"batch must be a matrix, got shape {batch.shape}")
    if not np.all(np.isfinite(batch)):
        raise InvalidDataError("non-finite latent batch")
    d, b = batch.shape
    if k < 1 or k > min(d, b):
        raise InvalidArgumentError(f"k must lie in [1, {min(d, b)}] for a {d}x{b} batch, got {k}")
    u, s, _ = np.linalg.svd(batch, full_matrices=False)
    basis = LatentBasis(modes=u[:, :k], singular_values=s[:k])
    coefficients = basis.modes.T @ batch
    return basis, coefficients, basis.modes @ coefficients


def project(basis: LatentBasis, batch: np.ndarray):
    """Project a latent batch onto a frozen basis.

    Same arithmetic as the tail of :func:`truncate`, so projecting the batch
    a basis was computed from reproduces the training-time reconstruction
    bit for bit.

    Returns ``(coefficients, reconstructed)``.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[0] != basis.latent_dim:
        raise InvalidArgumentError(
            f"batch shape {batch.shape} does not match basis dimension {basis.latent_dim}"
        )
    coefficients = basis.modes.T @ batch
    return coefficients, basis.modes @ coefficients
