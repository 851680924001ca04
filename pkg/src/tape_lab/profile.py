"""Surface profiles: decomposition into waviness and roughness, normalization, CSV io.

A measured tape surface is a line scan of heights on a uniform lateral grid.
Before any learning step the scan is split into a long-wavelength macro
component (waviness) and the residual micro component (roughness) with a
zero-phase Gaussian low-pass filter, then the micro part is scaled per
profile to [0, 1] and finally standardized against training-population
statistics of the per-profile means.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateInputError,
    InvalidArgumentError,
    InvalidDataError,
    ParseError,
)

DEFAULT_CUTOFF_UM = 800.0
# Gaussian filter shape constant: 50 % transmission at the cutoff wavelength.
FILTER_ALPHA = math.sqrt(math.log(2.0) / math.pi)

__all__ = [
    "DEFAULT_CUTOFF_UM",
    "FILTER_ALPHA",
    "RoughnessProfile",
    "MicroProfile",
    "NormalizedProfile",
    "decompose",
    "gaussian_kernel",
    "kernel_transmission",
    "normalize_minmax",
    "population_mean_stats",
    "standardize",
    "invert_standardize",
    "invert_minmax",
    "save_profiles",
    "load_profiles",
    "save_micro_profiles",
    "load_micro_profiles",
]


def _as_height_array(values, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise InvalidArgumentError(f"{what} must be one-dimensional, got shape {arr.shape}")
    if arr.size < 2:
        raise InvalidDataError(f"{what} needs at least 2 samples, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr))[0])
        raise InvalidDataError(f"{what} contains a non-finite value at index {bad}")
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class RoughnessProfile:
    """A raw surface line scan.

    Parameters
    ----------
    id : str
        Unique sample identifier.
    heights : ndarray
        Surface heights in micrometres, one per lateral grid point.
    spacing : float
        Lateral grid spacing in micrometres (must be positive).
    label : int or None
        Tape class the sample belongs to, when known.
    """

    id: str
    heights: np.ndarray
    spacing: float
    label: int | None = None

    def __post_init__(self):
        if not self.id:
            raise InvalidArgumentError("profile id must be non-empty")
        object.__setattr__(self, "heights", _as_height_array(self.heights, f"profile {self.id!r} heights"))
        if not (np.isfinite(self.spacing) and self.spacing > 0):
            raise InvalidArgumentError(f"spacing must be positive, got {self.spacing}")

    @property
    def n_points(self) -> int:
        return self.heights.size

    @property
    def width(self) -> float:
        """Physical scan width in micrometres."""
        return (self.heights.size - 1) * self.spacing


@dataclass(frozen=True, eq=False)
class MicroProfile:
    """Roughness component of a profile, with its removed waviness kept alongside.

    ``heights`` holds the micro (roughness) component; ``macro`` the waviness.
    Their sum reproduces the decomposed scan exactly.
    """

    id: str
    heights: np.ndarray
    macro: np.ndarray
    spacing: float
    label: int | None = None

    def __post_init__(self):
        if not self.id:
            raise InvalidArgumentError("profile id must be non-empty")
        object.__setattr__(self, "heights", _as_height_array(self.heights, f"micro {self.id!r} heights"))
        object.__setattr__(self, "macro", _as_height_array(self.macro, f"micro {self.id!r} macro"))
        if self.macro.size != self.heights.size:
            raise InvalidDataError(
                f"micro {self.id!r}: macro length {self.macro.size} != micro length {self.heights.size}"
            )
        if not (np.isfinite(self.spacing) and self.spacing > 0):
            raise InvalidArgumentError(f"spacing must be positive, got {self.spacing}")

    @property
    def n_points(self) -> int:
        return self.heights.size

    def reconstruct(self) -> np.ndarray:
        """Recombine micro and macro into the original heights."""
        return self.heights + self.macro


@dataclass(frozen=True, eq=False)
class NormalizedProfile:
    """A micro profile mapped to a dimensionless representation.

    ``stage`` is ``"minmax"`` right after per-profile [0, 1] scaling and
    ``"standardized"`` once population statistics have been applied.
    ``vmin``/``vmax`` retain the original micro range in micrometres so the
    mapping stays invertible.  ``mean``/``sigma`` are the population
    statistics used by the standardization step (None at the minmax stage).
    """

    id: str
    values: np.ndarray
    vmin: float
    vmax: float
    stage: str
    mean: float | None = None
    sigma: float | None = None
    label: int | None = None

    def __post_init__(self):
        if self.stage not in ("minmax", "standardized"):
            raise InvalidArgumentError(f"unknown normalization stage {self.stage!r}")
        object.__setattr__(self, "values", _as_height_array(self.values, f"normalized {self.id!r} values"))
        if not (np.isfinite(self.vmin) and np.isfinite(self.vmax) and self.vmax > self.vmin):
            raise InvalidDataError(f"normalized {self.id!r}: invalid range [{self.vmin}, {self.vmax}]")
        if self.stage == "standardized":
            if self.mean is None or self.sigma is None:
                raise InvalidArgumentError("standardized profile requires mean and sigma")
            if not (np.isfinite(self.sigma) and self.sigma > 0):
                raise InvalidArgumentError(f"sigma must be positive, got {self.sigma}")


# ---------------------------------------------------------------------------
# Gaussian low-pass decomposition


def gaussian_kernel(spacing: float, cutoff: float) -> np.ndarray:
    """Discrete zero-phase Gaussian low-pass kernel.

    Weights follow ``exp(-pi * (x / (alpha * cutoff))**2)`` sampled on the
    profile grid and normalized to unit sum, with ``alpha`` chosen so a
    sinusoid at the cutoff wavelength is attenuated to 50 %.  The support is
    truncated at one cutoff wavelength each side, where the weight has
    decayed below 1e-6 of the peak.

    Parameters
    ----------
    spacing : float
        Grid spacing in micrometres.
    cutoff : float
        Cutoff wavelength in micrometres.

    Returns
    -------
    ndarray
        Odd-length symmetric kernel with unit sum.
    """
    if not (np.isfinite(cutoff) and cutoff > 0):
        raise InvalidArgumentError(f"cutoff must be positive, got {cutoff}")
    half = int(math.ceil(cutoff / spacing))
    x = np.arange(-half, half + 1, dtype=np.float64) * spacing
    w = np.exp(-math.pi * (x / (FILTER_ALPHA * cutoff)) ** 2)
    return w / w.sum()


def kernel_transmission(kernel: np.ndarray, spacing: float, wavelength: float) -> float:
    """Exact amplitude response of a symmetric kernel at one wavelength.

    For a unit-sum symmetric kernel the response to ``sin(2*pi*x/wavelength)``
    is ``sum_j w_j * cos(2*pi*j*spacing/wavelength)``.
    """
    half = kernel.size // 2
    j = np.arange(-half, half + 1, dtype=np.float64)
    return float(np.sum(kernel * np.cos(2.0 * math.pi * j * spacing / wavelength)))


def decompose(profile: RoughnessProfile, cutoff: float = DEFAULT_CUTOFF_UM) -> MicroProfile:
    """Split a profile into macro (waviness) and micro (roughness) components.

    The macro component is the Gaussian low-pass of the heights (reflect
    boundary handling) shifted so that the micro residual has exactly zero
    mean.  ``micro + macro`` reproduces the input heights.

    Parameters
    ----------
    profile : RoughnessProfile
        Scan to decompose.
    cutoff : float
        Filter cutoff wavelength in micrometres.  Must be at least twice the
        grid spacing; wavelengths well above the cutoff persist in the macro
        part, wavelengths well below it in the micro part.

    Returns
    -------
    MicroProfile
    """
    if not (np.isfinite(cutoff) and cutoff >= 2.0 * profile.spacing):
        raise InvalidArgumentError(
            f"cutoff {cutoff} below resolution limit {2.0 * profile.spacing} for spacing {profile.spacing}"
        )
    w = gaussian_kernel(profile.spacing, cutoff)
    half = w.size // 2
    h = profile.heights
    # Reflect padding keeps the filter zero-phase near the ends without
    # inventing new extreme values.
    pad = min(half, h.size - 1)
    padded = np.pad(h, half, mode="reflect") if pad == half else np.pad(
        np.pad(h, pad, mode="reflect"), half - pad, mode="edge"
    )
    lowpass = np.convolve(padded, w, mode="valid")
    residual_mean = float(np.mean(h - lowpass))
    macro = lowpass + residual_mean
    micro = h - macro
    # Force the zero-mean invariant to the last bit.
    micro = micro - micro.mean()
    macro = h - micro
    return MicroProfile(id=profile.id, heights=micro, macro=macro, spacing=profile.spacing, label=profile.label)


# ---------------------------------------------------------------------------
# Normalization chain


def normalize_minmax(micro: MicroProfile) -> NormalizedProfile:
    """Scale one micro profile to [0, 1] by its own range.

    The minimum maps to 0 and the maximum to 1; a constant profile has no
    range and raises :class:`DegenerateInputError`.
    """
    h = micro.heights
    vmin = float(h.min())
    vmax = float(h.max())
    if vmax <= vmin:
        raise DegenerateInputError(f"micro {micro.id!r} is constant, cannot min-max scale")
    values = (h - vmin) / (vmax - vmin)
    return NormalizedProfile(
        id=micro.id, values=values, vmin=vmin, vmax=vmax, stage="minmax", label=micro.label
    )


def population_mean_stats(profiles: list[NormalizedProfile]) -> tuple[float, float]:
    """Mean and standard deviation of the per-profile means over a population.

    Parameters
    ----------
    profiles : list of NormalizedProfile
        Min-max stage profiles, typically the training split.

    Returns
    -------
    (mean, sigma) : tuple of float
        ``mean`` is the average of the per-profile mean values, ``sigma``
        their population standard deviation.
    """
    if not profiles:
        raise InvalidArgumentError("population statistics need at least one profile")
    for p in profiles:
        if p.stage != "minmax":
            raise InvalidArgumentError(f"profile {p.id!r} is at stage {p.stage!r}, expected 'minmax'")
    means = np.array([float(p.values.mean()) for p in profiles])
    sigma = float(means.std())
    if sigma <= 0:
        raise DegenerateInputError("population of profile means is constant, sigma would be zero")
    return float(means.mean()), sigma


def standardize(norm: NormalizedProfile, mean: float, sigma: float) -> NormalizedProfile:
    """Center a min-max profile by the population mean and scale by 6 sigma.

    ``out = (values - mean) / (6 * sigma)`` with ``mean`` and ``sigma`` taken
    from :func:`population_mean_stats` over the training split.  The factor 6
    keeps typical values well inside [-1, 1].
    """
    if norm.stage != "minmax":
        raise InvalidArgumentError(f"can only standardize a 'minmax' profile, got {norm.stage!r}")
    if not (np.isfinite(sigma) and sigma > 0):
        raise InvalidArgumentError(f"sigma must be positive, got {sigma}")
    if not np.isfinite(mean):
        raise InvalidArgumentError(f"mean must be finite, got {mean}")
    values = (norm.values - mean) / (6.0 * sigma)
    return NormalizedProfile(
        id=norm.id, values=values, vmin=norm.vmin, vmax=norm.vmax,
        stage="standardized", mean=mean, sigma=sigma, label=norm.label,
    )


def invert_standardize(norm: NormalizedProfile) -> NormalizedProfile:
    """Undo :func:`standardize`, returning the min-max stage profile."""
    if norm.stage != "standardized":
        raise InvalidArgumentError(f"expected a 'standardized' profile, got {norm.stage!r}")
    values = norm.values * (6.0 * norm.sigma) + norm.mean
    return NormalizedProfile(
        id=norm.id, values=values, vmin=norm.vmin, vmax=norm.vmax, stage="minmax", label=norm.label
    )


def invert_minmax(norm: NormalizedProfile) -> np.ndarray:
    """Undo the per-profile [0, 1] scaling, returning heights in micrometres."""
    if norm.stage != "minmax":
        raise InvalidArgumentError(f"expected a 'minmax' profile, got {norm.stage!r}")
    return norm.values * (norm.vmax - norm.vmin) + norm.vmin


# ---------------------------------------------------------------------------
# CSV io
#
# Profile schema:  id,label,spacing_um,h_0,...,h_{n-1}
# Micro schema:    id,label,spacing_um,component,h_0,...   component in {micro,macro}
# A leading '# {...}' comment line carries the run configuration and is
# ignored on load.

_PROFILE_FIXED = ["id", "label", "spacing_um"]
_MICRO_FIXED = ["id", "label", "spacing_um", "component"]


def _format_float(x: float) -> str:
    return repr(float(x))


def _write_rows(path, header, rows, config=None):
    with open(path, "w", newline="") as fh:
        if config is not None:
            fh.write("# " + json.dumps(config, sort_keys=True, separators=(",", ":")) + "\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _read_rows(path):
    """Yield (1-based row number, cells) for every non-comment line."""
    with open(path, "r", newline="") as fh:
        for row_no, cells in enumerate(csv.reader(fh), start=1):
            if cells and cells[0].startswith("#"):
                continue
            if not cells:
                continue
            yield row_no, cells


def _parse_float(cell: str, row: int, column: int) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise ParseError(f"expected a number, got {cell!r}", row=row, column=column) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite value {cell!r}", row=row, column=column)
    return value


def _parse_label(cell: str, row: int, column: int):
    if cell == "":
        return None
    try:
        return int(cell)
    except ValueError:
        raise ParseError(f"expected an integer label, got {cell!r}", row=row, column=column) from None


def save_profiles(profiles: list[RoughnessProfile], path, config=None) -> None:
    """Write raw profiles to CSV.  All profiles must share the same length."""
    if not profiles:
        raise InvalidArgumentError("nothing to save")
    n = profiles[0].n_points
    for p in profiles:
        if p.n_points != n:
            raise InvalidDataError(f"profile {p.id!r} has {p.n_points} points, expected {n}")
    header = _PROFILE_FIXED + [f"h_{i}" for i in range(n)]
    rows = (
        [p.id, "" if p.label is None else p.label, _format_float(p.spacing)]
        + [_format_float(v) for v in p.heights]
        for p in profiles
    )
    _write_rows(path, header, rows, config)


def load_profiles(path) -> list[RoughnessProfile]:
    """Read raw profiles from CSV, validating layout cell by cell."""
    it = _read_rows(path)
    try:
        header_row, header = next(it)
    except StopIteration:
        raise ParseError("empty file", row=1) from None
    if header[: len(_PROFILE_FIXED)] != _PROFILE_FIXED:
        raise ParseError(f"missing header, expected leading columns {_PROFILE_FIXED}", row=header_row)
    n = len(header) - len(_PROFILE_FIXED)
    if n < 2:
        raise ParseError("header defines fewer than 2 height columns", row=header_row)
    profiles = []
    for row_no, cells in it:
        if len(cells) != len(header):
            raise ParseError(f"expected {len(header)} cells, got {len(cells)}", row=row_no)
        label = _parse_label(cells[1], row_no, 2)
        spacing = _parse_float(cells[2], row_no, 3)
        heights = [_parse_float(c, row_no, i + 4) for i, c in enumerate(cells[3:])]
        try:
            profiles.append(RoughnessProfile(id=cells[0], heights=heights, spacing=spacing, label=label))
        except (InvalidArgumentError, InvalidDataError) as exc:
            raise ParseError(str(exc), row=row_no) from exc
    return profiles


def save_micro_profiles(micros: list[MicroProfile], path, config=None) -> None:
    """Write decomposed profiles to CSV, one micro and one macro row per sample."""
    if not micros:
        raise InvalidArgumentError("nothing to save")
    n = micros[0].n_points
    for m in micros:
        if m.n_points != n:
            raise InvalidDataError(f"micro {m.id!r} has {m.n_points} points, expected {n}")
    header = _MICRO_FIXED + [f"h_{i}" for i in range(n)]

    def rows():
        for m in micros:
            label = "" if m.label is None else m.label
            yield [m.id, label, _format_float(m.spacing), "micro"] + [_format_float(v) for v in m.heights]
            yield [m.id, label, _format_float(m.spacing), "macro"] + [_format_float(v) for v in m.macro]

    _write_rows(path, header, rows(), config)


def load_micro_profiles(path) -> list[MicroProfile]:
    """Read decomposed profiles from CSV.  Each sample needs a micro and a macro row."""
    it = _read_rows(path)
    try:
        header_row, header = next(it)
    except StopIteration:
        raise ParseError("empty file", row=1) from None
    if header[: len(_MICRO_FIXED)] != _MICRO_FIXED:
        raise ParseError(f"missing header, expected leading columns {_MICRO_FIXED}", row=header_row)
    parts: dict[str, dict] = {}
    order: list[str] = []
    for row_no, cells in it:
        if len(cells) != len(header):
            raise ParseError(f"expected {len(header)} cells, got {len(cells)}", row=row_no)
        pid = cells[0]
        label = _parse_label(cells[1], row_no, 2)
        spacing = _parse_float(cells[2], row_no, 3)
        component = cells[3]
        if component not in ("micro", "macro"):
            raise ParseError(f"component must be 'micro' or 'macro', got {component!r}", row=row_no, column=4)
        values = [_parse_float(c, row_no, i + 5) for i, c in enumerate(cells[4:])]
        entry = parts.setdefault(pid, {"label": label, "spacing": spacing, "row": row_no})
        if pid not in order:
            order.append(pid)
        if component in entry:
            raise ParseError(f"duplicate {component} row for id {pid!r}", row=row_no)
        entry[component] = values
    micros = []
    for pid in order:
        entry = parts[pid]
        if "micro" not in entry or "macro" not in entry:
            raise ParseError(f"id {pid!r} is missing a micro or macro row", row=entry["row"])
        try:
            micros.append(
                MicroProfile(
                    id=pid, heights=entry["micro"], macro=entry["macro"],
                    spacing=entry["spacing"], label=entry["label"],
                )
            )
        except (InvalidArgumentError, InvalidDataError) as exc:
            raise ParseError(str(exc), row=entry["row"]) from exc
    return micros
