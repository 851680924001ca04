"""Synthetic tape surface generator.

Each tape class is a recipe: a few long-wavelength sinusoids (waviness) plus
a stochastic roughness texture described by an rms amplitude, a correlation
length and a spectral exponent.  Roughness is drawn as Gaussian white noise
shaped in the frequency domain by ``S(f) = 1 / (1 + (2*pi*f*ell)**beta)``,
so the correlation length places the spectral knee and the exponent sets how
fast fine detail decays past it.

Classes are built to be non-trivial to classify: several classes share the
same rms level, so simple summary statistics cannot separate them and a
classifier has to read the texture itself.  Generation verifies this with a
nearest-centroid probe on (rms, skewness) and regenerates with more overlap
if the probe ever reaches 100 %.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, InvalidDataError, ParseError
from .profile import RoughnessProfile

__all__ = [
    "SinusoidComponent",
    "ClassRecipe",
    "default_recipes",
    "validate_recipes",
    "generate",
    "save_recipes",
    "load_recipes",
    "nearest_centroid_accuracy",
]


@dataclass(frozen=True)
class SinusoidComponent:
    """One waviness component: amplitude and wavelength in micrometres.

    ``phase_jitter`` in [0, 1] scales a uniform random phase in [-pi, pi];
    0 pins the phase, 1 randomizes it fully.
    """

    amplitude: float
    wavelength: float
    phase_jitter: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.amplitude) and self.amplitude >= 0):
            raise InvalidArgumentError(f"amplitude must be non-negative, got {self.amplitude}")
        if not (np.isfinite(self.wavelength) and self.wavelength > 0):
            raise InvalidArgumentError(f"wavelength must be positive, got {self.wavelength}")
        if not (0.0 <= self.phase_jitter <= 1.0):
            raise InvalidArgumentError(f"phase_jitter must lie in [0, 1], got {self.phase_jitter}")


@dataclass(frozen=True)
class ClassRecipe:
    """Generative parameters of one tape class.

    ``rms`` (micrometres), ``correlation_length`` (micrometres) and
    ``spectral_exponent`` shape the roughness texture; ``macro`` lists the
    waviness sinusoids.  ``rms_jitter`` is the lognormal sigma applied to the
    rms per sample, ``amp_jitter`` the uniform relative jitter on waviness
    amplitudes.
    """

    class_id: int
    macro: tuple[SinusoidComponent, ...]
    rms: float
    correlation_length: float
    spectral_exponent: float
    asymmetry: float = 0.0
    rms_jitter: float = 0.08
    amp_jitter: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "macro", tuple(self.macro))
        if self.class_id < 0:
            raise InvalidArgumentError(f"class_id must be non-negative, got {self.class_id}")
        if not (np.isfinite(self.rms) and self.rms > 0):
            raise InvalidArgumentError(f"rms must be positive, got {self.rms}")
        if not (np.isfinite(self.correlation_length) and self.correlation_length > 0):
            raise InvalidArgumentError(f"correlation_length must be positive, got {self.correlation_length}")
        if not (np.isfinite(self.spectral_exponent) and self.spectral_exponent > 0):
            raise InvalidArgumentError(f"spectral_exponent must be positive, got {self.spectral_exponent}")
        if not (np.isfinite(self.asymmetry) and abs(self.asymmetry) <= 1.0):
            raise InvalidArgumentError(f"asymmetry must lie in [-1, 1], got {self.asymmetry}")
        if not (0.0 <= self.rms_jitter <= 1.0):
            raise InvalidArgumentError(f"rms_jitter must lie in [0, 1], got {self.rms_jitter}")
        if not (0.0 <= self.amp_jitter <= 1.0):
            raise InvalidArgumentError(f"amp_jitter must lie in [0, 1], got {self.amp_jitter}")


# Correlation lengths stay short against the 1.5 mm default scan so class
# identity lives in the local texture, not in scan-length-dependent
# low-frequency content.
_DEFAULT_ELLS = (1.5, 4.0, 11.0, 30.0)
# Steep rolloffs keep the correlation-length knee sharply expressed at every
# level, so the length axis is not confounded with the slope axis.
_DEFAULT_BETAS = (6.5, 8.0, 9.5)
_DEFAULT_RMS_LEVELS = (1.1, 1.3, 1.5)
# Vertical asymmetry levels: honed (valley-heavy), neutral, peaked.
_DEFAULT_ASYMMETRIES = (-0.45, 0.0, 0.45)
# Waviness wavelengths sit far above the decomposition cutoff (800 um), so
# the Gaussian filter leaves only a sub-0.2 um trace of them in the micro part.
_DEFAULT_MACRO = (
    SinusoidComponent(amplitude=12.0, wavelength=6000.0, phase_jitter=1.0),
    SinusoidComponent(amplitude=6.0, wavelength=4000.0, phase_jitter=1.0),
)


def default_recipes() -> list[ClassRecipe]:
    """Twelve stock classes on a correlation-length x vertical-shape grid.

    Four correlation lengths cross three (spectral exponent, asymmetry)
    pairs.  The rms level cycles through three shared values, and the twelve
    classes share nine (rms, skewness) cells, so amplitude summary statistics
    alone cannot separate the set.
    """
    recipes = []
    for i in range(12):
        recipes.append(
            ClassRecipe(
                class_id=i,
                macro=_DEFAULT_MACRO,
                rms=_DEFAULT_RMS_LEVELS[i % 3],
                correlation_length=_DEFAULT_ELLS[i % 4],
                spectral_exponent=_DEFAULT_BETAS[i // 4],
                asymmetry=_DEFAULT_ASYMMETRIES[i // 4],
            )
        )
    return recipes


def _recipe_features(recipe: ClassRecipe) -> list[float]:
    feats = [recipe.rms, recipe.correlation_length, recipe.spectral_exponent,
             recipe.asymmetry]
    for comp in recipe.macro:
        feats.extend([comp.amplitude, comp.wavelength])
    return feats


def validate_recipes(recipes: list[ClassRecipe]) -> None:
    """Check ids are unique and every class pair differs somewhere by >= 10 %."""
    if not recipes:
        raise InvalidArgumentError("recipe list is empty")
    ids = [r.class_id for r in recipes]
    if len(set(ids)) != len(ids):
        raise InvalidDataError("duplicate class ids in recipe list")
    for i, a in enumerate(recipes):
        fa = _recipe_features(a)
        for b in recipes[i + 1:]:
            fb = _recipe_features(b)
            if len(fa) != len(fb):
                continue
            distinct = any(
                abs(x - y) / max(abs(x), abs(y)) >= 0.1
                for x, y in zip(fa, fb)
                if max(abs(x), abs(y)) > 0
            )
            if not distinct:
                raise InvalidDataError(
                    f"classes {a.class_id} and {b.class_id} differ by less than 10 % in every parameter"
                )


def _micro_texture(rng: np.random.Generator, n: int, spacing: float, recipe: ClassRecipe,
                   jitter_scale: float) -> np.ndarray:
    """Draw one roughness realization with exact rms.

    A correlated Gaussian field is shaped in the spectral domain, then bent
    by a zero-mean quadratic map that sets the vertical asymmetry (peaked
    versus honed texture), then rescaled so the final rms is exact.
    """
    white = rng.standard_normal(n)
    freqs = np.fft.rfftfreq(n, d=spacing)
    shape = 1.0 / np.sqrt(1.0 + (2.0 * np.pi * freqs * recipe.correlation_length) ** recipe.spectral_exponent)
    shape[0] = 0.0
    micro = np.fft.irfft(np.fft.rfft(white) * shape, n=n)
    micro -= micro.mean()
    std = micro.std()
    if std <= 0:
        raise InvalidDataError("degenerate roughness draw")
    if recipe.asymmetry != 0.0:
        micro = micro + recipe.asymmetry * (micro**2 - std**2) / std
        micro -= micro.mean()
        std = micro.std()
        if std <= 0:
            raise InvalidDataError("degenerate roughness draw")
    rms_eff = recipe.rms * float(np.exp(recipe.rms_jitter * jitter_scale * rng.standard_normal()))
    return micro * (rms_eff / std)


def _macro_waviness(rng: np.random.Generator, x: np.ndarray, recipe: ClassRecipe) -> np.ndarray:
    macro = np.zeros_like(x)
    for comp in recipe.macro:
        phase = (2.0 * rng.random() - 1.0) * np.pi * comp.phase_jitter
        amp = comp.amplitude * (1.0 + recipe.amp_jitter * (2.0 * rng.random() - 1.0))
        macro += amp * np.sin(2.0 * np.pi * x / comp.wavelength + phase)
    return macro


def _sample_stats(values: np.ndarray) -> tuple[float, float]:
    """(rms, skewness) of one texture."""
    centered = values - values.mean()
    m2 = float(np.mean(centered**2))
    m3 = float(np.mean(centered**3))
    rms = float(np.sqrt(m2))
    skew = m3 / m2**1.5 if m2 > 0 else 0.0
    return rms, skew


def nearest_centroid_accuracy(features: np.ndarray, labels: np.ndarray) -> float:
    """Accuracy of a nearest-centroid classifier on z-scored features.

    Used as a triviality probe: if plain summary statistics separate the
    classes perfectly, the classification task would not need a learned
    representation.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    mu = features.mean(axis=0)
    sd = features.std(axis=0)
    sd[sd == 0] = 1.0
    z = (features - mu) / sd
    classes = np.unique(labels)
    centroids = np.stack([z[labels == c].mean(axis=0) for c in classes])
    d2 = ((z[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    predicted = classes[np.argmin(d2, axis=1)]
    return float(np.mean(predicted == labels))


def generate(recipes: list[ClassRecipe], per_class: int, n_points: int, spacing: float,
             seed: int, max_attempts: int = 5) -> list[RoughnessProfile]:
    """Generate ``per_class`` labelled profiles for every recipe.

    Every profile gets its own seed stream derived from ``seed`` and the
    (attempt, class, sample) indices, so generation order (or a parallel
    split) cannot change the data.  After drawing the full population the
    nearest-centroid probe runs on the true roughness components; a perfect
    probe score triggers a redraw with the rms jitter widened by 50 %.

    Returns
    -------
    list of RoughnessProfile
        ``per_class * len(recipes)`` profiles, grouped by class, labelled
        with the recipe class ids.
    """
    validate_recipes(recipes)
    if per_class < 1:
        raise InvalidArgumentError(f"per_class must be positive, got {per_class}")
    if n_points < 8:
        raise InvalidArgumentError(f"n_points must be at least 8, got {n_points}")
    if not (np.isfinite(spacing) and spacing > 0):
        raise InvalidArgumentError(f"spacing must be positive, got {spacing}")
    x = np.arange(n_points, dtype=np.float64) * spacing
    for attempt in range(max_attempts):
        jitter_scale = 1.5**attempt
        profiles = []
        features = []
        labels = []
        for ci, recipe in enumerate(recipes):
            for si in range(per_class):
                ss = np.random.SeedSequence(entropy=seed, spawn_key=(attempt, ci, si))
                rng = np.random.Generator(np.random.PCG64(ss))
                micro = _micro_texture(rng, n_points, spacing, recipe, jitter_scale)
                macro = _macro_waviness(rng, x, recipe)
                profiles.append(
                    RoughnessProfile(
                        id=f"c{recipe.class_id:02d}-s{si:03d}",
                        heights=macro + micro,
                        spacing=spacing,
                        label=recipe.class_id,
                    )
                )
                features.append(_sample_stats(micro))
                labels.append(recipe.class_id)
        # With one sample or one class the probe is vacuous: every sample
        # sits on its own centroid.
        if per_class < 2 or len(recipes) == 1:
            return profiles
        probe = nearest_centroid_accuracy(np.array(features), np.array(labels))
        if probe < 1.0:
            return profiles
    raise InvalidDataError(
        f"summary statistics still separate the classes perfectly after {max_attempts} redraws"
    )


# ---------------------------------------------------------------------------
# Recipe JSON io


def _recipe_to_dict(recipe: ClassRecipe) -> dict:
    return {
        "class_id": recipe.class_id,
        "macro": [
            {"amplitude_um": c.amplitude, "wavelength_um": c.wavelength, "phase_jitter": c.phase_jitter}
            for c in recipe.macro
        ],
        "micro": {
            "rms_um": recipe.rms,
            "correlation_length_um": recipe.correlation_length,
            "spectral_exponent": recipe.spectral_exponent,
            "asymmetry": recipe.asymmetry,
        },
        "rms_jitter": recipe.rms_jitter,
        "amp_jitter": recipe.amp_jitter,
    }


def save_recipes(recipes: list[ClassRecipe], path) -> None:
    validate_recipes(recipes)
    with open(path, "w") as fh:
        json.dump([_recipe_to_dict(r) for r in recipes], fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_recipes(path) -> list[ClassRecipe]:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid recipe JSON: {exc}", row=exc.lineno, column=exc.colno) from exc
    if not isinstance(data, list):
        raise ParseError("recipe file must hold a JSON array")
    recipes = []
    for i, entry in enumerate(data):
        try:
            macro = tuple(
                SinusoidComponent(
                    amplitude=c["amplitude_um"], wavelength=c["wavelength_um"],
                    phase_jitter=c.get("phase_jitter", 1.0),
                )
                for c in entry["macro"]
            )
            recipes.append(
                ClassRecipe(
                    class_id=entry["class_id"],
                    macro=macro,
                    rms=entry["micro"]["rms_um"],
                    correlation_length=entry["micro"]["correlation_length_um"],
                    spectral_exponent=entry["micro"]["spectral_exponent"],
                    asymmetry=entry["micro"].get("asymmetry", 0.0),
                    rms_jitter=entry.get("rms_jitter", 0.08),
                    amp_jitter=entry.get("amp_jitter", 0.2),
                )
            )
        except (KeyError, TypeError) as exc:
            raise ParseError(f"recipe entry {i} is malformed: {exc!r}", row=i + 1) from exc
        except InvalidArgumentError as exc:
            raise ParseError(f"recipe entry {i}: {exc}", row=i + 1) from exc
    validate_recipes(recipes)
    return recipes
