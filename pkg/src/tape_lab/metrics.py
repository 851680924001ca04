"""Evaluation metrics: DIC curve error, classification accuracy, error reports."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .compaction import DicCurve
from .errors import DegenerateInputError, InvalidArgumentError, InvalidDataError

__all__ = [
    "delta_dic",
    "delta_dic_values",
    "accuracy",
    "AccuracyResult",
    "PerSampleError",
    "ReportSummary",
    "ErrorReport",
    "build_report",
    "save_report",
    "load_report",
    "save_histogram_csv",
    "save_boxplot_csv",
]


def delta_dic_values(predicted: np.ndarray, reference: np.ndarray) -> float:
    """Integrated relative DIC deviation, in percent.

    ``100 * trapz(|predicted - reference|) / trapz(reference)`` over the step
    index.  The reference must have a positive integral.
    """
    predicted = np.asarray(predicted, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if predicted.shape != reference.shape or predicted.ndim != 1:
        raise InvalidArgumentError(
            f"curves must be equal-length vectors, got {predicted.shape} and {reference.shape}"
        )
    if predicted.size < 2:
        raise InvalidArgumentError("need at least 2 samples to integrate")
    if not (np.all(np.isfinite(predicted)) and np.all(np.isfinite(reference))):
        raise InvalidDataError("non-finite curve values")
    denom = float(np.trapezoid(reference))
    if denom <= 0:
        raise DegenerateInputError("reference curve integrates to zero")
    return 100.0 * float(np.trapezoid(np.abs(predicted - reference))) / denom


def delta_dic(predicted: DicCurve, reference: DicCurve) -> float:
    """Integrated relative deviation between two DIC curves at the same stage."""
    if predicted.stage != reference.stage:
        raise InvalidArgumentError(
            f"stage mismatch: {predicted.stage!r} vs {reference.stage!r}"
        )
    return delta_dic_values(predicted.values, reference.values)


@dataclass(frozen=True)
class AccuracyResult:
    """Classification accuracy with its confusion matrix.

    ``confusion[i, j]`` counts samples of true class ``classes[i]`` predicted
    as ``classes[j]``.
    """

    fraction: float
    n_correct: int
    n_total: int
    classes: tuple[int, ...]
    confusion: np.ndarray


def accuracy(predicted, labels) -> AccuracyResult:
    """Fraction of correct class predictions."""
    predicted = np.asarray(predicted)
    labels = np.asarray(labels)
    if predicted.shape != labels.shape or predicted.ndim != 1:
        raise InvalidArgumentError(
            f"predictions and labels must be equal-length vectors, got {predicted.shape} and {labels.shape}"
        )
    if predicted.size == 0:
        raise InvalidArgumentError("empty prediction set")
    classes = tuple(int(c) for c in np.unique(np.concatenate([predicted, labels])))
    index = {c: i for i, c in enumerate(classes)}
    confusion = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for p, t in zip(predicted, labels):
        confusion[index[int(t)], index[int(p)]] += 1
    n_correct = int(np.trace(confusion))
    return AccuracyResult(
        fraction=n_correct / predicted.size,
        n_correct=n_correct,
        n_total=int(predicted.size),
        classes=classes,
        confusion=confusion,
    )


@dataclass(frozen=True)
class PerSampleError:
    """Evaluation record of one sample."""

    id: str
    delta_dic: float
    recon_error: float | None = None
    label: int | None = None
    predicted_class: int | None = None

    @property
    def class_correct(self) -> bool | None:
        if self.label is None or self.predicted_class is None:
            return None
        return self.label == self.predicted_class


@dataclass(frozen=True)
class ReportSummary:
    """Distribution summary of the per-sample DIC errors (percent)."""

    mean: float
    median: float
    q1: float
    q3: float
    cumulative: float
    outlier_threshold: float
    outliers: tuple[str, ...]
    accuracy: float | None = None
    mean_recon_error: float | None = None


@dataclass(frozen=True)
class ErrorReport:
    """Per-sample errors plus summary statistics for one dataset split."""

    split: str
    samples: tuple[PerSampleError, ...]
    summary: ReportSummary
    config: dict = field(default_factory=dict)


def build_report(split: str, samples: list[PerSampleError], outlier_threshold: float = 10.0,
                 config: dict | None = None) -> ErrorReport:
    """Assemble an :class:`ErrorReport` from per-sample records.

    The cumulative error is the plain sum of the per-sample DIC deviations;
    quartiles use the linear-interpolation convention, so q1 <= median <= q3
    by construction.
    """
    if not samples:
        raise InvalidArgumentError("cannot build a report from zero samples")
    errors = np.array([s.delta_dic for s in samples], dtype=np.float64)
    if not np.all(np.isfinite(errors)):
        raise InvalidDataError("non-finite per-sample error")
    q1, median, q3 = (float(q) for q in np.percentile(errors, [25.0, 50.0, 75.0]))
    outliers = tuple(s.id for s in samples if s.delta_dic > outlier_threshold)
    flags = [s.class_correct for s in samples if s.class_correct is not None]
    acc = float(np.mean(flags)) if flags else None
    recons = [s.recon_error for s in samples if s.recon_error is not None]
    mean_recon = float(np.mean(recons)) if recons else None
    summary = ReportSummary(
        mean=float(errors.mean()),
        median=median,
        q1=q1,
        q3=q3,
        cumulative=float(errors.sum()),
        outlier_threshold=float(outlier_threshold),
        outliers=outliers,
        accuracy=acc,
        mean_recon_error=mean_recon,
    )
    return ErrorReport(split=split, samples=tuple(samples), summary=summary,
                       config=dict(config or {}))


def _report_to_dict(report: ErrorReport) -> dict:
    return {
        "split": report.split,
        "summary": {
            "mean": report.summary.mean,
            "median": report.summary.median,
            "q1": report.summary.q1,
            "q3": report.summary.q3,
            "cumulative": report.summary.cumulative,
            "outlier_threshold": report.summary.outlier_threshold,
            "outliers": list(report.summary.outliers),
            "accuracy": report.summary.accuracy,
            "mean_recon_error": report.summary.mean_recon_error,
        },
        "samples": [
            {
                "id": s.id,
                "delta_dic": s.delta_dic,
                "recon_error": s.recon_error,
                "label": s.label,
                "predicted_class": s.predicted_class,
            }
            for s in report.samples
        ],
        "config": report.config,
    }


def save_report(report: ErrorReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(_report_to_dict(report), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_report(path) -> ErrorReport:
    with open(path) as fh:
        data = json.load(fh)
    samples = [
        PerSampleError(
            id=s["id"], delta_dic=s["delta_dic"], recon_error=s.get("recon_error"),
            label=s.get("label"), predicted_class=s.get("predicted_class"),
        )
        for s in data["samples"]
    ]
    return build_report(
        data["split"], samples,
        outlier_threshold=data["summary"]["outlier_threshold"],
        config=data.get("config", {}),
    )


def save_histogram_csv(report: ErrorReport, path, bin_width: float = 1.0) -> None:
    """Histogram of per-sample DIC errors with fixed-width bins from zero."""
    if bin_width <= 0:
        raise InvalidArgumentError(f"bin_width must be positive, got {bin_width}")
    errors = np.array([s.delta_dic for s in report.samples])
    n_bins = max(1, int(np.ceil(errors.max() / bin_width)) if errors.max() > 0 else 1)
    edges = np.arange(n_bins + 1) * bin_width
    counts, _ = np.histogram(errors, bins=edges)
    with open(path, "w") as fh:
        fh.write("bin_left,bin_right,count\n")
        for i, c in enumerate(counts):
            fh.write(f"{edges[i]!r},{edges[i + 1]!r},{int(c)}\n")


def save_boxplot_csv(report: ErrorReport, path) -> None:
    """Five-number summary plus outliers, using the 1.5 IQR whisker rule."""
    s = report.summary
    errors = np.array([e.delta_dic for e in report.samples])
    iqr = s.q3 - s.q1
    lo_fence = s.q1 - 1.5 * iqr
    hi_fence = s.q3 + 1.5 * iqr
    inside = errors[(errors >= lo_fence) & (errors <= hi_fence)]
    whisker_lo = float(inside.min()) if inside.size else s.q1
    whisker_hi = float(inside.max()) if inside.size else s.q3
    fliers = errors[(errors < lo_fence) | (errors > hi_fence)]
    with open(path, "w") as fh:
        fh.write("split,whisker_lo,q1,median,q3,whisker_hi,fliers\n")
        flier_text = ";".join(repr(float(v)) for v in np.sort(fliers))
        fh.write(
            f"{report.split},{whisker_lo!r},{s.q1!r},{s.median!r},{s.q3!r},{whisker_hi!r},{flier_text}\n"
        )
