"""95th-percentile billing: measured percentile, model prediction, NRMSE.

Carriers bill on a high percentile of per-interval rates, discarding the
top few percent of samples.  The measured side groups the trace into
fixed-length intervals and takes the nearest-rank percentile of the
group rates; the predicted side reads the same percentile off a model
fitted to finer-grained rates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .distributions import DistributionModel, fit_mle, quantile
from .errors import DegenerateData, DomainError, InsufficientData, ShapeError, VolumaError
from .trace import PacketSeries, VolumeSeries, aggregate, rates, rebin

DEFAULT_GROUP_DURATION = 10.0
DEFAULT_FIT_TIMESCALE = 0.1
DEFAULT_PERCENTILE = 95.0
DEFAULT_BILLING_KINDS = ("lognormal", "weibull", "gaussian")

TraceLike = Union[PacketSeries, VolumeSeries]


@dataclass
class BillingRecord:
    trace_label: str
    actual_p95: float
    predicted_p95: dict[str, Optional[float]]
    group_duration: float
    percentile: float

    def to_dict(self) -> dict:
        return {
            "trace": self.trace_label,
            "actual": self.actual_p95,
            "predicted": self.predicted_p95,
            "group_duration_s": self.group_duration,
            "percentile": self.percentile,
        }


def _series_at(trace: TraceLike, T: float) -> VolumeSeries:
    if isinstance(trace, PacketSeries):
        return aggregate(trace, T)
    return rebin(trace, T)


def nearest_rank(sorted_rates: np.ndarray, pct: float) -> float:
    """Value at rank ``ceil(pct/100 * n)`` of the ascending sort."""
    n = sorted_rates.size
    rank = math.ceil(pct * n / 100.0)
    rank = min(max(rank, 1), n)
    return float(sorted_rates[rank - 1])


def actual_percentile(
    trace: TraceLike,
    group_duration: float = DEFAULT_GROUP_DURATION,
    pct: float = DEFAULT_PERCENTILE,
) -> float:
    """Nearest-rank percentile of group rates (bytes/s).

    The trace is aggregated at ``group_duration``, converted to rates,
    and the percentile is the value at index ``ceil(pct/100 * n)`` of the
    ascending sort, i.e. the billing convention of discarding the top
    slice of samples with no interpolation.
    """
    if not (0.0 < pct < 100.0):
        raise DomainError("percentile must lie strictly inside (0, 100)")
    series = _series_at(trace, group_duration)
    if len(series) < 2:
        raise InsufficientData("trace must span at least 2 groups")
    return nearest_rank(np.sort(rates(series)), pct)


def model_percentile(model: DistributionModel, pct: float = DEFAULT_PERCENTILE) -> float:
    """Percentile of the fitted rate distribution, in bytes/s."""
    if not (0.0 < pct < 100.0):
        raise DomainError("percentile must lie strictly inside (0, 100)")
    return float(quantile(model, pct / 100.0))


def nrmse(predicted, actual, normalizer: str = "mean") -> float:
    """Root-mean-squared prediction error, normalised.

    The default normaliser is the mean of the actual values; ``range``
    divides by their spread instead.
    """
    p = np.asarray(predicted, dtype=np.float64).ravel()
    a = np.asarray(actual, dtype=np.float64).ravel()
    if p.size != a.size:
        raise ShapeError(f"length mismatch: {p.size} predictions vs {a.size} actuals")
    if a.size == 0:
        raise ShapeError("need at least one value")
    rmse = math.sqrt(float(np.mean((p - a) ** 2)))
    if normalizer == "mean":
        denom = float(a.mean())
        if denom <= 0.0:
            raise DegenerateData("mean of actual values must be positive")
    elif normalizer == "range":
        denom = float(a.max() - a.min())
        if denom <= 0.0:
            raise DegenerateData("range of actual values must be positive")
    else:
        raise DomainError(f"unknown normalizer: {normalizer!r}")
    return rmse / denom


@dataclass
class BillingTable:
    records: list[BillingRecord]
    nrmse_by_kind: dict[str, Optional[float]]
    errors: list[str]

    def scatter_rows(self) -> list[tuple[float, float, str]]:
        """(actual, predicted, kind) triples for plotting against y=x."""
        out = []
        for rec in self.records:
            for kind, pred in rec.predicted_p95.items():
                if pred is not None:
                    out.append((rec.actual_p95, pred, kind))
        return out

    def to_dict(self) -> dict:
        return {
            "records": [r.to_dict() for r in self.records],
            "nrmse": self.nrmse_by_kind,
            "errors": self.errors,
        }


def billing_experiment(
    traces: Sequence[tuple[str, TraceLike]],
    kinds: Sequence[str] = DEFAULT_BILLING_KINDS,
    group_duration: float = DEFAULT_GROUP_DURATION,
    fit_timescale: float = DEFAULT_FIT_TIMESCALE,
    pct: float = DEFAULT_PERCENTILE,
    normalizer: str = "mean",
) -> BillingTable:
    """Actual vs model-predicted percentile per trace, NRMSE per model.

    The measured percentile uses ``group_duration`` intervals; the
    predictions come from models fitted to rates at ``fit_timescale``.
    A constant-rate trace is a point mass no family can fit by MLE, so
    every model predicts the constant itself.  Per-trace failures are
    recorded and skipped, not fatal.
    """
    records: list[BillingRecord] = []
    errors: list[str] = []
    for label, trace in traces:
        try:
            actual = actual_percentile(trace, group_duration, pct)
        except VolumaError as exc:
            errors.append(f"{label}: {type(exc).__name__}: {exc}")
            continue
        predicted: dict[str, Optional[float]] = {}
        fit_rates = rates(_series_at(trace, fit_timescale))
        constant = float(fit_rates[0]) if fit_rates.min() == fit_rates.max() else None
        for kind in kinds:
            if constant is not None:
                predicted[kind] = constant
                continue
            try:
                model = fit_mle(kind, fit_rates)
                predicted[kind] = model_percentile(model, pct)
            except VolumaError as exc:
                predicted[kind] = None
                errors.append(f"{label}/{kind}: {type(exc).__name__}: {exc}")
        records.append(
            BillingRecord(
                trace_label=label,
                actual_p95=actual,
                predicted_p95=predicted,
                group_duration=group_duration,
                percentile=pct,
            )
        )
    records.sort(key=lambda r: r.trace_label)
    nrmse_by_kind: dict[str, Optional[float]] = {}
    for kind in kinds:
        pairs = [
            (rec.predicted_p95[kind], rec.actual_p95)
            for rec in records
            if rec.predicted_p95.get(kind) is not None
        ]
        if pairs:
            preds, acts = zip(*pairs)
            try:
                nrmse_by_kind[kind] = nrmse(preds, acts, normalizer)
            except VolumaError:
                nrmse_by_kind[kind] = None
        else:
            nrmse_by_kind[kind] = None
    return BillingTable(records=records, nrmse_by_kind=nrmse_by_kind, errors=errors)
