"""Link-capacity estimation against an exceedance criterion.

Two routes to a capacity figure: the Gaussian-assumption dimensioning
formula ``C1 = mu + (1/T) * sqrt(-2 ln(eps) * v(T))`` built from summary
statistics, and the model-quantile route ``C2 = F^-1(1 - eps)`` for a
model fitted to per-bin rates.  Both are validated against the trace by
the empirical exceedance fraction ``#\\{A_i >= C*T\\}/n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .distributions import DistributionModel, fit_mle, quantile
from .errors import DomainError, VolumaError
from .trace import PacketSeries, SummaryStats, VolumeSeries, aggregate, rates, rebin, volume_stats

DEFAULT_EPSILONS = (0.5, 0.1, 0.05, 0.01)
DEFAULT_TIMESCALES = (0.1, 0.5, 1.0)
DEFAULT_PROVISIONING_KINDS = ("lognormal", "weibull", "meent")

TraceLike = Union[PacketSeries, VolumeSeries]


@dataclass(frozen=True)
class ProvisioningResult:
    """One provisioning cell: a capacity estimate and its validation."""

    dataset: str
    model_kind: str
    timescale_T: float
    target_epsilon: float
    capacity_C: float
    empirical_epsilon_hat: float

    @property
    def abs_error(self) -> float:
        return abs(self.target_epsilon - self.empirical_epsilon_hat)

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "model": self.model_kind,
            "T_ms": self.timescale_T * 1e3,
            "epsilon": self.target_epsilon,
            "C_bps": self.capacity_C,
            "epsilon_hat": self.empirical_epsilon_hat,
            "abs_err": self.abs_error,
        }


def _check_epsilon(epsilon: float) -> None:
    if not (0.0 < epsilon < 1.0):
        raise DomainError("epsilon must lie strictly inside (0, 1)")


def safety_margin(stats: SummaryStats, epsilon: float) -> float:
    """Headroom above the mean rate: ``sqrt(-2 ln eps) * sqrt(v(T)/T^2)``."""
    _check_epsilon(epsilon)
    return math.sqrt(-2.0 * math.log(epsilon)) * math.sqrt(
        stats.volume_variance_vT / (stats.timescale_T * stats.timescale_T)
    )


def capacity_meent(stats: SummaryStats, epsilon: float) -> float:
    """Gaussian-assumption capacity: mean rate plus the safety margin.

    Computed literally as ``mu + safety_margin`` so the two stay an exact
    identity.
    """
    return stats.mean_rate_mu + safety_margin(stats, epsilon)


def capacity_quantile(model: DistributionModel, epsilon: float) -> float:
    """Capacity from the fitted rate model: ``F^-1(1 - eps)`` in bytes/s.

    The model must have been fitted to per-bin rates (volumes/T) so the
    quantile is directly a rate.
    """
    _check_epsilon(epsilon)
    return float(quantile(model, 1.0 - epsilon))


def empirical_epsilon(vs: VolumeSeries, capacity: float) -> float:
    """Fraction of bins whose volume reaches ``capacity * T``; ties count
    as exceedances."""
    if not (capacity > 0):
        raise DomainError("capacity must be positive")
    return float(np.mean(vs.volumes >= capacity * vs.timescale_T))


def _series_at(trace: TraceLike, T: float) -> VolumeSeries:
    if isinstance(trace, PacketSeries):
        return aggregate(trace, T)
    return rebin(trace, T)


@dataclass
class ProvisioningTable:
    rows: list[ProvisioningResult]
    errors: list[str]
    summary: list[dict]

    def to_dict(self) -> dict:
        return {
            "rows": [r.to_dict() for r in self.rows],
            "errors": self.errors,
            "summary": self.summary,
        }


def provisioning_experiment(
    traces: Sequence[tuple[str, TraceLike]],
    kinds: Sequence[str] = DEFAULT_PROVISIONING_KINDS,
    epsilons: Sequence[float] = DEFAULT_EPSILONS,
    timescales: Sequence[float] = DEFAULT_TIMESCALES,
) -> ProvisioningTable:
    """Capacity/validation table over (model, epsilon, timescale) cells.

    For each trace and timescale the series is re-aggregated, the model
    fitted to rates (or summary statistics computed for the Gaussian
    formula), capacities derived per epsilon and validated with the
    empirical exceedance fraction.  Per-cell fit failures are recorded
    and do not abort the other cells.  Row order is deterministic:
    dataset, then model kind, then epsilon, then timescale, in the order
    supplied.  With several traces, per-(model, epsilon, timescale)
    averages and the standard error of |eps - eps_hat| are summarised.
    """
    rows: list[ProvisioningResult] = []
    errors: list[str] = []
    for label, trace in traces:
        for kind in kinds:
            for eps in epsilons:
                for T in timescales:
                    try:
                        series = _series_at(trace, T)
                        if kind == "meent":
                            cap = capacity_meent(volume_stats(series), eps)
                        else:
                            model = fit_mle(kind, rates(series))
                            cap = capacity_quantile(model, eps)
                        rows.append(
                            ProvisioningResult(
                                dataset=label,
                                model_kind=kind,
                                timescale_T=T,
                                target_epsilon=eps,
                                capacity_C=cap,
                                empirical_epsilon_hat=empirical_epsilon(series, cap),
                            )
                        )
                    except VolumaError as exc:
                        errors.append(
                            f"{label}/{kind}/eps={eps}/T={T}: {type(exc).__name__}: {exc}"
                        )
    summary: list[dict] = []
    if len(traces) > 1:
        for kind in kinds:
            for eps in epsilons:
                for T in timescales:
                    cell = [
                        r
                        for r in rows
                        if r.model_kind == kind
                        and r.target_epsilon == eps
                        and r.timescale_T == T
                    ]
                    if not cell:
                        continue
                    eps_hats = np.array([r.empirical_epsilon_hat for r in cell])
                    abs_errs = np.array([r.abs_error for r in cell])
                    summary.append(
                        {
                            "model": kind,
                            "epsilon": eps,
                            "T_ms": T * 1e3,
                            "n_traces": len(cell),
                            "avg_epsilon_hat": float(eps_hats.mean()),
                            "stderr_abs_err": float(
                                abs_errs.std(ddof=1) / math.sqrt(len(cell))
                            )
                            if len(cell) > 1
                            else 0.0,
                        }
                    )
    return ProvisioningTable(rows=rows, errors=errors, summary=summary)
