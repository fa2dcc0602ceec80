"""Goodness-of-fit and model-selection machinery.

The selection pipeline mirrors the heavy-tail testing practice built
around the Kolmogorov-Smirnov statistic: fit a power law with an
estimated lower cutoff, judge its plausibility with a semi-parametric
bootstrap p-value, then pit it against each alternative family with a
normalised (Vuong-style) log-likelihood-ratio test.  A probability-plot
correlation coefficient gives an independent second opinion, and an
anomaly screen catches traces dominated by outages or saturated links,
which no smooth family fits.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import ClassVar, Optional

import numpy as np

from ._rng import derive_seed, generator
from .distributions import (
    MIN_FIT_SAMPLES,
    MAX_XMIN_CANDIDATES,
    DistributionModel,
    PowerLaw,
    _powerlaw_scan,
    effective_min_tail,
    fit_mle,
    fit_mle_truncated,
    fit_powerlaw,
    model_to_dict,
)
from .errors import (
    DegenerateData,
    DomainError,
    EvaluationError,
    FitFailure,
    InsufficientData,
    VolumaError,
)
from .trace import VolumeSeries, rates

#: Significance threshold shared by the bootstrap plausibility gate and
#: the likelihood-ratio decisions.
SIGNIFICANCE = 0.1

DEFAULT_KINDS = ("lognormal", "gaussian", "weibull", "exponential", "powerlaw")


@dataclass(frozen=True)
class LlrResult:
    """Normalised log-likelihood ratio between two candidate models.

    Positive values favour the first model of the comparison.
    """

    R_normalized: float
    p_value: float
    sign_convention: ClassVar[str] = "positive favors first model"

    def to_dict(self) -> dict:
        return {"R_normalized": self.R_normalized, "p_value": self.p_value}


@dataclass(frozen=True)
class AnomalyReport:
    outage_fraction: float
    saturation_fraction: float
    flagged: bool
    capacity_used: float

    def to_dict(self) -> dict:
        return {
            "outage_fraction": self.outage_fraction,
            "saturation_fraction": self.saturation_fraction,
            "flagged": self.flagged,
            "capacity_used": self.capacity_used,
        }


@dataclass
class ModelFit:
    """Outcome of fitting one candidate family to the samples."""

    model: Optional[DistributionModel] = None
    ks: Optional[float] = None
    gamma: Optional[float] = None
    loglik: Optional[float] = None
    error: Optional[str] = None

    def to_dict(self) -> dict:
        if self.model is None:
            return {"error": self.error}
        return {
            "params": model_to_dict(self.model),
            "ks": self.ks,
            "gamma": self.gamma,
            "loglik": self.loglik,
        }


@dataclass
class FitReport:
    """Everything the selection pipeline learned about one volume series."""

    source_label: str
    timescale_T: float
    n_samples: int
    models: dict[str, ModelFit]
    bootstrap_p: Optional[float]
    llr_vs_powerlaw: dict[str, LlrResult]
    deciding_llr: Optional[dict]
    best_model: str
    anomaly: AnomalyReport
    gamma_by_timescale: Optional[dict[str, dict[str, float]]] = None
    gamma_variation_by_kind: Optional[dict[str, float]] = None

    def to_dict(self) -> dict:
        out = {
            "source_label": self.source_label,
            "timescale_T": self.timescale_T,
            "n_samples": self.n_samples,
            "models": {k: v.to_dict() for k, v in self.models.items()},
            "bootstrap_p": self.bootstrap_p,
            "llr_vs_powerlaw": {k: v.to_dict() for k, v in self.llr_vs_powerlaw.items()},
            "deciding_llr": self.deciding_llr,
            "best_model": self.best_model,
            "anomaly": self.anomaly.to_dict(),
        }
        if self.gamma_by_timescale is not None:
            out["gamma_by_timescale"] = self.gamma_by_timescale
            out["gamma_variation"] = self.gamma_variation_by_kind
        return out


def ks_statistic(values, model: DistributionModel) -> float:
    """Two-sided Kolmogorov-Smirnov distance between the sample and a
    fitted model.

    Both step sides of the empirical CDF are compared:
    ``max_i max(|i/n - F(x_(i))|, |F(x_(i)) - (i-1)/n|)``.  For the power
    law the comparison is restricted to the tail ``x >= xmin``, measured
    against the conditional tail CDF.
    """
    x = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if x.size == 0:
        raise InsufficientData("ks_statistic needs a non-empty sample")
    if isinstance(model, PowerLaw):
        x = x[x >= model.xmin]
        if x.size == 0:
            raise InsufficientData("no samples at or above the power-law cutoff")
    n = x.size
    F = np.atleast_1d(model.cdf(x))
    r = np.arange(1, n + 1)
    return float(np.maximum(np.abs(r / n - F), np.abs(F - (r - 1) / n)).max())


def _draw_replicate(rng, n, xmin, alpha, p_tail, body):
    take_tail = rng.random(n) < p_tail
    k = int(take_tail.sum())
    out = np.empty(n)
    out[take_tail] = xmin * (1.0 - rng.random(k)) ** (-1.0 / (alpha - 1.0))
    rest = n - k
    if rest:
        out[~take_tail] = body[rng.integers(0, body.size, rest)]
    return out


def _replicate_ks_block(args):
    seeds, n, xmin, alpha, p_tail, body, max_candidates, min_tail = args
    out = np.empty(len(seeds))
    for i, s in enumerate(seeds):
        rep = _draw_replicate(generator(s), n, xmin, alpha, p_tail, body)
        try:
            out[i] = _powerlaw_scan(rep, max_candidates, min_tail, None)[0]
        except (FitFailure, DomainError):
            # A degenerate replicate cannot beat the observed fit; count
            # it on the >= side.
            out[i] = np.inf
    return out


def _loglik(model: DistributionModel, x: np.ndarray) -> float:
    return float(np.sum(model.logpdf(x)))


def _workers_from_env(workers: Optional[int]) -> int:
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("VOLUMA_THREADS", "")
    try:
        return max(1, int(env))
    except ValueError:
        return 1


def bootstrap_pvalue(
    values,
    reps: int = 1000,
    seed: int = 0,
    workers: Optional[int] = None,
    max_candidates: int = MAX_XMIN_CANDIDATES,
    return_details: bool = False,
):
    """Semi-parametric bootstrap p-value for the power-law hypothesis.

    Each replicate draws ``n`` values, every one independently taken from
    the fitted tail (with probability ``n_tail/n``) or uniformly from the
    empirical values below the cutoff, then gets fully refit (cutoff and
    exponent re-estimated).  ``p`` is the fraction of replicate KS
    distances at or above the observed one.  Replicate ``r`` derives its
    seed from ``(seed, r)`` with a fixed 64-bit mix, so the result is
    bit-identical for a given seed no matter how many workers run.
    """
    if reps < 100:
        raise DomainError("bootstrap needs at least 100 replicates")
    x = np.asarray(values, dtype=np.float64).ravel()
    n = x.size
    floor = effective_min_tail(n)
    D_obs, xmin, alpha, ntail = _powerlaw_scan(x, max_candidates, floor, None)
    body = x[x < xmin]
    p_tail = ntail / n
    seeds = [derive_seed(seed, r) for r in range(reps)]
    workers = _workers_from_env(workers)
    if workers > 1:
        block = -(-reps // workers)
        chunks = [
            (seeds[i : i + block], n, xmin, alpha, p_tail, body, max_candidates, floor)
            for i in range(0, reps, block)
        ]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_replicate_ks_block, chunks))
        rep_ks = np.concatenate(parts)
    else:
        rep_ks = _replicate_ks_block(
            (seeds, n, xmin, alpha, p_tail, body, max_candidates, floor)
        )
    p = float(np.mean(rep_ks >= D_obs))
    if return_details:
        return p, D_obs, rep_ks
    return p


def _conditional_logpdf(model: DistributionModel, x: np.ndarray, cut: float) -> np.ndarray:
    """Log density of the model conditioned on ``x >= cut``.

    Power-law comparands keep their parameters (renormalised if their own
    cutoff sits below the comparison cut); any other family is refit as a
    truncated distribution on the tail, matching the practice of the
    heavy-tail testing framework this pipeline follows.
    """
    if isinstance(model, PowerLaw):
        out = np.atleast_1d(model.logpdf(x))
        if model.xmin < cut:
            out = out - float(model.logsf(cut))
        return out
    refit = fit_mle_truncated(model.kind, x, cut)
    return np.atleast_1d(refit.logpdf(x)) - float(refit.logsf(cut))


def llr_compare(values, model_a: DistributionModel, model_b: DistributionModel) -> LlrResult:
    """Normalised log-likelihood ratio with a two-sided significance value.

    When either comparand is a power law the comparison runs on the tail
    ``x >= xmin`` only: the power law keeps its tail normalisation and
    the other model is refit as a truncated distribution on that same
    subset, so both likelihoods live on the same support.
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size == 0:
        raise InsufficientData("llr_compare needs a non-empty sample")
    cuts = [m.xmin for m in (model_a, model_b) if isinstance(m, PowerLaw)]
    if cuts:
        cut = max(cuts)
        x = x[x >= cut]
        if x.size < MIN_FIT_SAMPLES:
            raise InsufficientData("tail too small for a likelihood comparison")
        la = _conditional_logpdf(model_a, x, cut)
        lb = _conditional_logpdf(model_b, x, cut)
    else:
        la = np.atleast_1d(model_a.logpdf(x))
        lb = np.atleast_1d(model_b.logpdf(x))
    if not np.all(np.isfinite(la)):
        raise EvaluationError(f"model {model_a.kind!r} has zero density at a sample")
    if not np.all(np.isfinite(lb)):
        raise EvaluationError(f"model {model_b.kind!r} has zero density at a sample")
    d = la - lb
    if np.all(d == 0.0):
        return LlrResult(R_normalized=0.0, p_value=1.0)
    R = float(d.sum())
    sd = float(d.std())
    n = d.size
    if sd == 0.0:
        return LlrResult(R_normalized=math.copysign(math.inf, R), p_value=0.0)
    return LlrResult(
        R_normalized=R / (sd * math.sqrt(n)),
        p_value=float(math.erfc(abs(R) / (sd * math.sqrt(2.0 * n)))),
    )


def ppcc(values, model: DistributionModel) -> float:
    """Probability-plot correlation coefficient.

    Pearson correlation between the order statistics and the reference
    quantiles ``F^-1(i/(n+1))``.  For the power law only tail samples
    enter, matching its restricted support.
    """
    S = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if isinstance(model, PowerLaw):
        S = S[S >= model.xmin]
    n = S.size
    if n < 3:
        raise InsufficientData("ppcc needs at least 3 samples")
    q = np.atleast_1d(model.quantile(np.arange(1, n + 1) / (n + 1.0)))
    ds = S - S.mean()
    dq = q - q.mean()
    den = math.sqrt(float((ds * ds).sum()) * float((dq * dq).sum()))
    if den == 0.0:
        raise DegenerateData("zero variance in samples or reference quantiles")
    return float((ds * dq).sum() / den)


def gamma_variation(gammas) -> float:
    """Spread of the correlation coefficient across timescales: the square
    root of the population variance of the supplied values."""
    g = np.asarray(gammas, dtype=np.float64).ravel()
    if g.size < 2:
        raise InsufficientData("gamma_variation needs at least 2 values")
    return float(math.sqrt(g.var()))


def qq_points(values, model: DistributionModel) -> np.ndarray:
    """Quantile-quantile pairs ``(F^-1(i/(n+1)), S_(i))`` as an (n, 2) array."""
    S = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if isinstance(model, PowerLaw):
        S = S[S >= model.xmin]
    n = S.size
    if n < 2:
        raise InsufficientData("qq_points needs at least 2 samples")
    q = np.atleast_1d(model.quantile(np.arange(1, n + 1) / (n + 1.0)))
    return np.column_stack([q, S])


def anomaly_screen(
    vs: VolumeSeries,
    capacity: float,
    theta_out: float = 0.01,
    theta_sat: float = 0.95,
    f_crit: float = 0.05,
) -> AnomalyReport:
    """Flag traces dominated by outage or saturation periods.

    A bin counts as outage when its volume is at most
    ``theta_out * capacity * T`` and as saturation when at least
    ``theta_sat * capacity * T``; the trace is flagged when either
    fraction exceeds ``f_crit``.
    """
    if not (capacity > 0):
        raise DomainError("capacity must be positive")
    if not (0 <= theta_out < theta_sat):
        raise DomainError("need 0 <= theta_out < theta_sat")
    per_bin = capacity * vs.timescale_T
    outage = float(np.mean(vs.volumes <= theta_out * per_bin))
    saturation = float(np.mean(vs.volumes >= theta_sat * per_bin))
    return AnomalyReport(
        outage_fraction=outage,
        saturation_fraction=saturation,
        flagged=(outage > f_crit) or (saturation > f_crit),
        capacity_used=float(capacity),
    )


def _select_best(
    bootstrap_p: Optional[float],
    anchored: dict[str, LlrResult],
    fits: dict[str, ModelFit],
    samples: np.ndarray,
) -> tuple[str, Optional[dict]]:
    """Operationalise the selection narrative.

    An alternative qualifies when its anchored test beats the power law
    (negative normalised LLR with a significant p).  With no qualifier
    the power law stands if its bootstrap p-value clears the threshold,
    otherwise nothing does.  Among qualifiers the winner is the family
    with the highest full-sample log-likelihood; the two-sided normalised
    LLR is not comparable across pairs (its variance normalisation
    differs per comparison), so it gates qualification but does not rank.
    When both log-normal and Weibull qualify, the direct likelihood-ratio
    test between them is the deciding test and an insignificant decision
    means inconclusive.
    """
    if bootstrap_p is None:
        return "inconclusive", None
    qualified = {
        kind: res
        for kind, res in anchored.items()
        if res.R_normalized < 0 and res.p_value < SIGNIFICANCE
    }
    if not qualified:
        return ("powerlaw" if bootstrap_p > SIGNIFICANCE else "inconclusive"), None
    winner = max(qualified, key=lambda kind: fits[kind].loglik)
    pair = {"lognormal", "weibull"}
    if winner in pair and pair <= set(qualified):
        deciding = llr_compare(samples, fits["lognormal"].model, fits["weibull"].model)
        payload = {"comparison": "lognormal_vs_weibull", **deciding.to_dict()}
        if deciding.p_value > SIGNIFICANCE:
            return "inconclusive", payload
        return ("lognormal" if deciding.R_normalized > 0 else "weibull"), payload
    return winner, None


def fit_report(
    vs: VolumeSeries,
    kinds=DEFAULT_KINDS,
    bootstrap_reps: int = 1000,
    seed: int = 42,
    use_rates: bool = False,
    capacity: Optional[float] = None,
    workers: Optional[int] = None,
) -> FitReport:
    """Run the full selection pipeline on one volume series.

    Fits every requested family, computes per-model KS distances and
    correlation coefficients, the power-law bootstrap p-value, the
    likelihood-ratio tests against the power law, and the anomaly screen.
    Samples are per-bin volumes by default (``use_rates`` divides by T).
    Zero-volume bins take part in the anomaly screen but make the
    log-domain fits impossible; such fit errors are recorded per model
    rather than aborting the report.
    """
    samples = rates(vs) if use_rates else np.array(vs.volumes)
    screen_capacity = capacity if capacity is not None else float(rates(vs).max())
    if screen_capacity <= 0:
        screen_capacity = 1.0
    anomaly = anomaly_screen(vs, screen_capacity)

    fits: dict[str, ModelFit] = {}
    for kind in kinds:
        entry = ModelFit()
        try:
            if kind == "powerlaw":
                entry.model = fit_powerlaw(samples)
            else:
                entry.model = fit_mle(kind, samples)
            entry.ks = ks_statistic(samples, entry.model)
            entry.gamma = ppcc(samples, entry.model)
            if kind != "powerlaw":
                entry.loglik = _loglik(entry.model, samples)
        except VolumaError as exc:
            entry = ModelFit(error=f"{type(exc).__name__}: {exc}")
        fits[kind] = entry

    bootstrap_p = None
    pl_fit = fits.get("powerlaw")
    if pl_fit is not None and pl_fit.model is not None:
        try:
            bootstrap_p = bootstrap_pvalue(
                samples,
                reps=bootstrap_reps,
                seed=derive_seed(seed, 0xB007),
                workers=workers,
            )
        except VolumaError:
            bootstrap_p = None

    anchored: dict[str, LlrResult] = {}
    if pl_fit is not None and pl_fit.model is not None:
        for kind in kinds:
            if kind == "powerlaw":
                continue
            alt = fits[kind]
            if alt.model is None:
                continue
            try:
                anchored[kind] = llr_compare(samples, pl_fit.model, alt.model)
            except VolumaError:
                continue

    best, deciding = _select_best(bootstrap_p, anchored, fits, samples)
    if best != "inconclusive" and fits.get(best, ModelFit()).model is None:
        best = "inconclusive"

    return FitReport(
        source_label=vs.source_label,
        timescale_T=vs.timescale_T,
        n_samples=int(samples.size),
        models=fits,
        bootstrap_p=bootstrap_p,
        llr_vs_powerlaw=anchored,
        deciding_llr=deciding,
        best_model=best,
        anomaly=anomaly,
    )
