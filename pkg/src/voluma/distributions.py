"""Candidate traffic-volume models: density, CDF, quantile, MLE fitting
and seeded sampling.

Five families are supported: log-normal, Gaussian, Weibull, exponential
and the continuous power law.  All have closed-form CDFs and quantiles;
normal quantiles go through an inverse-error-function routine good to
well below 1e-12 in probability.  Estimators are maximum-likelihood with
population (1/n) variance normalisation throughout, so that likelihood
comparisons between fitted models are consistent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import ClassVar, Union

import numpy as np
from scipy import optimize, special

from ._rng import generator
from .errors import (
    DegenerateData,
    DomainError,
    FitFailure,
    InsufficientData,
)

_SQRT2 = math.sqrt(2.0)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

#: Minimum sample count accepted by the fitting routines.
MIN_FIT_SAMPLES = 8

#: Power-law tail must keep at least this many samples above the cutoff.
MIN_POWERLAW_TAIL = 8

#: The cutoff search also keeps at least this fraction of the samples in
#: the tail.  An unbounded search walks into the extreme tail of any
#: smooth distribution, where a power law fits locally and nothing can be
#: distinguished from anything; the models here describe whole traffic
#: distributions, so the cutoff must leave a substantial share of the
#: data in play.  Pass 0 to recover the unbounded scan.
MIN_TAIL_FRACTION = 0.25

#: Cap on the number of lower-cutoff candidates scanned by the power-law
#: fit; unique sample values are thinned to this many quantile-spaced
#: candidates when there are more.
MAX_XMIN_CANDIDATES = 500


def _norm_cdf(z):
    return 0.5 * special.erfc(-z / _SQRT2)


def _norm_quantile(p):
    return special.ndtri(p)


def _check_prob(p) -> tuple[np.ndarray, bool]:
    pv = np.asarray(p, dtype=np.float64)
    scalar = pv.ndim == 0
    pv = np.atleast_1d(pv)
    if not np.all(np.isfinite(pv)) or np.any(pv <= 0.0) or np.any(pv >= 1.0):
        raise DomainError("probability must lie strictly inside (0, 1)")
    return pv, scalar


def _prep(x) -> tuple[np.ndarray, bool]:
    xv = np.asarray(x, dtype=np.float64)
    scalar = xv.ndim == 0
    return np.atleast_1d(xv), scalar


def _ret(out: np.ndarray, scalar: bool) -> Union[float, np.ndarray]:
    return float(out[0]) if scalar else out


@dataclass(frozen=True)
class LogNormal:
    """ln(X) ~ N(mu, sigma^2)."""

    mu: float
    sigma: float
    kind: ClassVar[str] = "lognormal"

    def __post_init__(self):
        if not (self.sigma > 0):
            raise DomainError("sigma must be positive")

    @property
    def params(self) -> dict[str, float]:
        return {"mu": self.mu, "sigma": self.sigma}

    def pdf(self, x):
        xv, scalar = _prep(x)
        out = np.zeros_like(xv)
        pos = xv > 0
        z = (np.log(xv[pos]) - self.mu) / self.sigma
        out[pos] = np.exp(-0.5 * z * z) / (xv[pos] * self.sigma * math.sqrt(2 * math.pi))
        return _ret(out, scalar)

    def logpdf(self, x):
        xv, scalar = _prep(x)
        out = np.full_like(xv, -np.inf)
        pos = xv > 0
        lx = np.log(xv[pos])
        z = (lx - self.mu) / self.sigma
        out[pos] = -0.5 * z * z - lx - math.log(self.sigma) - _LOG_SQRT_2PI
        return _ret(out, scalar)

    def cdf(self, x):
        xv, scalar = _prep(x)
        out = np.zeros_like(xv)
        pos = xv > 0
        out[pos] = _norm_cdf((np.log(xv[pos]) - self.mu) / self.sigma)
        return _ret(out, scalar)

    def quantile(self, p):
        pv, scalar = _check_prob(p)
        return _ret(np.exp(self.mu + self.sigma * _norm_quantile(pv)), scalar)

    def logsf(self, x):
        """log(1 - CDF), stable far into the tail."""
        xv, scalar = _prep(x)
        out = np.zeros_like(xv)
        pos = xv > 0
        out[pos] = special.log_ndtr(-(np.log(xv[pos]) - self.mu) / self.sigma)
        return _ret(out, scalar)


@dataclass(frozen=True)
class Gaussian:
    mean: float
    sd: float
    kind: ClassVar[str] = "gaussian"

    def __post_init__(self):
        if not (self.sd > 0):
            raise DomainError("sd must be positive")

    @property
    def params(self) -> dict[str, float]:
        return {"mean": self.mean, "sd": self.sd}

    def pdf(self, x):
        xv, scalar = _prep(x)
        z = (xv - self.mean) / self.sd
        return _ret(np.exp(-0.5 * z * z) / (self.sd * math.sqrt(2 * math.pi)), scalar)

    def logpdf(self, x):
        xv, scalar = _prep(x)
        z = (xv - self.mean) / self.sd
        return _ret(-0.5 * z * z - math.log(self.sd) - _LOG_SQRT_2PI, scalar)

    def cdf(self, x):
        xv, scalar = _prep(x)
        return _ret(_norm_cdf((xv - self.mean) / self.sd), scalar)

    def quantile(self, p):
        pv, scalar = _check_prob(p)
        return _ret(self.mean + self.sd * _norm_quantile(pv), scalar)

    def logsf(self, x):
        xv, scalar = _prep(x)
        return _ret(special.log_ndtr(-(xv - self.mean) / self.sd), scalar)


@dataclass(frozen=True)
class Weibull:
    """Shape/scale parameterisation: F(x) = 1 - exp(-(x/lambda)^k)."""

    shape_k: float
    scale_lambda: float
    kind: ClassVar[str] = "weibull"

    def __post_init__(self):
        if not (self.shape_k > 0 and self.scale_lambda > 0):
            raise DomainError("shape and scale must be positive")

    @property
    def params(self) -> dict[str, float]:
        return {"shape_k": self.shape_k, "scale_lambda": self.scale_lambda}

    def pdf(self, x):
        xv, scalar = _prep(x)
        out = np.zeros_like(xv)
        pos = xv > 0
        y = xv[pos] / self.scale_lambda
        k = self.shape_k
        with np.errstate(over="ignore"):
            out[pos] = (k / self.scale_lambda) * y ** (k - 1.0) * np.exp(-(y**k))
        # Density at the origin: finite only for k >= 1.
        if k == 1.0:
            out[xv == 0] = 1.0 / self.scale_lambda
        elif k < 1.0:
            out[xv == 0] = np.inf
        return _ret(out, scalar)

    def logpdf(self, x):
        xv, scalar = _prep(x)
        out = np.full_like(xv, -np.inf)
        pos = xv > 0
        ly = np.log(xv[pos]) - math.log(self.scale_lambda)
        k = self.shape_k
        with np.errstate(over="ignore"):
            out[pos] = math.log(k / self.scale_lambda) + (k - 1.0) * ly - np.exp(k * ly)
        if k == 1.0:
            out[xv == 0] = -math.log(self.scale_lambda)
        elif k < 1.0:
            out[xv == 0] = np.inf
        return _ret(out, scalar)

    def cdf(self, x):
        xv, scalar = _prep(x)
        out = np.zeros_like(xv)
        pos = xv > 0
        with np.errstate(over="ignore"):
            out[pos] = -np.expm1(-((xv[pos] / self.scale_lambda) ** self.shape_k))
        return _ret(out, scalar)

    def quantile(self, p):
        pv, scalar = _check_prob(p)
        q = self.scale_lambda * (-np.log1p(-pv)) ** (1.0 / self.shape_k)
        return _ret(q, scalar)

    def logsf(self, x):
        xv, scalar = _prep(x)
        out = np.zeros_like(xv)
        pos = xv > 0
        with np.errstate(over="ignore"):
            out[pos] = -((xv[pos] / self.scale_lambda) ** self.shape_k)
        return _ret(out, scalar)


@dataclass(frozen=True)
class Exponential:
    rate: float
    kind: ClassVar[str] = "exponential"

    def __post_init__(self):
        if not (self.rate > 0):
            raise DomainError("rate must be positive")

    @property
    def params(self) -> dict[str, float]:
        return {"rate": self.rate}

    def pdf(self, x):
        xv, scalar = _prep(x)
        out = np.zeros_like(xv)
        ok = xv >= 0
        out[ok] = self.rate * np.exp(-self.rate * xv[ok])
        return _ret(out, scalar)

    def logpdf(self, x):
        xv, scalar = _prep(x)
        out = np.full_like(xv, -np.inf)
        ok = xv >= 0
        out[ok] = math.log(self.rate) - self.rate * xv[ok]
        return _ret(out, scalar)

    def cdf(self, x):
        xv, scalar = _prep(x)
        out = np.zeros_like(xv)
        ok = xv >= 0
        out[ok] = -np.expm1(-self.rate * xv[ok])
        return _ret(out, scalar)

    def quantile(self, p):
        pv, scalar = _check_prob(p)
        return _ret(-np.log1p(-pv) / self.rate, scalar)

    def logsf(self, x):
        xv, scalar = _prep(x)
        out = np.zeros_like(xv)
        pos = xv > 0
        out[pos] = -self.rate * xv[pos]
        return _ret(out, scalar)


@dataclass(frozen=True)
class PowerLaw:
    """Continuous power law: f(x) = ((alpha-1)/xmin) (x/xmin)^-alpha for
    x >= xmin."""

    alpha: float
    xmin: float
    kind: ClassVar[str] = "powerlaw"

    def __post_init__(self):
        if not (self.alpha > 1):
            raise DomainError("alpha must exceed 1")
        if not (self.xmin > 0):
            raise DomainError("xmin must be positive")

    @property
    def params(self) -> dict[str, float]:
        return {"alpha": self.alpha, "xmin": self.xmin}

    def pdf(self, x):
        xv, scalar = _prep(x)
        out = np.zeros_like(xv)
        ok = xv >= self.xmin
        out[ok] = ((self.alpha - 1.0) / self.xmin) * (xv[ok] / self.xmin) ** (-self.alpha)
        return _ret(out, scalar)

    def logpdf(self, x):
        xv, scalar = _prep(x)
        out = np.full_like(xv, -np.inf)
        ok = xv >= self.xmin
        out[ok] = math.log((self.alpha - 1.0) / self.xmin) - self.alpha * (
            np.log(xv[ok]) - math.log(self.xmin)
        )
        return _ret(out, scalar)

    def cdf(self, x):
        """Below the cutoff the CDF is 0 by convention, not an error."""
        xv, scalar = _prep(x)
        out = np.zeros_like(xv)
        ok = xv >= self.xmin
        out[ok] = -np.expm1((1.0 - self.alpha) * (np.log(xv[ok]) - math.log(self.xmin)))
        return _ret(out, scalar)

    def quantile(self, p):
        pv, scalar = _check_prob(p)
        return _ret(self.xmin * (1.0 - pv) ** (-1.0 / (self.alpha - 1.0)), scalar)

    def logsf(self, x):
        xv, scalar = _prep(x)
        out = np.zeros_like(xv)
        ok = xv >= self.xmin
        out[ok] = (1.0 - self.alpha) * (np.log(xv[ok]) - math.log(self.xmin))
        return _ret(out, scalar)


DistributionModel = Union[LogNormal, Gaussian, Weibull, Exponential, PowerLaw]

MODEL_KINDS = ("lognormal", "gaussian", "weibull", "exponential", "powerlaw")

_MODEL_CLASSES = {
    "lognormal": LogNormal,
    "gaussian": Gaussian,
    "weibull": Weibull,
    "exponential": Exponential,
    "powerlaw": PowerLaw,
}


def model_from_dict(payload: dict) -> DistributionModel:
    """Rebuild a model from its ``{kind, params...}`` JSON object."""
    data = dict(payload)
    kind = data.pop("kind", None)
    if kind not in _MODEL_CLASSES:
        raise DomainError(f"unknown model kind: {kind!r}")
    return _MODEL_CLASSES[kind](**data)


def model_to_dict(model: DistributionModel) -> dict:
    out = {"kind": model.kind}
    out.update(model.params)
    return out


def pdf(model: DistributionModel, x):
    return model.pdf(x)


def cdf(model: DistributionModel, x):
    return model.cdf(x)


def quantile(model: DistributionModel, p):
    return model.quantile(p)


def _as_fit_samples(values, min_samples: int, positive: bool) -> np.ndarray:
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size < min_samples:
        raise InsufficientData(f"need at least {min_samples} samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise DomainError("samples must be finite")
    if positive and np.any(x <= 0.0):
        raise DomainError("samples must be strictly positive for this fit")
    return x


def _weibull_mle(x: np.ndarray) -> Weibull:
    # The profile score in k is scale-invariant, so work on y = x/max(x)
    # to keep y**k bounded for any bracket endpoint.
    y = x / x.max()
    ly = np.log(y)
    mean_ly = float(ly.mean())

    def score(k: float) -> float:
        w = y**k
        sw = float(w.sum())
        return float((w @ ly) / sw) - 1.0 / k - mean_ly

    lo, hi = 1e-3, 1e3
    s_lo, s_hi = score(lo), score(hi)
    if not (s_lo < 0.0 < s_hi or s_hi < 0.0 < s_lo):
        raise FitFailure("Weibull shape score has no sign change on [1e-3, 1e3]")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        s_mid = score(mid)
        if abs(s_mid) <= 1e-10:
            break
        if (s_mid < 0.0) == (s_lo < 0.0):
            lo, s_lo = mid, s_mid
        else:
            hi = mid
    else:
        mid = 0.5 * (lo + hi)
    k = mid
    lam = float(x.max() * np.mean((x / x.max()) ** k) ** (1.0 / k))
    return Weibull(shape_k=k, scale_lambda=lam)


def fit_mle(kind: str, values, min_samples: int = MIN_FIT_SAMPLES) -> DistributionModel:
    """Maximum-likelihood fit of one of the non-power-law families.

    Log-normal and Gaussian use population (1/n) standard deviations.
    The Weibull shape solves the profile score equation by bisection on
    [1e-3, 1e3] to |score| <= 1e-10.
    """
    if kind == "lognormal":
        x = _as_fit_samples(values, min_samples, positive=True)
        if x.min() == x.max():
            raise DegenerateData("all samples equal; log-normal sigma is zero")
        lx = np.log(x)
        return LogNormal(mu=float(lx.mean()), sigma=float(lx.std()))
    if kind == "gaussian":
        x = _as_fit_samples(values, min_samples, positive=False)
        if x.min() == x.max():
            raise DegenerateData("all samples equal; Gaussian sd is zero")
        return Gaussian(mean=float(x.mean()), sd=float(x.std()))
    if kind == "exponential":
        x = _as_fit_samples(values, min_samples, positive=True)
        return Exponential(rate=1.0 / float(x.mean()))
    if kind == "weibull":
        x = _as_fit_samples(values, min_samples, positive=True)
        if x.min() == x.max():
            raise DegenerateData("all samples equal; Weibull shape is undefined")
        return _weibull_mle(x)
    if kind == "powerlaw":
        raise DomainError("use fit_powerlaw for the power-law family")
    raise DomainError(f"unknown model kind: {kind!r}")


def _powerlaw_scan(
    x: np.ndarray,
    max_candidates: int,
    min_tail: int,
    fixed_xmin: float | None,
    n_probes: int = 24,
):
    """Scan lower cutoffs, returning (D, xmin, alpha, n_tail).

    For every candidate cutoff the tail exponent is the Hill estimate
    ``1 + m / sum(log(x/xmin))`` and the candidate's score is the exact
    two-sided KS distance between the tail empirical CDF and the fitted
    tail.  The scan first computes a cheap lower bound for every
    candidate from a fixed set of probe ranks, then evaluates candidates
    in ascending bound order, stopping once no remaining candidate can
    beat the best exact distance found.  The result is identical to the
    full scan; ties go to the smaller cutoff.
    """
    xs = np.sort(x)
    n = xs.size
    lx = np.log(xs)

    if fixed_xmin is not None:
        first = int(np.searchsorted(xs, fixed_xmin, side="left"))
        uniq = np.asarray([fixed_xmin], dtype=np.float64)
        first_idx = np.asarray([first], dtype=np.int64)
        if n - first < min_tail:
            raise FitFailure("fewer than %d samples above the fixed cutoff" % min_tail)
    else:
        uniq, first_idx = np.unique(xs, return_index=True)
        keep = (n - first_idx) >= min_tail
        uniq, first_idx = uniq[keep], first_idx[keep]
        if uniq.size == 0:
            raise FitFailure("no cutoff candidate keeps %d tail samples" % min_tail)
        if uniq.size > max_candidates:
            sel = np.unique(
                np.round(np.linspace(0, uniq.size - 1, max_candidates)).astype(np.int64)
            )
            uniq, first_idx = uniq[sel], first_idx[sel]

    suffix = np.concatenate([np.cumsum(lx[::-1])[::-1], [0.0]])
    m = (n - first_idx).astype(np.float64)
    lc = np.log(uniq)
    S = suffix[first_idx] - m * lc
    ok = S > 0.0
    uniq, first_idx, m, lc, S = uniq[ok], first_idx[ok], m[ok], lc[ok], S[ok]
    if uniq.size == 0:
        raise FitFailure("degenerate tail: all tail samples equal the cutoff")
    beta = m / S

    # Probe lower bounds (a subset of ranks can only under-estimate the max).
    frac = np.linspace(0.0, 1.0, n_probes)
    ranks = 1 + np.floor(frac[None, :] * (m[:, None] - 1.0)).astype(np.int64)
    at = first_idx[:, None] + ranks - 1
    F = -np.expm1(-beta[:, None] * (lx[at] - lc[:, None]))
    lb = np.maximum(ranks / m[:, None] - F, F - (ranks - 1) / m[:, None]).max(axis=1)

    best_D = np.inf
    best_j = -1
    for j in np.argsort(lb, kind="stable"):
        if lb[j] > best_D:
            break
        t = lx[first_idx[j] :]
        mt = t.size
        Ft = -np.expm1(-beta[j] * (t - lc[j]))
        r = np.arange(1, mt + 1)
        D = float(np.maximum(np.abs(r / mt - Ft), np.abs(Ft - (r - 1) / mt)).max())
        if D < best_D or (D == best_D and best_j >= 0 and uniq[j] < uniq[best_j]):
            best_D, best_j = D, int(j)
    return best_D, float(uniq[best_j]), float(1.0 + beta[best_j]), int(m[best_j])


def effective_min_tail(
    n: int, min_tail: int = MIN_POWERLAW_TAIL, min_tail_fraction: float = MIN_TAIL_FRACTION
) -> int:
    return max(min_tail, int(math.ceil(min_tail_fraction * n)))


def fit_powerlaw(
    values,
    min_samples: int = MIN_FIT_SAMPLES,
    min_tail: int = MIN_POWERLAW_TAIL,
    min_tail_fraction: float = MIN_TAIL_FRACTION,
    max_candidates: int = MAX_XMIN_CANDIDATES,
    xmin: float | None = None,
) -> PowerLaw:
    """Fit the continuous power law with an estimated lower cutoff.

    Cutoff candidates are the unique sample values (quantile-thinned to
    at most ``max_candidates``) whose tail keeps at least ``min_tail``
    samples and ``min_tail_fraction`` of the data; the candidate
    minimising the tail KS distance wins, ties toward the smaller
    cutoff.  Pass ``xmin`` to skip the search and fit the exponent above
    a fixed cutoff.
    """
    x = _as_fit_samples(values, min_samples, positive=True)
    if x.min() == x.max():
        raise FitFailure("all samples equal; power-law fit is undefined")
    floor = effective_min_tail(x.size, min_tail, min_tail_fraction)
    _, xm, alpha, _ = _powerlaw_scan(x, max_candidates, floor if xmin is None else min_tail, xmin)
    return PowerLaw(alpha=alpha, xmin=xm)


def fit_mle_truncated(
    kind: str, values, lower: float, min_samples: int = MIN_FIT_SAMPLES
) -> DistributionModel:
    """Fit a family to tail samples as a distribution conditioned on
    ``x >= lower``.

    Maximises the conditional likelihood ``prod f(x)/S(lower)``; this is
    how alternatives must be fitted when they are compared against a
    power law on its tail, since the power law itself is normalised on
    the tail only.  The exponential case is closed-form (memorylessness);
    the others run a derivative-free search seeded at the unconditional
    estimate.
    """
    x = _as_fit_samples(values, min_samples, positive=True)
    if np.any(x < lower):
        raise DomainError("all samples must lie at or above the truncation point")
    if x.min() == x.max():
        raise DegenerateData("all tail samples equal; truncated fit is undefined")
    if kind == "exponential":
        # Conditional exponential on [lower, inf) is exponential in x - lower.
        excess = float(x.mean()) - lower
        if excess <= 0:
            raise DegenerateData("tail has no spread above the truncation point")
        return Exponential(rate=1.0 / excess)

    base = fit_mle(kind, x, min_samples)
    if kind == "lognormal":
        pack = lambda m: np.array([m.mu, math.log(m.sigma)])
        unpack = lambda t: LogNormal(mu=float(t[0]), sigma=math.exp(t[1]))
    elif kind == "gaussian":
        pack = lambda m: np.array([m.mean, math.log(m.sd)])
        unpack = lambda t: Gaussian(mean=float(t[0]), sd=math.exp(t[1]))
    elif kind == "weibull":
        pack = lambda m: np.array([math.log(m.shape_k), math.log(m.scale_lambda)])
        unpack = lambda t: Weibull(shape_k=math.exp(t[0]), scale_lambda=math.exp(t[1]))
    else:
        raise DomainError(f"no truncated fit for kind {kind!r}")

    n = x.size

    def nll(t: np.ndarray) -> float:
        try:
            m = unpack(t)
        except (OverflowError, DomainError):
            return 1e300
        with np.errstate(all="ignore"):
            val = -(float(np.sum(m.logpdf(x))) - n * float(m.logsf(lower)))
        return val if np.isfinite(val) else 1e300

    x0 = pack(base)
    res = optimize.minimize(
        nll,
        x0,
        method="Nelder-Mead",
        options={"xatol": 1e-8, "fatol": 1e-10, "maxiter": 2000},
    )
    best = res.x if res.fun <= nll(x0) else x0
    return unpack(best)


def sample(model: DistributionModel, n: int, seed: int) -> np.ndarray:
    """Draw ``n`` values, deterministically for a given (model, n, seed).

    Power-law, Weibull and exponential draws invert the closed-form CDF;
    Gaussian and log-normal draws come from Box-Muller pairs.  The
    underlying stream is counter-based, so replicated or parallel callers
    derive independent seeds instead of sharing state.
    """
    if n < 1:
        raise DomainError("n must be >= 1")
    rng = generator(seed)
    if isinstance(model, (Gaussian, LogNormal)):
        half = (n + 1) // 2
        u1 = 1.0 - rng.random(half)  # (0, 1]: keeps the log finite
        u2 = rng.random(half)
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * math.pi * u2
        z = np.empty(2 * half)
        z[0::2] = radius * np.cos(angle)
        z[1::2] = radius * np.sin(angle)
        z = z[:n]
        if isinstance(model, Gaussian):
            return model.mean + model.sd * z
        return np.exp(model.mu + model.sigma * z)
    u = rng.random(n)
    if isinstance(model, Exponential):
        return -np.log1p(-u) / model.rate
    if isinstance(model, Weibull):
        return model.scale_lambda * (-np.log1p(-u)) ** (1.0 / model.shape_k)
    if isinstance(model, PowerLaw):
        return model.xmin * (1.0 - u) ** (-1.0 / (model.alpha - 1.0))
    raise DomainError(f"cannot sample from {type(model).__name__}")
