"""Canonical in-memory trace representations and per-interval aggregation.

A packet trace is a time-ordered sequence of (timestamp, wire bytes)
records.  Aggregating it at a timescale ``T`` produces the per-bin byte
volumes that every statistical operation downstream works on: bin ``i``
covers the half-open interval ``[i*T, (i+1)*T)`` measured from the first
packet's timestamp.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, EmptyInput, InsufficientData, MalformedTrace


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PacketSeries:
    """Ordered packet records from a capture.

    ``timestamps`` are seconds since epoch (non-decreasing) and
    ``wire_bytes`` are the on-the-wire lengths (every record >= 1 byte).
    Arrays are marked read-only; all operations on the series are pure.
    """

    timestamps: np.ndarray
    wire_bytes: np.ndarray
    source_label: str = ""

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.float64)
        wb = np.asarray(self.wire_bytes, dtype=np.int64)
        if ts.ndim != 1 or wb.ndim != 1 or ts.size != wb.size:
            raise MalformedTrace("timestamps and wire_bytes must be 1-d and equally long")
        if ts.size and np.any(np.diff(ts) < 0):
            bad = int(np.argmax(np.diff(ts) < 0)) + 1
            raise MalformedTrace(f"timestamps regress at record {bad}")
        if ts.size and (not np.all(np.isfinite(ts))):
            raise MalformedTrace("non-finite timestamp")
        if np.any(wb < 1):
            raise MalformedTrace("wire_bytes must be >= 1 for every record")
        object.__setattr__(self, "timestamps", _frozen(ts))
        object.__setattr__(self, "wire_bytes", _frozen(wb))

    def __len__(self) -> int:
        return int(self.timestamps.size)

    @property
    def total_bytes(self) -> int:
        return int(self.wire_bytes.sum())


@dataclass(frozen=True)
class VolumeSeries:
    """Per-bin traffic volumes at a fixed timescale.

    ``volumes[i]`` is the byte count observed in ``[origin + i*T,
    origin + (i+1)*T)``.  Interior bins with no packets are present as
    zeros; they matter for outage screening.
    """

    timescale_T: float
    volumes: np.ndarray
    origin: float = 0.0
    source_label: str = ""

    def __post_init__(self):
        if not (self.timescale_T > 0):
            raise DomainError("timescale_T must be positive")
        vol = np.asarray(self.volumes, dtype=np.float64)
        if vol.ndim != 1 or vol.size < 1:
            raise DomainError("volumes must be a non-empty 1-d sequence")
        if not np.all(np.isfinite(vol)) or np.any(vol < 0):
            raise DomainError("volumes must be finite and non-negative")
        object.__setattr__(self, "volumes", _frozen(vol))

    def __len__(self) -> int:
        return int(self.volumes.size)

    @property
    def duration(self) -> float:
        return len(self) * self.timescale_T


@dataclass(frozen=True)
class SummaryStats:
    """Mean rate and per-bin volume variance at a timescale.

    ``mean_rate_mu`` is in bytes/second; ``volume_variance_vT`` is the
    population (1/n) variance of the per-bin byte volumes.
    """

    n: int
    mean_rate_mu: float
    volume_variance_vT: float
    timescale_T: float


def aggregate(trace: PacketSeries, T: float) -> VolumeSeries:
    """Sum packet bytes into half-open bins of width ``T`` seconds.

    The bin origin is the first packet's timestamp; a packet at time
    ``t`` lands in bin ``floor((t - origin)/T)``, so a packet exactly on
    a bin boundary belongs to the later bin.  The quotient carries a
    few-ulp upward guard: decimal timestamps that sit mathematically on a
    boundary often come out one ulp under it in binary, and the half-open
    rule must not flip on that.  Every bin up to the last packet's bin is
    materialised, including interior empty ones.
    """
    if not (T > 0):
        raise DomainError("T must be positive")
    if len(trace) == 0:
        raise EmptyInput("cannot aggregate an empty trace")
    origin = float(trace.timestamps[0])
    q = (trace.timestamps - origin) / T
    guard = 4.0 * np.finfo(np.float64).eps * np.maximum(1.0, q)
    idx = np.floor(q + guard).astype(np.int64)
    volumes = np.bincount(idx, weights=trace.wire_bytes.astype(np.float64))
    return VolumeSeries(
        timescale_T=float(T),
        volumes=volumes,
        origin=origin,
        source_label=trace.source_label,
    )


def volume_stats(vs: VolumeSeries) -> SummaryStats:
    """Mean rate (bytes/s) and population variance of per-bin volumes."""
    n = len(vs)
    if n < 2:
        raise InsufficientData("volume_stats needs at least 2 bins")
    total = float(vs.volumes.sum())
    return SummaryStats(
        n=n,
        mean_rate_mu=total / (n * vs.timescale_T),
        volume_variance_vT=float(vs.volumes.var()),
        timescale_T=vs.timescale_T,
    )


def rates(vs: VolumeSeries) -> np.ndarray:
    """Per-bin data rates in bytes/second."""
    return vs.volumes / vs.timescale_T


def rebin(vs: VolumeSeries, T_target: float) -> VolumeSeries:
    """Re-aggregate to a coarser timescale that is an integer multiple of
    the current one.

    Equivalent to aggregating the underlying packets at ``T_target`` with
    the shared origin: a trailing partial group is kept (zero-padded).
    """
    ratio = T_target / vs.timescale_T
    k = int(round(ratio))
    if k < 1 or abs(ratio - k) > 1e-9 * max(1.0, abs(ratio)):
        raise DomainError(
            f"target timescale {T_target} is not an integer multiple of {vs.timescale_T}"
        )
    if k == 1:
        return vs
    n = len(vs)
    groups = -(-n // k)
    padded = np.zeros(groups * k)
    padded[:n] = vs.volumes
    return VolumeSeries(
        timescale_T=float(T_target),
        volumes=padded.reshape(groups, k).sum(axis=1),
        origin=vs.origin,
        source_label=vs.source_label,
    )
