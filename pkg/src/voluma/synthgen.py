"""Seeded synthetic trace generation and anomaly injection.

Synthetic series are the verification oracle for the fitting,
provisioning and billing pipelines: volumes are i.i.d. draws from a
chosen model, reproducible from the seed alone.  Anomaly injection
plants a contiguous outage (zeros) or saturation (pinned at capacity)
block.  ``write_pcap`` lays the volumes out as packets so the ingest
path can be validated round-trip.
"""

from __future__ import annotations

import logging
import os
import struct
import tempfile
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._rng import derive_seed, generator
from .distributions import DistributionModel, Gaussian, sample
from .errors import DomainError
from .trace import VolumeSeries

log = logging.getLogger(__name__)

_ANOMALY_KINDS = ("outage", "saturation")
_PLACEMENT_STREAM = 0xA40


@dataclass(frozen=True)
class AnomalySpec:
    kind: str
    fraction: float
    capacity: Optional[float] = None

    def __post_init__(self):
        if self.kind not in _ANOMALY_KINDS:
            raise DomainError(f"anomaly kind must be one of {_ANOMALY_KINDS}")
        if not (0.0 < self.fraction < 1.0):
            raise DomainError("anomaly fraction must lie strictly inside (0, 1)")
        if self.kind == "saturation" and not (self.capacity and self.capacity > 0):
            raise DomainError("saturation anomaly needs a positive capacity")


@dataclass(frozen=True)
class SynthSpec:
    model: DistributionModel
    n_bins: int
    timescale_T: float
    seed: int
    anomaly: Optional[AnomalySpec] = None

    def __post_init__(self):
        if self.n_bins < 1:
            raise DomainError("n_bins must be >= 1")
        if not (self.timescale_T > 0):
            raise DomainError("timescale_T must be positive")


def gen_volumes(spec: SynthSpec) -> VolumeSeries:
    """Draw i.i.d. per-bin byte volumes from the spec's model.

    Deterministic for a given seed.  Gaussian specs can produce negative
    draws; volumes are physically non-negative, so those are clamped to
    zero and the clamp count is reported through the module logger: it
    quantifies how badly a Gaussian model violates non-negativity.
    """
    values = sample(spec.model, spec.n_bins, spec.seed)
    if isinstance(spec.model, Gaussian):
        clamped = int(np.sum(values < 0.0))
        if clamped:
            log.warning(
                "clamped %d negative Gaussian draw(s) to zero (spec seed %d)",
                clamped,
                spec.seed,
            )
            values = np.maximum(values, 0.0)
    vs = VolumeSeries(
        timescale_T=spec.timescale_T,
        volumes=values,
        origin=0.0,
        source_label=f"synth-{spec.model.kind}-seed{spec.seed}",
    )
    if spec.anomaly is not None:
        vs = inject_anomaly(vs, spec.anomaly, seed=derive_seed(spec.seed, _PLACEMENT_STREAM))
    return vs


def inject_anomaly(vs: VolumeSeries, anomaly: AnomalySpec, seed: int = 0) -> VolumeSeries:
    """Overwrite a contiguous, seeded-placement block of bins.

    ``round(fraction * n)`` bins are set to zero (outage) or to
    ``capacity * T`` (saturation); sustained periods, not scattered bins.
    """
    n = len(vs)
    block = int(round(anomaly.fraction * n))
    block = min(max(block, 0), n)
    volumes = np.array(vs.volumes)
    if block:
        start = int(generator(seed).integers(0, n - block + 1))
        if anomaly.kind == "outage":
            volumes[start : start + block] = 0.0
        else:
            volumes[start : start + block] = anomaly.capacity * vs.timescale_T
    return VolumeSeries(
        timescale_T=vs.timescale_T,
        volumes=volumes,
        origin=vs.origin,
        source_label=f"{vs.source_label}+{anomaly.kind}{anomaly.fraction:g}",
    )


_PCAP_MAGIC_LE_US = 0xA1B2C3D4
_LINKTYPE_ETHERNET = 1


def _bin_packet_sizes(volume: int, packet_size: int) -> list[int]:
    full, rem = divmod(volume, packet_size)
    sizes = [packet_size] * full
    if rem:
        sizes.append(rem)
    return sizes


def write_pcap(vs: VolumeSeries, path, packet_size: int) -> int:
    """Emit the series as a classic little-endian microsecond pcap.

    Each bin becomes ``floor(volume/packet_size)`` packets of
    ``packet_size`` bytes plus one remainder packet, spread uniformly
    inside the bin.  Records carry the byte count in ``orig_len`` with no
    captured payload.  Volumes must be integers and the timescale must
    sit on the microsecond grid; the first emitted packet is pinned to
    its exact bin boundary so that reading the file back and aggregating
    at the same timescale reproduces the volumes bit-exactly.  Bins
    before the first non-empty bin or after the last one cannot survive
    the round trip: with no packets there is no time reference.
    """
    if packet_size < 1:
        raise DomainError("packet_size must be >= 1")
    t_us_f = vs.timescale_T * 1e6
    t_us = int(round(t_us_f))
    if t_us < 1 or abs(t_us_f - t_us) > 1e-6 * max(1.0, t_us_f):
        raise DomainError(
            "timescale must be a whole number of microseconds for pcap emission"
        )
    vols = vs.volumes
    rounded = np.round(vols)
    if np.any(np.abs(vols - rounded) > 1e-9):
        raise DomainError("write_pcap requires integer byte volumes")
    origin_us = int(round(vs.origin * 1e6))
    if origin_us < 0:
        raise DomainError("pcap emission needs a non-negative origin timestamp")

    header = struct.pack(
        "<IHHiIII", _PCAP_MAGIC_LE_US, 2, 4, 0, 0, 65535, _LINKTYPE_ETHERNET
    )
    count = 0
    first_emitted = False
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".voluma-", suffix=".pcap.tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(header)
            for i, vol in enumerate(rounded.astype(np.int64)):
                if vol <= 0:
                    continue
                sizes = _bin_packet_sizes(int(vol), packet_size)
                cnt = len(sizes)
                bin_start = origin_us + i * t_us
                for j, size in enumerate(sizes):
                    if not first_emitted:
                        # Anchor the stream: the reader's bin origin is the
                        # first packet, so it must sit exactly on its bin edge.
                        off = 0
                        first_emitted = True
                    else:
                        off = (2 * j + 1) * t_us // (2 * cnt)
                        off = min(max(off, 1), t_us - 1)
                    ts = bin_start + off
                    sec, usec = divmod(ts, 1_000_000)
                    fh.write(struct.pack("<IIII", sec, usec, 0, size))
                    count += 1
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return count
