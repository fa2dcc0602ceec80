"""Readers and writers for the supported on-disk trace formats.

Three formats: classic pcap (all four magics, microsecond and nanosecond
resolution, either byte order), two-column packet CSV, and the binned
volume TSV this package writes.  Readers validate as they go and raise
typed errors instead of crashing on truncated or garbage input.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    EmptyInput,
    MalformedTrace,
    ParseError,
    TruncatedFile,
    UnsupportedFormat,
)
from .formats import atomic_write_text
from .trace import PacketSeries, VolumeSeries

_GLOBAL_HEADER_LEN = 24
_RECORD_HEADER_LEN = 16

#: magic (read little-endian) -> (byte order prefix, fractional divisor)
_MAGICS = {
    0xA1B2C3D4: ("<", 1e6),
    0xD4C3B2A1: (">", 1e6),
    0xA1B23C4D: ("<", 1e9),
    0x4D3CB2A1: (">", 1e9),
}


@dataclass(frozen=True)
class PcapHeaderInfo:
    endianness: str  # "little" | "big"
    ts_resolution: str  # "microsecond" | "nanosecond"
    snaplen: int
    linktype: int


def _parse_global_header(data: bytes) -> tuple[PcapHeaderInfo, str, float]:
    if len(data) < 4:
        raise UnsupportedFormat("file too short to hold a pcap magic")
    (magic,) = struct.unpack("<I", data[:4])
    if magic not in _MAGICS:
        raise UnsupportedFormat(f"unrecognised pcap magic 0x{magic:08x}")
    order, divisor = _MAGICS[magic]
    if len(data) < _GLOBAL_HEADER_LEN:
        raise TruncatedFile("truncated pcap global header", offset=len(data))
    _, _, _, _, snaplen, linktype = struct.unpack(order + "HHiIII", data[4:_GLOBAL_HEADER_LEN])
    info = PcapHeaderInfo(
        endianness="little" if order == "<" else "big",
        ts_resolution="microsecond" if divisor == 1e6 else "nanosecond",
        snaplen=snaplen,
        linktype=linktype,
    )
    return info, order, divisor


def pcap_header_info(path) -> PcapHeaderInfo:
    """Parse just the global header of a capture file."""
    with open(path, "rb") as fh:
        return _parse_global_header(fh.read(_GLOBAL_HEADER_LEN))[0]


def read_pcap(path, reorder_slack: float = 0.0) -> PacketSeries:
    """Read a classic pcap file into a packet series.

    Timestamps come from the record headers (seconds plus the fractional
    field at the file's resolution); byte counts are ``orig_len``, the
    length on the wire, not the possibly snapped capture length.  A
    timestamp regressing by more than ``reorder_slack`` seconds raises
    ``MalformedTrace`` (default 0: strict); smaller regressions are
    clamped to keep the series non-decreasing.
    """
    timestamps: list[float] = []
    wire_bytes: list[int] = []
    with open(path, "rb") as fh:
        info, order, divisor = _parse_global_header(fh.read(_GLOBAL_HEADER_LEN))
        rec_fmt = order + "IIII"
        offset = _GLOBAL_HEADER_LEN
        prev = None
        index = 0
        while True:
            head = fh.read(_RECORD_HEADER_LEN)
            if not head:
                break
            if len(head) < _RECORD_HEADER_LEN:
                raise TruncatedFile(
                    f"truncated record header at byte {offset}", offset=offset
                )
            ts_sec, ts_frac, incl_len, orig_len = struct.unpack(rec_fmt, head)
            payload = fh.read(incl_len)
            if len(payload) < incl_len:
                raise TruncatedFile(
                    f"record at byte {offset} declares {incl_len} captured bytes "
                    f"but only {len(payload)} remain",
                    offset=offset,
                )
            if orig_len < 1:
                raise MalformedTrace(f"record {index} has zero wire length")
            t = ts_sec + ts_frac / divisor
            if prev is not None and t < prev:
                if prev - t > reorder_slack:
                    raise MalformedTrace(
                        f"timestamp regression of {prev - t:.9f}s at record {index}"
                    )
                t = prev
            timestamps.append(t)
            wire_bytes.append(orig_len)
            prev = t
            offset += _RECORD_HEADER_LEN + incl_len
            index += 1
    if not timestamps:
        raise EmptyInput(f"no packets in {path}")
    return PacketSeries(
        timestamps=np.asarray(timestamps),
        wire_bytes=np.asarray(wire_bytes),
        source_label=str(path),
    )


def read_packet_csv(path) -> PacketSeries:
    """Read ``timestamp_seconds,wire_bytes`` lines; '#' starts a comment."""
    timestamps: list[float] = []
    wire_bytes: list[int] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise ParseError(
                    f"line {lineno}: expected 'timestamp,bytes', got {line!r}",
                    line=lineno,
                )
            try:
                t = float(parts[0])
                b = int(parts[1])
            except ValueError:
                raise ParseError(
                    f"line {lineno}: non-numeric field in {line!r}", line=lineno
                ) from None
            if b < 1:
                raise ParseError(
                    f"line {lineno}: wire_bytes must be >= 1, got {b}", line=lineno
                )
            timestamps.append(t)
            wire_bytes.append(b)
    if not timestamps:
        raise EmptyInput(f"no packets in {path}")
    return PacketSeries(
        timestamps=np.asarray(timestamps),
        wire_bytes=np.asarray(wire_bytes),
        source_label=str(path),
    )


def write_volume_tsv(vs: VolumeSeries, path) -> None:
    """Write a volume series: header comments, then one volume per line.

    Floats are printed with 17 significant digits so write/read is the
    identity on the numeric content.  The header stores the timescale in
    milliseconds; the printed value is nudged by an ulp when needed so
    that dividing it back by 1000 reproduces the timescale bit-exactly.
    The file appears atomically.
    """
    ms = vs.timescale_T * 1e3
    if ms / 1e3 != vs.timescale_T:
        for cand in (np.nextafter(ms, 0.0), np.nextafter(ms, np.inf)):
            if cand / 1e3 == vs.timescale_T:
                ms = float(cand)
                break
    lines = [
        f"# timescale_ms={ms:.17g}",
        f"# origin={vs.origin:.17g}",
    ]
    lines.extend(f"{v:.17g}" for v in vs.volumes)
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_volume_tsv(path) -> VolumeSeries:
    """Read a volume series written by :func:`write_volume_tsv`."""
    timescale_ms = None
    origin = 0.0
    volumes: list[float] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("timescale_ms="):
                    try:
                        timescale_ms = float(body.split("=", 1)[1])
                    except ValueError:
                        raise ParseError(
                            f"line {lineno}: bad timescale_ms value", line=lineno
                        ) from None
                elif body.startswith("origin="):
                    try:
                        origin = float(body.split("=", 1)[1])
                    except ValueError:
                        raise ParseError(
                            f"line {lineno}: bad origin value", line=lineno
                        ) from None
                continue
            if timescale_ms is None:
                raise ParseError(
                    "volume data before the '# timescale_ms=' header", line=lineno
                )
            try:
                volumes.append(float(line))
            except ValueError:
                raise ParseError(
                    f"line {lineno}: non-numeric volume {line!r}", line=lineno
                ) from None
    if timescale_ms is None:
        raise ParseError("missing '# timescale_ms=' header line")
    if not volumes:
        raise EmptyInput(f"no volumes in {path}")
    return VolumeSeries(
        timescale_T=timescale_ms / 1e3,
        volumes=np.asarray(volumes),
        origin=origin,
        source_label=str(path),
    )
