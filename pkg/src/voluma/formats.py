"""Plot-data and table emission: gnuplot-ready TSV and JSON files.

All numeric output uses full round-trip float formatting and files are
written atomically (temp file plus rename), so identical runs produce
byte-identical artifacts.
"""

from __future__ import annotations

import json
import os
import tempfile
from typing import Iterable, Sequence

import numpy as np


def fmt(value) -> str:
    """Full round-trip text for a number; plain str for anything else."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def atomic_write_text(path, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".voluma-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, payload) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_tsv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    lines = ["# " + "\t".join(header)]
    for row in rows:
        lines.append("\t".join(fmt(v) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def histogram_rows(samples, n_bins: int | None = None) -> list[tuple[float, float]]:
    """(bin center, empirical density) pairs for a PDF histogram."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if n_bins is None:
        n_bins = int(min(100, max(10, round(np.sqrt(x.size)))))
    lo, hi = float(x.min()), float(x.max())
    if hi <= lo:
        return [(lo, 0.0)]
    counts, edges = np.histogram(x, bins=n_bins, range=(lo, hi))
    width = edges[1] - edges[0]
    centers = 0.5 * (edges[:-1] + edges[1:])
    density = counts / (x.size * width)
    return list(zip(centers.tolist(), density.tolist()))
