"""Traffic-volume distribution fitting and its engineering applications.

The package ingests packet traces (pcap or CSV), aggregates them into
per-interval byte volumes, fits candidate statistical models to those
volumes, selects the best model with goodness-of-fit and likelihood-ratio
tests, and applies the fitted model to link-capacity provisioning and
95th-percentile billing prediction.
"""

from .trace import PacketSeries, SummaryStats, VolumeSeries, aggregate, rates, rebin, volume_stats

__all__ = [
    "PacketSeries",
    "SummaryStats",
    "VolumeSeries",
    "aggregate",
    "rates",
    "rebin",
    "volume_stats",
]

__version__ = "0.1.0"
