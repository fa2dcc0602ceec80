"""Command-line entry point.

Subcommands: ``synth`` generates seeded traces, ``fit`` runs the model
selection pipeline, ``provision`` builds the capacity/validation table,
``bill`` the percentile-billing comparison, ``screen`` just the anomaly
screen, and ``report`` chains fit, provision and bill.  Exit codes: 0 on
success, 1 on bad input or parameters, 2 when a qualitative flag fired
(an inconclusive or anomalous trace, or a flagged screen) so CI can
assert outcomes.

All commands are deterministic: with the same inputs, flags and seed the
output files are byte-identical, whatever ``VOLUMA_THREADS`` says.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import billing as billing_mod
from . import gof, provisioning, synthgen
from .distributions import fit_mle, fit_powerlaw, model_from_dict
from .errors import DomainError, VolumaError
from .formats import fmt, histogram_rows, write_json, write_tsv
from .ingest import read_packet_csv, read_pcap, read_volume_tsv, write_volume_tsv
from .trace import PacketSeries, VolumeSeries, aggregate, rates, rebin

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_FLAGGED = 2

_PCAP_MAGIC_BYTES = {
    bytes.fromhex(h)
    for h in ("d4c3b2a1", "a1b2c3d4", "4d3cb2a1", "a1b23c4d")
}


@dataclass
class RunConfig:
    """Resolved invocation parameters shared by the subcommands."""

    command: str
    inputs: list[str] = field(default_factory=list)
    timescales: list[float] = field(default_factory=lambda: [0.1])
    epsilons: list[float] = field(default_factory=lambda: list(provisioning.DEFAULT_EPSILONS))
    dists: list[str] = field(default_factory=lambda: list(gof.DEFAULT_KINDS))
    bootstrap_reps: int = 1000
    seed: int = 42
    output_format: str = "tsv"
    out_dir: str = "."
    group_duration: float = billing_mod.DEFAULT_GROUP_DURATION
    fit_timescale: float = billing_mod.DEFAULT_FIT_TIMESCALE
    percentile: float = billing_mod.DEFAULT_PERCENTILE
    capacity: Optional[float] = None
    use_rates: bool = False
    normalizer: str = "mean"
    reorder_slack: float = 0.0


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits 2; keep 2 for flags only
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def parse_timescale(text: str) -> float:
    """'5ms', '100ms', '1s', '0.5s' or a bare number of seconds."""
    t = text.strip().lower()
    try:
        if t.endswith("ms"):
            return float(t[:-2]) / 1e3
        if t.endswith("s"):
            return float(t[:-1])
        return float(t)
    except ValueError:
        raise DomainError(f"cannot parse timescale {text!r}") from None


def _parse_params(text: str) -> dict[str, float]:
    out: dict[str, float] = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise DomainError(f"parameter {part!r} is not name=value")
        name, value = part.split("=", 1)
        out[name.strip()] = float(value)
    return out


def _parse_anomaly(text: str, capacity: Optional[float]) -> synthgen.AnomalySpec:
    parts = text.split(":")
    if len(parts) < 2:
        raise DomainError("anomaly must look like kind:fraction, e.g. outage:0.1")
    kind, fraction = parts[0], float(parts[1])
    cap = float(parts[2]) if len(parts) > 2 else capacity
    return synthgen.AnomalySpec(kind=kind, fraction=fraction, capacity=cap)


def load_trace(path, reorder_slack: float = 0.0) -> tuple[str, Union[PacketSeries, VolumeSeries]]:
    """Sniff the file format and load it.

    pcap by magic; otherwise volume TSV when the first line carries the
    timescale header, else packet CSV.
    """
    p = Path(path)
    with open(p, "rb") as fh:
        head = fh.read(4)
    if head in _PCAP_MAGIC_BYTES:
        return p.stem, read_pcap(p, reorder_slack=reorder_slack)
    with open(p, "r", encoding="utf-8", errors="replace") as fh:
        first = fh.readline()
    if first.lstrip().startswith("# timescale_ms="):
        return p.stem, read_volume_tsv(p)
    return p.stem, read_packet_csv(p)


def series_at(trace: Union[PacketSeries, VolumeSeries], T: float) -> VolumeSeries:
    if isinstance(trace, PacketSeries):
        return aggregate(trace, T)
    return rebin(trace, T)


def _load_all(cfg: RunConfig):
    loaded = []
    for path in cfg.inputs:
        loaded.append(load_trace(path, reorder_slack=cfg.reorder_slack))
    return loaded


def _gamma_across_timescales(trace, timescales, kinds):
    """Correlation coefficient per model kind and timescale, plus its
    spread across timescales for kinds with at least two values."""
    gammas: dict[str, dict[str, float]] = {k: {} for k in kinds}
    for T in timescales:
        try:
            samples = series_at(trace, T).volumes
        except VolumaError:
            continue
        for kind in kinds:
            try:
                model = (
                    fit_powerlaw(samples) if kind == "powerlaw" else fit_mle(kind, samples)
                )
                gammas[kind][fmt(T)] = gof.ppcc(samples, model)
            except VolumaError:
                continue
    variation = {
        kind: gof.gamma_variation(list(per_t.values()))
        for kind, per_t in gammas.items()
        if len(per_t) >= 2
    }
    return {k: v for k, v in gammas.items() if v}, variation


def cmd_fit(cfg: RunConfig) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    flagged = False
    try:
        loaded = _load_all(cfg)
    except (VolumaError, OSError) as exc:
        print(f"voluma fit: {exc}", file=sys.stderr)
        return EXIT_ERROR
    base_T = cfg.timescales[0]
    for label, trace in loaded:
        try:
            series = series_at(trace, base_T)
            report = gof.fit_report(
                series,
                kinds=tuple(cfg.dists),
                bootstrap_reps=cfg.bootstrap_reps,
                seed=cfg.seed,
                use_rates=cfg.use_rates,
                capacity=cfg.capacity,
            )
            if len(cfg.timescales) > 1:
                by_t, variation = _gamma_across_timescales(trace, cfg.timescales, cfg.dists)
                report.gamma_by_timescale = by_t
                report.gamma_variation_by_kind = variation
        except VolumaError as exc:
            print(f"voluma fit: {label}: {exc}", file=sys.stderr)
            return EXIT_ERROR
        write_json(out / f"{label}.fit.json", report.to_dict())
        samples = rates(series) if cfg.use_rates else series.volumes
        qq_kind = report.best_model
        if qq_kind == "inconclusive" or report.models[qq_kind].model is None:
            qq_kind = next(
                (k for k in cfg.dists if report.models[k].model is not None), None
            )
        if qq_kind is not None:
            pts = gof.qq_points(samples, report.models[qq_kind].model)
            write_tsv(
                out / f"{label}.qq.tsv",
                [f"theoretical_quantile_{qq_kind}", "order_statistic"],
                pts.tolist(),
            )
        write_tsv(
            out / f"{label}.hist.tsv",
            ["bin_center", "empirical_density"],
            histogram_rows(samples),
        )
        if report.best_model == "inconclusive" or report.anomaly.flagged:
            flagged = True
    return EXIT_FLAGGED if flagged else EXIT_OK


def cmd_provision(cfg: RunConfig) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        loaded = _load_all(cfg)
    except (VolumaError, OSError) as exc:
        print(f"voluma provision: {exc}", file=sys.stderr)
        return EXIT_ERROR
    kinds = [k for k in cfg.dists if k in ("lognormal", "weibull", "gaussian", "meent")]
    if not kinds:
        kinds = list(provisioning.DEFAULT_PROVISIONING_KINDS)
    table = provisioning.provisioning_experiment(
        loaded, kinds=kinds, epsilons=cfg.epsilons, timescales=cfg.timescales
    )
    payload = table.to_dict()
    if cfg.capacity is not None:
        screens = {}
        for label, trace in loaded:
            series = series_at(trace, cfg.timescales[0])
            screens[label] = gof.anomaly_screen(series, cfg.capacity).to_dict()
        payload["anomaly_screen"] = screens
    write_json(out / "provisioning.json", payload)
    write_tsv(
        out / "provisioning.tsv",
        ["dataset", "model", "T_ms", "epsilon", "C_bps", "epsilon_hat", "abs_err"],
        [
            (
                r.dataset,
                r.model_kind,
                r.timescale_T * 1e3,
                r.target_epsilon,
                r.capacity_C,
                r.empirical_epsilon_hat,
                r.abs_error,
            )
            for r in table.rows
        ],
    )
    for err in table.errors:
        print(f"voluma provision: {err}", file=sys.stderr)
    return EXIT_OK


def cmd_bill(cfg: RunConfig) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        loaded = _load_all(cfg)
    except (VolumaError, OSError) as exc:
        print(f"voluma bill: {exc}", file=sys.stderr)
        return EXIT_ERROR
    kinds = [k for k in cfg.dists if k != "powerlaw" and k != "exponential"]
    if not kinds:
        kinds = list(billing_mod.DEFAULT_BILLING_KINDS)
    table = billing_mod.billing_experiment(
        loaded,
        kinds=kinds,
        group_duration=cfg.group_duration,
        fit_timescale=cfg.fit_timescale,
        pct=cfg.percentile,
        normalizer=cfg.normalizer,
    )
    write_json(out / "billing.json", table.to_dict())
    write_tsv(
        out / "billing.tsv",
        ["trace", "actual_bps"] + [f"predicted_{k}_bps" for k in kinds],
        [
            [rec.trace_label, rec.actual_p95]
            + [rec.predicted_p95.get(k) for k in kinds]
            for rec in table.records
        ],
    )
    write_tsv(
        out / "billing_scatter.tsv",
        ["actual_bps", "predicted_bps", "model"],
        table.scatter_rows(),
    )
    for err in table.errors:
        print(f"voluma bill: {err}", file=sys.stderr)
    return EXIT_OK


def cmd_synth(cfg: RunConfig, args) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        model = model_from_dict({"kind": args.dist, **_parse_params(args.params)})
        anomaly = (
            _parse_anomaly(args.anomaly, cfg.capacity) if args.anomaly else None
        )
        spec = synthgen.SynthSpec(
            model=model,
            n_bins=args.bins,
            timescale_T=cfg.timescales[0],
            seed=cfg.seed,
            anomaly=anomaly,
        )
        vs = synthgen.gen_volumes(spec)
        name = args.name or f"synth-{args.dist}-seed{cfg.seed}"
        wrote = []
        if args.pcap:
            # Bytes on the wire are integers: pcap emission rounds the
            # volumes, and a TSV written alongside holds the same rounded
            # series so both ingestion paths agree exactly.
            vs = VolumeSeries(
                timescale_T=vs.timescale_T,
                volumes=np.round(vs.volumes),
                origin=vs.origin,
                source_label=vs.source_label,
            )
            synthgen.write_pcap(vs, out / f"{name}.pcap", args.packet_size)
            wrote.append(f"{name}.pcap")
        if args.tsv or not args.pcap:
            write_volume_tsv(vs, out / f"{name}.tsv")
            wrote.append(f"{name}.tsv")
    except (VolumaError, ValueError, OSError) as exc:
        print(f"voluma synth: {exc}", file=sys.stderr)
        return EXIT_ERROR
    for w in wrote:
        print(str(out / w))
    return EXIT_OK


def cmd_screen(cfg: RunConfig) -> int:
    if cfg.capacity is None:
        print("voluma screen: --capacity is required", file=sys.stderr)
        return EXIT_ERROR
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        loaded = _load_all(cfg)
    except (VolumaError, OSError) as exc:
        print(f"voluma screen: {exc}", file=sys.stderr)
        return EXIT_ERROR
    flagged = False
    for label, trace in loaded:
        try:
            series = series_at(trace, cfg.timescales[0])
            report = gof.anomaly_screen(series, cfg.capacity)
        except VolumaError as exc:
            print(f"voluma screen: {label}: {exc}", file=sys.stderr)
            return EXIT_ERROR
        write_json(out / f"{label}.screen.json", report.to_dict())
        flagged = flagged or report.flagged
    return EXIT_FLAGGED if flagged else EXIT_OK


def cmd_report(cfg: RunConfig) -> int:
    rc_fit = cmd_fit(cfg)
    if rc_fit == EXIT_ERROR:
        return EXIT_ERROR
    rc = cmd_provision(cfg)
    if rc == EXIT_ERROR:
        return EXIT_ERROR
    rc = cmd_bill(cfg)
    if rc == EXIT_ERROR:
        return EXIT_ERROR
    return rc_fit


def build_parser() -> _Parser:
    parser = _Parser(
        prog="voluma",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, inputs=True):
        if inputs:
            p.add_argument("--input", nargs="+", required=True, help="trace files (pcap, packet CSV or volume TSV)")
            p.add_argument("--reorder-slack", type=float, default=0.0,
                           help="tolerated pcap timestamp regression in seconds (default 0: strict)")
        p.add_argument("--timescale", nargs="+", default=["100ms"], help="aggregation timescales, e.g. 5ms 100ms 1s")
        p.add_argument("--seed", type=int, default=42)
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--format", choices=("tsv", "json"), default="tsv", help="primary table format (both are written)")
        p.add_argument("--capacity", type=float, default=None, help="link capacity in bytes/s")

    p_fit = sub.add_parser(
        "fit",
        help="fit models and select the best one",
        description="Per input trace writes <name>.fit.json, <name>.qq.tsv "
        "(theoretical_quantile, order_statistic) and <name>.hist.tsv "
        "(bin_center, empirical_density).  Exit code 2 flags an inconclusive "
        "or anomalous trace.",
    )
    common(p_fit)
    p_fit.add_argument("--dists", default=",".join(gof.DEFAULT_KINDS), help="comma-separated model kinds")
    p_fit.add_argument("--bootstrap-reps", type=int, default=1000)
    p_fit.add_argument("--use-rates", action="store_true", help="fit rates (bytes/s) instead of per-bin volumes")

    p_prov = sub.add_parser(
        "provision",
        help="capacity table against epsilon targets",
        description="Writes provisioning.tsv with columns: dataset, model, T_ms, "
        "epsilon, C_bps, epsilon_hat, abs_err (and provisioning.json).",
    )
    common(p_prov)
    p_prov.add_argument("--dists", default=",".join(provisioning.DEFAULT_PROVISIONING_KINDS))
    p_prov.add_argument("--epsilon", nargs="+", type=float, default=list(provisioning.DEFAULT_EPSILONS))
    p_prov.set_defaults(timescale=["100ms", "500ms", "1s"])

    p_bill = sub.add_parser(
        "bill",
        help="percentile billing comparison",
        description="Writes billing.tsv (trace, actual_bps, predicted_<kind>_bps per "
        "model), billing_scatter.tsv (actual_bps, predicted_bps, model) and "
        "billing.json with per-model NRMSE.",
    )
    common(p_bill)
    p_bill.add_argument("--dists", default=",".join(billing_mod.DEFAULT_BILLING_KINDS))
    p_bill.add_argument("--group", default="10s", help="billing group duration")
    p_bill.add_argument("--fit-timescale", default="100ms")
    p_bill.add_argument("--percentile", type=float, default=95.0)
    p_bill.add_argument("--normalizer", choices=("mean", "range"), default="mean")

    p_synth = sub.add_parser("synth", help="generate a seeded synthetic trace")
    common(p_synth, inputs=False)
    p_synth.add_argument("--dist", required=True, help="model kind to draw from")
    p_synth.add_argument("--params", required=True, help="model parameters, e.g. mu=2,sigma=0.5")
    p_synth.add_argument("--bins", type=int, default=9000)
    p_synth.add_argument("--anomaly", default=None, help="kind:fraction[:capacity]")
    p_synth.add_argument("--tsv", action="store_true", help="write a volume TSV (default)")
    p_synth.add_argument("--pcap", action="store_true", help="write a pcap file")
    p_synth.add_argument("--packet-size", type=int, default=1500)
    p_synth.add_argument("--name", default=None, help="output basename")

    p_screen = sub.add_parser("screen", help="outage/saturation anomaly screen")
    common(p_screen)

    p_report = sub.add_parser("report", help="fit + provision + bill in one run")
    common(p_report)
    p_report.add_argument("--dists", default=",".join(gof.DEFAULT_KINDS))
    p_report.add_argument("--bootstrap-reps", type=int, default=1000)
    p_report.add_argument("--use-rates", action="store_true")
    p_report.add_argument("--epsilon", nargs="+", type=float, default=list(provisioning.DEFAULT_EPSILONS))
    p_report.add_argument("--group", default="10s")
    p_report.add_argument("--fit-timescale", default="100ms")
    p_report.add_argument("--percentile", type=float, default=95.0)
    p_report.add_argument("--normalizer", choices=("mean", "range"), default="mean")

    return parser


def _config_from_args(args) -> RunConfig:
    cfg = RunConfig(command=args.command)
    cfg.inputs = list(getattr(args, "input", []) or [])
    cfg.timescales = [parse_timescale(t) for t in args.timescale]
    cfg.seed = args.seed
    cfg.out_dir = args.out
    cfg.output_format = args.format
    cfg.capacity = args.capacity
    if hasattr(args, "dists"):
        cfg.dists = [d.strip() for d in args.dists.split(",") if d.strip()]
    if hasattr(args, "epsilon"):
        cfg.epsilons = list(args.epsilon)
    if hasattr(args, "bootstrap_reps"):
        cfg.bootstrap_reps = args.bootstrap_reps
    if hasattr(args, "use_rates"):
        cfg.use_rates = args.use_rates
    if hasattr(args, "group"):
        cfg.group_duration = parse_timescale(args.group)
    if hasattr(args, "fit_timescale"):
        cfg.fit_timescale = parse_timescale(args.fit_timescale)
    if hasattr(args, "percentile"):
        cfg.percentile = args.percentile
    if hasattr(args, "normalizer"):
        cfg.normalizer = args.normalizer
    if hasattr(args, "reorder_slack"):
        cfg.reorder_slack = args.reorder_slack
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config_from_args(args)
    except (VolumaError, ValueError) as exc:
        print(f"voluma: {exc}", file=sys.stderr)
        return EXIT_ERROR
    try:
        if args.command == "fit":
            return cmd_fit(cfg)
        if args.command == "provision":
            return cmd_provision(cfg)
        if args.command == "bill":
            return cmd_bill(cfg)
        if args.command == "synth":
            return cmd_synth(cfg, args)
        if args.command == "screen":
            return cmd_screen(cfg)
        if args.command == "report":
            return cmd_report(cfg)
    except (VolumaError, OSError) as exc:
        print(f"voluma {args.command}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
