import json
import os
from pathlib import Path

import numpy as np
import pytest

from voluma.cli import main, parse_timescale
from voluma.errors import DomainError


def run(*argv):
    return main(list(argv))


def read_bytes_map(directory):
    return {
        p.name: p.read_bytes() for p in sorted(Path(directory).iterdir()) if p.is_file()
    }


class TestParseTimescale:
    @pytest.mark.parametrize(
        ("text", "value"),
        [("5ms", 0.005), ("100ms", 0.1), ("1s", 1.0), ("0.5s", 0.5), ("0.25", 0.25), ("5s", 5.0)],
    )
    def test_values(self, text, value):
        assert parse_timescale(text) == pytest.approx(value)

    def test_garbage(self):
        with pytest.raises(DomainError):
            parse_timescale("fast")


@pytest.fixture()
def ln_trace(tmp_path):
    out = tmp_path / "data"
    rc = run(
        "synth", "--dist", "lognormal", "--params", "mu=11,sigma=0.5",
        "--bins", "9000", "--timescale", "100ms", "--seed", "7",
        "--out", str(out), "--name", "ln",
    )
    assert rc == 0
    return out / "ln.tsv"


class TestSynth:
    def test_same_seed_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            rc = run(
                "synth", "--dist", "lognormal", "--params", "mu=2,sigma=0.5",
                "--bins", "500", "--timescale", "100ms", "--seed", "3",
                "--out", str(out), "--name", "t", "--tsv", "--pcap",
            )
            assert rc == 0
        assert read_bytes_map(a) == read_bytes_map(b)

    def test_bad_params_exit_one(self, tmp_path):
        rc = run(
            "synth", "--dist", "lognormal", "--params", "mu=2,sigma=-1",
            "--out", str(tmp_path),
        )
        assert rc == 1

    def test_pcap_and_tsv_agree_through_fit(self, tmp_path):
        # synth --tsv --pcap writes the same (integer) series both ways;
        # fitting either file must produce identical results.
        out = tmp_path / "o"
        rc = run(
            "synth", "--dist", "lognormal", "--params", "mu=11,sigma=0.5",
            "--bins", "3000", "--timescale", "100ms", "--seed", "5",
            "--out", str(out), "--name", "t", "--tsv", "--pcap", "--packet-size", "1200",
        )
        assert rc == 0
        fit_a, fit_b = tmp_path / "fa", tmp_path / "fb"
        rc1 = run("fit", "--input", str(out / "t.pcap"), "--timescale", "100ms",
                  "--bootstrap-reps", "100", "--seed", "5", "--out", str(fit_a))
        rc2 = run("fit", "--input", str(out / "t.tsv"), "--timescale", "100ms",
                  "--bootstrap-reps", "100", "--seed", "5", "--out", str(fit_b))
        assert rc1 == rc2 == 0
        a = json.loads((fit_a / "t.fit.json").read_text())
        b = json.loads((fit_b / "t.fit.json").read_text())
        for key in ("models", "bootstrap_p", "llr_vs_powerlaw", "best_model", "n_samples"):
            assert a[key] == b[key]


class TestFit:
    def test_lognormal_selected_exit_zero(self, ln_trace, tmp_path):
        out = tmp_path / "fit"
        rc = run("fit", "--input", str(ln_trace), "--timescale", "100ms",
                 "--bootstrap-reps", "120", "--seed", "42", "--out", str(out))
        assert rc == 0
        report = json.loads((out / "ln.fit.json").read_text())
        assert report["best_model"] == "lognormal"
        assert report["llr_vs_powerlaw"]["lognormal"]["R_normalized"] < 0
        assert report["llr_vs_powerlaw"]["lognormal"]["p_value"] < 0.1
        assert (out / "ln.qq.tsv").exists()
        assert (out / "ln.hist.tsv").exists()

    def test_anomalous_trace_exit_two(self, tmp_path):
        out = tmp_path / "data"
        rc = run(
            "synth", "--dist", "lognormal", "--params", "mu=11,sigma=0.5",
            "--bins", "4000", "--timescale", "100ms", "--seed", "9",
            "--anomaly", "outage:0.1", "--out", str(out), "--name", "bad",
        )
        assert rc == 0
        rc = run("fit", "--input", str(out / "bad.tsv"), "--timescale", "100ms",
                 "--bootstrap-reps", "100", "--seed", "9", "--out", str(tmp_path / "f"))
        assert rc == 2

    def test_single_dist_report_shape(self, ln_trace, tmp_path):
        out = tmp_path / "g"
        rc = run("fit", "--input", str(ln_trace), "--timescale", "100ms",
                 "--dists", "gaussian", "--bootstrap-reps", "100",
                 "--seed", "1", "--out", str(out))
        assert rc == 2  # no power-law anchor: inconclusive by construction
        report = json.loads((out / "ln.fit.json").read_text())
        assert list(report["models"]) == ["gaussian"]

    def test_multi_timescale_gamma(self, ln_trace, tmp_path):
        out = tmp_path / "h"
        rc = run("fit", "--input", str(ln_trace), "--timescale", "100ms", "500ms", "1s",
                 "--bootstrap-reps", "100", "--seed", "2", "--out", str(out))
        assert rc == 0
        report = json.loads((out / "ln.fit.json").read_text())
        byt = report["gamma_by_timescale"]["lognormal"]
        assert len(byt) == 3
        assert report["gamma_variation"]["lognormal"] >= 0

    def test_unreadable_input_exit_one(self, tmp_path):
        rc = run("fit", "--input", str(tmp_path / "missing.tsv"), "--out", str(tmp_path))
        assert rc == 1

    def test_use_rates_scales_parameters(self, ln_trace, tmp_path):
        out_v, out_r = tmp_path / "v", tmp_path / "r"
        for flag, out in ((False, out_v), (True, out_r)):
            argv = ["fit", "--input", str(ln_trace), "--timescale", "100ms",
                    "--bootstrap-reps", "100", "--seed", "4", "--out", str(out)]
            if flag:
                argv.append("--use-rates")
            assert run(*argv) == 0
        mu_v = json.loads((out_v / "ln.fit.json").read_text())["models"]["lognormal"]["params"]["mu"]
        mu_r = json.loads((out_r / "ln.fit.json").read_text())["models"]["lognormal"]["params"]["mu"]
        # rates = volumes / 0.1, so the log-mean shifts by ln(10)
        assert mu_r == pytest.approx(mu_v + np.log(10.0), abs=1e-9)


class TestProvision:
    def test_default_grid(self, ln_trace, tmp_path):
        out = tmp_path / "prov"
        rc = run("provision", "--input", str(ln_trace), "--out", str(out), "--seed", "1")
        assert rc == 0
        table = json.loads((out / "provisioning.json").read_text())
        rows = table["rows"]
        eps = sorted({r["epsilon"] for r in rows})
        ts = sorted({r["T_ms"] for r in rows})
        assert eps == [0.01, 0.05, 0.1, 0.5]
        assert ts == [100.0, 500.0, 1000.0]
        assert len(rows) == 3 * 4 * 3
        tsv = (out / "provisioning.tsv").read_text().splitlines()
        assert tsv[0].startswith("# dataset\tmodel\tT_ms")
        assert len(tsv) == 1 + len(rows)

    def test_single_cell(self, ln_trace, tmp_path):
        out = tmp_path / "prov1"
        rc = run("provision", "--input", str(ln_trace), "--dists", "lognormal",
                 "--epsilon", "0.05", "--timescale", "100ms", "--out", str(out))
        assert rc == 0
        rows = json.loads((out / "provisioning.json").read_text())["rows"]
        assert len(rows) == 1

    def test_capacity_adds_screen(self, ln_trace, tmp_path):
        out = tmp_path / "prov2"
        rc = run("provision", "--input", str(ln_trace), "--dists", "lognormal",
                 "--epsilon", "0.05", "--timescale", "100ms",
                 "--capacity", "1e7", "--out", str(out))
        assert rc == 0
        payload = json.loads((out / "provisioning.json").read_text())
        assert "anomaly_screen" in payload
        assert "ln" in payload["anomaly_screen"]


class TestBill:
    def test_billing_outputs(self, ln_trace, tmp_path):
        out = tmp_path / "bill"
        rc = run("bill", "--input", str(ln_trace), "--group", "10s",
                 "--fit-timescale", "100ms", "--out", str(out))
        assert rc == 0
        payload = json.loads((out / "billing.json").read_text())
        assert len(payload["records"]) == 1
        rec = payload["records"][0]
        assert rec["actual"] > 0
        assert set(rec["predicted"]) == {"lognormal", "weibull", "gaussian"}
        scatter = (out / "billing_scatter.tsv").read_text().splitlines()
        assert len(scatter) == 1 + 3

    def test_median_percentile(self, ln_trace, tmp_path):
        out = tmp_path / "bill50"
        rc = run("bill", "--input", str(ln_trace), "--group", "10s",
                 "--percentile", "50", "--out", str(out))
        assert rc == 0


class TestScreen:
    def test_flagged_exit_two(self, tmp_path):
        data = tmp_path / "d"
        run("synth", "--dist", "lognormal", "--params", "mu=11,sigma=0.5",
            "--bins", "2000", "--timescale", "100ms", "--seed", "3",
            "--anomaly", "outage:0.2", "--out", str(data), "--name", "bad")
        rc = run("screen", "--input", str(data / "bad.tsv"),
                 "--capacity", "1e7", "--out", str(tmp_path / "s"))
        assert rc == 2
        payload = json.loads((tmp_path / "s" / "bad.screen.json").read_text())
        assert payload["flagged"] is True

    def test_requires_capacity(self, ln_trace, tmp_path):
        rc = run("screen", "--input", str(ln_trace), "--out", str(tmp_path))
        assert rc == 1


class TestDeterminism:
    def test_fit_byte_identical_across_thread_counts(self, ln_trace, tmp_path):
        outs = []
        for name, threads in (("w1", "1"), ("w2", "2"), ("w4", "4")):
            out = tmp_path / name
            os.environ["VOLUMA_THREADS"] = threads
            try:
                rc = run("fit", "--input", str(ln_trace), "--timescale", "100ms",
                         "--bootstrap-reps", "100", "--seed", "11", "--out", str(out))
            finally:
                os.environ.pop("VOLUMA_THREADS", None)
            assert rc == 0
            outs.append(read_bytes_map(out))
        assert outs[0] == outs[1] == outs[2]

    def test_provision_byte_identical_repeat(self, ln_trace, tmp_path):
        maps = []
        for name in ("p1", "p2"):
            out = tmp_path / name
            rc = run("provision", "--input", str(ln_trace), "--dists", "lognormal,meent",
                     "--epsilon", "0.1", "0.01", "--timescale", "100ms", "--out", str(out))
            assert rc == 0
            maps.append(read_bytes_map(out))
        assert maps[0] == maps[1]


class TestReport:
    def test_chained_outputs(self, ln_trace, tmp_path):
        out = tmp_path / "rep"
        rc = run("report", "--input", str(ln_trace), "--bootstrap-reps", "100",
                 "--seed", "13", "--out", str(out))
        assert rc == 0
        for name in ("ln.fit.json", "provisioning.json", "billing.json"):
            assert (out / name).exists()
