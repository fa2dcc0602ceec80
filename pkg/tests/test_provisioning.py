import math

import numpy as np
import pytest

from voluma.distributions import Gaussian, LogNormal, Weibull, fit_mle
from voluma.errors import DomainError
from voluma.provisioning import (
    capacity_meent,
    capacity_quantile,
    empirical_epsilon,
    provisioning_experiment,
    safety_margin,
)
from voluma.synthgen import SynthSpec, gen_volumes
from voluma.trace import SummaryStats, VolumeSeries, volume_stats


def stats(mu=100.0, T=1.0, vT=25.0, n=100):
    return SummaryStats(n=n, mean_rate_mu=mu, volume_variance_vT=vT, timescale_T=T)


class TestMeent:
    def test_direct_evaluation(self):
        C1 = capacity_meent(stats(mu=100.0, T=1.0, vT=25.0), epsilon=0.01)
        assert C1 == pytest.approx(100.0 + math.sqrt(-2.0 * math.log(0.01) * 25.0), rel=1e-12)

    def test_epsilon_to_one_limit(self):
        C1 = capacity_meent(stats(), epsilon=1 - 1e-15)
        assert C1 == pytest.approx(100.0, rel=1e-6)

    def test_zero_variance(self):
        assert capacity_meent(stats(vT=0.0), epsilon=0.3) == 100.0

    def test_epsilon_domain(self):
        for eps in (0.0, 1.0, -0.5, 2.0):
            with pytest.raises(DomainError):
                capacity_meent(stats(), eps)


class TestSafetyMargin:
    def test_ratio_forty_percent(self):
        # Tightening epsilon from 1e-2 to 1e-4 scales the margin by sqrt(2).
        for s in (stats(), stats(mu=5.0, T=0.25, vT=123.0)):
            ratio = safety_margin(s, 1e-4) / safety_margin(s, 1e-2)
            assert ratio == pytest.approx(math.sqrt(2.0), abs=1e-9)

    def test_unit_margin_epsilon(self):
        s = stats(vT=49.0, T=2.0)
        assert safety_margin(s, math.exp(-0.5)) == pytest.approx(7.0 / 2.0, rel=1e-12)

    def test_additive_identity_exact(self):
        s = stats(mu=77.0, T=0.5, vT=300.0)
        for eps in (0.5, 0.1, 0.01):
            assert capacity_meent(s, eps) == s.mean_rate_mu + safety_margin(s, eps)


class TestCapacityQuantile:
    def test_lognormal_median(self):
        assert capacity_quantile(LogNormal(3.0, 1.0), 0.5) == pytest.approx(
            math.exp(3.0), rel=1e-12
        )

    def test_lognormal_p95(self):
        assert capacity_quantile(LogNormal(0.0, 1.0), 0.05) == pytest.approx(
            math.exp(1.6448536269514722), rel=1e-9
        )

    def test_weibull_closed_form(self):
        assert capacity_quantile(Weibull(1.0, 1.0), 0.01) == pytest.approx(
            math.log(100.0), rel=1e-12
        )


class TestEmpiricalEpsilon:
    def test_direct_count(self):
        vs = VolumeSeries(1.0, [1.0, 2.0, 3.0, 10.0])
        assert empirical_epsilon(vs, capacity=5.0) == 0.25

    def test_above_max(self):
        vs = VolumeSeries(1.0, [1.0, 2.0])
        assert empirical_epsilon(vs, capacity=100.0) == 0.0

    def test_tie_counts_as_exceedance(self):
        vs = VolumeSeries(1.0, [5.0, 5.0])
        assert empirical_epsilon(vs, capacity=5.0) == 1.0

    def test_monotone_in_capacity(self):
        vs = gen_volumes(SynthSpec(LogNormal(5.0, 0.6), 2000, 0.1, seed=3))
        caps = np.linspace(1.0, 3.0, 20) * float(vs.volumes.mean() / vs.timescale_T)
        eh = [empirical_epsilon(vs, c) for c in caps]
        assert all(a >= b for a, b in zip(eh, eh[1:]))


class TestStrictMonotoneInEpsilon:
    def test_capacities_decrease_in_epsilon(self):
        s = stats()
        m = LogNormal(2.0, 0.5)
        eps = [0.01, 0.05, 0.1, 0.5]
        meents = [capacity_meent(s, e) for e in eps]
        quants = [capacity_quantile(m, e) for e in eps]
        assert all(a > b for a, b in zip(meents, meents[1:]))
        assert all(a > b for a, b in zip(quants, quants[1:]))


class TestConsistency:
    def test_epsilon_hat_tracks_target(self):
        # Data sampled from the fitted family: the model quantile capacity
        # must reproduce the target within binomial error.
        n = 10_000
        vs = gen_volumes(SynthSpec(LogNormal(2.0, 0.5), n, 0.1, seed=17))
        rates_arr = vs.volumes / vs.timescale_T
        model = fit_mle("lognormal", rates_arr)
        for eps in (0.5, 0.1, 0.05, 0.01):
            C = capacity_quantile(model, eps)
            eh = empirical_epsilon(vs, C)
            assert abs(eh - eps) <= 3.0 * math.sqrt(eps * (1 - eps) / n)

    def test_gaussian_agreement(self):
        # Gaussian rate data in the aggregated-link regime (small relative
        # fluctuation): the dimensioning formula and the Gaussian quantile
        # approximate the same tail within 2% for eps <= 0.1.
        n = 20_000
        vs = gen_volumes(SynthSpec(Gaussian(1000.0, 20.0), n, 0.5, seed=23))
        s = volume_stats(vs)
        model = fit_mle("gaussian", vs.volumes / vs.timescale_T)
        for eps in (0.1, 0.05, 0.01):
            c_meent = capacity_meent(s, eps)
            c_quant = capacity_quantile(model, eps)
            assert abs(c_meent - c_quant) / c_quant < 0.02


class TestExperiment:
    def test_single_cell_shape(self):
        vs = gen_volumes(SynthSpec(LogNormal(5.0, 0.5), 3000, 0.1, seed=31))
        table = provisioning_experiment(
            [("t0", vs)], kinds=("lognormal",), epsilons=(0.05,), timescales=(0.1,)
        )
        assert len(table.rows) == 1
        assert table.rows[0].model_kind == "lognormal"
        assert not table.errors

    def test_grid_shape(self):
        vs = gen_volumes(SynthSpec(LogNormal(5.0, 0.5), 6000, 0.1, seed=32))
        kinds = ("lognormal", "weibull", "meent")
        eps = (0.5, 0.1, 0.05, 0.01)
        ts = (0.1, 0.5, 1.0)
        table = provisioning_experiment([("t0", vs)], kinds, eps, ts)
        assert len(table.rows) == len(kinds) * len(eps) * len(ts)

    def test_meent_underprovisions_on_lognormal(self):
        vs = gen_volumes(SynthSpec(LogNormal(2.0, 0.5545), 10_000, 0.1, seed=33))
        table = provisioning_experiment(
            [("t0", vs)], kinds=("lognormal", "meent"), epsilons=(0.01,), timescales=(0.1,)
        )
        by_kind = {r.model_kind: r for r in table.rows}
        assert by_kind["meent"].empirical_epsilon_hat > 0.01
        assert by_kind["meent"].empirical_epsilon_hat > by_kind["lognormal"].empirical_epsilon_hat

    def test_summary_over_traces(self):
        traces = [
            (f"t{i}", gen_volumes(SynthSpec(LogNormal(5.0, 0.5), 2000, 0.1, seed=50 + i)))
            for i in range(3)
        ]
        table = provisioning_experiment(traces, ("lognormal",), (0.1,), (0.1,))
        assert len(table.rows) == 3
        assert len(table.summary) == 1
        cell = table.summary[0]
        assert cell["n_traces"] == 3
        assert 0.0 <= cell["avg_epsilon_hat"] <= 1.0

    def test_cell_errors_nonfatal(self):
        vs = VolumeSeries(0.1, np.full(100, 7.0))  # constant: model fits fail
        table = provisioning_experiment(
            [("t0", vs)], kinds=("lognormal", "meent"), epsilons=(0.1,), timescales=(0.1,)
        )
        kinds = [r.model_kind for r in table.rows]
        assert "meent" in kinds
        assert "lognormal" not in kinds
        assert any("lognormal" in e for e in table.errors)
