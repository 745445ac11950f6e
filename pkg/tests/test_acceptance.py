"""Acceptance checks, one test (or group of tests) per criterion.

Each check records a PASS/FAIL line that is repeated in the terminal summary.
"""

import time
from dataclasses import replace

import numpy as np
import pytest

from quadcorr import accidentals as ac
from quadcorr import coincidence as co
from quadcorr import gaussian_oracle as go
from quadcorr import pipeline as pl
from quadcorr import rates
from quadcorr import simulator as sm

from oracles import (brute_pairs, brute_quads, brute_triplets, brute_window_counts_dense,
                     random_stream)


def within(value, target, rel):
    return abs(value - target) <= rel * abs(target)


# --- 1: streaming search equals exhaustive scans ------------------------------------------

def test_c1_brute_force_equivalence(criterion):
    rng = np.random.default_rng(1)
    d = co.DEFAULT_MAX_DELAY
    t0 = time.perf_counter()
    mismatches = 0
    for _ in range(100):
        n = int(rng.integers(1, 501))
        s = random_stream(rng, n, span=int(rng.integers(200, 4000)))
        ch = {k: s.channel(k).tolist() for k in (1, 2, 3, 4)}
        for i, j in pl.PAIR_HISTOGRAMS:
            p = co.find_pairs(s, i, j, d)
            mismatches += sorted(zip(p.t_i.tolist(), p.t_j.tolist())) != brute_pairs(ch[i], ch[j], -d, d)
        for t in co.heralded_triplets(s, d):
            a, b, c = t.channels
            mismatches += sorted(map(tuple, t.times.tolist())) != brute_triplets(ch[a], ch[b], ch[c], d)
        q = co.search_quadruplets(s, d)
        mismatches += sorted(map(tuple, q.times.tolist())) != brute_quads(*(ch[k] for k in (1, 2, 3, 4)), d)
        mismatches += co.window_counts(s, co.DEFAULT_TC).counts != brute_window_counts_dense(s, co.DEFAULT_TC)
    elapsed = time.perf_counter() - t0
    ok = criterion(1, mismatches == 0 and elapsed < 60,
                   f"{mismatches} mismatching streams of 100, {elapsed:.1f} s")
    assert ok


# --- 2: closed-form identities --------------------------------------------------------------

def test_c2_oracle_identities(criterion):
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(10_000):
        m = go.CorrelationModel(R0=rng.uniform(0.5, 5), C0=rng.uniform(0.1, 10),
                                tau_c=rng.uniform(1, 30), tau_0=rng.uniform(-5, 15),
                                tau_a=rng.uniform(1, 30))
        t3 = m.tau_0 + rng.uniform(-3, 3) * m.tau_c
        t4 = t3 + rng.uniform(-3, 3) * min(m.tau_c, m.tau_a)
        lhs = go.G3_rate(m, t3, t4) / m.R0 ** 3
        rhs = go.g3_reduced(go.g2_cross(m, t3), go.g2_cross(m, t4), go.g2_auto(m, t3 - t4, "a"))
        worst = max(worst, abs(lhs - rhs) / abs(rhs))
    peak = go.g3_reduced(5, 5, 2)
    bound_err = 0.0
    for g in (2, 5, 10, 100):
        m = go.CorrelationModel.from_g2_peak(g, tau_c=16.0, tau_0=8.0)
        axis = np.arange(-40.0, 56.0, 0.25)
        sup = float((go.G3_rate(m, axis[:, None], axis[None, :]) / m.R0 ** 3).max())
        bound_err = max(bound_err, abs(sup - (4 * g - 2)) / (4 * g - 2))
    ok = criterion(2, worst < 1e-10 and peak == pytest.approx(18.0, abs=1e-12) and bound_err < 1e-12,
                   f"max rel err {worst:.2e}, g3(5,5,2) = {peak:g}, sup bound rel err {bound_err:.1e}")
    assert ok


# --- 3: 17-term fourth order vs Monte Carlo ---------------------------------------------------

def test_c3_G4_vs_monte_carlo(criterion):
    m = go.CorrelationModel(R0=1.0, C0=0.9, tau_c=16.0, tau_0=8.0)
    tuples = [(0.0, 0.0, 8.0, 8.0), (0.0, 3.0, 8.0, 15.0), (0.0, -6.0, 12.0, 2.0),
              (0.0, 20.0, 30.0, 5.0), (0.0, 1.0, -4.0, 40.0)]
    t0 = time.perf_counter()
    errs = []
    for k, ts in enumerate(tuples):
        mc, _ = go.mc_moment(m, ts, samples=10_000_000, seed=100 + k)
        errs.append(abs(mc - go.G4_rate(m, *ts)) / go.G4_rate(m, *ts))
    elapsed = time.perf_counter() - t0
    ok = criterion(3, max(errs) < 0.02 and elapsed < 120,
                   f"max rel err {max(errs):.4f} over 5 tuples, {elapsed:.1f} s")
    assert ok


# --- 4: factor of two ------------------------------------------------------------------------

def test_c4_factor_of_two(criterion):
    sq = go.four_photon_ratio_squeezed(1e-3)
    po = go.four_photon_ratio_poisson(1e-3)
    ok = criterion(4, abs(sq - 1) < 0.005 and abs(po - 0.5) / 0.5 < 0.005
                   and abs(sq / po - 2.0) <= 0.01,
                   f"P4/P2^2 = {sq:.6f}, P4'/P2'^2 = {po:.6f}, ratio = {sq / po:.4f}")
    assert ok


# --- 5 and 10: reference-scale closed loop -------------------------------------------------------

class _Timed:
    """Iterator wrapper that accumulates the time spent producing items."""

    def __init__(self, it):
        self.it, self.seconds = iter(it), 0.0

    def __iter__(self):
        return self

    def __next__(self):
        t0 = time.perf_counter()
        try:
            return next(self.it)
        finally:
            self.seconds += time.perf_counter() - t0


@pytest.fixture(scope="module")
def ref_run():
    cfg = sm.reference_config()
    source = _Timed(sm.iter_simulate(cfg))
    t0 = time.perf_counter()
    res = pl.analyze(source, pl.AnalysisSettings(want=frozenset({"window", "g4"})), threads=1)
    total = time.perf_counter() - t0
    corrected = ac.correct_window_counts(res.window)
    inferred = rates.infer_generation_rates(corrected.corrected,
                                            rates.EfficiencySet.from_totals(cfg.eta))
    return dict(cfg=cfg, res=res, corrected=corrected, inferred=inferred, total=total,
                analysis=total - source.seconds)


def test_c5_singles_at_reference_scale(ref_run, criterion):
    s = ref_run["res"].singles_rates
    stokes, anti = s[1] + s[2], s[3] + s[4]
    ok = criterion(5, 0.95e6 <= stokes <= 1.15e6 and 0.95e6 <= anti <= 1.15e6,
                   f"singles {stokes:.3g}/{anti:.3g} cps")
    assert ok


def test_c5_pairs(ref_run, criterion):
    c_p = ref_run["corrected"].c_p
    assert criterion(5, within(c_p, 4.8e4, 0.10), f"c_p = {c_p:.4g}")


def test_c5_triplets(ref_run, criterion):
    c = ref_run["corrected"].corrected
    a, b = c[1, 3, 4] + c[2, 3, 4], c[1, 2, 3] + c[1, 2, 4]
    assert criterion(5, within(a, 250, 0.15) and within(b, 250, 0.15),
                     f"triplet sums {a:.1f}, {b:.1f}")


def test_c5_quadruplets(ref_run, criterion):
    cr = ref_run["corrected"]
    assert criterion(5, within(cr.c_q, 2.9, 0.20),
                     f"c_q = {cr.c_q:.3f} +- {cr.stderr((1, 2, 3, 4)):.3f}")


def test_c5_generation_rates(ref_run, criterion):
    g = ref_run["inferred"]
    cfg = ref_run["cfg"]
    assert criterion(5, within(g.g_q, cfg.g_q, 0.15) and within(g.g_p, cfg.g_p, 0.15),
                     f"g_q = {g.g_q:.3g}, g_p = {g.g_p:.3g}")


def test_c5_runtime(ref_run, criterion):
    assert criterion(5, ref_run["total"] < 600, f"{ref_run['total']:.0f} s")


def test_c10_quadruplet_search_time(ref_run, criterion):
    res = ref_run["res"]
    sec = ref_run["analysis"]
    assert criterion(10, sec < 300 and res.g4_hist.counts.sum() > 0,
                     f"150 s reference-scale analysis incl. quadruplet search {sec:.0f} s")


def test_c10_pair_histogram_throughput(criterion):
    stream = sm.simulate(sm.reference_config(duration=5.0, seed=3))
    n = len(stream)
    t0 = time.perf_counter()
    res = pl.analyze(stream, pl.AnalysisSettings(want=frozenset({"g2"})), threads=1)
    sec = time.perf_counter() - t0
    assert criterion(10, n >= 1e7 and sec < 10 and len(res.pair_hists) == 6,
                     f"{len(res.pair_hists)} pair histograms over {n:.3g} tags in {sec:.1f} s")


# --- 6: null ---------------------------------------------------------------------------------

def test_c6_null_double_pairs(criterion):
    c_q = []
    for seed in range(20):
        wc = co.window_counts_chunked(sm.iter_simulate(replace(sm.null_config(), seed=seed)))
        c_q.append(ac.correct_window_counts(wc).c_q)
    c_q = np.array(c_q)
    mean, se = c_q.mean(), c_q.std(ddof=1) / np.sqrt(len(c_q))
    assert criterion(6, abs(mean) < 3 * se, f"mean c_q = {mean:.3f} +- {se:.3f} cps "
                                            f"({abs(mean) / se:.2f} SE)")


# --- 7: morphology ---------------------------------------------------------------------------

def test_c7_morphology(criterion):
    res = pl.analyze(sm.iter_simulate(sm.morphology_config()), threads=1)
    lm = pl.g3_landmarks(res.g3())
    g2_peak = 0.5 * (res.g2((1, 2), 3).normalized.max() + res.g2((1, 2), 4).normalized.max())
    ns = res.tick_ps / 1000
    g4_peak = tuple(v * ns for v in res.g4_hist.peak())
    checks = [abs(lm.plateau - 1) < 0.05, abs(lm.diagonal - 2) < 0.2,
              within(lm.ridge_3, g2_peak, 0.1), within(lm.ridge_4, g2_peak, 0.1),
              abs(lm.peak_to_ridge - 4) <= 0.5,
              all(abs(a - b) <= 2 for a, b in zip(g4_peak, (0, 8, 8)))]
    assert criterion(7, all(checks),
                     f"plateau {lm.plateau:.3f}, diagonal {lm.diagonal:.2f}, ridges "
                     f"{lm.ridge_3:.2f}/{lm.ridge_4:.2f} vs g2 {g2_peak:.2f}, peak/ridge "
                     f"{lm.peak_to_ridge:.2f}, g4 peak at {g4_peak} ns")


# --- 8: power sweep --------------------------------------------------------------------------

def test_c8_power_sweep(criterion):
    rows = []
    for p, chunks in sm.iter_power_sweep(sm.sweep_config(), np.linspace(0.2, 1.0, 5)):
        wc = co.window_counts_chunked(chunks)
        s = wc.singles_rates
        rows.append((p, s[1] + s[2], wc.pair_rate, wc.triplet_rate, wc.quadruplet_rate))
    from quadcorr.cli import sweep_slopes
    sl = sweep_slopes(np.array(rows))
    ok = (1.8 <= sl["slope_Rq_vs_Rp"] <= 2.2 and 1.8 <= sl["slope_Rt_vs_Rp"] <= 2.2
          and 0.9 <= sl["slope_Rp_vs_Rs"] <= 1.1)
    assert criterion(8, ok, ", ".join(f"{k} {v:.3f}" for k, v in sl.items()))


# --- 9: thermal marginal ---------------------------------------------------------------------

def test_c9_thermal_marginal(criterion):
    cfg = sm.thermal_config()
    res = pl.analyze(sm.iter_simulate(cfg), pl.AnalysisSettings(want=frozenset({"g2"})))
    h = res.g2(1, 2)
    i = h.index(0)
    g0 = float(h.normalized[i])
    err = g0 / np.sqrt(h.counts[i])
    consistent = sm.consistent_double_pair_rate(replace(cfg, g_q=0.0), "s")
    assert criterion(9, abs(g0 - 2.0) <= 0.1 and within(cfg.g_q, consistent, 1e-9),
                     f"g2_ss(0) = {g0:.3f} +- {err:.3f} with g_q = {cfg.g_q:.4g}")
