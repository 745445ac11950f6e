import numpy as np
import pytest

from quadcorr import rates as r
from quadcorr.rates import EfficiencySet


ETA = r.REFERENCE_ETA


def test_gq_from_quadruplets_examples():
    assert r.gq_from_quadruplets(0.0, ETA) == 0.0
    assert r.gq_from_quadruplets(4 * np.prod(ETA), ETA) == pytest.approx(1.0)
    assert r.gq_from_quadruplets(2.9, ETA) == pytest.approx(2.73e6, rel=0.01)
    with pytest.raises(r.ZeroEfficiency):
        r.gq_from_quadruplets(1.0, (0.1, 0.0, 0.1, 0.1))


def test_gq_from_triplets_examples():
    zero = {k: 0.0 for k in r.TRIPLET_KEYS}
    assert r.gq_from_triplets(zero, ETA)[0] == 0.0
    e1, e3, e4 = ETA[0], ETA[2], ETA[3]
    trip = r.detected_rates(0.0, 1.0, ETA)
    assert trip[(1, 3, 4)] == pytest.approx(2 * e3 * e4 * (2 - e1) * e1)
    mean, spread, _ = r.gq_from_triplets(trip, ETA)
    assert mean == pytest.approx(1.0) and spread == pytest.approx(0.0, abs=1e-12)


def test_gp_from_pairs_examples():
    eta = ETA
    pairs = {k: eta[k[0] - 1] * eta[k[1] - 1] for k in r.PAIR_KEYS}
    assert r.gp_from_pairs(pairs, 0.0, eta)[0] == pytest.approx(1.0)


def test_gp_reference_scale():
    # corrected pair total split in the proportions of the detector products
    w = {k: ETA[k[0] - 1] * ETA[k[1] - 1] for k in r.PAIR_KEYS}
    tot = sum(w.values())
    pairs = {k: 4.8e4 * v / tot for k, v in w.items()}
    g_p = r.gp_from_pairs(pairs, 2.5e6, ETA)[0]
    assert g_p == pytest.approx(1.3e7, rel=0.15)


def test_round_trip_and_scale_covariance(rng):
    for _ in range(50):
        g_p, g_q = rng.uniform(1e5, 1e8), rng.uniform(1e3, 1e7)
        eta = tuple(rng.uniform(0.01, 0.45, 4))
        rates = r.detected_rates(g_p, g_q, eta)
        res = r.infer_generation_rates(rates, eta)
        assert res.g_q == pytest.approx(g_q, rel=1e-10)
        assert res.g_p == pytest.approx(g_p, rel=1e-10)
        assert res.g_q_quad == pytest.approx(res.g_q, rel=1e-12)
        lam = rng.uniform(0.1, 10)
        scaled = r.infer_generation_rates({k: lam * v for k, v in rates.items()}, eta)
        assert scaled.g_p == pytest.approx(lam * res.g_p, rel=1e-12)
        assert scaled.g_q == pytest.approx(lam * res.g_q, rel=1e-12)


def test_negative_rates_are_clamped():
    rates = r.detected_rates(1e6, 1e5, ETA)
    rates.update({k: -abs(v) for k, v in rates.items() if len(k) == 3})
    res = r.infer_generation_rates(rates, ETA)
    assert res.g_q == 0.0 and "g_q" in res.clamped
    assert "clamped = g_q" in res.report()


def test_fit_exact_recovery():
    eff = EfficiencySet(r.REFERENCE_ETA_PRIME, 0.28, 0.31)
    rates = r.detected_rates(1.3e7, 2.5e6, eff)
    fit = r.fit_arm_losses(rates, rates, rates[r.QUAD_KEY], r.REFERENCE_ETA_PRIME)
    assert fit.residual_norm < 1e-8
    assert fit.eta_s == pytest.approx(0.28, rel=1e-6)
    assert fit.eta_a == pytest.approx(0.31, rel=1e-6)
    assert fit.g_p == pytest.approx(1.3e7, rel=1e-6)
    assert fit.g_q == pytest.approx(2.5e6, rel=1e-6)


def test_fit_perturbation():
    eff = EfficiencySet(r.REFERENCE_ETA_PRIME, 0.28, 0.31)
    rates = r.detected_rates(1.3e7, 2.5e6, eff)
    base = r.fit_arm_losses(rates, rates, rates[r.QUAD_KEY], r.REFERENCE_ETA_PRIME)
    bumped = dict(rates)
    bumped[(1, 3, 4)] *= 1.05
    fit = r.fit_arm_losses(bumped, bumped, bumped[r.QUAD_KEY], r.REFERENCE_ETA_PRIME)
    assert fit.residual_norm > base.residual_norm
    for a, b in [(fit.eta_s, base.eta_s), (fit.eta_a, base.eta_a), (fit.g_p, base.g_p),
                 (fit.g_q, base.g_q)]:
        assert abs(a / b - 1) < 0.10


def test_fit_errors():
    eff = EfficiencySet(r.REFERENCE_ETA_PRIME, 0.28, 0.31)
    rates = r.detected_rates(1.3e7, 2.5e6, eff)
    with pytest.raises(r.DegenerateInput):
        r.fit_arm_losses(rates, rates, 0.0, r.REFERENCE_ETA_PRIME)
    with pytest.raises(r.NoConvergence):
        r.fit_arm_losses(rates, rates, rates[r.QUAD_KEY] * 3, r.REFERENCE_ETA_PRIME, max_nfev=1)


def test_efficiency_set_validation():
    assert EfficiencySet(r.REFERENCE_ETA_PRIME, 0.5, 0.5)[1] == pytest.approx(0.039)
    with pytest.raises(ValueError):
        EfficiencySet((0.6, 0.6, 0.1, 0.1))
    with pytest.raises(r.ZeroEfficiency):
        EfficiencySet((0.0, 0.1, 0.1, 0.1))
