"""Channel-efficiency model and inversion of detected rates into source rates.

``g_p`` is the rate of single pairs and ``g_q`` the rate of correlated
double pairs. Each Stokes photon reaches detector 1 or 2 with probability
``eta_1`` or ``eta_2``; anti-Stokes photons likewise for 3 and 4.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

PAIR_KEYS = ((1, 3), (1, 4), (2, 3), (2, 4))
TRIPLET_KEYS = ((1, 3, 4), (2, 3, 4), (1, 2, 3), (1, 2, 4))
QUAD_KEY = (1, 2, 3, 4)


class InferenceError(ValueError):
    pass


class ZeroEfficiency(InferenceError):
    pass


class DegenerateInput(InferenceError):
    pass


class NoConvergence(InferenceError):
    pass


@dataclass(frozen=True)
class EfficiencySet:
    """Per-detector efficiencies ``eta_k = eta_arm * eta_prime_k``."""

    eta_prime: tuple[float, float, float, float]
    eta_s: float = 1.0
    eta_a: float = 1.0

    def __post_init__(self):
        eta = self.eta
        if any(not 0 < e <= 1 for e in eta):
            raise ZeroEfficiency("efficiencies must lie in (0, 1]")
        if eta[0] + eta[1] > 1 or eta[2] + eta[3] > 1:
            raise ValueError("detectors of one arm cannot exceed unit total efficiency")

    @classmethod
    def from_totals(cls, eta: Sequence[float]) -> "EfficiencySet":
        return cls(tuple(float(e) for e in eta))

    @property
    def eta(self) -> tuple[float, float, float, float]:
        p = self.eta_prime
        return (self.eta_s * p[0], self.eta_s * p[1], self.eta_a * p[2], self.eta_a * p[3])

    def __getitem__(self, k: int) -> float:
        return self.eta[k - 1]


def _eta(eff) -> tuple[float, ...]:
    eta = eff.eta if isinstance(eff, EfficiencySet) else tuple(eff)
    if len(eta) != 4 or any(e <= 0 for e in eta):
        raise ZeroEfficiency("four positive efficiencies are required")
    return eta


# --- forward model -----------------------------------------------------------------

def quad_factor(eta) -> float:
    e = _eta(eta)
    return 4.0 * e[0] * e[1] * e[2] * e[3]


def triplet_factor(key, eta) -> float:
    """Detected triplet rate per unit ``g_q``."""
    e = dict(zip((1, 2, 3, 4), _eta(eta)))
    if key in ((1, 3, 4), (2, 3, 4)):
        s = key[0]
        return 2.0 * e[3] * e[4] * (2.0 - e[s]) * e[s]
    a = key[2]
    return 2.0 * e[1] * e[2] * (2.0 - e[a]) * e[a]


def pair_factors(key, eta) -> tuple[float, float]:
    """Detected pair rate is ``A g_p + B g_q``; returns ``(A, B)``."""
    e = dict(zip((1, 2, 3, 4), _eta(eta)))
    i, j = key
    a = e[i] * e[j]
    return a, a * (2.0 - e[i]) * (2.0 - e[j])


def detected_rates(g_p: float, g_q: float, eta) -> dict:
    """Correlated detection rates produced by ``(g_p, g_q)`` at efficiencies ``eta``."""
    out = {k: pair_factors(k, eta)[0] * g_p + pair_factors(k, eta)[1] * g_q for k in PAIR_KEYS}
    out.update({k: triplet_factor(k, eta) * g_q for k in TRIPLET_KEYS})
    out[QUAD_KEY] = quad_factor(eta) * g_q
    return out


# --- closed-form inversions ----------------------------------------------------------

def gq_from_quadruplets(c_q: float, eta) -> float:
    return c_q / quad_factor(eta)


def gq_from_triplets(triplets: Mapping, eta) -> tuple[float, float, dict]:
    """Mean, standard deviation and the four individual estimates of ``g_q``."""
    est = {k: triplets[k] / triplet_factor(k, eta) for k in TRIPLET_KEYS}
    vals = np.array(list(est.values()))
    return float(vals.mean()), float(vals.std(ddof=1)), est


def gp_from_pairs(pairs: Mapping, g_q: float, eta) -> tuple[float, float, dict]:
    est = {}
    for k in PAIR_KEYS:
        a, b = pair_factors(k, eta)
        est[k] = (pairs[k] - b * g_q) / a
    vals = np.array(list(est.values()))
    return float(vals.mean()), float(vals.std(ddof=1)), est


@dataclass(frozen=True)
class GenerationRates:
    """Inferred source rates with per-equation estimates.

    ``g_q`` comes from the triplet equations and ``g_p`` from the pair
    equations given that ``g_q``; ``g_q_quad`` is the independent four-fold
    estimate. Negative results are clamped to zero and flagged.
    """

    g_p: float
    g_q: float
    g_p_spread: float
    g_q_spread: float
    g_q_quad: float
    pair_estimates: dict
    triplet_estimates: dict
    clamped: tuple[str, ...] = ()

    def report(self) -> str:
        lines = [f"g_p = {self.g_p:.6g}", f"g_p_spread = {self.g_p_spread:.6g}",
                 f"g_q = {self.g_q:.6g}", f"g_q_spread = {self.g_q_spread:.6g}",
                 f"g_q_quad = {self.g_q_quad:.6g}"]
        lines += [f"g_p[{''.join(map(str, k))}] = {v:.6g}" for k, v in self.pair_estimates.items()]
        lines += [f"g_q[{''.join(map(str, k))}] = {v:.6g}"
                  for k, v in self.triplet_estimates.items()]
        lines.append(f"clamped = {','.join(self.clamped) or 'none'}")
        return "\n".join(lines) + "\n"


def infer_generation_rates(corrected: Mapping, eta) -> GenerationRates:
    """Closed-form inference from corrected rates keyed by channel tuples."""
    g_q, g_q_sd, trip = gq_from_triplets(corrected, eta)
    g_q_quad = gq_from_quadruplets(corrected[QUAD_KEY], eta)
    clamped = []
    if g_q < 0:
        g_q, clamped = 0.0, clamped + ["g_q"]
    g_p, g_p_sd, pair = gp_from_pairs(corrected, g_q, eta)
    if g_p < 0:
        g_p, clamped = 0.0, clamped + ["g_p"]
    return GenerationRates(g_p, g_q, g_p_sd, g_q_sd, g_q_quad, pair, trip, tuple(clamped))


# --- joint fit of arm losses -----------------------------------------------------------

@dataclass(frozen=True)
class ArmLossFit:
    eta_s: float
    eta_a: float
    g_p: float
    g_q: float
    residual_norm: float
    residuals: dict
    nfev: int
    efficiency: EfficiencySet = field(repr=False, default=None)

    def report(self) -> str:
        eta = self.efficiency.eta
        lines = [f"eta_s = {self.eta_s:.6g}", f"eta_a = {self.eta_a:.6g}",
                 f"fit_g_p = {self.g_p:.6g}", f"fit_g_q = {self.g_q:.6g}",
                 f"residual_norm = {self.residual_norm:.6g}", f"nfev = {self.nfev}"]
        lines += [f"eta_{k} = {e:.6g}" for k, e in zip((1, 2, 3, 4), eta)]
        lines += [f"residual[{''.join(map(str, k))}] = {v:.6g}" for k, v in self.residuals.items()]
        return "\n".join(lines) + "\n"


def fit_arm_losses(pairs: Mapping, triplets: Mapping, c_q: float,
                   eta_prime: Sequence[float], xtol: float = 1e-9,
                   max_nfev: int = 200) -> ArmLossFit:
    """Fit ``(eta_s, eta_a, g_p, g_q)`` to the nine pair/triplet/quad equations.

    Minimizes squared relative residuals, with all four unknowns in log space.
    Start: ``eta_s = eta_a = 0.5``, ``g_q`` from the quadruplet rate and
    ``g_p`` from the pair rates at those efficiencies.
    """
    from scipy.optimize import least_squares

    keys = list(PAIR_KEYS) + list(TRIPLET_KEYS) + [QUAD_KEY]
    observed = {**{k: pairs[k] for k in PAIR_KEYS}, **{k: triplets[k] for k in TRIPLET_KEYS},
                QUAD_KEY: c_q}
    bad = [k for k, v in observed.items() if not v > 0]
    if bad:
        raise DegenerateInput(f"rates must be positive for {bad}")
    if any(not p > 0 for p in eta_prime):
        raise DegenerateInput("eta_prime must be positive")
    obs = np.array([observed[k] for k in keys])
    arm_max = (1.0 / (eta_prime[0] + eta_prime[1]), 1.0 / (eta_prime[2] + eta_prime[3]))

    def effs(x):
        return EfficiencySet.from_totals(
            [math.exp(x[0]) * eta_prime[0], math.exp(x[0]) * eta_prime[1],
             math.exp(x[1]) * eta_prime[2], math.exp(x[1]) * eta_prime[3]])

    def residuals(x):
        model = detected_rates(math.exp(x[2]), math.exp(x[3]), effs(x).eta)
        return np.array([model[k] for k in keys]) / obs - 1.0

    start_eta = (min(0.5, 0.99 * arm_max[0]), min(0.5, 0.99 * arm_max[1]))
    e0 = EfficiencySet(tuple(eta_prime), *start_eta)
    gq0 = gq_from_quadruplets(c_q, e0)
    gp0 = max(gp_from_pairs(pairs, gq0, e0)[0], 1e-3 * gq0, 1e-12)
    x0 = np.log([start_eta[0], start_eta[1], gp0, gq0])
    upper = np.log([min(1.0, arm_max[0]), min(1.0, arm_max[1]), np.inf, np.inf])
    lower = np.array([-np.inf] * 4)
    res = least_squares(residuals, x0, bounds=(lower, upper), xtol=xtol, ftol=1e-15,
                        gtol=1e-15, max_nfev=max_nfev, x_scale=1.0)
    if res.status <= 0:
        raise NoConvergence(f"fit did not converge in {max_nfev} evaluations: {res.message}")
    eta_s, eta_a, g_p, g_q = np.exp(res.x)
    r = residuals(res.x)
    return ArmLossFit(float(eta_s), float(eta_a), float(g_p), float(g_q),
                      float(np.linalg.norm(r)), dict(zip(keys, r.tolist())), int(res.nfev),
                      EfficiencySet(tuple(eta_prime), float(eta_s), float(eta_a)))


# Per-detector efficiencies before the arm-specific transmission.
REFERENCE_ETA_PRIME = (0.078, 0.083, 0.080, 0.067)
# Total per-detector efficiencies.
REFERENCE_ETA = (0.022, 0.023, 0.025, 0.021)
