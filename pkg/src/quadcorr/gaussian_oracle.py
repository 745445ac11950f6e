"""Analytic correlation functions for a two-mode Gaussian (squeezed) source.

Times are in ns and rates in counts/s. The Stokes field couples to the
anti-Stokes field only through the phase-sensitive correlation ``C``; each
field is correlated with itself through ``R``. Both are real here, so every
``Re{...}`` reduces to a product.

Delay convention: ``tau_ij = t_i - t_j``; ``C`` takes ``t_anti - t_stokes``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np


class DomainError(ValueError):
    pass


class InconsistentDelays(ValueError):
    pass


class NotPositiveSemidefinite(ValueError):
    pass


@dataclass(frozen=True)
class CorrelationModel:
    """Exponential first-order correlation envelopes.

    ``C(d) = C0 exp(-|d - tau_0| / tau_c)``, or zero for ``d < tau_0`` when
    ``one_sided``. ``R_mode(t) = R0 exp(-|t| / tau_mode)``. With
    ``rabi_mhz`` set, ``C`` is multiplied by ``cos^2(pi f (d - tau_0))``.
    """

    R0: float
    C0: float
    tau_c: float = 16.0
    tau_0: float = 8.0
    tau_s: float = 16.0
    tau_a: float = 16.0
    one_sided: bool = False
    rabi_mhz: float | None = None

    def __post_init__(self):
        if self.R0 <= 0:
            raise DomainError("R0 must be positive")
        if min(self.tau_c, self.tau_s, self.tau_a) <= 0:
            raise DomainError("correlation times must be positive")

    @classmethod
    def from_g2_peak(cls, g2_peak: float, R0: float = 1.0, **kw) -> "CorrelationModel":
        """Model whose cross-correlation peak ``g2_cross(tau_0)`` equals ``g2_peak``."""
        if g2_peak < 1:
            raise DomainError("g2 cannot be below 1")
        return cls(R0=R0, C0=R0 * math.sqrt(g2_peak - 1), **kw)

    def C(self, delay):
        d = np.asarray(delay, dtype=float) - self.tau_0
        out = self.C0 * np.exp(-np.abs(d) / self.tau_c)
        if self.one_sided:
            out = np.where(d >= 0, out, 0.0)
        if self.rabi_mhz:
            out = out * np.cos(np.pi * self.rabi_mhz * 1e-3 * d) ** 2
        return out

    def R(self, tau, mode: str = "s"):
        width = {"s": self.tau_s, "a": self.tau_a}[mode]
        return self.R0 * np.exp(-np.abs(np.asarray(tau, dtype=float)) / width)


# --- normalized second and third order -------------------------------------------

def g2_cross(model: CorrelationModel, delay):
    """``1 + C(delay)^2 / R0^2`` with ``delay = t_anti - t_stokes``."""
    return 1.0 + model.C(delay) ** 2 / model.R0 ** 2


def g2_auto(model: CorrelationModel, tau, mode: str = "s"):
    return 1.0 + model.R(tau, mode) ** 2 / model.R0 ** 2


def g3_reduced(g2_as_3s, g2_as_4s, g2_aa_34):
    """Heralded anti-Stokes g3 from its three constituent g2 values."""
    x, y, a = (np.asarray(v, dtype=float) for v in (g2_as_3s, g2_as_4s, g2_aa_34))
    if np.any(x < 1) or np.any(y < 1) or np.any(a < 1):
        raise DomainError("g2 arguments must be at least 1")
    out = a + x + y - 2.0 + 2.0 * np.sqrt(x - 1) * np.sqrt(y - 1) * np.sqrt(a - 1)
    return out if out.ndim else float(out)


def g3_peak_bound(g2_peak: float) -> float:
    """Largest g3 reachable when both cross g2 equal ``g2_peak`` and g2_aa = 2."""
    return 4.0 * g2_peak - 2.0


def _check_cycle(*pairs):
    for given, derived in pairs:
        if given is not None and not np.allclose(given, derived, rtol=0, atol=1e-9):
            raise InconsistentDelays("delays do not derive from common absolute times")


def G3_rate(model: CorrelationModel, tau_3s, tau_4s, tau_34=None):
    """Three-fold rate for one Stokes and two anti-Stokes detections."""
    tau_3s, tau_4s = np.asarray(tau_3s, float), np.asarray(tau_4s, float)
    _check_cycle((tau_34, tau_3s - tau_4s))
    R0 = model.R0
    c3, c4 = model.C(tau_3s), model.C(tau_4s)
    raa = model.R(tau_3s - tau_4s, "a")
    return R0 * (R0 ** 2 + raa ** 2) + R0 * (c3 ** 2 + c4 ** 2) + 2.0 * c3 * c4 * raa


# --- fourth order --------------------------------------------------------------------

def G4_terms(model: CorrelationModel, t1, t2, t3, t4) -> list:
    """The 17 terms of the four-fold rate, in the standard order.

    Detectors 1, 2 see the Stokes field and 3, 4 the anti-Stokes field.
    """
    t1, t2, t3, t4 = (np.asarray(t, dtype=float) for t in (t1, t2, t3, t4))
    R0 = model.R0
    r21 = model.R(t2 - t1, "s")
    r43 = model.R(t4 - t3, "a")
    r12, r34 = r21, r43
    c13, c14 = model.C(t3 - t1), model.C(t4 - t1)
    c23, c24 = model.C(t3 - t2), model.C(t4 - t2)
    return [
        R0 ** 4,
        R0 ** 2 * r43 ** 2,
        R0 ** 2 * r21 ** 2,
        R0 ** 2 * c23 ** 2,
        R0 ** 2 * c24 ** 2,
        R0 ** 2 * c13 ** 2,
        R0 ** 2 * c14 ** 2,
        2 * R0 * r34 * c24 * c23,
        2 * R0 * r34 * c14 * c13,
        2 * R0 * r21 * c14 * c24,
        2 * R0 * r21 * c13 * c23,
        r21 ** 2 * r43 ** 2,
        c13 ** 2 * c24 ** 2,
        c14 ** 2 * c23 ** 2,
        2 * c24 * c13 * c14 * c23,
        2 * r34 * r12 * c24 * c13,
        2 * r34 * r21 * c23 * c14,
    ]


def G4_rate(model: CorrelationModel, t1, t2, t3, t4):
    """Four-fold rate at absolute detection times ``t1..t4`` (ns)."""
    return sum(G4_terms(model, t1, t2, t3, t4))


def G4_from_delays(model: CorrelationModel, tau_34, tau_24, tau_14, tau_23, tau_21, tau_13):
    """Same as :func:`G4_rate` from six pairwise delays ``tau_ij = t_i - t_j``."""
    t1 = np.zeros_like(np.asarray(tau_14, float))
    t4 = t1 - tau_14
    t3 = t1 - tau_13
    t2 = t1 + tau_21
    _check_cycle((tau_34, t3 - t4), (tau_24, t2 - t4), (tau_23, t2 - t3))
    return G4_rate(model, t1, t2, t3, t4)


def g4_normalized(model: CorrelationModel, t1, t2, t3, t4):
    return G4_rate(model, t1, t2, t3, t4) / model.R0 ** 4


# --- Monte Carlo moment ---------------------------------------------------------------

def field_covariances(model: CorrelationModel, times, modes):
    """Normal (``<z z^H>``) and anomalous (``<z z^T>``) covariance of field samples.

    ``modes`` holds ``'s'`` or ``'a'`` per sample time.
    """
    t = np.asarray(times, dtype=float)
    n = t.size
    gamma = np.zeros((n, n))
    pseudo = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if modes[i] == modes[j]:
                gamma[i, j] = model.R(t[i] - t[j], modes[i])
            elif modes[i] == "s":
                pseudo[i, j] = model.C(t[j] - t[i])
            else:
                pseudo[i, j] = model.C(t[i] - t[j])
    return gamma, pseudo


def mc_moment(model: CorrelationModel, times, modes=("s", "s", "a", "a"),
              samples: int = 10_000_000, seed: int = 0, batch: int = 1_000_000) -> tuple[float, float]:
    """Monte Carlo ``<prod |z_k|^2>`` over classical complex Gaussian fields.

    Real and imaginary parts are independent real Gaussians with covariances
    ``(G + P)/2`` and ``(G - P)/2``; both must be positive semidefinite
    (classical regime). Returns the mean and its standard error.
    """
    gamma, pseudo = field_covariances(model, times, modes)
    cov_re, cov_im = (gamma + pseudo) / 2, (gamma - pseudo) / 2
    factors = []
    for cov in (cov_re, cov_im):
        w, v = np.linalg.eigh(cov)
        if w.min() < -1e-9 * max(1.0, w.max()):
            raise NotPositiveSemidefinite("field covariance is not classical")
        factors.append(v * np.sqrt(np.clip(w, 0, None)))
    rng = np.random.default_rng(seed)
    n = len(modes)
    total = total_sq = 0.0
    done = 0
    while done < samples:
        m = min(batch, samples - done)
        x = rng.standard_normal((m, n)) @ factors[0].T
        y = rng.standard_normal((m, n)) @ factors[1].T
        prod = np.prod(x * x + y * y, axis=1)
        total += prod.sum()
        total_sq += (prod * prod).sum()
        done += m
    mean = total / samples
    var = total_sq / samples - mean * mean
    return mean, math.sqrt(max(var, 0.0) / samples)


# --- photon-number statistics ---------------------------------------------------------

def pn_squeezed(zeta: float, n):
    """Probability of ``n`` pairs in a two-mode squeezed vacuum of strength ``zeta``."""
    if zeta < 0:
        raise DomainError("zeta must be non-negative")
    n = np.asarray(n)
    if zeta == 0:
        return np.where(n == 0, 1.0, 0.0)
    return np.tanh(zeta) ** (2 * n) / np.cosh(zeta) ** 2


def pn_poisson(mu: float, n):
    if mu < 0:
        raise DomainError("mu must be non-negative")
    from scipy.stats import poisson
    return poisson.pmf(n, mu)


def four_photon_ratio_squeezed(zeta: float) -> float:
    """``P(2 pairs) / P(1 pair)^2``; tends to 1 for weak squeezing."""
    return float(pn_squeezed(zeta, 2) / pn_squeezed(zeta, 1) ** 2)


def four_photon_ratio_poisson(mu: float) -> float:
    """Same ratio for independent Poissonian pairs; tends to 1/2."""
    return float(pn_poisson(mu, 2) / pn_poisson(mu, 1) ** 2)


# --- grid dumps -----------------------------------------------------------------------

GRID_KINDS = ("g2_cross", "g2_auto", "g3", "g4")


def grid_csv(fh, kind: str, model: CorrelationModel, lo: float = -60.0, hi: float = 60.0,
             step: float = 2.0, tau_12: float = 0.0) -> int:
    """Write a normalized correlation on a delay grid as CSV; returns row count.

    ``g3`` is over ``(tau_3s, tau_4s)`` and ``g4`` over ``(tau_31, tau_41)``
    at fixed ``tau_12``.
    """
    if kind not in GRID_KINDS:
        raise ValueError(f"unknown grid kind {kind!r}")
    axis = np.arange(lo, hi + step / 2, step)
    fh.write(f"# kind = {kind}\n# R0 = {model.R0:g}\n# C0 = {model.C0:g}\n"
             f"# tau_c_ns = {model.tau_c:g}\n# tau_0_ns = {model.tau_0:g}\n")
    if kind in ("g2_cross", "g2_auto"):
        vals = g2_cross(model, axis) if kind == "g2_cross" else g2_auto(model, axis)
        fh.write("# columns = tau_ns,value\n")
        for x, v in zip(axis, vals):
            fh.write(f"{x:g},{v:.10g}\n")
        return axis.size
    a, b = np.meshgrid(axis, axis, indexing="ij")
    if kind == "g3":
        vals = G3_rate(model, a, b) / model.R0 ** 3
        fh.write("# columns = tau_3s_ns,tau_4s_ns,value\n")
    else:
        t1 = np.zeros_like(a)
        vals = g4_normalized(model, t1, t1 - tau_12, t1 + a, t1 + b)
        fh.write(f"# tau_12_ns = {tau_12:g}\n# columns = tau_31_ns,tau_41_ns,value\n")
    for x, y, v in zip(a.ravel(), b.ravel(), vals.ravel()):
        fh.write(f"{x:g},{y:g},{v:.10g}\n")
    return a.size
