"""Poisson-cluster simulator of a four-detector pair source.

Sources:

* single pairs at rate ``g_p``: a Stokes photon at ``t`` and its
  anti-Stokes partner at ``t + tau_0 + Exp(tau_c)``;
* double pairs at rate ``g_q``: two such pairs seeded at ``t`` and
  ``t + Laplace(tau_b)``;
* uncorrelated background photons per arm and dark counts per detector.

A Stokes photon lands on detector 1 with probability ``eta_1``, on 2 with
``eta_2``, else is lost; anti-Stokes photons likewise on 3 and 4. Only
events with at least one detection are drawn: their rate is thinned
analytically and the detection pattern sampled from the conditional
distribution.

Time is cut into fixed 0.1 s slabs, each with its own seed derived from
the slab index, so output does not depend on how it is consumed.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import asdict, dataclass, fields, replace
from typing import Iterator, Sequence

import numpy as np

from .tagstream import DEFAULT_TICK_PS, TagStream, concat_chunks

SLAB_SECONDS = 0.1


class InvalidConfig(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    """Source, loss and detector parameters. Times in ns, rates in 1/s."""

    g_p: float = 0.0
    g_q: float = 0.0
    tau_c: float = 16.0
    tau_0: float = 8.0
    tau_b: float = 16.0
    bg_s: float = 0.0
    bg_a: float = 0.0
    dark: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    eta: tuple[float, float, float, float] = (0.5, 0.0, 0.5, 0.0)
    dead_time: int = 0
    duration: float = 1.0
    seed: int = 0
    tick_ps: int = DEFAULT_TICK_PS

    def __post_init__(self):
        object.__setattr__(self, "dark", tuple(float(x) for x in self.dark))
        object.__setattr__(self, "eta", tuple(float(x) for x in self.eta))
        self.validate()

    def validate(self) -> None:
        if len(self.eta) != 4 or len(self.dark) != 4:
            raise InvalidConfig("eta and dark need four entries")
        if any(not 0 <= e <= 1 for e in self.eta):
            raise InvalidConfig("detection probabilities must lie in [0, 1]")
        if self.eta[0] + self.eta[1] > 1 or self.eta[2] + self.eta[3] > 1:
            raise InvalidConfig("eta_1 + eta_2 and eta_3 + eta_4 must not exceed 1")
        rates = (self.g_p, self.g_q, self.bg_s, self.bg_a) + self.dark
        if any(not r >= 0 or math.isinf(r) for r in rates):
            raise InvalidConfig("rates must be finite and non-negative")
        if min(self.tau_c, self.tau_b) <= 0 or self.tau_0 < 0:
            raise InvalidConfig("tau_c, tau_b must be positive and tau_0 non-negative")
        if not self.duration > 0:
            raise InvalidConfig("duration must be positive")
        if self.dead_time < 0 or self.tick_ps <= 0:
            raise InvalidConfig("dead_time must be >= 0 and tick_ps > 0")
        if not 0 <= self.seed < 2 ** 64:
            raise InvalidConfig("seed must be an unsigned 64-bit integer")

    @property
    def tick_ns(self) -> float:
        return self.tick_ps * 1e-3

    @property
    def duration_ticks(self) -> int:
        return int(round(self.duration * 1e12 / self.tick_ps))

    def expected_singles(self) -> tuple[float, ...]:
        """Mean detection rate per detector."""
        photons = (self.g_p + 2 * self.g_q)
        arm = (self.bg_s, self.bg_s, self.bg_a, self.bg_a)
        return tuple(e * (photons + b) + d for e, b, d in zip(self.eta, arm, self.dark))


# --- config files ---------------------------------------------------------------------

_INI_LAYOUT = {
    "source": ("g_p", "g_q", "tau_c", "tau_0", "tau_b"),
    "background": ("bg_s", "bg_a", "dark"),
    "detectors": ("eta", "dead_time", "tick_ps"),
    "run": ("duration", "seed"),
}


def config_from_mapping(values: dict) -> SimConfig:
    kinds = {f.name: f.type for f in fields(SimConfig)}
    out = {}
    for key, raw in values.items():
        if key not in kinds:
            raise InvalidConfig(f"unknown config key {key!r}")
        try:
            if key in ("dark", "eta"):
                vals = raw if isinstance(raw, (tuple, list)) else str(raw).split(",")
                out[key] = tuple(float(v) for v in vals)
            elif key in ("dead_time", "seed", "tick_ps"):
                out[key] = int(raw)
            else:
                out[key] = float(raw)
        except (TypeError, ValueError) as exc:
            raise InvalidConfig(f"bad value for {key}: {raw!r}") from exc
    return SimConfig(**out)


def load_config(path) -> SimConfig:
    """Read an INI file with ``[source]``, ``[background]``, ``[detectors]``, ``[run]``."""
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise InvalidConfig(str(exc)) from exc
    values = {}
    for section in parser.sections():
        if section not in _INI_LAYOUT:
            raise InvalidConfig(f"unknown section [{section}]")
        values.update(parser[section])
    return config_from_mapping(values)


def dump_config(config: SimConfig) -> str:
    d = asdict(config)
    lines = []
    for section, keys in _INI_LAYOUT.items():
        lines.append(f"[{section}]")
        for k in keys:
            v = d[k]
            lines.append(f"{k} = " + (",".join(repr(x) for x in v) if isinstance(v, tuple) else repr(v)))
        lines.append("")
    return "\n".join(lines)


# --- detection patterns ---------------------------------------------------------------

def _arm_outcomes(e1: float, e2: float) -> np.ndarray:
    return np.array([1.0 - e1 - e2, e1, e2])


def _pattern_table(eta, n_pairs: int):
    """Joint outcome probabilities for ``n_pairs`` Stokes and anti-Stokes photons.

    Outcome 0 is loss, 1/2 the first/second detector of the arm. Returns the
    probability of at least one detection and, for each detected pattern, its
    conditional probability and per-photon outcome codes (Stokes photons first).
    """
    s = _arm_outcomes(eta[0], eta[1])
    a = _arm_outcomes(eta[2], eta[3])
    per_photon = [s] * n_pairs + [a] * n_pairs
    grids = np.meshgrid(*per_photon, indexing="ij")
    prob = np.prod(grids, axis=0).ravel()
    codes = np.array(np.unravel_index(np.arange(prob.size), [3] * (2 * n_pairs))).T
    detected = codes.any(axis=1)
    p_any = float(prob[detected].sum())
    if p_any <= 0:
        return 0.0, np.empty(0), np.empty((0, 2 * n_pairs), dtype=np.int64)
    return p_any, prob[detected] / p_any, codes[detected]


def _laplace(rng, scale, n):
    return rng.laplace(0.0, scale, n)


@dataclass
class _Slab:
    ticks: np.ndarray
    channels: np.ndarray


def _emit(times_ns, codes, stokes_cols, origin_tick, tick_ns):
    """Detected photons as (tick, channel) arrays."""
    ticks, chans = [], []
    for col in range(codes.shape[1]):
        code = codes[:, col]
        hit = code > 0
        if not hit.any():
            continue
        base = 0 if col in stokes_cols else 2
        ticks.append(origin_tick + np.floor(times_ns[hit, col] / tick_ns).astype(np.int64))
        chans.append((base + code[hit]).astype(np.uint8))
    return ticks, chans


def _generate_slab(config: SimConfig, k: int, slab_ticks: int, tables) -> _Slab:
    """All detected tags whose source event is seeded inside slab ``k``."""
    T = config.duration_ticks
    origin = k * slab_ticks
    length = min(slab_ticks, T - origin)
    span_ns = length * config.tick_ns
    span_s = span_ns * 1e-9
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(k,)))
    ticks, chans = [], []
    (p1, cond1, codes1), (p2, cond2, codes2) = tables

    n = rng.poisson(config.g_p * p1 * span_s) if p1 > 0 else 0
    if n:
        t = rng.uniform(0.0, span_ns, n)
        pattern = codes1[rng.choice(len(cond1), size=n, p=cond1)]
        times = np.column_stack([t, t + config.tau_0 + rng.exponential(config.tau_c, n)])
        tk, ch = _emit(times, pattern, (0,), origin, config.tick_ns)
        ticks += tk
        chans += ch

    n = rng.poisson(config.g_q * p2 * span_s) if p2 > 0 else 0
    if n:
        t = rng.uniform(0.0, span_ns, n)
        t2 = t + _laplace(rng, config.tau_b, n)
        pattern = codes2[rng.choice(len(cond2), size=n, p=cond2)]
        times = np.column_stack([
            t, t2,
            t + config.tau_0 + rng.exponential(config.tau_c, n),
            t2 + config.tau_0 + rng.exponential(config.tau_c, n),
        ])
        tk, ch = _emit(times, pattern, (0, 1), origin, config.tick_ns)
        ticks += tk
        chans += ch

    arm = (config.bg_s, config.bg_s, config.bg_a, config.bg_a)
    for ch in range(4):
        rate = arm[ch] * config.eta[ch] + config.dark[ch]
        m = rng.poisson(rate * span_s) if rate > 0 else 0
        if m:
            ticks.append(origin + np.floor(rng.uniform(0.0, span_ns, m) / config.tick_ns)
                         .astype(np.int64))
            chans.append(np.full(m, ch + 1, dtype=np.uint8))

    if not ticks:
        return _Slab(np.empty(0, np.int64), np.empty(0, np.uint8))
    return _Slab(np.concatenate(ticks), np.concatenate(chans))


def apply_dead_time(ticks: np.ndarray, dead: int, last: int) -> tuple[np.ndarray, int]:
    """Keep-mask for one channel's sorted unique ticks under non-paralyzable dead time.

    ``last`` is the last accepted tick before this block. Only tags closer
    than ``dead`` to their predecessor can be lost, so the sequential scan
    visits just those.
    """
    keep = np.ones(ticks.size, dtype=bool)
    if dead <= 0 or ticks.size == 0:
        return keep, int(ticks[-1]) if ticks.size else last
    close = np.flatnonzero(np.diff(ticks, prepend=last) < dead)
    acc = last
    prev, prev_ok = -2, True
    for i in close.tolist():
        if i > 0 and (prev != i - 1 or prev_ok):
            acc = int(ticks[i - 1])
        ok = ticks[i] - acc >= dead
        keep[i] = ok
        prev, prev_ok = i, ok
    kept = ticks[keep]
    return keep, int(kept[-1]) if kept.size else last


def _finalize(ticks, chans, lo, hi, config, last_accept) -> TagStream:
    key = np.unique(ticks.astype(np.int64) * 8 + chans)
    t, c = key >> 3, (key & 7).astype(np.uint8)
    if config.dead_time > 0:
        keep = np.ones(t.size, dtype=bool)
        for ch in range(1, 5):
            idx = np.flatnonzero(c == ch)
            m, last_accept[ch] = apply_dead_time(t[idx], config.dead_time, last_accept[ch])
            keep[idx[~m]] = False
        t, c = t[keep], c[keep]
    return TagStream(t, c, config.tick_ps, hi, lo)


def iter_simulate(config: SimConfig) -> Iterator[TagStream]:
    """Yield the simulated stream as consecutive chunks of one slab each.

    Each chunk covers ``[start, duration)`` ticks. A chunk is emitted once
    the following slab exists, so photons spilling across a boundary land in
    the right chunk.
    """
    config.validate()
    T = config.duration_ticks
    if T <= 0:
        raise InvalidConfig("duration is shorter than one tick")
    slab_ticks = int(round(SLAB_SECONDS * 1e12 / config.tick_ps))
    n_slabs = -(-T // slab_ticks)
    tables = (_pattern_table(config.eta, 1), _pattern_table(config.eta, 2))
    pend_t = np.empty(0, np.int64)
    pend_c = np.empty(0, np.uint8)
    last_accept = {ch: -(1 << 62) for ch in range(1, 5)}
    for k in range(n_slabs + 1):
        if k < n_slabs:
            slab = _generate_slab(config, k, slab_ticks, tables)
            pend_t = np.concatenate([pend_t, slab.ticks])
            pend_c = np.concatenate([pend_c, slab.channels])
        if k == 0:
            continue
        lo, hi = (k - 1) * slab_ticks, min(k * slab_ticks, T)
        inside = pend_t < hi
        done_t, done_c = pend_t[inside], pend_c[inside]
        pend_t, pend_c = pend_t[~inside], pend_c[~inside]
        valid = done_t >= lo
        yield _finalize(done_t[valid], done_c[valid], lo, hi, config, last_accept)


def simulate(config: SimConfig) -> TagStream:
    return concat_chunks(iter_simulate(config))


def simulate_uncorrelated_pairs(config: SimConfig) -> TagStream:
    """Same source with double pairs switched off."""
    return simulate(replace(config, g_q=0.0))


# --- pump-power sweeps ----------------------------------------------------------------

def scaled_config(base: SimConfig, level: float, index: int = 0) -> SimConfig:
    """Pump scaled by ``level``: pairs and background linear, double pairs quadratic."""
    seed = int(np.random.SeedSequence(base.seed, spawn_key=(1 << 20, index))
               .generate_state(1, dtype=np.uint64)[0])
    return replace(base, g_p=base.g_p * level, g_q=base.g_q * level ** 2,
                   bg_s=base.bg_s * level, bg_a=base.bg_a * level, seed=seed)


def power_sweep(base: SimConfig, levels: Sequence[float]) -> list[TagStream]:
    return [simulate(scaled_config(base, p, i)) for i, p in enumerate(levels)]


def iter_power_sweep(base: SimConfig, levels: Sequence[float]) -> Iterator[tuple[float, Iterator[TagStream]]]:
    """Like :func:`power_sweep` but yields chunk iterators to keep memory flat."""
    for i, p in enumerate(levels):
        yield p, iter_simulate(scaled_config(base, p, i))


# --- calibration and presets ----------------------------------------------------------

def _bin_overlap(width_ns: float, samples: np.ndarray) -> float:
    """Mean probability that two times ``x`` apart floor into the same bin."""
    return float(np.clip(1.0 - np.abs(samples) / width_ns, 0.0, None).mean())


def consistent_double_pair_rate(config: SimConfig, arm: str = "s", samples: int = 2_000_000) -> float:
    """``g_q`` that makes the zero-delay auto-correlation of ``arm`` equal 2.

    Solves ``2 g_q eta_i eta_j P0 = R_i R_j dt`` where ``P0`` is the chance
    that the two photons of a double pair share a tick and the singles
    ``R_i, R_j`` include the double pairs themselves. The smaller root is
    returned (the one continuous with weak pumping).
    """
    from scipy.optimize import brentq

    rng = np.random.default_rng(0)
    offset = rng.laplace(0.0, config.tau_b, samples)
    if arm == "a":
        offset = offset + rng.exponential(config.tau_c, samples) - rng.exponential(config.tau_c, samples)
        i, j, bg = 2, 3, config.bg_a
    elif arm == "s":
        i, j, bg = 0, 1, config.bg_s
    else:
        raise ValueError("arm must be 's' or 'a'")
    dt = config.tick_ns * 1e-9
    p0 = _bin_overlap(config.tick_ns, offset)
    e = config.eta

    def excess(g_q):
        ri = e[i] * (config.g_p + 2 * g_q + bg) + config.dark[i]
        rj = e[j] * (config.g_p + 2 * g_q + bg) + config.dark[j]
        return 2 * g_q * e[i] * e[j] * p0 - ri * rj * dt

    hi = max(p0 / (4 * dt) - (config.g_p + bg) / 2, 0.0)  # vertex of the quadratic
    if excess(hi) <= 0:
        raise InvalidConfig("no double-pair rate reaches thermal bunching at this pair rate")
    return brentq(excess, 0.0, hi, xtol=1e-9, rtol=1e-12)


def _background_for(target: float, eta_pair: float, photons: float, dark: float) -> float:
    return max((target - dark - eta_pair * photons) / eta_pair, 0.0)


REFERENCE_SINGLES = (1.04e6, 1.10e6)


def reference_config(duration: float = 150.0, seed: int = 20240607) -> SimConfig:
    """Pair and double-pair rates, efficiencies and singles at the reference operating point.

    Correlation times are short so that nearly every correlated pair falls
    inside a 20 ns window.
    """
    eta = (0.022, 0.023, 0.025, 0.021)
    g_p, g_q = 1.3e7, 2.5e6
    dark = (200.0, 200.0, 200.0, 200.0)
    photons = g_p + 2 * g_q
    bg_s = _background_for(REFERENCE_SINGLES[0], eta[0] + eta[1], photons, dark[0] + dark[1])
    bg_a = _background_for(REFERENCE_SINGLES[1], eta[2] + eta[3], photons, dark[2] + dark[3])
    return SimConfig(g_p=g_p, g_q=g_q, tau_c=1.0, tau_0=8.0, tau_b=1.0, bg_s=bg_s, bg_a=bg_a,
                     dark=dark, eta=eta, duration=duration, seed=seed)


def thermal_config(duration: float = 20.0, seed: int = 7) -> SimConfig:
    """Moderate-rate source whose ``g_q`` is set by thermal bunching of the Stokes arm."""
    base = SimConfig(g_p=2e6, g_q=0.0, tau_c=16.0, tau_0=8.0, tau_b=1.0,
                     eta=(0.2, 0.2, 0.2, 0.2), duration=duration, seed=seed)
    return replace(base, g_q=consistent_double_pair_rate(base, "s"))


def morphology_config(duration: float = 2.0, seed: int = 11) -> SimConfig:
    """Bright, narrow-band source for three- and four-fold delay maps.

    The anti-Stokes arm is thermally bunched and the cross-correlation peak
    sits near 8 ns.
    """
    base = SimConfig(g_p=1.5e7, g_q=0.0, tau_c=1.0, tau_0=8.0, tau_b=1.0,
                     eta=(0.1, 0.1, 0.1, 0.1), dark=(100.0,) * 4,
                     duration=duration, seed=seed)
    return replace(base, g_q=consistent_double_pair_rate(base, "a"))


def null_config(duration: float = 10.0, seed: int = 0) -> SimConfig:
    """Independent pairs only, with background."""
    return SimConfig(g_p=1e6, g_q=0.0, tau_c=1.0, tau_0=8.0, tau_b=1.0, bg_s=1e6, bg_a=1e6,
                     eta=(0.1, 0.1, 0.1, 0.1), dark=(100.0,) * 4, duration=duration, seed=seed)


def sweep_config(duration: float = 20.0, seed: int = 5) -> SimConfig:
    """Base point for pump sweeps (pump level 1)."""
    return SimConfig(g_p=1e6, g_q=1e4, tau_c=1.0, tau_0=8.0, tau_b=1.0, bg_s=2e5, bg_a=2e5,
                     eta=(0.2, 0.2, 0.2, 0.2), dark=(100.0,) * 4, duration=duration, seed=seed)


PRESETS = {
    "reference": reference_config,
    "thermal": thermal_config,
    "morphology": morphology_config,
    "null": null_config,
    "sweep": sweep_config,
}
