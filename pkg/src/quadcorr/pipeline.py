"""Single-pass, chunked analysis of a tag stream.

One pass accumulates window counts and the two-, three- and four-fold delay
histograms, so arbitrarily long acquisitions run in bounded memory.
Chunks can be processed on a thread pool; partial results are merged in
order, so the outcome does not depend on the thread count.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import coincidence as co
from ._parallel import thread_map
from .tagstream import CHANNELS, TagStream, ZeroDuration

PAIR_HISTOGRAMS = ((1, 3), (1, 4), (2, 3), (2, 4), (1, 2), (3, 4))


@dataclass(frozen=True)
class AnalysisSettings:
    t_c: int = co.DEFAULT_TC
    max_delay: int = co.DEFAULT_MAX_DELAY
    bin_width: int = co.DEFAULT_BIN_WIDTH
    centers: dict | None = None
    want: frozenset = frozenset({"window", "g2", "g3", "g4"})

    @property
    def margin(self) -> int:
        return max(4 * self.t_c, 3 * self.max_delay + 1)

    @property
    def delay_range(self) -> tuple[int, int]:
        return (-self.max_delay, self.max_delay)


@dataclass
class AnalysisResult:
    settings: AnalysisSettings
    tick_ps: int
    duration_ticks: int = 0
    singles: dict = field(default_factory=lambda: {c: 0 for c in CHANNELS})
    window: co.WindowCounts | None = None
    pair_hists: dict = field(default_factory=dict)
    g3_hist: co.DelayHistogram | None = None
    g4_hist: co.DelayHistogram | None = None
    n_tags: int = 0
    search_seconds: float = 0.0

    @property
    def duration_s(self) -> float:
        return self.duration_ticks * self.tick_ps * 1e-12

    @property
    def singles_rates(self) -> dict:
        if self.duration_ticks <= 0:
            raise ZeroDuration("acquisition length must be positive")
        return {c: n / self.duration_s for c, n in self.singles.items()}

    def merge(self, other: "AnalysisResult") -> None:
        self.duration_ticks += other.duration_ticks
        self.n_tags += other.n_tags
        self.search_seconds += other.search_seconds
        for c in CHANNELS:
            self.singles[c] += other.singles[c]
        if other.window is not None:
            self.window = other.window if self.window is None else self.window + other.window
        for k, h in other.pair_hists.items():
            self.pair_hists[k] = h if k not in self.pair_hists else self.pair_hists[k] + h
        if other.g3_hist is not None:
            self.g3_hist = other.g3_hist if self.g3_hist is None else self.g3_hist + other.g3_hist
        if other.g4_hist is not None:
            self.g4_hist = other.g4_hist if self.g4_hist is None else self.g4_hist + other.g4_hist

    # normalized views ------------------------------------------------------------

    def g2(self, ch_i: int | tuple, ch_j: int) -> co.DelayHistogram:
        """Normalized g2 between detector ``ch_i`` (or a tuple of detectors) and ``ch_j``."""
        group = ch_i if isinstance(ch_i, tuple) else (ch_i,)
        hist = None
        for c in group:
            h = self.pair_hists[(c, ch_j)]
            hist = h if hist is None else hist + h
        r = self.singles_rates
        return co.normalized_g2(hist, sum(r[c] for c in group), r[ch_j], self.duration_s)

    def g3(self) -> co.DelayHistogram:
        r = self.singles_rates
        return co.normalized_g3(self.g3_hist, r[1] + r[2], r[3], r[4], self.duration_s)


def _analyze_chunk(stream: TagStream, since: int, settings: AnalysisSettings,
                   first: bool) -> AnalysisResult:
    s = settings
    out = AnalysisResult(s, stream.tick_ps)
    lo = stream.start if first else since
    out.duration_ticks = stream.duration - lo
    for c in CHANNELS:
        out.singles[c] = int(np.count_nonzero(stream.channel(c) >= lo))
    out.n_tags = int(np.count_nonzero(stream.ticks >= lo))
    own = None if first else since
    if "window" in s.want:
        out.window = co.window_counts(stream, s.t_c, s.centers, since=lo)
    hist_kw = dict(bin_width=s.bin_width, tick_ps=stream.tick_ps)
    pairs = {}
    if {"g2", "g3", "g4"} & s.want:
        for key in PAIR_HISTOGRAMS:
            pairs[key] = co.find_pairs(stream, *key, s.max_delay)
    if "g2" in s.want:
        for key in PAIR_HISTOGRAMS:
            out.pair_hists[key] = co.histogram_pairs(co.owned_pairs(pairs[key], own),
                                                     delay_range=s.delay_range, **hist_kw)
    if "g3" in s.want or "g4" in s.want:
        t0 = time.perf_counter()
        trip = {a: co.find_triplets(pairs[(a, 3)], pairs[(a, 4)]) for a in (1, 2)}
        if "g4" in s.want:
            quads = co.owned_events(co.find_quadruplets(trip[1], pairs[(2, 4)]), own)
        out.search_seconds = time.perf_counter() - t0
        if "g3" in s.want:
            out.g3_hist = co.histogram_triplets([co.owned_events(trip[a], own) for a in (1, 2)],
                                                ranges=(s.delay_range,) * 2, **hist_kw)
        if "g4" in s.want:
            out.g4_hist = co.histogram_quadruplets(quads, ranges=(s.delay_range,) * 3, **hist_kw)
    return out


def analyze(chunks: Iterable[TagStream] | TagStream, settings: AnalysisSettings = AnalysisSettings(),
            threads: int | None = None) -> AnalysisResult:
    """Run every requested analysis over consecutive chunks in one pass."""
    if isinstance(chunks, TagStream):
        chunks = [chunks]
    jobs = ((s, since, i == 0) for i, (s, since) in
            enumerate(co.with_margin(chunks, settings.margin)))
    total = None
    for part in thread_map(lambda j: _analyze_chunk(j[0], j[1], settings, j[2]), jobs, threads):
        if total is None:
            total = part
        else:
            total.merge(part)
    if total is None:
        raise ZeroDuration("no data")
    return total


# --- landmarks of the three-fold map -----------------------------------------------------

@dataclass(frozen=True)
class G3Landmarks:
    peak: float
    ridge_3: float
    ridge_4: float
    diagonal: float
    plateau: float
    peak_delay_ticks: tuple[int, int]

    @property
    def ridge(self) -> float:
        return 0.5 * (self.ridge_3 + self.ridge_4)

    @property
    def peak_to_ridge(self) -> float:
        return self.peak / self.ridge


def g3_landmarks(hist: co.DelayHistogram, far: int = 12) -> G3Landmarks:
    """Peak, ridge, diagonal and plateau levels of a normalized three-fold map.

    ``far`` is the distance in bins from the peak beyond which a delay counts
    as uncorrelated.
    """
    g = hist.normalized
    i, j = np.unravel_index(int(np.argmax(g)), g.shape)
    n = g.shape[0]
    idx = np.arange(n)
    far_i = np.abs(idx - i) >= far
    far_j = np.abs(idx - j) >= far
    ridge_3 = float(g[i, far_j].mean())          # anti 3 correlated, anti 4 far
    ridge_4 = float(g[far_i, j].mean())
    off = j - i
    diag = [g[a, a + off] for a in range(n) if 0 <= a + off < n and abs(a - i) >= far]
    plateau_mask = np.outer(far_i, far_j) & (np.abs(idx[:, None] - idx[None, :] - (i - j)) >= far)
    edges = hist.edges
    return G3Landmarks(float(g[i, j]), ridge_3, ridge_4, float(np.mean(diag)),
                       float(g[plateau_mask].mean()), (int(edges(0)[i]), int(edges(1)[j])))
