"""Pair, triplet and quadruplet coincidence search on tag streams.

Coincidences are built bottom-up: pairs between two detectors, triplets from
two pair lists that share a detection on a common (anchor) detector, and
quadruplets from a triplet list plus a pair list sharing one detection.
Every combination is counted, so one tag may take part in many events.

All times and delays are integer ticks. Delays are ``t_j - t_i`` for a pair
on ``(ch_i, ch_j)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .tagstream import CHANNELS, TagStream, ZeroDuration
from ._parallel import thread_map

DEFAULT_MAX_DELAY = 30   # ticks, 60 ns at 2 ns
DEFAULT_BIN_WIDTH = 1    # ticks
DEFAULT_TC = 10          # ticks, 20 ns

STOKES_ANTI_STOKES = ((1, 3), (1, 4), (2, 3), (2, 4))


class CoincidenceError(ValueError):
    pass


class SameChannel(CoincidenceError):
    pass


class MismatchedAnchorChannel(CoincidenceError):
    pass


class ZeroRate(CoincidenceError):
    pass


# --- joins ------------------------------------------------------------------

def range_join(left: np.ndarray, right: np.ndarray, lo: int, hi: int):
    """All index pairs ``(a, b)`` with ``lo <= right[b] - left[a] <= hi``.

    ``right`` must be sorted. Output is ordered by ``a`` then ``b``. Cost is
    two binary searches per left element plus the output size.
    """
    left = np.asarray(left)
    start = np.searchsorted(right, left + lo, side="left")
    stop = np.searchsorted(right, left + hi, side="right")
    n = np.maximum(stop - start, 0)
    total = int(n.sum())
    li = np.repeat(np.arange(left.size), n)
    if total == 0:
        return li, np.empty(0, dtype=np.intp)
    offsets = np.cumsum(n) - n
    ri = np.arange(total) - np.repeat(offsets - start, n)
    return li, ri


def pair_times(a: np.ndarray, b: np.ndarray, lo: int, hi: int):
    """Times of every ``(ta, tb)`` with ``lo <= tb - ta <= hi``; ``b`` sorted."""
    li, ri = range_join(a, b, lo, hi)
    return a[li], b[ri]


# --- event containers ---------------------------------------------------------

@dataclass(frozen=True)
class Pairs:
    """Pair events between detectors ``ch_i`` and ``ch_j``."""

    ch_i: int
    ch_j: int
    t_i: np.ndarray
    t_j: np.ndarray

    def __len__(self):
        return self.t_i.size

    @property
    def delays(self) -> np.ndarray:
        return self.t_j - self.t_i

    @property
    def channels(self) -> tuple[int, int]:
        return (self.ch_i, self.ch_j)

    def times(self, ch: int) -> np.ndarray:
        if ch == self.ch_i:
            return self.t_i
        if ch == self.ch_j:
            return self.t_j
        raise KeyError(ch)

    def as_array(self) -> np.ndarray:
        return np.column_stack([self.t_i, self.t_j])


@dataclass(frozen=True)
class Triplets:
    """Triplet events; column ``k`` of ``times`` belongs to ``channels[k]``.

    ``channels[0]`` is the anchor detector shared by the two source pairs.
    """

    channels: tuple[int, int, int]
    times: np.ndarray

    def __len__(self):
        return self.times.shape[0]

    def column(self, ch: int) -> np.ndarray:
        return self.times[:, self.channels.index(ch)]


@dataclass(frozen=True)
class Quadruplets:
    """Four-fold events; column ``k`` of ``times`` belongs to ``channels[k]``."""

    channels: tuple[int, int, int, int]
    times: np.ndarray

    def __len__(self):
        return self.times.shape[0]

    def column(self, ch: int) -> np.ndarray:
        return self.times[:, self.channels.index(ch)]


# --- search -------------------------------------------------------------------

def find_pairs(stream: TagStream, ch_i: int, ch_j: int,
               max_delay: int = DEFAULT_MAX_DELAY, *, lo: int | None = None,
               hi: int | None = None) -> Pairs:
    """All pairs ``(t_i, t_j)`` with ``|t_j - t_i| <= max_delay``.

    ``lo``/``hi`` replace the symmetric bound with ``lo <= t_j - t_i <= hi``.
    """
    if ch_i == ch_j:
        raise SameChannel(f"pair search needs two detectors, got {ch_i} twice")
    if max_delay < 0:
        raise ValueError("max_delay must be non-negative")
    lo = -max_delay if lo is None else lo
    hi = max_delay if hi is None else hi
    a, b = pair_times(stream.channel(ch_i), stream.channel(ch_j), lo, hi)
    return Pairs(ch_i, ch_j, a, b)


def _shared_channel(first: Sequence[int], second: Sequence[int]) -> int:
    shared = set(first) & set(second)
    if len(shared) != 1:
        raise MismatchedAnchorChannel(
            f"events on {tuple(first)} and {tuple(second)} must share exactly one detector")
    return shared.pop()


def _join_on(left_keys: np.ndarray, right_keys: np.ndarray, tol: int):
    """Index pairs with ``|left - right| <= tol``, ordered by left index."""
    if tol < 0:
        raise ValueError("anchor_tol must be non-negative")
    order = np.argsort(right_keys, kind="stable")
    li, ri = range_join(left_keys, right_keys[order], -tol, tol)
    return li, order[ri]


def find_triplets(pairs_ab: Pairs, pairs_ac: Pairs, anchor_tol: int = 0) -> Triplets:
    """Combine two pair lists that share a detection on their common detector.

    The triplet keeps the anchor time of ``pairs_ab``.
    """
    anchor = _shared_channel(pairs_ab.channels, pairs_ac.channels)
    b = pairs_ab.ch_j if pairs_ab.ch_i == anchor else pairs_ab.ch_i
    c = pairs_ac.ch_j if pairs_ac.ch_i == anchor else pairs_ac.ch_i
    li, ri = _join_on(pairs_ab.times(anchor), pairs_ac.times(anchor), anchor_tol)
    times = np.column_stack([pairs_ab.times(anchor)[li], pairs_ab.times(b)[li],
                             pairs_ac.times(c)[ri]])
    return Triplets((anchor, b, c), times.reshape(-1, 3))


def find_quadruplets(triplets: Triplets, pairs: Pairs, anchor_tol: int = 0) -> Quadruplets:
    """Extend triplets by a pair sharing one of the triplet's detections.

    Columns of the result are ordered by detector id.
    """
    shared = _shared_channel(triplets.channels, pairs.channels)
    new = pairs.ch_j if pairs.ch_i == shared else pairs.ch_i
    li, ri = _join_on(triplets.column(shared), pairs.times(shared), anchor_tol)
    chans = triplets.channels + (new,)
    times = np.column_stack([triplets.times[li], pairs.times(new)[ri]]).reshape(-1, 4)
    order = np.argsort(chans)
    return Quadruplets(tuple(int(chans[k]) for k in order), times[:, order])


def heralded_triplets(stream: TagStream, max_delay: int = DEFAULT_MAX_DELAY,
                      stokes: Sequence[int] = (1, 2), anti: tuple[int, int] = (3, 4),
                      anchor_tol: int = 0) -> list[Triplets]:
    """Triplets of one Stokes detection with one tag on each anti-Stokes detector."""
    out = []
    for s in stokes:
        out.append(find_triplets(find_pairs(stream, s, anti[0], max_delay),
                                 find_pairs(stream, s, anti[1], max_delay), anchor_tol))
    return out


def search_quadruplets(stream: TagStream, max_delay: int = DEFAULT_MAX_DELAY,
                       anchor_tol: int = 0) -> Quadruplets:
    """Four-fold events via triplets on (1, 3, 4) and pairs on (2, 4)."""
    trip = find_triplets(find_pairs(stream, 1, 3, max_delay),
                         find_pairs(stream, 1, 4, max_delay), anchor_tol)
    return find_quadruplets(trip, find_pairs(stream, 2, 4, max_delay), anchor_tol)


# --- histograms ----------------------------------------------------------------

@dataclass(frozen=True)
class DelayHistogram:
    """Dense histogram of relative delays.

    Bin ``k`` along an axis covers delays ``[(first + k) * bin_width,
    (first + k + 1) * bin_width)`` ticks. ``norm`` is the accidental
    expectation per bin (counts are divided by it to get g(n)); ``None`` for
    raw histograms.
    """

    counts: np.ndarray
    bin_width: int
    first: tuple[int, ...]
    axes: tuple[str, ...]
    tick_ps: int = 2000
    norm: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def ndim(self) -> int:
        return self.counts.ndim

    def edges(self, axis: int = 0) -> np.ndarray:
        """Lower bin edges in ticks along ``axis``."""
        n = self.counts.shape[axis]
        return (self.first[axis] + np.arange(n)) * self.bin_width

    def edges_ns(self, axis: int = 0) -> np.ndarray:
        return self.edges(axis) * self.tick_ps * 1e-3

    def index(self, *delays: int) -> tuple[int, ...]:
        """Array index of the bin holding the given delays (ticks)."""
        return tuple(int(math.floor(d / self.bin_width)) - f for d, f in zip(delays, self.first))

    @property
    def normalized(self) -> np.ndarray:
        if self.norm is None:
            raise ValueError("histogram has no normalization")
        return self.counts / self.norm

    def __add__(self, other: "DelayHistogram") -> "DelayHistogram":
        if (other.first, other.bin_width, other.counts.shape) != (self.first, self.bin_width,
                                                                  self.counts.shape):
            raise ValueError("histograms have different binning")
        return replace(self, counts=self.counts + other.counts, norm=None)

    def slice_at(self, delay: int, axis: int = 0) -> "DelayHistogram":
        """Lower-dimensional histogram at the bin holding ``delay`` on ``axis``."""
        k = int(math.floor(delay / self.bin_width)) - self.first[axis]
        counts = np.take(self.counts, k, axis=axis)
        drop = lambda seq: tuple(v for i, v in enumerate(seq) if i != axis)
        return DelayHistogram(counts, self.bin_width, drop(self.first), drop(self.axes),
                              self.tick_ps, self.norm, dict(self.meta))

    def peak(self) -> tuple[int, ...]:
        """Lower edges (ticks) of the bin with the most counts."""
        idx = np.unravel_index(int(np.argmax(self.counts)), self.counts.shape)
        return tuple(int(self.edges(a)[i]) for a, i in enumerate(idx))

    def to_csv(self, fh) -> None:
        """Write one bin per line: coordinates in ns, raw count, normalized value."""
        ns = self.tick_ps * 1e-3
        fh.write(f"# bin_width_ns = {self.bin_width * ns:g}\n")
        for ax, name in enumerate(self.axes):
            e = self.edges_ns(ax)
            fh.write(f"# range_{name}_ns = {e[0]:g},{e[-1] + self.bin_width * ns:g}\n")
        for key, value in self.meta.items():
            fh.write(f"# {key} = {value}\n")
        fh.write("# columns = " + ",".join(f"{a}_ns" for a in self.axes) + ",count,normalized\n")
        grids = np.meshgrid(*[self.edges_ns(a) for a in range(self.ndim)], indexing="ij")
        coords = np.column_stack([g.ravel() for g in grids])
        counts = self.counts.ravel()
        normed = counts / self.norm if self.norm else np.full(counts.size, np.nan)
        for row, c, v in zip(coords, counts, normed):
            fh.write(",".join(f"{x:g}" for x in row) + f",{int(c)},{v:.6g}\n")


def _bin_axis(delay_range: tuple[int, int], bin_width: int) -> tuple[int, int]:
    if bin_width < 1:
        raise ValueError("bin width must be at least one tick")
    lo, hi = delay_range
    first = math.floor(lo / bin_width)
    return first, math.floor(hi / bin_width) - first + 1


def _histogram(delays: Sequence[np.ndarray], bin_width: int,
               ranges: Sequence[tuple[int, int]]) -> tuple[np.ndarray, tuple[int, ...]]:
    firsts, sizes = zip(*(_bin_axis(r, bin_width) for r in ranges))
    idx = [np.floor_divide(d, bin_width) - f for d, f in zip(delays, firsts)]
    keep = np.ones(idx[0].shape, dtype=bool)
    for i, (n, (lo, hi), d) in enumerate(zip(sizes, ranges, delays)):
        keep &= (d >= lo) & (d <= hi)
    flat = np.ravel_multi_index([i[keep] for i in idx], sizes) if keep.any() else np.empty(0, int)
    counts = np.bincount(flat, minlength=int(np.prod(sizes))).reshape(sizes).astype(np.int64)
    return counts, tuple(firsts)


def histogram_pairs(pairs: Pairs | Iterable[Pairs], bin_width: int = DEFAULT_BIN_WIDTH,
                    delay_range: tuple[int, int] = (-DEFAULT_MAX_DELAY, DEFAULT_MAX_DELAY),
                    tick_ps: int = 2000) -> DelayHistogram:
    """Histogram of pair delays ``t_j - t_i``; several pair lists are pooled."""
    groups = [pairs] if isinstance(pairs, Pairs) else list(pairs)
    delays = np.concatenate([p.delays for p in groups]) if groups else np.empty(0, np.int64)
    counts, first = _histogram([delays], bin_width, [delay_range])
    name = "tau_" + "".join(f"{p.ch_j}{p.ch_i}" for p in groups[:1]) if groups else "tau"
    return DelayHistogram(counts, bin_width, first, (name,), tick_ps)


def _check_rates(*rates: float):
    if any(r <= 0 for r in rates):
        raise ZeroRate("normalization needs non-zero singles rates")


def normalized_g2(hist: DelayHistogram, rate_i: float, rate_j: float,
                  duration_s: float) -> DelayHistogram:
    """Divide by the accidental count per bin, ``R_i R_j dt T_m``."""
    _check_rates(rate_i, rate_j)
    dt = hist.bin_width * hist.tick_ps * 1e-12
    meta = dict(hist.meta, R_i=rate_i, R_j=rate_j, T_m_s=duration_s)
    return replace(hist, norm=rate_i * rate_j * dt * duration_s, meta=meta)


def histogram_triplets(triplets: Triplets | Iterable[Triplets],
                       bin_width: int = DEFAULT_BIN_WIDTH,
                       ranges: Sequence[tuple[int, int]] = ((-DEFAULT_MAX_DELAY, DEFAULT_MAX_DELAY),) * 2,
                       tick_ps: int = 2000) -> DelayHistogram:
    """2-D histogram over ``(t_B - t_A, t_C - t_A)`` with A the anchor detector."""
    groups = [triplets] if isinstance(triplets, Triplets) else list(triplets)
    t = np.concatenate([g.times for g in groups]) if groups else np.empty((0, 3), np.int64)
    counts, first = _histogram([t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]], bin_width, ranges)
    if groups:
        _, b, c = groups[0].channels
        axes = (f"tau_{b}s", f"tau_{c}s")
    else:
        axes = ("tau_b", "tau_c")
    return DelayHistogram(counts, bin_width, first, axes, tick_ps)


def normalized_g3(hist: DelayHistogram, rate_s: float, rate_b: float, rate_c: float,
                  duration_s: float) -> DelayHistogram:
    """Divide by ``R_s R_b R_c dt^2 T_m``."""
    _check_rates(rate_s, rate_b, rate_c)
    dt = hist.bin_width * hist.tick_ps * 1e-12
    meta = dict(hist.meta, R_s=rate_s, R_b=rate_b, R_c=rate_c, T_m_s=duration_s)
    return replace(hist, norm=rate_s * rate_b * rate_c * dt ** 2 * duration_s, meta=meta)


def histogram_quadruplets(quads: Quadruplets | Iterable[Quadruplets],
                          bin_width: int = DEFAULT_BIN_WIDTH,
                          ranges: Sequence[tuple[int, int]] = ((-DEFAULT_MAX_DELAY, DEFAULT_MAX_DELAY),) * 3,
                          tick_ps: int = 2000) -> DelayHistogram:
    """Raw 3-D histogram over ``(t1 - t2, t3 - t1, t4 - t1)``."""
    groups = [quads] if isinstance(quads, Quadruplets) else list(quads)
    t = np.concatenate([q.times for q in groups]) if groups else np.empty((0, 4), np.int64)
    t1, t2, t3, t4 = t.T
    counts, first = _histogram([t1 - t2, t3 - t1, t4 - t1], bin_width, ranges)
    return DelayHistogram(counts, bin_width, first, ("tau_12", "tau_31", "tau_41"), tick_ps)


def fit_decay(hist: DelayHistogram, after_peak: bool = True) -> dict:
    """Fit ``1 + A exp(-(tau - tau_p)/tau_d)`` to the falling edge of a normalized g2.

    Returns peak position and decay constant in ns.
    """
    from scipy.optimize import curve_fit

    g = hist.normalized
    x = hist.edges_ns() + 0.5 * hist.bin_width * hist.tick_ps * 1e-3
    k = int(np.argmax(g))
    xs, ys = (x[k:], g[k:]) if after_peak else (x, g)
    model = lambda t, a, tau: 1.0 + a * np.exp(-(t - xs[0]) / tau)
    (a, tau), cov = curve_fit(model, xs, ys, p0=(max(ys[0] - 1, 1e-3), 10.0))
    return {"peak_ns": float(x[k]), "amplitude": float(a), "decay_ns": float(tau),
            "decay_err_ns": float(np.sqrt(cov[1, 1]))}


# --- window counting -------------------------------------------------------------

@dataclass(frozen=True)
class WindowCounts:
    """Raw n-fold coincidence counts within the coincidence window.

    ``counts`` is keyed by sorted channel tuples of length 2, 3 and 4.
    """

    t_c: int
    tick_ps: int
    duration_s: float
    singles: dict[int, int]
    counts: dict[tuple[int, ...], int]
    centers: dict[int, int] = field(default_factory=dict)

    @property
    def t_c_seconds(self) -> float:
        return self.t_c * self.tick_ps * 1e-12

    @property
    def singles_rates(self) -> dict[int, float]:
        self._check()
        return {c: n / self.duration_s for c, n in self.singles.items()}

    @property
    def rates(self) -> dict[tuple[int, ...], float]:
        self._check()
        return {k: n / self.duration_s for k, n in self.counts.items()}

    def _check(self):
        if self.duration_s <= 0:
            raise ZeroDuration("acquisition length must be positive")

    def __add__(self, other: "WindowCounts") -> "WindowCounts":
        if (self.t_c, self.tick_ps, self.centers) != (other.t_c, other.tick_ps, other.centers):
            raise ValueError("window counts use different settings")
        return WindowCounts(
            self.t_c, self.tick_ps, self.duration_s + other.duration_s,
            {c: self.singles[c] + other.singles[c] for c in self.singles},
            {k: self.counts[k] + other.counts[k] for k in self.counts}, self.centers)

    @property
    def pair_rate(self) -> float:
        """Raw pair rate summed over the four Stokes/anti-Stokes combinations."""
        r = self.rates
        return sum(r[k] for k in STOKES_ANTI_STOKES)

    @property
    def triplet_rate(self) -> float:
        r = self.rates
        return sum(v for k, v in r.items() if len(k) == 3)

    @property
    def quadruplet_rate(self) -> float:
        return self.rates[(1, 2, 3, 4)]


def default_centers(t_c: int) -> dict[int, int]:
    """Window centres: anti-Stokes windows open at the Stokes detection."""
    h = t_c // 2
    return {1: 0, 2: 0, 3: h, 4: h}


def pair_window(ch_i: int, ch_j: int, t_c: int, centers: dict[int, int]) -> tuple[int, int]:
    """Inclusive bounds on ``t_j - t_i`` for a pair to be in the window."""
    lo = centers[ch_j] - centers[ch_i] - t_c // 2
    return lo, lo + t_c - 1


# (anchor, first pair, second pair) for each triplet; quad extends (1,3,4) by (2,4)
TRIPLET_CONSTRUCTION = {
    (1, 3, 4): ((1, 3), (1, 4)),
    (2, 3, 4): ((2, 3), (2, 4)),
    (1, 2, 3): ((1, 3), (2, 3)),
    (1, 2, 4): ((1, 4), (2, 4)),
}
QUAD_CONSTRUCTION = ((1, 3, 4), (2, 4))


def _owned(times: np.ndarray, since: int | None) -> int:
    if since is None:
        return times.shape[0]
    return int((times.max(axis=1) >= since).sum()) if times.size else 0


def window_events(stream: TagStream, t_c: int = DEFAULT_TC,
                  centers: dict[int, int] | None = None):
    """Window-coincidence events for every channel subset.

    Returns a dict mapping each sorted channel tuple to an ``(n, k)`` array of
    tag times ordered by channel.
    """
    if t_c < 1:
        raise ValueError("coincidence window must be at least one tick")
    centers = default_centers(t_c) if centers is None else centers
    pairs = {}
    for i, j in combinations(CHANNELS, 2):
        lo, hi = pair_window(i, j, t_c, centers)
        pairs[(i, j)] = find_pairs(stream, i, j, lo=lo, hi=hi)
    events = {k: p.as_array() for k, p in pairs.items()}
    trips = {}
    for key, (p, q) in TRIPLET_CONSTRUCTION.items():
        trip = find_triplets(pairs[p], pairs[q])
        trips[key] = trip
        order = np.argsort(trip.channels)
        events[key] = trip.times[:, order]
    quad = find_quadruplets(trips[QUAD_CONSTRUCTION[0]], pairs[QUAD_CONSTRUCTION[1]])
    events[(1, 2, 3, 4)] = quad.times
    return events


def window_counts(stream: TagStream, t_c: int = DEFAULT_TC,
                  centers: dict[int, int] | None = None, since: int | None = None) -> WindowCounts:
    """Count n-fold window coincidences for every detector subset.

    Each Stokes/anti-Stokes pair is counted when the anti-Stokes tag follows
    within ``t_c`` ticks of the window start (see :func:`pair_window`);
    triplets and the quadruplet are built from those pairs by shared
    detections. With ``since`` set, only events whose latest tag is at or
    after ``since`` are counted (used for chunked processing).
    """
    centers = default_centers(t_c) if centers is None else dict(centers)
    events = window_events(stream, t_c, centers)
    counts = {k: _owned(v, since) for k, v in events.items()}
    lo = stream.start if since is None else since
    singles = {c: int(np.count_nonzero(stream.channel(c) >= lo)) for c in CHANNELS}
    duration_s = (stream.duration - lo) * stream.tick_ps * 1e-12
    if duration_s <= 0 and since is None:
        raise ZeroDuration("acquisition length must be positive")
    return WindowCounts(t_c, stream.tick_ps, duration_s, singles, counts, centers)


# --- chunked processing ------------------------------------------------------------

def with_margin(chunks: Iterable[TagStream], margin: int) -> Iterator[tuple[TagStream, int]]:
    """Prefix each chunk with the previous chunk's last ``margin`` ticks.

    Yields ``(stream, since)``: analyses on ``stream`` keep only events whose
    latest tag is at or after ``since`` so every event is counted once.
    """
    tail = None
    for chunk in chunks:
        if tail is not None and len(tail):
            stream = TagStream(np.concatenate([tail.ticks, chunk.ticks]),
                               np.concatenate([tail.channels, chunk.channels]),
                               chunk.tick_ps, chunk.duration, tail.start)
        else:
            stream = chunk
        yield stream, chunk.start
        cut = chunk.duration - margin
        tail = stream.slice(max(cut, stream.start), chunk.duration)


def window_counts_chunked(chunks: Iterable[TagStream], t_c: int = DEFAULT_TC,
                          centers: dict[int, int] | None = None,
                          threads: int | None = None) -> WindowCounts:
    """:func:`window_counts` over consecutive chunks; equal to the one-shot result."""
    margin = 4 * t_c
    jobs = with_margin(chunks, margin)
    parts = thread_map(lambda job: window_counts(job[0], t_c, centers, since=job[1]),
                       jobs, threads)
    total = None
    for part in parts:
        total = part if total is None else total + part
    if total is None:
        raise ZeroDuration("no data")
    return total


def owned_pairs(p: Pairs, since: int | None) -> Pairs:
    if since is None:
        return p
    keep = np.maximum(p.t_i, p.t_j) >= since
    return Pairs(p.ch_i, p.ch_j, p.t_i[keep], p.t_j[keep])


def owned_events(events: Triplets | Quadruplets, since: int | None):
    if since is None or len(events) == 0:
        return events
    keep = events.times.max(axis=1) >= since
    return replace(events, times=events.times[keep])
