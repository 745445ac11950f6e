"""Accidental-coincidence subtraction by set partitions.

An observed n-fold rate contains, besides the genuinely correlated part, one
accidental contribution per way of splitting the channels into independent
groups. A partition into ``m`` blocks contributes ``t_c^(m-1)`` times the
product of its block rates, singletons entering as singles rates and larger
blocks as their own corrected rates. Rates are counts/s, ``t_c`` seconds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

from .coincidence import STOKES_ANTI_STOKES, WindowCounts

Key = tuple[int, ...]


def correct_pairs(R_ij: float, R_i: float, R_j: float, t_c: float) -> float:
    return R_ij - t_c * (R_i * R_j)


def _k(*ch) -> Key:
    return tuple(sorted(ch))


def correct_triplets(R_ijk: float, pairs: Mapping[Key, float], singles: Mapping[int, float],
                     t_c: float, channels: Sequence[int] | None = None) -> float:
    """Corrected triplet rate; ``pairs`` holds corrected pair rates keyed by sorted tuples."""
    i, j, k = sorted(channels if channels is not None else singles)
    R = singles
    return (R_ijk
            - t_c * (pairs[_k(i, j)] * R[k] + pairs[_k(j, k)] * R[i] + pairs[_k(i, k)] * R[j])
            - t_c ** 2 * R[i] * R[j] * R[k])


def correct_quadruplets(R_1234: float, triplets: Mapping[Key, float],
                        pairs: Mapping[Key, float], singles: Mapping[int, float],
                        t_c: float) -> float:
    """Corrected four-fold rate with all 14 accidental terms written out."""
    R = singles
    c = pairs
    t = triplets
    double_pairs = c[1, 2] * c[3, 4] + c[1, 3] * c[2, 4] + c[1, 4] * c[2, 3]
    triplet_single = (t[1, 2, 3] * R[4] + t[1, 2, 4] * R[3]
                      + t[1, 3, 4] * R[2] + t[2, 3, 4] * R[1])
    pair_singles = (c[1, 2] * R[3] * R[4] + c[1, 3] * R[2] * R[4] + c[1, 4] * R[2] * R[3]
                    + c[2, 3] * R[1] * R[4] + c[2, 4] * R[1] * R[3] + c[3, 4] * R[1] * R[2])
    singles4 = R[1] * R[2] * R[3] * R[4]
    return (R_1234 - t_c * double_pairs - t_c * triplet_single
            - t_c ** 2 * pair_singles - t_c ** 3 * singles4)


def bell_partitions(n_or_items) -> list[tuple[tuple[int, ...], ...]]:
    """All set partitions of ``{1..n}`` (or of the given items)."""
    items = list(range(1, n_or_items + 1)) if isinstance(n_or_items, int) else list(n_or_items)
    return list(_partitions(items))


def _partitions(items: list) -> Iterator[tuple[tuple, ...]]:
    if not items:
        yield ()
        return
    head, rest = items[0], items[1:]
    for part in _partitions(rest):
        yield ((head,),) + part
        for b in range(len(part)):
            yield part[:b] + ((head,) + part[b],) + part[b + 1:]


def partition_term(blocks, corrected: Mapping[Key, float], singles: Mapping[int, float],
                   t_c: float) -> float:
    prod = 1.0
    for block in blocks:
        prod *= singles[block[0]] if len(block) == 1 else corrected[_k(*block)]
    return t_c ** (len(blocks) - 1) * prod


def correct_nfold_general(observed: float, lower: Mapping[Key, float],
                          singles: Mapping[int, float], t_c: float,
                          channels: int | Sequence[int]) -> float:
    """Corrected rate for any channel set; ``channels`` may be an int ``n`` for ``1..n``.

    ``lower`` must hold corrected rates for every proper subset with at least
    two channels.
    """
    chans = list(range(1, channels + 1)) if isinstance(channels, int) else sorted(channels)
    out = observed
    for blocks in _partitions(chans):
        if len(blocks) > 1:
            out -= partition_term(blocks, lower, singles, t_c)
    return out


def partition_label(blocks) -> str:
    return "|".join("".join(map(str, sorted(b))) for b in sorted(blocks, key=lambda b: (-len(b), b)))


ACCIDENTAL_CLASSES = {
    (2, 2): "double_pairs",
    (2, 1, 1): "pair_two_singles",
    (3, 1): "triplet_single",
    (1, 1, 1, 1): "four_singles",
}


@dataclass(frozen=True)
class CorrectedRates:
    """Observed and corrected rates for every channel subset, plus the subtracted terms."""

    t_c: float
    duration_s: float
    singles: dict[int, float]
    observed: dict[Key, float]
    corrected: dict[Key, float]
    terms: dict[Key, list[tuple[str, float]]] = field(default_factory=dict)
    counts: dict[Key, int] = field(default_factory=dict)

    @property
    def c_p(self) -> float:
        return sum(self.corrected[k] for k in STOKES_ANTI_STOKES)

    @property
    def c_q(self) -> float:
        return self.corrected[(1, 2, 3, 4)]

    def stderr(self, key: Key) -> float:
        """Poisson error of the observed rate (dominant for the corrected one)."""
        return math.sqrt(self.counts.get(key, 0)) / self.duration_s

    def accidental_classes(self) -> dict[str, float]:
        """Four-fold accidental rate summed by partition shape."""
        out = {name: 0.0 for name in ACCIDENTAL_CLASSES.values()}
        for label, value in self.terms[(1, 2, 3, 4)]:
            shape = tuple(len(b) for b in label.split("|"))
            out[ACCIDENTAL_CLASSES[shape]] += value
        return out

    def report(self) -> str:
        lines = [f"t_c_s = {self.t_c:.6g}", f"T_m_s = {self.duration_s:.6g}"]
        lines += [f"R_{k} = {v:.6g}" for k, v in self.singles.items()]
        for key in sorted(self.observed, key=lambda k: (len(k), k)):
            name = "".join(map(str, key))
            lines.append(f"R_{name} = {self.observed[key]:.6g}")
            for label, value in self.terms.get(key, []):
                lines.append(f"term_{name}[{label}] = {value:.6g}")
            lines.append(f"c_{name} = {self.corrected[key]:.6g}")
            lines.append(f"c_{name}_err = {self.stderr(key):.6g}")
        lines.append(f"c_p = {self.c_p:.6g}")
        lines.append(f"c_q = {self.c_q:.6g}")
        lines.append(f"c_q_err = {self.stderr((1, 2, 3, 4)):.6g}")
        lines.append(f"c_134_234 = {self.corrected[1, 3, 4] + self.corrected[2, 3, 4]:.6g}")
        lines.append(f"c_123_124 = {self.corrected[1, 2, 3] + self.corrected[1, 2, 4]:.6g}")
        for name, value in self.accidental_classes().items():
            lines.append(f"accidental_{name} = {value:.6g}")
        return "\n".join(lines) + "\n"


def correct_rates(observed: Mapping[Key, float], singles: Mapping[int, float], t_c: float,
                  duration_s: float = float("nan"),
                  counts: Mapping[Key, int] | None = None) -> CorrectedRates:
    """Correct every subset in order of size, keeping each subtracted term."""
    corrected: dict[Key, float] = {}
    terms: dict[Key, list[tuple[str, float]]] = {}
    for key in sorted(observed, key=len):
        items = []
        for blocks in _partitions(list(key)):
            if len(blocks) > 1:
                items.append((partition_label(blocks),
                              partition_term(blocks, corrected, singles, t_c)))
        terms[key] = items
        corrected[key] = observed[key] - sum(v for _, v in items)
    return CorrectedRates(t_c, duration_s, dict(singles), dict(observed), corrected, terms,
                          dict(counts or {}))


def correct_window_counts(wc: WindowCounts) -> CorrectedRates:
    """Correct measured window counts; ticks become seconds here."""
    return correct_rates(wc.rates, wc.singles_rates, wc.t_c_seconds, wc.duration_s, wc.counts)
