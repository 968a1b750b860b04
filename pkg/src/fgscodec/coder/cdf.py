"""Fixed-point cumulative tables for the range coder.

Gaussian tables are indexed by a scale bin and a quantized fractional mean
offset.  Both the bin edges and the table entries are evaluated with mpmath,
so the integer tables do not depend on the platform's libm.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import mpmath
import numpy as np

PRECISION = 16
TOTAL = 1 << PRECISION
SUPPORT = 64  # symbols in [-SUPPORT, SUPPORT], plus one escape
NUM_SYMBOLS = 2 * SUPPORT + 2
ESCAPE = NUM_SYMBOLS - 1

SIGMA_LO = 0.11
SIGMA_HI = 64.0
NUM_SIGMA_BINS = 64
OFFSET_STEPS = 32  # fractional mean resolution is 1/OFFSET_STEPS

_MP = mpmath.MPContext()
_MP.dps = 40


@dataclass(frozen=True)
class CdfTable:
    """``cdf[i]`` is the cumulative count below symbol index ``i``; ``cdf[-1] == TOTAL``.

    Symbol index ``i`` stands for the value ``i + offset``.  With
    ``has_escape`` the last index is reserved for out-of-range values, which
    follow it as a raw 32-bit word.
    """

    cdf: tuple[int, ...]
    offset: int = -SUPPORT
    has_escape: bool = True

    @property
    def precision(self) -> int:
        return PRECISION

    @property
    def num_symbols(self) -> int:
        return len(self.cdf) - 1

    def index_of(self, value: int) -> int | None:
        """Symbol index for ``value``; None means it must be escaped."""
        i = value - self.offset
        top = self.num_symbols - 1 if self.has_escape else self.num_symbols
        if 0 <= i < top:
            return i
        if self.has_escape:
            return None
        raise ValueError(f"value {value} outside table range and no escape symbol")

    def freq(self, index: int) -> int:
        return self.cdf[index + 1] - self.cdf[index]

    def probability(self, index: int) -> float:
        return self.freq(index) / TOTAL

    @property
    def escape(self) -> int:
        if not self.has_escape:
            raise ValueError("table has no escape symbol")
        return self.num_symbols - 1

    def validate(self) -> None:
        c = self.cdf
        if c[0] != 0 or c[-1] != TOTAL:
            raise ValueError("cumulative counts must run from 0 to 2^16")
        if any(b <= a for a, b in zip(c, c[1:])):
            raise ValueError("cumulative counts must be strictly increasing")


def quantize_cumulative(cum: list[float] | np.ndarray) -> tuple[int, ...]:
    """Integerize a cumulative distribution (``cum[-1] == 1``) to ``TOTAL`` counts.

    Each boundary is rounded independently, then clamped so that every
    symbol keeps at least one count.  Symbols in the bulk keep their rounded
    mass; the minimum counts are paid for by the symbols next to the tails.
    """
    n = len(cum) - 1
    c = [int(x) for x in np.rint(np.asarray(cum, dtype=np.float64) * TOTAL)]
    c[0], c[n] = 0, TOTAL
    for i in range(1, n):
        c[i] = min(max(c[i], i), TOTAL - (n - i))
    for i in range(1, n + 1):
        if c[i] <= c[i - 1]:
            c[i] = c[i - 1] + 1
    return tuple(c)


def table_from_pmf(pmf: np.ndarray) -> CdfTable:
    """``pmf`` covers ``[-SUPPORT, SUPPORT]`` followed by the tail (escape) mass."""
    pmf = np.asarray(pmf, dtype=np.float64)
    if pmf.shape != (NUM_SYMBOLS,):
        raise ValueError(f"expected {NUM_SYMBOLS} masses, got {pmf.shape}")
    cum = np.concatenate([[0.0], np.cumsum(pmf)])
    cum = cum / cum[-1]
    return CdfTable(quantize_cumulative(cum))


@lru_cache(maxsize=None)
def _sigma_reps() -> tuple:
    ratio = _MP.mpf(SIGMA_HI) / _MP.mpf(SIGMA_LO)
    return tuple(_MP.mpf(SIGMA_LO) * ratio ** (_MP.mpf(k) / (NUM_SIGMA_BINS - 1)) for k in range(NUM_SIGMA_BINS))


@lru_cache(maxsize=None)
def sigma_grid() -> np.ndarray:
    """Bin representatives rounded down to float64 (so ``sigma <= edge`` is exact)."""
    edges = [mpmath.libmp.to_float(r._mpf_, rnd="f") for r in _sigma_reps()]
    edges[0] = SIGMA_LO
    return np.array(edges, dtype=np.float64)


def sigma_bin(sigma) -> np.ndarray | int:
    """Index of the smallest representative that is >= sigma (clamped to the grid)."""
    s = np.asarray(sigma, dtype=np.float64)
    idx = np.searchsorted(sigma_grid(), s, side="left")
    idx = np.minimum(idx, NUM_SIGMA_BINS - 1)
    return int(idx) if idx.ndim == 0 else idx


def mean_shift(mu) -> tuple[np.ndarray, np.ndarray]:
    """Integer shift ``round(mu)`` and the offset bin of ``mu - shift``."""
    m = np.asarray(mu, dtype=np.float64)
    shift = np.rint(m)
    off = np.rint((m - shift) * OFFSET_STEPS)
    return shift.astype(np.int64), off.astype(np.int64)


def _ncdf(x):
    if x < -40:
        return _MP.zero
    if x > 40:
        return _MP.one
    return _MP.ncdf(x)


@lru_cache(maxsize=None)
def gaussian_table(sigma_index: int, offset_index: int = 0) -> CdfTable:
    """Gaussian with unit-box quantization, mean ``offset_index / OFFSET_STEPS``."""
    if not 0 <= sigma_index < NUM_SIGMA_BINS:
        raise ValueError(f"sigma bin {sigma_index} out of range")
    if abs(offset_index) > OFFSET_STEPS // 2:
        raise ValueError(f"offset bin {offset_index} out of range")
    return gaussian_table_exact(_sigma_reps()[sigma_index], _MP.mpf(offset_index) / OFFSET_STEPS)


def gaussian_table_exact(sigma, mean=0) -> CdfTable:
    """Table for an arbitrary (sigma, mean); the coder only uses grid points."""
    sigma = _MP.mpf(sigma)
    o = _MP.mpf(mean)
    half = _MP.mpf(1) / 2
    edges = [_ncdf((s - half - o) / sigma) for s in range(-SUPPORT, SUPPORT + 2)]
    lo_tail = edges[0]
    tail = lo_tail + (1 - edges[-1])
    # cumulative over [-L, L], then the escape carries both tails
    cum = [float(e - lo_tail) for e in edges] + [1.0]
    assert tail >= 0
    return CdfTable(quantize_cumulative(cum))


def build_cdf(mu: float, sigma: float) -> tuple[CdfTable, int]:
    """Table and integer shift for coding ``y_hat - shift`` under N(mu, sigma)."""
    shift, off = mean_shift(mu)
    return gaussian_table(sigma_bin(sigma), int(off)), int(shift)


def uniform_table(n: int) -> CdfTable:
    """Plain uniform table over values ``0 .. n-1`` (no escape)."""
    if not 1 <= n <= TOTAL:
        raise ValueError("uniform table size out of range")
    return CdfTable(tuple((i * TOTAL) // n for i in range(n + 1)), offset=0, has_escape=False)
