"""Carry-propagating range coder over 16-bit frequency tables.

The encoder keeps a 64-bit ``low`` (33 bits live) and a 32-bit ``range`` and
renormalizes a byte at a time whenever the range drops below 2^24.  Carries
are resolved through a one-byte cache plus a count of pending 0xFF bytes.
The leading byte of the classic layout is always zero and is not stored.
"""
from __future__ import annotations

from bisect import bisect_right
from typing import Sequence

from .cdf import PRECISION, TOTAL, CdfTable

_TOP = 1 << 24
_MASK32 = 0xFFFFFFFF
_RAW_BITS = 32


class CorruptStreamError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class RangeEncoder:
    def __init__(self) -> None:
        self.low = 0
        self.range = _MASK32
        self._cache = 0
        self._cache_size = 1
        self._out = bytearray()

    def _shift_low(self) -> None:
        low = self.low
        if low < 0xFF000000 or low > _MASK32:
            carry = low >> 32
            temp = self._cache
            out = self._out
            while True:
                out.append((temp + carry) & 0xFF)
                temp = 0xFF
                self._cache_size -= 1
                if self._cache_size == 0:
                    break
            self._cache = (low >> 24) & 0xFF
        self._cache_size += 1
        self.low = (low & 0x00FFFFFF) << 8

    def encode(self, start: int, freq: int) -> None:
        r = self.range >> PRECISION
        self.low += r * start
        self.range = r * freq
        while self.range < _TOP:
            self.range <<= 8
            self._shift_low()

    def encode_raw16(self, value: int) -> None:
        self.encode(value & 0xFFFF, 1)

    def finish(self) -> bytes:
        for _ in range(5):
            self._shift_low()
        return bytes(self._out[1:])


class RangeDecoder:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0
        self.range = _MASK32
        self.code = 0
        for _ in range(4):
            self.code = (self.code << 8) | self._next()

    def _next(self) -> int:
        if self.pos >= len(self.data):
            raise CorruptStreamError("unexpected end of stream", self.pos)
        b = self.data[self.pos]
        self.pos += 1
        return b

    def _target(self) -> tuple[int, int]:
        r = self.range >> PRECISION
        v = self.code // r
        if v >= TOTAL:
            raise CorruptStreamError("code value outside the coding interval", self.pos)
        return r, v

    def _consume(self, r: int, start: int, freq: int) -> None:
        self.code -= r * start
        self.range = r * freq
        while self.range < _TOP:
            self.code = ((self.code << 8) | self._next()) & _MASK32
            self.range <<= 8

    def decode_index(self, cdf: Sequence[int]) -> int:
        r, v = self._target()
        i = bisect_right(cdf, v) - 1
        self._consume(r, cdf[i], cdf[i + 1] - cdf[i])
        return i

    def decode_raw16(self) -> int:
        r, v = self._target()
        self._consume(r, v, 1)
        return v

    def check_exhausted(self) -> None:
        if self.pos != len(self.data):
            raise CorruptStreamError(f"{len(self.data) - self.pos} trailing bytes after last symbol", self.pos)


def _encode_value(enc: RangeEncoder, value: int, table: CdfTable) -> None:
    i = table.index_of(value)
    if i is None:
        if not -(1 << 31) <= value < (1 << 31):
            raise ValueError(f"escaped value {value} does not fit in 32 bits")
        raw = value & _MASK32
        e = table.escape
        enc.encode(table.cdf[e], table.cdf[e + 1] - table.cdf[e])
        enc.encode_raw16(raw >> 16)
        enc.encode_raw16(raw)
    else:
        enc.encode(table.cdf[i], table.cdf[i + 1] - table.cdf[i])


def range_encode(symbols: Sequence[int], tables: Sequence[CdfTable]) -> bytes:
    """Encode integer values, each under its own table; out-of-range values are escaped."""
    if len(symbols) != len(tables):
        raise ValueError(f"{len(symbols)} symbols but {len(tables)} tables")
    enc = RangeEncoder()
    for value, table in zip(symbols, tables):
        _encode_value(enc, int(value), table)
    return enc.finish()


def range_decode(data: bytes, tables: Sequence[CdfTable], count: int | None = None) -> list[int]:
    """Inverse of :func:`range_encode`; raises :class:`CorruptStreamError` on bad input."""
    if count is None:
        count = len(tables)
    if count != len(tables):
        raise ValueError(f"asked for {count} symbols but got {len(tables)} tables")
    dec = RangeDecoder(data)
    out = []
    for table in tables:
        i = dec.decode_index(table.cdf)
        if table.has_escape and i == table.num_symbols - 1:
            raw = (dec.decode_raw16() << 16) | dec.decode_raw16()
            out.append(raw - (1 << 32) if raw >= (1 << 31) else raw)
        else:
            out.append(i + table.offset)
    dec.check_exhausted()
    return out
