"""The truncatable bitstream container (``.fgs``).

Layout, little-endian throughout::

    magic      4s   b"FGS1"
    version    u8
    model_hash 8s
    height     u16
    width      u16
    C1         u16
    C2         u16
    n_present  u16   scalable channels kept (0..C2)
    flags      u8    bit0: z_s segment present
    lengths    u32 * n_segments
    payload    z_b | y_b [| z_s | y_s[0] | ... | y_s[n_present-1]]

``n_segments`` is ``2`` without z_s and ``3 + n_present`` with it.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

MAGIC = b"FGS1"
VERSION = 1
FLAG_ZS = 0x01
_HEADER = struct.Struct("<4sB8sHHHHHB")
HEADER_SIZE = _HEADER.size


class FormatError(ValueError):
    pass


@dataclass
class BitstreamContainer:
    model_hash: bytes
    height: int
    width: int
    c1: int
    c2: int
    z_b: bytes
    y_b: bytes
    z_s: bytes | None = None
    y_s: list[bytes] = field(default_factory=list)
    version: int = VERSION

    def __post_init__(self) -> None:
        if len(self.model_hash) != 8:
            raise FormatError("model hash must be 8 bytes")
        if self.z_s is None and self.y_s:
            raise FormatError("scalable channels present without z_s")
        if self.z_s is not None and not self.y_s:
            raise FormatError("z_s present but no scalable channel")
        if len(self.y_s) > self.c2:
            raise FormatError(f"{len(self.y_s)} scalable segments exceed C2={self.c2}")

    @property
    def n_present(self) -> int:
        return len(self.y_s)

    @property
    def flags(self) -> int:
        return FLAG_ZS if self.z_s is not None else 0

    def segments(self) -> list[bytes]:
        segs = [self.z_b, self.y_b]
        if self.z_s is not None:
            segs.append(self.z_s)
            segs.extend(self.y_s)
        return segs

    def segment_names(self) -> list[str]:
        names = ["z_b", "y_b"]
        if self.z_s is not None:
            names.append("z_s")
            names.extend(f"y_s[{i}]" for i in range(self.n_present))
        return names

    @property
    def header_size(self) -> int:
        return HEADER_SIZE + 4 * len(self.segments())

    @property
    def payload_size(self) -> int:
        return sum(len(s) for s in self.segments())

    @property
    def basic_payload_size(self) -> int:
        return len(self.z_b) + len(self.y_b)

    def __len__(self) -> int:
        return self.header_size + self.payload_size

    def bpp(self) -> float:
        """Payload bits per pixel (header and segment table excluded)."""
        return 8.0 * self.payload_size / (self.height * self.width)

    def to_bytes(self) -> bytes:
        segs = self.segments()
        head = _HEADER.pack(MAGIC, self.version, self.model_hash, self.height, self.width,
                            self.c1, self.c2, self.n_present, self.flags)
        table = struct.pack(f"<{len(segs)}I", *(len(s) for s in segs))
        return head + table + b"".join(segs)

    @classmethod
    def from_bytes(cls, data: bytes) -> "BitstreamContainer":
        if len(data) < HEADER_SIZE:
            raise FormatError(f"container is {len(data)} bytes, shorter than the {HEADER_SIZE}-byte header")
        magic, version, mhash, h, w, c1, c2, n, flags = _HEADER.unpack_from(data, 0)
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}")
        if version != VERSION:
            raise FormatError(f"unsupported version {version}")
        if flags & ~FLAG_ZS:
            raise FormatError(f"unknown flag bits {flags:#04x}")
        has_zs = bool(flags & FLAG_ZS)
        if has_zs != (n > 0):
            raise FormatError(f"n_present={n} inconsistent with flags={flags:#04x}")
        if n > c2:
            raise FormatError(f"n_present={n} exceeds C2={c2}")
        nseg = 3 + n if has_zs else 2
        off = HEADER_SIZE
        if len(data) < off + 4 * nseg:
            raise FormatError("truncated segment table")
        lengths = struct.unpack_from(f"<{nseg}I", data, off)
        off += 4 * nseg
        if off + sum(lengths) != len(data):
            raise FormatError(f"segment table sums to {sum(lengths)} bytes but payload has {len(data) - off}"
                              " (truncation must happen at a segment boundary)")
        segs = []
        for ln in lengths:
            segs.append(bytes(data[off:off + ln]))
            off += ln
        return cls(mhash, h, w, c1, c2, segs[0], segs[1],
                   segs[2] if has_zs else None, segs[3:] if has_zs else [], version)

    def describe(self) -> dict:
        """Header and segment table as plain data (for ``inspect``)."""
        return {
            "magic": MAGIC.decode(),
            "version": self.version,
            "model_hash": self.model_hash.hex(),
            "height": self.height,
            "width": self.width,
            "C1": self.c1,
            "C2": self.c2,
            "n_present": self.n_present,
            "flags": self.flags,
            "header_bytes": self.header_size,
            "payload_bytes": self.payload_size,
            "total_bytes": len(self),
            "bpp": self.bpp(),
            "segments": [{"name": nm, "bytes": len(s)} for nm, s in zip(self.segment_names(), self.segments())],
        }


class BudgetError(ValueError):
    def __init__(self, message: str, minimum: float):
        super().__init__(message)
        self.minimum = minimum


def truncate(c: BitstreamContainer, channels: int | None = None, max_bytes: int | None = None,
             bpp: float | None = None) -> BitstreamContainer:
    """Drop trailing scalable channels.

    Exactly one target: ``channels`` keeps that many; ``max_bytes`` bounds the
    serialized container size; ``bpp`` bounds the payload rate.  Budget
    targets keep the largest channel count that fits.
    """
    given = [t is not None for t in (channels, max_bytes, bpp)]
    if sum(given) != 1:
        raise ValueError("give exactly one of channels, max_bytes, bpp")
    if channels is not None:
        if not 0 <= channels <= c.n_present:
            raise ValueError(f"cannot keep {channels} channels; container has {c.n_present}")
        keep = channels
    else:
        def size(n: int) -> float:
            t = _keep(c, n)
            return len(t) if max_bytes is not None else t.bpp()

        budget = max_bytes if max_bytes is not None else bpp
        if size(0) > budget:
            unit = "bytes" if max_bytes is not None else "bpp"
            raise BudgetError(f"budget {budget} {unit} is below the basic layer ({size(0)} {unit})", size(0))
        keep = 0
        for n in range(1, c.n_present + 1):
            if size(n) > budget:
                break
            keep = n
    return _keep(c, keep)


def _keep(c: BitstreamContainer, n: int) -> BitstreamContainer:
    if n == c.n_present:
        return c
    return BitstreamContainer(c.model_hash, c.height, c.width, c.c1, c.c2, c.z_b, c.y_b,
                              c.z_s if n > 0 else None, list(c.y_s[:n]), c.version)
