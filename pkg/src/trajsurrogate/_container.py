"""Byte-level helpers shared by the binary dataset and model containers."""

from __future__ import annotations

import struct


def pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValueError("string too long for container")
    return struct.pack("<H", len(raw)) + raw


class Reader:
    """Sequential reader over an in-memory buffer with bounds checking."""

    def __init__(self, buf: bytes, error: type):
        self.buf = buf
        self.pos = 0
        self.error = error

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise self.error("truncated file")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def take_str(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")

    def expect_end(self, label: str) -> None:
        if self.pos != len(self.buf):
            raise self.error(f"{label}: {len(self.buf) - self.pos} trailing bytes")
