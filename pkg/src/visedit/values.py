"""Runtime values bound to program variables: a small tagged union."""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .digest import digest_hex, fnv1a64
from .errors import TypeMismatch
from .geometry import ImageBuffer, RoI

TAGS = ("image", "region", "prompt", "number", "region_list")


@dataclass(frozen=True)
class Value:
    tag: str
    payload: object

    def __post_init__(self):
        if self.tag not in TAGS:
            raise TypeMismatch(f"unknown value tag {self.tag!r}")
        if self.payload is None:
            raise TypeMismatch(f"{self.tag} value has no payload")

    @classmethod
    def image(cls, buf: ImageBuffer) -> "Value":
        return cls("image", buf)

    @classmethod
    def region(cls, roi: RoI) -> "Value":
        return cls("region", roi)

    @classmethod
    def prompt(cls, text: str) -> "Value":
        return cls("prompt", text)

    @classmethod
    def number(cls, value: float) -> "Value":
        return cls("number", float(value))

    @classmethod
    def region_list(cls, rois: list[RoI]) -> "Value":
        return cls("region_list", tuple(rois))

    def expect(self, tag: str, context: str = "") -> object:
        if self.tag != tag:
            where = f" {context}" if context else ""
            raise TypeMismatch(f"expected {tag}{where}, got {self.tag}")
        return self.payload

    def digest(self) -> str:
        if self.tag == "image":
            return self.payload.digest()
        if self.tag == "region":
            return self.payload.digest()
        if self.tag == "prompt":
            return digest_hex(b"prompt|" + self.payload.encode("utf-8"))
        if self.tag == "number":
            return digest_hex(b"number|" + struct.pack("<d", self.payload))
        combined = b"regions|" + b"".join(
            struct.pack("<Q", fnv1a64(r.digest().encode())) for r in self.payload)
        return digest_hex(combined)
