"""RGB raster type shared by preprocessing and the LMM gateway."""
from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

PROVENANCES = ("original", "simple", "negative", "annotated")


@dataclass(frozen=True)
class Image:
    width: int
    height: int
    pixels: bytes
    provenance: str = "original"

    def __post_init__(self):
        if len(self.pixels) != self.width * self.height * 3:
            raise ValueError(
                f"pixel buffer holds {len(self.pixels)} bytes, "
                f"expected {self.width}x{self.height}x3"
            )
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")

    @classmethod
    def from_array(cls, arr: np.ndarray, provenance: str = "original") -> "Image":
        arr = np.ascontiguousarray(arr[..., :3], dtype=np.uint8)
        h, w = arr.shape[:2]
        return cls(w, h, arr.tobytes(), provenance)

    def to_array(self) -> np.ndarray:
        return np.frombuffer(self.pixels, dtype=np.uint8).reshape(
            self.height, self.width, 3
        )

    @classmethod
    def from_png(cls, data: bytes | str | Path, provenance: str = "original") -> "Image":
        src = io.BytesIO(data) if isinstance(data, bytes) else data
        with PILImage.open(src) as im:
            return cls.from_array(np.asarray(im.convert("RGB")), provenance)

    def to_png(self) -> bytes:
        # no metadata chunks, so identical rasters give identical files
        buf = io.BytesIO()
        PILImage.fromarray(self.to_array(), "RGB").save(buf, format="PNG", optimize=False)
        return buf.getvalue()
