"""Image container, additive noise models, and the native image file format.

Images are 2-D scalar fields stored in float32 (the native storage
precision); all numerical operators in this package upcast to float64
internally and cast back at the boundary.  Intensities are nominally in
[0, 1] but noise is deliberately *not* clipped, so values outside that
range are legal.

Native file format
------------------
byte layout::

    b"N2CIMG1\\n"                                magic string
    b"<width> <height> <contrast> <realization>\\n"   ASCII header
    width*height little-endian float32            payload, row-major

The round trip write -> read -> write is bit-exact.

Seed streams
------------
All randomness is derived from one master seed through named integer
streams, so that every generated field is a pure function of
``(master_seed, stream, *indices)``:

    stream 0   phantom geometry        (master, 0)
    stream 1   noise fields            (master, 1, slice, contrast_code, realization)
    stream 2   network initialization  (master, 2)
    stream 3   blind-spot train masks  (master, 3, step_index)
    stream 4   blind-spot val masks    (master, 4, slice_index)

``rng_for(master, stream, *indices)`` builds the corresponding generator.
Distinct paths give statistically independent streams (numpy SeedSequence).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError, DataError, ImageFormatError, ImageTruncatedError

MAGIC = b"N2CIMG1\n"
FILE_SUFFIX = ".n2cimg"

STREAM_GEOMETRY = 0
STREAM_NOISE = 1
STREAM_NET_INIT = 2
STREAM_N2V_MASK = 3
STREAM_N2V_VAL = 4


def rng_for(master_seed: int, stream: int, *indices: int) -> np.random.Generator:
    """Generator for the documented seed stream ``(master, stream, *indices)``."""
    return np.random.default_rng([int(master_seed), int(stream), *map(int, indices)])


class Contrast(enum.Enum):
    """Acquisition contrast tag (e.g. T1-like vs T2-like)."""

    A = "A"
    B = "B"

    def __str__(self) -> str:
        return self.value


@dataclass
class Image:
    """2-D scalar image with a contrast tag and an acquisition index.

    ``realization_id`` 0 marks the clean (ground-truth) field; noisy
    acquisitions are numbered from 1.  ``data`` is float32, shape
    (height, width), row-major.
    """

    data: np.ndarray
    contrast: Contrast = Contrast.A
    realization_id: int = 0

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 2 or arr.size == 0:
            raise DataError(f"image data must be a non-empty 2-D array, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise DataError("image contains non-finite intensities")
        self.data = arr
        self.contrast = Contrast(self.contrast)
        self.realization_id = int(self.realization_id)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def as_float64(self) -> np.ndarray:
        return self.data.astype(np.float64)

    def with_data(self, data: np.ndarray, realization_id: int | None = None) -> "Image":
        """Copy of this image with new pixel data (tag preserved)."""
        rid = self.realization_id if realization_id is None else realization_id
        return Image(data=data, contrast=self.contrast, realization_id=rid)

    def equal_to(self, other: "Image") -> bool:
        """Field-for-field equality, bitwise on pixel data."""
        return (
            self.contrast == other.contrast
            and self.realization_id == other.realization_id
            and self.data.shape == other.data.shape
            and np.array_equal(self.data, other.data)
        )


def _positive_max(x: np.ndarray) -> float:
    m = float(x.max())
    if m <= 0.0:
        raise DataError("image maximum must be positive to scale relative noise")
    return m


def add_gaussian_noise(img: Image, rel_std: float, seed) -> Image:
    """Add an iid zero-mean Gaussian field with std = rel_std * max(img).

    ``seed`` may be an int or a seed-stream list (see module docstring).
    The output is not clipped; noise may push values outside [0, 1].
    """
    if rel_std <= 0:
        raise ConfigurationError(f"rel_std must be > 0, got {rel_std}")
    x = img.as_float64()
    std = rel_std * _positive_max(x)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(x.shape) * std
    return img.with_data(x + noise)


def add_correlated_noise(img: Image, rel_std: float, corr_sigma: float, seed) -> Image:
    """Add spatially correlated Gaussian noise.

    An iid Gaussian field is smoothed with a Gaussian kernel of width
    ``corr_sigma`` pixels and rescaled so its sample std equals
    rel_std * max(img) exactly, then added.  corr_sigma -> 0 recovers the
    iid model up to the kernel truncation.
    """
    if rel_std <= 0:
        raise ConfigurationError(f"rel_std must be > 0, got {rel_std}")
    if corr_sigma <= 0:
        raise ConfigurationError(f"corr_sigma must be > 0, got {corr_sigma}")
    x = img.as_float64()
    target_std = rel_std * _positive_max(x)
    rng = np.random.default_rng(seed)
    field = rng.standard_normal(x.shape)
    field = ndimage.gaussian_filter(field, sigma=corr_sigma, mode="reflect")
    field *= target_std / field.std()
    return img.with_data(x + field)


def write_image(img: Image, path) -> None:
    """Write ``img`` to ``path`` in the native format (see module docstring)."""
    header = f"{img.width} {img.height} {img.contrast.value} {img.realization_id}\n"
    payload = np.ascontiguousarray(img.data, dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(header.encode("ascii"))
        f.write(payload)


def read_image(path) -> Image:
    """Read a native-format image; bit-exact inverse of :func:`write_image`."""
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise ImageFormatError(f"{path}: bad magic string {magic!r}")
        header = f.readline()
        try:
            w_s, h_s, tag_s, rid_s = header.decode("ascii").split()
            width, height, rid = int(w_s), int(h_s), int(rid_s)
            contrast = Contrast(tag_s)
        except (ValueError, UnicodeDecodeError) as exc:
            raise ImageFormatError(f"{path}: malformed header {header!r}") from exc
        if width <= 0 or height <= 0:
            raise ImageFormatError(f"{path}: non-positive dimensions {width}x{height}")
        expected = width * height * 4
        payload = f.read()
    if len(payload) < expected:
        raise ImageTruncatedError(
            f"{path}: payload holds {len(payload) // 4} values, header advertises {width * height}"
        )
    if len(payload) > expected:
        raise ImageFormatError(f"{path}: {len(payload) - expected} trailing bytes after payload")
    data = np.frombuffer(payload, dtype="<f4").reshape(height, width)
    return Image(data=data.copy(), contrast=contrast, realization_id=rid)


def retag(img: Image, contrast: Contrast | None = None, realization_id: int | None = None) -> Image:
    """Copy with replaced tags, pixel data shared."""
    out = replace(img)
    if contrast is not None:
        out.contrast = Contrast(contrast)
    if realization_id is not None:
        out.realization_id = int(realization_id)
    return out
