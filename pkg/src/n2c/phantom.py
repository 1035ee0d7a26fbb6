"""Synthetic multi-contrast phantom volumes.

A phantom volume stands in for clinical multi-contrast data: each slice
carries two clean images of the same geometry (contrast A and contrast B)
plus independent noisy acquisitions of each.  Geometry is a random label
map built from overlapping ellipses (painter's order); the two contrasts
assign different per-region intensities, so the A -> B mapping is a
well-defined but non-monotone intensity lookup that a translation model
must learn and a plain smoother cannot.

Slices drift smoothly along the stack: every region center moves by at
most ``slice_drift_px`` pixels between adjacent slices, so a neighboring
slice is a plausible but imperfect noisy target.

The last region is always painted on top with intensity 1.0 in both
contrasts.  That pins the per-slice clean maximum at 1.0, which makes the
analytic noisy-baseline anchor hold: with noise std = r * max, PSNR at
data_range = max is -20*log10(r), e.g. 26.02 dB at r = 0.05.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DataError
from .image import (
    STREAM_GEOMETRY,
    STREAM_NOISE,
    Contrast,
    Image,
    add_correlated_noise,
    add_gaussian_noise,
    retag,
    rng_for,
)

NOISE_KINDS = ("iid_gaussian", "correlated_gaussian")

_CONTRAST_CODE = {Contrast.A: 0, Contrast.B: 1}


def default_contrast_maps(n_regions: int) -> tuple[tuple[float, ...], tuple[float, ...]]:
    """Deterministic per-region intensity lookups for both contrasts.

    Contrast A spaces region intensities evenly up to 1.0; contrast B
    rotates the interior values and applies a mild power nonlinearity, so
    the two maps are not related by any monotone intensity transform.
    Index 0 is the background; the last region is 1.0 in both maps.
    """
    if n_regions < 2:
        raise ConfigurationError(f"n_regions must be >= 2, got {n_regions}")
    a_vals = np.linspace(0.2, 1.0, n_regions)
    rotated = np.roll(a_vals[:-1], 1)
    b_interior = rotated**1.4
    if n_regions >= 2 and np.max(np.abs(b_interior - a_vals[:-1]), initial=0.0) <= 0.1:
        # a single interior value cannot be permuted; fall back to an
        # intensity flip so the maps still differ by the required margin
        b_interior = 0.05 + 0.75 * (1.0 - a_vals[:-1])
    b_vals = np.concatenate([b_interior, [1.0]])
    map_a = (0.0, *np.round(a_vals, 6).tolist())
    map_b = (0.08, *np.round(b_vals, 6).tolist())
    return map_a, map_b


@dataclass
class PhantomConfig:
    """Parameters of the synthetic volume generator.

    ``contrast_map_a``/``contrast_map_b`` are per-region intensity lookups
    of length n_regions + 1 (background first).  When omitted they are
    filled from :func:`default_contrast_maps`.
    """

    size: int = 64
    n_slices: int = 8
    n_regions: int = 5
    contrast_map_a: tuple[float, ...] | None = None
    contrast_map_b: tuple[float, ...] | None = None
    noise_rel_std: float = 0.05
    noise_kind: str = "iid_gaussian"
    corr_sigma: float = 2.0
    n_realizations: int = 2
    # 1 px default keeps a neighboring slice useful as a noisy target while
    # still blurring a neighbor-trained filter; 2 px is the permitted maximum
    slice_drift_px: float = 1.0

    def __post_init__(self) -> None:
        if self.contrast_map_a is None or self.contrast_map_b is None:
            map_a, map_b = default_contrast_maps(self.n_regions)
            if self.contrast_map_a is None:
                self.contrast_map_a = map_a
            if self.contrast_map_b is None:
                self.contrast_map_b = map_b
        self.contrast_map_a = tuple(float(v) for v in self.contrast_map_a)
        self.contrast_map_b = tuple(float(v) for v in self.contrast_map_b)
        self.validate()

    def validate(self) -> None:
        if self.size < 16:
            raise ConfigurationError(f"size must be >= 16, got {self.size}")
        if self.n_slices < 1:
            raise ConfigurationError(f"n_slices must be >= 1, got {self.n_slices}")
        if self.n_regions < 2:
            raise ConfigurationError(f"n_regions must be >= 2, got {self.n_regions}")
        if self.noise_rel_std <= 0:
            raise ConfigurationError(f"noise_rel_std must be > 0, got {self.noise_rel_std}")
        if self.noise_kind not in NOISE_KINDS:
            raise ConfigurationError(
                f"noise_kind must be one of {NOISE_KINDS}, got {self.noise_kind!r}"
            )
        if self.noise_kind == "correlated_gaussian" and self.corr_sigma <= 0:
            raise ConfigurationError(f"corr_sigma must be > 0, got {self.corr_sigma}")
        if self.n_realizations < 2:
            raise ConfigurationError(
                f"n_realizations must be >= 2, got {self.n_realizations}"
            )
        if not 0.0 <= self.slice_drift_px <= 2.0:
            raise ConfigurationError(
                f"slice_drift_px must be in [0, 2], got {self.slice_drift_px}"
            )
        for name, m in (("contrast_map_a", self.contrast_map_a), ("contrast_map_b", self.contrast_map_b)):
            if len(m) != self.n_regions + 1:
                raise ConfigurationError(
                    f"{name} must have n_regions + 1 = {self.n_regions + 1} entries, got {len(m)}"
                )
            vals = np.asarray(m)
            if not ((vals >= 0.0) & (vals <= 1.0)).all():
                raise ConfigurationError(f"{name} entries must lie in [0, 1]")
        diff = np.abs(np.asarray(self.contrast_map_a) - np.asarray(self.contrast_map_b))
        if not (diff[1:] > 0.1).any():
            raise ConfigurationError(
                "contrast maps must differ by more than 0.1 in at least one region"
            )


@dataclass
class VolumeSlice:
    """One aligned slice: clean A/B plus noisy acquisitions of each."""

    clean_a: Image
    clean_b: Image
    noisy_a: tuple[Image, ...]
    noisy_b: tuple[Image, ...]

    def clean(self, contrast: Contrast) -> Image:
        return self.clean_a if Contrast(contrast) is Contrast.A else self.clean_b

    def noisy(self, contrast: Contrast) -> tuple[Image, ...]:
        return self.noisy_a if Contrast(contrast) is Contrast.A else self.noisy_b


@dataclass
class MultiContrastVolume:
    """Ordered stack of aligned multi-contrast slices."""

    slices: list[VolumeSlice]
    seed: int

    def __post_init__(self) -> None:
        if not self.slices:
            raise DataError("volume has no slices")
        shape = self.slices[0].clean_a.data.shape
        for i, s in enumerate(self.slices):
            imgs = [s.clean_a, s.clean_b, *s.noisy_a, *s.noisy_b]
            for img in imgs:
                if img.data.shape != shape:
                    raise DataError(f"slice {i}: inconsistent image shape {img.data.shape} vs {shape}")
            for group in (s.noisy_a, s.noisy_b):
                rids = [img.realization_id for img in group]
                if len(set(rids)) != len(rids):
                    raise DataError(f"slice {i}: duplicate realization ids {rids}")

    @property
    def n_slices(self) -> int:
        return len(self.slices)

    @property
    def shape(self) -> tuple[int, int]:
        return self.slices[0].clean_a.data.shape

    def data_range(self) -> float:
        """Max clean intensity over the whole volume (PSNR data_range)."""
        return float(max(max(s.clean_a.data.max(), s.clean_b.data.max()) for s in self.slices))


def _region_geometry(cfg: PhantomConfig, rng: np.random.Generator) -> list[dict]:
    size = cfg.size
    regions = []
    for _ in range(cfg.n_regions):
        ax = rng.uniform(0.10, 0.24) * size
        ay = rng.uniform(0.10, 0.24) * size
        regions.append(
            {
                "cx": rng.uniform(0.28, 0.72) * size,
                "cy": rng.uniform(0.28, 0.72) * size,
                "ax": ax,
                "ay": ay,
                "angle": rng.uniform(0.0, np.pi),
                "drift_dir": rng.uniform(0.0, 2.0 * np.pi),
                "drift_step": cfg.slice_drift_px * rng.uniform(0.4, 1.0),
            }
        )
    return regions


def _label_map(cfg: PhantomConfig, regions: list[dict], slice_index: int) -> np.ndarray:
    size = cfg.size
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    labels = np.zeros((size, size), dtype=np.int32)
    for r, geo in enumerate(regions, start=1):
        cx = geo["cx"] + np.cos(geo["drift_dir"]) * geo["drift_step"] * slice_index
        cy = geo["cy"] + np.sin(geo["drift_dir"]) * geo["drift_step"] * slice_index
        # clamp keeps the ellipse fully inside with a 2 px margin; clamping is
        # 1-Lipschitz so the <= drift_px adjacent-slice bound is preserved
        margin_x = geo["ax"] + 2.0
        margin_y = geo["ay"] + 2.0
        cx = float(np.clip(cx, margin_x, size - 1 - margin_x))
        cy = float(np.clip(cy, margin_y, size - 1 - margin_y))
        ca, sa = np.cos(geo["angle"]), np.sin(geo["angle"])
        u = (xx - cx) * ca + (yy - cy) * sa
        v = -(xx - cx) * sa + (yy - cy) * ca
        inside = (u / geo["ax"]) ** 2 + (v / geo["ay"]) ** 2 <= 1.0
        labels[inside] = r
    return labels


def generate_phantom(config: PhantomConfig, seed: int) -> MultiContrastVolume:
    """Generate a deterministic multi-contrast volume from ``(config, seed)``.

    Every noise field comes from its own documented seed stream
    ``(seed, STREAM_NOISE, slice, contrast_code, realization)``, so noisy
    realizations are mutually independent across slices, contrasts and
    acquisition indices.
    """
    config.validate()
    geom_rng = rng_for(seed, STREAM_GEOMETRY)
    regions = _region_geometry(config, geom_rng)
    map_a = np.asarray(config.contrast_map_a, dtype=np.float64)
    map_b = np.asarray(config.contrast_map_b, dtype=np.float64)

    slices: list[VolumeSlice] = []
    for s in range(config.n_slices):
        labels = _label_map(config, regions, s)
        clean_a = Image(map_a[labels], contrast=Contrast.A, realization_id=0)
        clean_b = Image(map_b[labels], contrast=Contrast.B, realization_id=0)
        noisy: dict[Contrast, list[Image]] = {Contrast.A: [], Contrast.B: []}
        for contrast, clean in ((Contrast.A, clean_a), (Contrast.B, clean_b)):
            for j in range(1, config.n_realizations + 1):
                child = [seed, STREAM_NOISE, s, _CONTRAST_CODE[contrast], j]
                if config.noise_kind == "iid_gaussian":
                    img = add_gaussian_noise(clean, config.noise_rel_std, child)
                else:
                    img = add_correlated_noise(
                        clean, config.noise_rel_std, config.corr_sigma, child
                    )
                noisy[contrast].append(retag(img, realization_id=j))
        slices.append(
            VolumeSlice(
                clean_a=clean_a,
                clean_b=clean_b,
                noisy_a=tuple(noisy[Contrast.A]),
                noisy_b=tuple(noisy[Contrast.B]),
            )
        )
    return MultiContrastVolume(slices=slices, seed=seed)
