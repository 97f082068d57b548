"""Patch library: load RGBA cutouts, segment backgrounds, serve mip levels.

Images are numpy arrays of shape (H, W, 4), float32, channels RGBA in
[0, 1].  Alpha 0 means fully masked out.  Each patch keeps a mip chain
built by repeated 2x2 box-filter averaging, ordered high to low
resolution, so the optimizer can work on small rasters while the final
export samples the originals.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

log = logging.getLogger(__name__)


class NoPatchesError(Exception):
    """Raised when a directory yields no decodable patch images."""


@dataclass(frozen=True)
class Patch:
    id: int
    name: str
    levels: list[np.ndarray]  # (H, W, 4) float32, high to low resolution
    source_path: str

    @property
    def width(self) -> int:
        return self.levels[0].shape[1]

    @property
    def height(self) -> int:
        return self.levels[0].shape[0]


@dataclass(frozen=True)
class PatchLibrary:
    patches: list[Patch] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.patches)

    def __getitem__(self, patch_id: int) -> Patch:
        return self.patches[patch_id]

    def content_hash(self) -> str:
        """SHA-256 over names and level-0 pixel bytes, in id order."""
        h = hashlib.sha256()
        for p in self.patches:
            h.update(p.name.encode("utf-8"))
            h.update(np.ascontiguousarray(p.levels[0]).tobytes())
        return h.hexdigest()


def box_downsample(image: np.ndarray) -> np.ndarray:
    """Halve both dimensions (ceil) by averaging 2x2 boxes.

    Odd trailing rows/columns are averaged over the pixels that exist, so
    every level keeps full coverage of the original extent.  Works on any
    (H, W, C) array and preserves dtype through float math.
    """
    h, w = image.shape[:2]
    out_h, out_w = (h + 1) // 2, (w + 1) // 2
    acc = np.zeros((out_h, out_w) + image.shape[2:], dtype=np.float64)
    cnt = np.zeros((out_h, out_w), dtype=np.float64)
    for dy in (0, 1):
        for dx in (0, 1):
            sub = image[dy::2, dx::2]
            acc[: sub.shape[0], : sub.shape[1]] += sub
            cnt[: sub.shape[0], : sub.shape[1]] += 1.0
    out = acc / cnt[..., None] if image.ndim == 3 else acc / cnt
    return out.astype(image.dtype)


def build_mip_chain(image: np.ndarray, target_lo_res: int) -> list[np.ndarray]:
    """Repeatedly box-downsample until max dimension <= target_lo_res."""
    levels = [image]
    while max(levels[-1].shape[:2]) > max(1, target_lo_res):
        nxt = box_downsample(levels[-1])
        if nxt.shape[:2] == levels[-1].shape[:2]:
            break
        levels.append(nxt)
    return levels


def load_rgba_file(path: Path) -> np.ndarray:
    """Decode one image file to a float32 (H, W, 4) array in [0, 1].

    RGB-only files get an all-ones alpha channel.
    """
    with Image.open(path) as img:
        if img.mode not in ("RGB", "RGBA"):
            has_alpha = "A" in img.getbands() or "transparency" in img.info
            img = img.convert("RGBA" if has_alpha else "RGB")
        arr = np.asarray(img, dtype=np.float32) / 255.0
    if arr.ndim != 3:
        raise ValueError(f"{path}: expected a color image")
    if arr.shape[2] == 3:
        alpha = np.ones(arr.shape[:2] + (1,), dtype=np.float32)
        arr = np.concatenate([arr, alpha], axis=2)
    return arr


def load_library(
    directory: str | Path,
    target_lo_res: int = 64,
    flood_fill_tolerance: float | None = None,
) -> PatchLibrary:
    """Load every decodable image under `directory` as a patch.

    Files are discovered sorted lexicographically by name so ids are
    stable across platforms.  Undecodable files are skipped with a
    warning; an empty result raises NoPatchesError.  When
    `flood_fill_tolerance` is given, near-constant backgrounds are
    segmented away before the mip chain is built.
    """
    directory = Path(directory)
    candidates = sorted(
        (p for p in directory.iterdir() if p.is_file()), key=lambda p: p.name
    ) if directory.is_dir() else []
    patches: list[Patch] = []
    for path in candidates:
        try:
            arr = load_rgba_file(path)
        except (UnidentifiedImageError, OSError, ValueError) as exc:
            log.warning("skipping %s: %s", path.name, exc)
            continue
        if flood_fill_tolerance is not None:
            arr = flood_fill_segment(arr, flood_fill_tolerance)
        patches.append(
            Patch(
                id=len(patches),
                name=path.stem,
                levels=build_mip_chain(arr, target_lo_res),
                source_path=str(path),
            )
        )
    if not patches:
        raise NoPatchesError(f"no decodable patch images in {directory}")
    return PatchLibrary(patches=patches)


def flood_fill_segment(image: np.ndarray, tolerance: float) -> np.ndarray:
    """Clear alpha on background regions reachable from the four corners.

    From each corner a 4-connected flood fill spreads through pixels whose
    RGB Euclidean distance to that corner's color is <= tolerance; every
    reached pixel (corners included) gets alpha 0.  RGB channels are never
    modified.  Tolerance is clamped to [0, 1].
    """
    if image.shape[0] < 2 or image.shape[1] < 2:
        raise ValueError("flood fill needs at least a 2x2 image")
    tol = float(min(max(tolerance, 0.0), 1.0))
    h, w = image.shape[:2]
    rgb = image[:, :, :3].astype(np.float64)
    cleared = np.zeros((h, w), dtype=bool)
    for cy, cx in ((0, 0), (0, w - 1), (h - 1, 0), (h - 1, w - 1)):
        ref = rgb[cy, cx]
        within = np.sqrt(((rgb - ref) ** 2).sum(axis=2)) <= tol
        seen = np.zeros((h, w), dtype=bool)
        seen[cy, cx] = True  # corner is distance 0 from itself
        while True:
            grown = seen.copy()
            grown[1:, :] |= seen[:-1, :]
            grown[:-1, :] |= seen[1:, :]
            grown[:, 1:] |= seen[:, :-1]
            grown[:, :-1] |= seen[:, 1:]
            grown &= within
            if np.array_equal(grown, seen):
                break
            seen = grown
        cleared |= seen
    out = image.copy()
    out[:, :, 3] = np.where(cleared, 0.0, image[:, :, 3])
    return out


def level_for(patch: Patch, max_dim: int) -> np.ndarray:
    """Highest-resolution level whose max dimension fits within max_dim.

    Falls back to the lowest level when even that one is too large.
    """
    for level in patch.levels:
        if max(level.shape[:2]) <= max_dim:
            return level
    return patch.levels[-1]
