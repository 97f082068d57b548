"""Shared builders for test patches, libraries and genomes."""

from __future__ import annotations

import numpy as np
from PIL import Image

from collage_forge.patches import Patch, PatchLibrary, build_mip_chain
from collage_forge.renderer import CanvasSpec, CollageGenome, Compositing, PatchState, RenderMode


def write_png(path, array_u8: np.ndarray) -> None:
    mode = "RGBA" if array_u8.shape[2] == 4 else "RGB"
    Image.fromarray(array_u8, mode).save(path)


def make_memory_library(arrays, target_lo_res: int = 8) -> PatchLibrary:
    """Library straight from float32 RGBA arrays, no files involved."""
    patches = []
    for i, arr in enumerate(arrays):
        patches.append(
            Patch(
                id=i,
                name=f"mem{i}",
                levels=build_mip_chain(np.asarray(arr, dtype=np.float32), target_lo_res),
                source_path="<memory>",
            )
        )
    return PatchLibrary(patches=patches)


def uniform_patch(h: int, w: int, rgb, alpha: float = 1.0) -> np.ndarray:
    arr = np.zeros((h, w, 4), dtype=np.float32)
    arr[..., 0], arr[..., 1], arr[..., 2] = rgb
    arr[..., 3] = alpha
    return arr


def textured_patch(rng: np.random.Generator, h: int, w: int, opaque: bool = True) -> np.ndarray:
    arr = rng.random((h, w, 4)).astype(np.float32)
    if opaque:
        arr[..., 3] = 1.0
    return arr


def random_genome(
    rng: np.random.Generator,
    library: PatchLibrary,
    n: int,
    mode: Compositing,
    canvas: CanvasSpec,
    color_loc: float = 0.0,
) -> CollageGenome:
    states = []
    for _ in range(n):
        affine = np.zeros(6)
        affine[0:2] = rng.normal(0.0, 0.4, size=2)
        affine[2] = rng.normal(0.0, 0.5)
        affine[3:6] = rng.normal(0.0, 0.3, size=3)
        states.append(
            PatchState(
                patch_id=int(rng.integers(len(library))),
                affine=affine,
                color=rng.normal(color_loc, 0.4, size=3),
                order_raw=float(rng.normal(0.0, 0.5)),
            )
        )
    return CollageGenome(states=states, mode=RenderMode(mode), canvas=canvas)
