"""Differentiable collage rendering and its hand-derived backward pass.

Forward: every canvas pixel p (normalized so the longer canvas side spans
[-1, 1], pixel centers at half-integers) is inverse-warped into each
patch's frame, u = M_inv @ p, and the patch RGBA is bilinearly sampled
there with zero padding.  A patch's frame also puts its longer side on
[-1, 1] so rotation stays shape-true.  Per-pixel contributions combine
under one of three modes:

    transparency         I = clamp(bg + sum_i a_i * m_i * rgb_i, 0, 1)
    masked_transparency  I = (bg*eps + sum_i a_i * m_i * rgb_i) / (eps + sum_i a_i)
    opacity              w_i = sigmoid(order_i) * a_i
                         I = (bg*eps + sum_i w_i * m_i * rgb_i) / (eps + sum_i w_i)

Backward: exact adjoints of the compositing, the bilinear sample (its
standard piecewise-linear derivative), the matrix inverse and the raw
parameter squashing.  The transparency clamp passes zero gradient where
the pre-clamp sum saturates above 1.

All math runs in float64 with per-patch accumulation in patch-index
order, so results are reproducible bit-for-bit; patch pixels are stored
float32 and promote exactly.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .patches import Patch, PatchLibrary, level_for
from .transforms import build_matrix, invert_matrix, matrix_with_raw_grads, squash


class Compositing(str, enum.Enum):
    TRANSPARENCY = "transparency"
    MASKED_TRANSPARENCY = "masked_transparency"
    OPACITY = "opacity"


@dataclass(frozen=True)
class RenderMode:
    kind: Compositing = Compositing.TRANSPARENCY
    epsilon: float = 1e-6

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass(frozen=True)
class CanvasSpec:
    width: int
    height: int
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.width < 8 or self.height < 8:
            raise ValueError("canvas must be at least 8x8")


@dataclass
class PatchState:
    """One patch's learnable raw parameters plus its library index."""

    patch_id: int
    affine: np.ndarray  # 6 raw reals: tx, ty, rot, scale, squeeze, shear
    color: np.ndarray  # 3 raw reals, sigmoid -> RGB multipliers
    order_raw: float = 0.0

    def copy(self) -> "PatchState":
        return PatchState(
            patch_id=self.patch_id,
            affine=self.affine.copy(),
            color=self.color.copy(),
            order_raw=self.order_raw,
        )


@dataclass
class CollageGenome:
    states: list[PatchState]
    mode: RenderMode
    canvas: CanvasSpec
    base_scale: float = 1.0

    def copy(self) -> "CollageGenome":
        return CollageGenome(
            states=[s.copy() for s in self.states],
            mode=self.mode,
            canvas=self.canvas,
            base_scale=self.base_scale,
        )

    def to_param_array(self) -> np.ndarray:
        """Stack raw params as (N, 10): affine 0..5, color 6..8, order 9."""
        n = len(self.states)
        out = np.zeros((n, 10))
        for i, s in enumerate(self.states):
            out[i, 0:6] = s.affine
            out[i, 6:9] = s.color
            out[i, 9] = s.order_raw
        return out

    def set_param_array(self, params: np.ndarray) -> None:
        for i, s in enumerate(self.states):
            s.affine[:] = params[i, 0:6]
            s.color[:] = params[i, 6:9]
            s.order_raw = float(params[i, 9])


@dataclass
class GradientBundle:
    """dLoss/d(raw parameter) for every patch state."""

    d_affine: np.ndarray  # (N, 6)
    d_color: np.ndarray  # (N, 3)
    d_order: np.ndarray  # (N,)

    def to_param_array(self) -> np.ndarray:
        return np.concatenate(
            [self.d_affine, self.d_color, self.d_order[:, None]], axis=1
        )


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _resolve_dims(canvas: CanvasSpec, resolution) -> tuple[int, int]:
    if resolution is None:
        return canvas.width, canvas.height
    if isinstance(resolution, (tuple, list)):
        w, h = int(resolution[0]), int(resolution[1])
    else:
        res = int(resolution)
        if canvas.width >= canvas.height:
            w, h = res, max(1, round(res * canvas.height / canvas.width))
        else:
            w, h = max(1, round(res * canvas.width / canvas.height)), res
    if w < 8 or h < 8:
        raise ValueError("render resolution must be at least 8 pixels")
    return w, h


def _pixel_grid(width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Normalized pixel-center coordinates, longer side spanning [-1, 1]."""
    half = max(width, height) * 0.5
    xs = (np.arange(width, dtype=np.float64) + 0.5 - width * 0.5) / half
    ys = (np.arange(height, dtype=np.float64) + 0.5 - height * 0.5) / half
    px = np.broadcast_to(xs[None, :], (height, width))
    py = np.broadcast_to(ys[:, None], (height, width))
    return px, py


def _fetch(level: np.ndarray, yi: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Gather RGBA texels with zero padding outside the patch."""
    ph, pw = level.shape[:2]
    valid = (yi >= 0) & (yi < ph) & (xi >= 0) & (xi < pw)
    yc = np.clip(yi, 0, ph - 1)
    xc = np.clip(xi, 0, pw - 1)
    vals = level[yc, xc].astype(np.float64)
    vals[~valid] = 0.0
    return vals


def _sample_positions(level: np.ndarray, b: np.ndarray, px: np.ndarray, py: np.ndarray):
    """Inverse-warp canvas coords into texel space of `level`."""
    ph, pw = level.shape[:2]
    pmax_half = max(pw, ph) * 0.5
    ux = b[0, 0] * px + b[0, 1] * py + b[0, 2]
    uy = b[1, 0] * px + b[1, 1] * py + b[1, 2]
    sx = ux * pmax_half + (pw * 0.5 - 0.5)
    sy = uy * pmax_half + (ph * 0.5 - 0.5)
    return sx, sy, pmax_half


def _bilinear(level: np.ndarray, sx: np.ndarray, sy: np.ndarray, with_grad: bool = False):
    """Bilinear RGBA sample at continuous texel coords, zero outside."""
    x0 = np.floor(sx)
    y0 = np.floor(sy)
    fx = sx - x0
    fy = sy - y0
    x0i = x0.astype(np.int64)
    y0i = y0.astype(np.int64)
    p00 = _fetch(level, y0i, x0i)
    p01 = _fetch(level, y0i, x0i + 1)
    p10 = _fetch(level, y0i + 1, x0i)
    p11 = _fetch(level, y0i + 1, x0i + 1)
    wx0 = 1.0 - fx
    wy0 = 1.0 - fy
    fxc = fx[..., None]
    fyc = fy[..., None]
    wx0c = wx0[..., None]
    wy0c = wy0[..., None]
    val = wy0c * (wx0c * p00 + fxc * p01) + fyc * (wx0c * p10 + fxc * p11)
    if not with_grad:
        return val
    dvdx = wy0c * (p01 - p00) + fyc * (p11 - p10)
    dvdy = wx0c * (p10 - p00) + fxc * (p11 - p01)
    return val, dvdx, dvdy


def _patch_level(
    patch: Patch, state: PatchState, max_out: int, base_scale: float, hires: bool
) -> np.ndarray:
    if not hires:
        return level_for(patch, max_out)
    _, _, _, s, q, h = squash(state.affine, base_scale)
    footprint = s * max(q, 1.0 / q) * (1.0 + abs(h)) * max_out
    return level_for(patch, max(1, math.ceil(footprint)))


def _patch_sample(
    library: PatchLibrary,
    state: PatchState,
    base_scale: float,
    px: np.ndarray,
    py: np.ndarray,
    max_out: int,
    hires: bool,
    with_grad: bool = False,
):
    patch = library[state.patch_id]
    level = _patch_level(patch, state, max_out, base_scale, hires)
    m = build_matrix(squash(state.affine, base_scale))
    b = invert_matrix(m)
    sx, sy, pmax_half = _sample_positions(level, b, px, py)
    if with_grad:
        val, dvdx, dvdy = _bilinear(level, sx, sy, with_grad=True)
        return val, dvdx, dvdy, b, pmax_half
    return _bilinear(level, sx, sy)


def render(
    genome: CollageGenome,
    library: PatchLibrary,
    resolution=None,
    hires: bool = False,
) -> np.ndarray:
    """Render the genome to an (H, W, 3) float64 image in [0, 1].

    `resolution` is pixels for the longer side, an explicit (W, H) pair,
    or None for the canvas dimensions.  With hires=True each patch's mip
    level is chosen by its on-canvas footprint instead of the raster size,
    so exports sample the original pixels.
    """
    out_w, out_h = _resolve_dims(genome.canvas, resolution)
    max_out = max(out_w, out_h)
    px, py = _pixel_grid(out_w, out_h)
    bg = np.asarray(genome.canvas.background, dtype=np.float64)
    eps = genome.mode.epsilon
    kind = genome.mode.kind

    if kind is Compositing.TRANSPARENCY:
        acc = np.empty((out_h, out_w, 3))
        acc[:] = bg
        for state in genome.states:
            rgba = _patch_sample(library, state, genome.base_scale, px, py, max_out, hires)
            mult = np.array([_sigmoid(v) for v in state.color])
            acc += rgba[..., 3:4] * (rgba[..., :3] * mult)
        return np.clip(acc, 0.0, 1.0)

    num = np.empty((out_h, out_w, 3))
    num[:] = bg * eps
    den = np.full((out_h, out_w), eps)
    for state in genome.states:
        rgba = _patch_sample(library, state, genome.base_scale, px, py, max_out, hires)
        mult = np.array([_sigmoid(v) for v in state.color])
        colored = rgba[..., :3] * mult
        if kind is Compositing.MASKED_TRANSPARENCY:
            num += rgba[..., 3:4] * colored
            den += rgba[..., 3]
        else:  # opacity
            w = _sigmoid(state.order_raw) * rgba[..., 3]
            num += w[..., None] * colored
            den += w
    return num / den[..., None]


def render_hires(genome: CollageGenome, library: PatchLibrary, out_width: int, out_height: int) -> np.ndarray:
    """Render at export resolution, sampling high-resolution patch levels."""
    return render(genome, library, (out_width, out_height), hires=True)


def backward(
    genome: CollageGenome,
    library: PatchLibrary,
    dL_dImage: np.ndarray,
    resolution=None,
) -> GradientBundle:
    """Backpropagate dLoss/dImage to every raw patch parameter.

    Runs the forward pass once to get the per-pixel normalizers, then one
    pass per patch applying the chain rule through compositing, bilinear
    sampling, the inverse warp and the parameter squashing.
    """
    out_w, out_h = _resolve_dims(genome.canvas, resolution)
    g = np.asarray(dL_dImage, dtype=np.float64)
    if g.shape != (out_h, out_w, 3):
        raise ValueError(f"dL_dImage shape {g.shape} != render shape {(out_h, out_w, 3)}")
    if not np.all(np.isfinite(g)):
        raise ValueError("dL_dImage must be finite")

    max_out = max(out_w, out_h)
    px, py = _pixel_grid(out_w, out_h)
    bg = np.asarray(genome.canvas.background, dtype=np.float64)
    eps = genome.mode.epsilon
    kind = genome.mode.kind
    n = len(genome.states)
    bundle = GradientBundle(
        d_affine=np.zeros((n, 6)), d_color=np.zeros((n, 3)), d_order=np.zeros(n)
    )

    # pass 1: per-pixel sums the per-patch adjoints depend on
    if kind is Compositing.TRANSPARENCY:
        pre = np.empty((out_h, out_w, 3))
        pre[:] = bg
        for state in genome.states:
            rgba = _patch_sample(library, state, genome.base_scale, px, py, max_out, False)
            mult = np.array([_sigmoid(v) for v in state.color])
            pre += rgba[..., 3:4] * (rgba[..., :3] * mult)
        g_eff = np.where(pre <= 1.0, g, 0.0)
        den = None
        img = None
    else:
        num = np.empty((out_h, out_w, 3))
        num[:] = bg * eps
        den = np.full((out_h, out_w), eps)
        for state in genome.states:
            rgba = _patch_sample(library, state, genome.base_scale, px, py, max_out, False)
            mult = np.array([_sigmoid(v) for v in state.color])
            colored = rgba[..., :3] * mult
            if kind is Compositing.MASKED_TRANSPARENCY:
                num += rgba[..., 3:4] * colored
                den += rgba[..., 3]
            else:
                w = _sigmoid(state.order_raw) * rgba[..., 3]
                num += w[..., None] * colored
                den += w
        img = num / den[..., None]
        g_eff = g / den[..., None]

    # pass 2: per-patch adjoints
    for i, state in enumerate(genome.states):
        rgba, dvdx, dvdy, b, pmax_half = _patch_sample(
            library, state, genome.base_scale, px, py, max_out, False, with_grad=True
        )
        alpha = rgba[..., 3]
        rgb = rgba[..., :3]
        mult = np.array([_sigmoid(v) for v in state.color])
        colored = rgb * mult

        if kind is Compositing.TRANSPARENCY:
            d_colored = g_eff * alpha[..., None]
            d_alpha = (g_eff * colored).sum(axis=2)
        elif kind is Compositing.MASKED_TRANSPARENCY:
            d_colored = g_eff * alpha[..., None]
            d_alpha = (g_eff * (colored - img)).sum(axis=2)
        else:
            o = _sigmoid(state.order_raw)
            w = o * alpha
            d_colored = g_eff * w[..., None]
            d_w = (g_eff * (colored - img)).sum(axis=2)
            d_alpha = d_w * o
            d_o = float((d_w * alpha).sum())
            bundle.d_order[i] = d_o * o * (1.0 - o)

        # color multipliers: colored_k = m_k * rgb_k
        d_mult = (d_colored * rgb).sum(axis=(0, 1))
        bundle.d_color[i] = d_mult * mult * (1.0 - mult)

        # spatial chain: sampled channels -> texel coords -> inverse matrix
        d_rgb = d_colored * mult
        d_sx = (d_rgb * dvdx[..., :3]).sum(axis=2) + d_alpha * dvdx[..., 3]
        d_sy = (d_rgb * dvdy[..., :3]).sum(axis=2) + d_alpha * dvdy[..., 3]
        d_ux = d_sx * pmax_half
        d_uy = d_sy * pmax_half

        g_b = np.zeros((3, 3))
        g_b[0, 0] = (d_ux * px).sum()
        g_b[0, 1] = (d_ux * py).sum()
        g_b[0, 2] = d_ux.sum()
        g_b[1, 0] = (d_uy * px).sum()
        g_b[1, 1] = (d_uy * py).sum()
        g_b[1, 2] = d_uy.sum()

        # B = M^-1  =>  dL/dM = -B^T @ dL/dB @ B^T
        g_m = -b.T @ g_b @ b.T
        _, dm = matrix_with_raw_grads(state.affine, genome.base_scale)
        bundle.d_affine[i] = (dm * g_m[None, :, :]).sum(axis=(1, 2))

    return bundle


def hit_test(genome: CollageGenome, library: PatchLibrary, x: int, y: int, resolution=None):
    """Index of the patch with the strongest weight at pixel (x, y).

    Opacity weighs by sigmoid(order) * alpha, the other modes by alpha.
    Ties break toward the larger order weight, then the larger index.
    Returns None when every weight is below 1e-6.
    """
    out_w, out_h = _resolve_dims(genome.canvas, resolution)
    if not (0 <= x < out_w and 0 <= y < out_h):
        raise ValueError(f"pixel ({x}, {y}) outside {out_w}x{out_h} canvas")
    half = max(out_w, out_h) * 0.5
    px = np.full((1, 1), (x + 0.5 - out_w * 0.5) / half)
    py = np.full((1, 1), (y + 0.5 - out_h * 0.5) / half)
    max_out = max(out_w, out_h)

    best = None
    for i, state in enumerate(genome.states):
        rgba = _patch_sample(library, state, genome.base_scale, px, py, max_out, False)
        alpha = float(rgba[0, 0, 3])
        order = _sigmoid(state.order_raw)
        weight = order * alpha if genome.mode.kind is Compositing.OPACITY else alpha
        if weight < 1e-6:
            continue
        key = (weight, order, i)
        if best is None or key >= best[0]:
            best = (key, i)
    return None if best is None else best[1]
