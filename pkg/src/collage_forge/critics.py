"""Critics score an image and return dLoss/dImage; layouts compose them.

Three critic kinds share one calling convention:

    target_image      mean squared error against a reference image
    pseudo_embedding  1 - cosine between a fixed seeded random projection
                      of the pixels and a fixed seeded unit vector; a
                      cheap, deterministic stand-in for an encoder
    remote            HTTP sidecar speaking the wire protocol below

All losses are positive so the harmonic mean is well-defined: cosine
critics live in (0, 2], MSE gets a 1e-12 floor.

A RegionLayout carves a C x C image into g x g overlapping k x k crops
at stride (C - k)/(g - 1), each with its own critic, plus an optional
global critic that sees the whole image box-downsampled to k x k.  Loss
gradients from every crop are scaled by the aggregation derivative and
scattered back onto the canvas, overlaps summing; the global gradient
comes back through the box-filter adjoint (uniform spread).

Wire protocol (POST {endpoint}/score, header X-Critic-Proto: 1):
    request  {"width", "height", "prompt", "pixels_b64", "need_grad"}
             pixels_b64 = base64 of little-endian float32 row-major HxWx3
    response {"loss": float, "grad_b64": base64 of LE float32 HxWx3}
"""

from __future__ import annotations

import base64
import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import httpx
import numpy as np

PROTOCOL_VERSION = "1"
DEFAULT_TIMEOUT = 30.0
EMBED_DIM = 64


class CriticUnavailableError(Exception):
    """The remote critic could not be reached; pause, do not crash."""


class ProtocolError(Exception):
    """The remote critic answered with a malformed or non-finite payload."""


class AggregationError(Exception):
    """Harmonic aggregation needs strictly positive per-critic losses."""


class CriticKind(str, enum.Enum):
    TARGET_IMAGE = "target_image"
    PSEUDO_EMBEDDING = "pseudo_embedding"
    REMOTE = "remote"


class LossAggregation(str, enum.Enum):
    ARITHMETIC = "arithmetic"
    HARMONIC = "harmonic"


@dataclass(frozen=True)
class CriticSpec:
    kind: CriticKind
    prompt: str = ""
    target: np.ndarray | None = None  # (H, W, 3) in [0, 1], target_image only
    seed: int = 0  # pseudo_embedding only
    endpoint: str = ""  # remote only
    timeout: float = DEFAULT_TIMEOUT

    def __post_init__(self):
        if self.kind is CriticKind.TARGET_IMAGE and self.target is None:
            raise ValueError("target_image critic needs a target array")
        if self.kind is CriticKind.REMOTE and not self.endpoint:
            raise ValueError("remote critic needs an endpoint URL")


@dataclass(frozen=True)
class CriticReport:
    losses: list[float]
    aggregate: float
    dL_dImage: np.ndarray


def encode_pixels(image: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(image, dtype="<f4").tobytes()).decode("ascii")


def decode_pixels(b64: str, shape: tuple[int, ...]) -> np.ndarray:
    try:
        raw = base64.b64decode(b64, validate=True)
        arr = np.frombuffer(raw, dtype="<f4")
    except Exception as exc:
        raise ProtocolError(f"undecodable pixel payload: {exc}") from exc
    if arr.size != int(np.prod(shape)):
        raise ProtocolError(f"payload has {arr.size} floats, expected {np.prod(shape)}")
    return arr.reshape(shape).astype(np.float64)


@lru_cache(maxsize=8)
def _pseudo_basis(seed: int, n: int):
    rng = np.random.default_rng(seed)
    projection = rng.standard_normal((EMBED_DIM, n))
    e = rng.standard_normal(EMBED_DIM)
    return projection, e / np.linalg.norm(e)


def _evaluate_target(critic: CriticSpec, image: np.ndarray):
    target = np.asarray(critic.target, dtype=np.float64)
    if target.shape != image.shape:
        raise ValueError(f"target shape {target.shape} != image shape {image.shape}")
    diff = image - target
    loss = float(np.mean(diff * diff)) + 1e-12
    grad = 2.0 * diff / diff.size
    return loss, grad


def _evaluate_pseudo(critic: CriticSpec, image: np.ndarray):
    flat = image.reshape(-1)
    projection, e = _pseudo_basis(critic.seed, flat.size)
    z = projection @ flat
    zn = max(float(np.linalg.norm(z)), 1e-12)
    cos = float(z @ e) / zn
    loss = 1.0 - cos
    # d(cos)/dz = e/|z| - cos * z/|z|^2
    dz = -(e / zn - cos * z / (zn * zn))
    grad = (projection.T @ dz).reshape(image.shape)
    return loss, grad


def remote_score(
    endpoint: str,
    prompt: str,
    image: np.ndarray,
    timeout: float = DEFAULT_TIMEOUT,
    need_grad: bool = True,
):
    """POST the image to a sidecar critic and return (loss, grad)."""
    h, w = image.shape[:2]
    payload = {
        "width": int(w),
        "height": int(h),
        "prompt": prompt,
        "pixels_b64": encode_pixels(image),
        "need_grad": need_grad,
    }
    try:
        resp = httpx.post(
            endpoint.rstrip("/") + "/score",
            json=payload,
            timeout=timeout,
            headers={"X-Critic-Proto": PROTOCOL_VERSION},
        )
    except httpx.HTTPError as exc:
        raise CriticUnavailableError(f"critic at {endpoint} unreachable: {exc}") from exc
    if resp.status_code != 200:
        raise CriticUnavailableError(f"critic at {endpoint} returned HTTP {resp.status_code}")
    try:
        body = resp.json()
        loss = float(body["loss"])
        grad_b64 = body["grad_b64"] if need_grad else None
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"malformed critic response: {exc}") from exc
    grad = decode_pixels(grad_b64, image.shape) if need_grad else np.zeros_like(image)
    if not math.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise ProtocolError("critic returned non-finite loss or gradient")
    return loss, grad


def evaluate(critic: CriticSpec, image: np.ndarray):
    """Score one image; returns (positive loss, dLoss/dImage)."""
    image = np.asarray(image, dtype=np.float64)
    if critic.kind is CriticKind.TARGET_IMAGE:
        return _evaluate_target(critic, image)
    if critic.kind is CriticKind.PSEUDO_EMBEDDING:
        return _evaluate_pseudo(critic, image)
    return remote_score(critic.endpoint, critic.prompt, image, critic.timeout)


@dataclass(frozen=True)
class RegionLayout:
    """g x g overlapping crops of a C x C canvas plus one global view."""

    grid: int
    crop: int
    canvas_side: int
    region_critics: list[CriticSpec] = field(default_factory=list)
    global_critic: CriticSpec | None = None
    include_global: bool = True

    def __post_init__(self):
        g, k, c = self.grid, self.crop, self.canvas_side
        if g < 1 or k < 1 or k > c:
            raise ValueError(f"invalid layout: grid={g} crop={k} canvas={c}")
        if g == 1:
            if k != c:
                raise ValueError("grid=1 requires crop == canvas side")
        elif (c - k) % (g - 1) != 0:
            raise ValueError(f"(canvas - crop) = {c - k} not divisible by grid - 1 = {g - 1}")
        if self.include_global and c % k != 0:
            raise ValueError("global view needs canvas side divisible by crop")
        if len(self.region_critics) != g * g:
            raise ValueError(f"need {g * g} region critics, got {len(self.region_critics)}")
        if self.include_global and self.global_critic is None:
            raise ValueError("include_global set but no global critic given")

    @property
    def stride(self) -> int:
        if self.grid == 1:
            return 0
        return (self.canvas_side - self.crop) // (self.grid - 1)

    @property
    def total_critics(self) -> int:
        return self.grid * self.grid + (1 if self.include_global else 0)

    def offsets(self) -> list[tuple[int, int]]:
        return [
            (r * self.stride, c * self.stride)
            for r in range(self.grid)
            for c in range(self.grid)
        ]


def box_downsample_rgb(image: np.ndarray, factor: int) -> np.ndarray:
    """Average factor x factor blocks of an (H, W, 3) image."""
    if factor == 1:
        return image
    h, w = image.shape[:2]
    return image.reshape(h // factor, factor, w // factor, factor, 3).mean(axis=(1, 3))


def box_upsample_adjoint(grad: np.ndarray, factor: int) -> np.ndarray:
    """Adjoint of box_downsample_rgb: spread each cell uniformly."""
    if factor == 1:
        return grad
    up = np.repeat(np.repeat(grad, factor, axis=0), factor, axis=1)
    return up / (factor * factor)


def _aggregate(losses: list[float], agg: LossAggregation):
    """Returns (aggregate, d(aggregate)/d(loss_i) weights)."""
    n = len(losses)
    arr = np.asarray(losses, dtype=np.float64)
    if agg is LossAggregation.ARITHMETIC:
        return float(arr.mean()), np.full(n, 1.0 / n)
    if np.any(arr <= 0.0):
        raise AggregationError("harmonic mean needs strictly positive losses")
    inv_sum = float((1.0 / arr).sum())
    aggregate = n / inv_sum
    weights = aggregate * aggregate / (n * arr * arr)
    return float(aggregate), weights


def evaluate_layout(
    layout: RegionLayout,
    agg: LossAggregation,
    image: np.ndarray,
    parallel: bool = False,
) -> CriticReport:
    """Evaluate every region critic plus the global critic and assemble
    the image-space gradient of the aggregated loss.

    Serial and parallel evaluation produce identical reports: critics are
    pure, and the assembly always runs single-threaded in critic order.
    """
    image = np.asarray(image, dtype=np.float64)
    c = layout.canvas_side
    if image.shape != (c, c, 3):
        raise ValueError(f"image shape {image.shape} != ({c}, {c}, 3)")

    k = layout.crop
    offsets = layout.offsets()
    crops = [image[oy : oy + k, ox : ox + k] for oy, ox in offsets]
    critics = list(layout.region_critics)
    factor = c // k
    if layout.include_global:
        crops.append(box_downsample_rgb(image, factor))
        critics.append(layout.global_critic)

    if parallel:
        with ThreadPoolExecutor(max_workers=min(8, len(critics))) as pool:
            results = list(pool.map(evaluate, critics, crops))
    else:
        results = [evaluate(critic, crop) for critic, crop in zip(critics, crops)]

    losses = [loss for loss, _ in results]
    aggregate, weights = _aggregate(losses, agg)

    dl = np.zeros_like(image)
    for idx, (oy, ox) in enumerate(offsets):
        dl[oy : oy + k, ox : ox + k] += weights[idx] * results[idx][1]
    if layout.include_global:
        dl += box_upsample_adjoint(weights[-1] * results[-1][1], factor)
    return CriticReport(losses=losses, aggregate=aggregate, dL_dImage=dl)
