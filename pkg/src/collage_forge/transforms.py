"""Parameter squashing and 3x3 affine matrix construction.

Every learnable quantity is an unconstrained raw real.  Squashing maps
raw values to bounded, human-meaningful effective values:

    translation x, y : tanh(raw)              in [-1, 1] canvas units
    rotation         : raw                    radians, periodic, unbounded
    scale            : exp(tanh(raw)*ln2) * S in [S/2, 2S]
    squeeze          : exp(tanh(raw)*ln2)     in [1/2, 2]
    shear            : tanh(raw)              factor, x' = x + h*y

Rotation stays unsquashed so its gradient never saturates.  Scale and
squeeze live in log space so raw 0 is an exact identity.  The matrix is
composed as T(tx,ty) @ R(rot) @ ShearX(h) @ Scale(s*q, s/q); squeeze is
anisotropic scale, area-preserving at fixed s.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LN2 = math.log(2.0)

# from_human clamps to the 99.99% span of each squashing function so the
# inverse (atanh / logit) stays finite.
TANH_SPAN = 0.9999
SIGMOID_LO = 0.00005
SIGMOID_HI = 1.0 - SIGMOID_LO

AFFINE_FIELDS = ("x", "y", "rotation", "scale", "squeeze", "shear")


class DegenerateMatrixError(Exception):
    """Matrix inversion failed (determinant within 1e-12 of zero)."""


def squash(raw: np.ndarray, base_scale: float = 1.0):
    """Map 6 raw affine params to (tx, ty, rot, scale, squeeze, shear)."""
    tx = math.tanh(raw[0])
    ty = math.tanh(raw[1])
    rot = float(raw[2])
    s = math.exp(math.tanh(raw[3]) * LN2) * base_scale
    q = math.exp(math.tanh(raw[4]) * LN2)
    h = math.tanh(raw[5])
    return (tx, ty, rot, s, q, h)


def squash_jacobian(raw: np.ndarray, base_scale: float = 1.0) -> np.ndarray:
    """d(effective_i)/d(raw_i); the squash map is componentwise."""
    _, _, _, s, q, _ = squash(raw, base_scale)
    return np.array(
        [
            1.0 - math.tanh(raw[0]) ** 2,
            1.0 - math.tanh(raw[1]) ** 2,
            1.0,
            s * LN2 * (1.0 - math.tanh(raw[3]) ** 2),
            q * LN2 * (1.0 - math.tanh(raw[4]) ** 2),
            1.0 - math.tanh(raw[5]) ** 2,
        ]
    )


def build_matrix(effective) -> np.ndarray:
    """3x3 affine from effective params: T @ R @ ShearX @ Scale."""
    tx, ty, rot, s, q, h = effective
    c, sn = math.cos(rot), math.sin(rot)
    a, b = s * q, s / q
    return np.array(
        [
            [c * a, (c * h - sn) * b, tx],
            [sn * a, (sn * h + c) * b, ty],
            [0.0, 0.0, 1.0],
        ]
    )


def matrix_with_raw_grads(raw: np.ndarray, base_scale: float = 1.0):
    """Return (M, dM) with dM[k] = dM/d(raw_k), shape (6, 3, 3).

    The chain rule factors through the componentwise squash, so each
    dM/d(raw_k) is dM/d(effective_k) * squash_jacobian[k].
    """
    eff = squash(raw, base_scale)
    tx, ty, rot, s, q, h = eff
    c, sn = math.cos(rot), math.sin(rot)
    a, b = s * q, s / q
    m = build_matrix(eff)

    d_eff = np.zeros((6, 3, 3))
    d_eff[0, 0, 2] = 1.0
    d_eff[1, 1, 2] = 1.0
    # rotation: R' = [[-sn, -c], [c, -sn]] pushed through shear and scale
    d_eff[2, 0, 0] = -sn * a
    d_eff[2, 0, 1] = (-sn * h - c) * b
    d_eff[2, 1, 0] = c * a
    d_eff[2, 1, 1] = (c * h - sn) * b
    # scale: a' = q, b' = 1/q
    d_eff[3, 0, 0] = c * q
    d_eff[3, 0, 1] = (c * h - sn) / q
    d_eff[3, 1, 0] = sn * q
    d_eff[3, 1, 1] = (sn * h + c) / q
    # squeeze: a' = s, b' = -s/q^2
    d_eff[4, 0, 0] = c * s
    d_eff[4, 0, 1] = -(c * h - sn) * s / (q * q)
    d_eff[4, 1, 0] = sn * s
    d_eff[4, 1, 1] = -(sn * h + c) * s / (q * q)
    # shear
    d_eff[5, 0, 1] = c * b
    d_eff[5, 1, 1] = sn * b

    jac = squash_jacobian(raw, base_scale)
    return m, d_eff * jac[:, None, None]


def invert_matrix(m: np.ndarray) -> np.ndarray:
    """Invert a 3x3 affine matrix with bottom row (0, 0, 1)."""
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    if abs(det) < 1e-12:
        raise DegenerateMatrixError(f"affine determinant {det} too close to zero")
    ia, ib = m[1, 1] / det, -m[0, 1] / det
    ic, id_ = -m[1, 0] / det, m[0, 0] / det
    return np.array(
        [
            [ia, ib, -(ia * m[0, 2] + ib * m[1, 2])],
            [ic, id_, -(ic * m[0, 2] + id_ * m[1, 2])],
            [0.0, 0.0, 1.0],
        ]
    )


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def canvas_half_extent(width: int, height: int) -> float:
    """Pixels per normalized unit: the longer canvas side spans [-1, 1]."""
    return max(width, height) / 2.0


@dataclass(frozen=True)
class HumanPose:
    """A patch pose in UI units: pixels, degrees, unit-interval sliders."""

    x: float
    y: float
    rotation: float
    scale: float
    squeeze: float
    shear: float
    rgb: tuple[float, float, float]
    order: float


def to_human(
    affine_raw: np.ndarray,
    color_raw: np.ndarray,
    order_raw: float,
    width: int,
    height: int,
    base_scale: float = 1.0,
) -> HumanPose:
    tx, ty, rot, s, q, h = squash(affine_raw, base_scale)
    half = canvas_half_extent(width, height)
    return HumanPose(
        x=width / 2.0 + tx * half,
        y=height / 2.0 + ty * half,
        rotation=math.degrees(rot),
        scale=s,
        squeeze=q,
        shear=h,
        rgb=tuple(_sigmoid(float(v)) for v in color_raw),
        order=_sigmoid(float(order_raw)),
    )


@dataclass(frozen=True)
class RawPoseUpdate:
    """Raw-parameter writes produced by from_human.

    affine maps raw indices (0..5) to new values; color_rgb and order_raw
    are present only when the pose supplied them.  clamped reports whether
    any value was pulled back into the squashable range.
    """

    affine: dict[int, float]
    color_rgb: tuple[float, float, float] | None
    order_raw: float | None
    clamped: bool


def _clamp_tanh(v: float) -> tuple[float, bool]:
    if v > TANH_SPAN:
        return TANH_SPAN, True
    if v < -TANH_SPAN:
        return -TANH_SPAN, True
    return v, False


def _clamp_sigmoid(v: float) -> tuple[float, bool]:
    if v > SIGMOID_HI:
        return SIGMOID_HI, True
    if v < SIGMOID_LO:
        return SIGMOID_LO, True
    return v, False


def from_human(
    fields: dict,
    width: int,
    height: int,
    base_scale: float = 1.0,
) -> RawPoseUpdate:
    """Convert a (partial) HumanPose field dict back to raw parameters.

    Accepts any subset of the HumanPose field names.  Out-of-range values
    clamp to the 99.99% span of the squashing function and set `clamped`.
    """
    half = canvas_half_extent(width, height)
    affine: dict[int, float] = {}
    clamped = False

    if "x" in fields:
        v, c = _clamp_tanh((float(fields["x"]) - width / 2.0) / half)
        affine[0] = math.atanh(v)
        clamped |= c
    if "y" in fields:
        v, c = _clamp_tanh((float(fields["y"]) - height / 2.0) / half)
        affine[1] = math.atanh(v)
        clamped |= c
    if "rotation" in fields:
        affine[2] = math.radians(float(fields["rotation"]))
    if "scale" in fields:
        s = float(fields["scale"])
        t = math.log(s / base_scale) / LN2 if s > 0 else -math.inf
        v, c = _clamp_tanh(t)
        affine[3] = math.atanh(v)
        clamped |= c or s <= 0
    if "squeeze" in fields:
        qv = float(fields["squeeze"])
        t = math.log(qv) / LN2 if qv > 0 else -math.inf
        v, c = _clamp_tanh(t)
        affine[4] = math.atanh(v)
        clamped |= c or qv <= 0
    if "shear" in fields:
        v, c = _clamp_tanh(float(fields["shear"]))
        affine[5] = math.atanh(v)
        clamped |= c

    color_rgb = None
    if "rgb" in fields:
        vals = []
        for component in fields["rgb"]:
            v, c = _clamp_sigmoid(float(component))
            vals.append(_logit(v))
            clamped |= c
        if len(vals) != 3:
            raise ValueError("rgb must have exactly 3 components")
        color_rgb = (vals[0], vals[1], vals[2])

    order_raw = None
    if "order" in fields:
        v, c = _clamp_sigmoid(float(fields["order"]))
        order_raw = _logit(v)
        clamped |= c

    return RawPoseUpdate(affine=affine, color_rgb=color_rgb, order_raw=order_raw, clamped=clamped)


def initial_patch_params(rng: np.random.Generator):
    """Raw parameter init: dispersed translation/rotation, identity shape.

    Translation and rotation draw from Normal(0, 0.5); scale, squeeze,
    shear, color and order start at raw 0 (identity shape, 0.5 color
    multipliers, 0.5 order weight).
    """
    affine = np.zeros(6)
    affine[:3] = rng.normal(0.0, 0.5, size=3)
    color = np.zeros(3)
    return affine, color, 0.0
