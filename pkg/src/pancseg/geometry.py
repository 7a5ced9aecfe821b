"""Grid resampling between voxel spacings.

Conventions, fixed so that independent implementations can agree exactly:

- Voxel-center (pixel-as-area) alignment.  The center of output voxel ``j``
  lies at ``corner + (j + 0.5) * target_spacing`` where ``corner`` is the
  physical edge of the volume; in source index space that is
  ``c = (j + 0.5) * target_spacing / source_spacing - 0.5``.
- Target dims use round-half-away-from-zero of
  ``source_dims * source_spacing / target_spacing``, floor-clamped to 1.
- Out-of-bounds samples clamp to the edge voxel (no mirror or zero padding).
- Tricubic kernel is Catmull-Rom (a = -0.5); trilinear and nearest as usual.
  Nearest rounds half up, ``floor(c + 0.5)``.
- Label maps resample either nearest (order 0) or by trilinear interpolation
  of one-hot indicators with argmax decoding, ties to the lowest label id
  (order 1).  Either way the output label set is a subset of the input's.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, GridMismatchError
from .volume import Volume

IMAGE_ORDERS = (0, 1, 3)
LABEL_ORDERS = (0, 1)

SPACING_RTOL = 1e-5


def target_grid(source_dims, source_spacing, target_spacing) -> tuple[int, int, int]:
    """Output dims for a spacing change, round-half-away-from-zero, min 1."""
    if any(s <= 0 for s in source_spacing) or any(t <= 0 for t in target_spacing):
        raise ConfigError("spacings must be positive")
    if any(d < 1 for d in source_dims):
        raise ConfigError("dims must be >= 1")
    out = []
    for d, s, t in zip(source_dims, source_spacing, target_spacing):
        out.append(max(1, math.floor(d * s / t + 0.5)))
    return tuple(out)


@dataclass(frozen=True)
class ResamplePlan:
    """A resampling recipe from one regular grid to another.

    ``target_dims`` is always derived from the other fields.  Order pairs
    correspond to the named interpolation variants: (3, 1) cubic image with
    one-hot-linear labels, (0, 0) nearest for both, (3, 0) cubic image with
    nearest labels.
    """

    source_dims: tuple[int, int, int]
    source_spacing: tuple[float, float, float]
    target_spacing: tuple[float, float, float]
    image_order: int = 3
    label_order: int = 1
    clamp_cubic: bool = False
    target_dims: tuple[int, int, int] = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "source_dims", tuple(int(d) for d in self.source_dims))
        object.__setattr__(
            self, "source_spacing", tuple(float(s) for s in self.source_spacing)
        )
        object.__setattr__(
            self, "target_spacing", tuple(float(s) for s in self.target_spacing)
        )
        if self.image_order not in IMAGE_ORDERS:
            raise ConfigError(f"image_order must be one of {IMAGE_ORDERS}, got {self.image_order}")
        if self.label_order not in LABEL_ORDERS:
            raise ConfigError(f"label_order must be one of {LABEL_ORDERS}, got {self.label_order}")
        dims = target_grid(self.source_dims, self.source_spacing, self.target_spacing)
        object.__setattr__(self, "target_dims", dims)

    @classmethod
    def for_volume(
        cls,
        volume: Volume,
        target_spacing,
        image_order: int = 3,
        label_order: int = 1,
        clamp_cubic: bool = False,
    ) -> "ResamplePlan":
        return cls(
            source_dims=volume.dims,
            source_spacing=volume.spacing,
            target_spacing=tuple(float(s) for s in target_spacing),
            image_order=image_order,
            label_order=label_order,
            clamp_cubic=clamp_cubic,
        )

    def is_identity(self) -> bool:
        return self.source_dims == self.target_dims and all(
            abs(a - b) <= SPACING_RTOL * max(a, b)
            for a, b in zip(self.source_spacing, self.target_spacing)
        )


def _check_plan(volume: Volume, plan: ResamplePlan):
    if volume.dims != plan.source_dims:
        raise GridMismatchError(
            f"plan source dims {plan.source_dims} do not match volume dims {volume.dims}"
        )
    for a, b in zip(volume.spacing, plan.source_spacing):
        if abs(a - b) > SPACING_RTOL * max(abs(a), abs(b)):
            raise GridMismatchError(
                f"plan source spacing {plan.source_spacing} does not match "
                f"volume spacing {volume.spacing}"
            )


def _centers(n_tgt: int, s_sp: float, t_sp: float) -> np.ndarray:
    return (np.arange(n_tgt, dtype=np.float64) + 0.5) * (t_sp / s_sp) - 0.5


def interp_taps(c: np.ndarray, n: int, order: int):
    """Tap indices and kernel weights for source coordinates ``c``.

    Returns (taps, weights) with leading axis K = 1/2/4 for order 0/1/3.
    Taps are clipped into [0, n-1], which realizes edge clamping.
    """
    c = np.asarray(c, dtype=np.float64)
    if order == 0:
        idx = np.clip(np.floor(c + 0.5).astype(np.int64), 0, n - 1)
        return idx[np.newaxis], np.ones((1,) + c.shape)
    base = np.floor(c).astype(np.int64)
    t = c - base
    if order == 1:
        taps = np.stack([base, base + 1])
        weights = np.stack([1.0 - t, t])
    elif order == 3:
        # Catmull-Rom, a = -0.5
        w_m1 = ((-0.5 * t + 1.0) * t - 0.5) * t
        w_0 = (1.5 * t - 2.5) * t * t + 1.0
        w_p1 = ((-1.5 * t + 2.0) * t + 0.5) * t
        w_p2 = (0.5 * t - 0.5) * t * t
        taps = np.stack([base - 1, base, base + 1, base + 2])
        weights = np.stack([w_m1, w_0, w_p1, w_p2])
    else:
        raise ConfigError(f"unsupported interpolation order {order}")
    return np.clip(taps, 0, n - 1), weights


def _resample_grid_nearest(data: np.ndarray, plan: ResamplePlan) -> np.ndarray:
    idx = []
    for ax in range(3):
        c = _centers(plan.target_dims[ax], plan.source_spacing[ax], plan.target_spacing[ax])
        taps, _ = interp_taps(c, plan.source_dims[ax], 0)
        idx.append(taps[0])
    return data[np.ix_(idx[0], idx[1], idx[2])]


def _resample_grid_interp(data: np.ndarray, plan: ResamplePlan, order: int) -> np.ndarray:
    out = data.astype(np.float64, copy=False)
    for ax in range(3):
        c = _centers(plan.target_dims[ax], plan.source_spacing[ax], plan.target_spacing[ax])
        taps, weights = interp_taps(c, plan.source_dims[ax], order)
        acc = None
        wshape = [1, 1, 1]
        wshape[ax] = taps.shape[1]
        for k in range(taps.shape[0]):
            term = np.take(out, taps[k], axis=ax) * weights[k].reshape(wshape)
            acc = term if acc is None else acc + term
        out = acc
    return out


def resample_image(volume: Volume, plan: ResamplePlan) -> Volume:
    """Resample a scalar image onto the plan's target grid.

    Order 0 is a pure gather and preserves dtype bit-exactly (the identity
    plan returns identical voxels); orders 1 and 3 compute in float64 and
    return float64 for float64 input, float32 otherwise.
    """
    if volume.kind != "image":
        raise GridMismatchError(f"resample_image expects an image volume, got {volume.kind}")
    _check_plan(volume, plan)
    if plan.image_order == 0:
        out = _resample_grid_nearest(volume.data, plan)
    else:
        out = _resample_grid_interp(volume.data, plan, plan.image_order)
        if plan.image_order == 3 and plan.clamp_cubic:
            out = np.clip(out, float(volume.data.min()), float(volume.data.max()))
        if volume.data.dtype != np.float64:
            out = out.astype(np.float32)
    origin = tuple(
        o - 0.5 * s + 0.5 * t
        for o, s, t in zip(volume.origin, plan.source_spacing, plan.target_spacing)
    )
    return Volume(
        data=out,
        spacing=plan.target_spacing,
        origin=origin,
        kind="image",
        meta=dict(volume.meta),
    )


def resample_labels(volume: Volume, plan: ResamplePlan) -> Volume:
    """Resample a label map; output labels always come from the input set."""
    if volume.kind != "labels":
        raise GridMismatchError(f"resample_labels expects a label volume, got {volume.kind}")
    _check_plan(volume, plan)
    if plan.label_order == 0:
        out = _resample_grid_nearest(volume.data, plan)
    else:
        values = np.unique(volume.data)
        if len(values) == 1:
            out = np.full(plan.target_dims, values[0], dtype=volume.data.dtype)
        else:
            # one-hot channels interpolated trilinearly; argmax with np.argmax
            # returns the first (= lowest, values sorted) label on ties
            scores = np.stack(
                [
                    _resample_grid_interp((volume.data == v).astype(np.float64), plan, 1)
                    for v in values
                ]
            )
            out = values[np.argmax(scores, axis=0)].astype(volume.data.dtype)
    origin = tuple(
        o - 0.5 * s + 0.5 * t
        for o, s, t in zip(volume.origin, plan.source_spacing, plan.target_spacing)
    )
    return Volume(
        data=out,
        spacing=plan.target_spacing,
        origin=origin,
        kind="labels",
        meta=dict(volume.meta),
    )


def sample_points(data: np.ndarray, coords: np.ndarray, order: int) -> np.ndarray:
    """Sample a 3D scalar array at fractional index coordinates.

    ``coords`` has shape ``(3,) + S``; the result has shape ``S``.  Uses the
    same kernels and edge clamping as grid resampling, so a separable grid
    resample and a point sample at the grid centers agree to rounding error.
    Order 0 preserves dtype; higher orders return float64.
    """
    coords = np.asarray(coords, dtype=np.float64)
    if order == 0:
        idx = [
            np.clip(np.floor(coords[ax] + 0.5).astype(np.int64), 0, data.shape[ax] - 1)
            for ax in range(3)
        ]
        return data[idx[0], idx[1], idx[2]]
    taps = []
    weights = []
    for ax in range(3):
        t, w = interp_taps(coords[ax], data.shape[ax], order)
        taps.append(t)
        weights.append(w)
    src = data.astype(np.float64, copy=False)
    out = np.zeros(coords.shape[1:], dtype=np.float64)
    n_taps = taps[0].shape[0]
    for a in range(n_taps):
        wa = weights[0][a]
        ia = taps[0][a]
        for b in range(n_taps):
            wab = wa * weights[1][b]
            ib = taps[1][b]
            for k in range(n_taps):
                out += (wab * weights[2][k]) * src[ia, ib, taps[2][k]]
    return out
