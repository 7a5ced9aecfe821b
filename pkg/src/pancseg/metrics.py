"""The five challenge metrics over binary tumor masks.

Tumor Dice, Surface Dice at tolerance, MASD and HD95 are computed with
area-weighted surfel semantics: surface elements live on the dual grid
between voxels, carry marching-cubes patch areas, and directed distances are
read from the opposing surface's Euclidean distance transform.  Tumor Volume
RMSE is aggregated at cohort level from exact per-case voxel volumes.

Empty masks are handled by an explicit, report-visible policy:

- both masks empty: the prediction is vacuously perfect (dice 1.0, surface
  dice 1.0, masd/hd95 0.0), flagged ``both_empty``;
- exactly one mask empty: dice is 0.0 and the surface metrics are undefined;
  policy ``penalize`` (default) substitutes surface dice 0.0 and the physical
  grid diagonal for masd/hd95 and flags ``penalized``, policy ``exclude``
  leaves them unset and the case is dropped from cohort means.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from .errors import ConfigError, EmptySurfaceError, GridMismatchError, ValidationError
from .surfels import border_map, neighbour_codes, surfel_area_table
from .volume import Volume

EMPTY_POLICIES = ("penalize", "exclude")
VOLUME_UNITS = ("mm3", "ml")

GRID_RTOL = 1e-5

HD_FRACTION = 0.95


@dataclass(frozen=True)
class EvalConfig:
    label_id: int = 2
    tolerance_mm: float = 5.0
    empty_policy: str = "penalize"
    volume_unit: str = "mm3"

    def __post_init__(self):
        if self.tolerance_mm < 0:
            raise ConfigError(f"tolerance_mm must be >= 0, got {self.tolerance_mm}")
        if self.empty_policy not in EMPTY_POLICIES:
            raise ConfigError(f"empty_policy must be one of {EMPTY_POLICIES}")
        if self.volume_unit not in VOLUME_UNITS:
            raise ConfigError(f"volume_unit must be one of {VOLUME_UNITS}")


@dataclass(frozen=True)
class BinaryMask:
    """A boolean voxel mask with physical spacing."""

    bits: np.ndarray
    spacing: tuple[float, float, float]

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.dtype != np.bool_:
            bits = bits.astype(bool)
        if bits.ndim != 3:
            raise ValidationError(f"mask must be 3D, got shape {bits.shape}")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        if any(s <= 0 for s in self.spacing):
            raise ValidationError(f"spacing must be positive, got {self.spacing}")

    @classmethod
    def from_labels(cls, volume: Volume, label_id: int) -> "BinaryMask":
        if volume.kind != "labels":
            raise ValidationError(f"expected a label volume, got {volume.kind}")
        return cls(bits=volume.data == label_id, spacing=volume.spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(d) for d in self.bits.shape)

    def is_empty(self) -> bool:
        return not bool(self.bits.any())

    def physical_diagonal_mm(self) -> float:
        ext = [d * s for d, s in zip(self.dims, self.spacing)]
        return float(np.sqrt(sum(e * e for e in ext)))


def _check_same_grid(ref: BinaryMask, pred: BinaryMask):
    if ref.dims != pred.dims:
        raise GridMismatchError(f"mask dims differ: {ref.dims} vs {pred.dims}")
    for a, b in zip(ref.spacing, pred.spacing):
        if abs(a - b) > GRID_RTOL * max(abs(a), abs(b)):
            raise GridMismatchError(f"mask spacings differ: {ref.spacing} vs {pred.spacing}")


def dice(ref: BinaryMask, pred: BinaryMask) -> tuple[float, tuple[str, ...]]:
    """Volumetric overlap 2|A∩B| / (|A|+|B|), with emptiness flags."""
    _check_same_grid(ref, pred)
    total = int(ref.bits.sum()) + int(pred.bits.sum())
    if total == 0:
        return 1.0, ("both_empty",)
    if ref.is_empty():
        return 0.0, ("ref_empty",)
    if pred.is_empty():
        return 0.0, ("pred_empty",)
    inter = int(np.logical_and(ref.bits, pred.bits).sum())
    return 2.0 * inter / total, ()


def edt(mask: BinaryMask) -> np.ndarray:
    """Exact anisotropic distance (mm) from every voxel center to the nearest
    true voxel center; all +inf when the mask is empty."""
    if mask.is_empty():
        return np.full(mask.dims, np.inf)
    return ndimage.distance_transform_edt(~mask.bits, sampling=mask.spacing)


@dataclass(frozen=True)
class SurfaceDistances:
    """Directed surfel distances and areas, sorted ascending by distance."""

    areas_ref: np.ndarray
    areas_pred: np.ndarray
    dist_ref_to_pred: np.ndarray
    dist_pred_to_ref: np.ndarray

    def __post_init__(self):
        for name in ("areas_ref", "areas_pred", "dist_ref_to_pred", "dist_pred_to_ref"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.areas_ref.shape != self.dist_ref_to_pred.shape:
            raise ValidationError("ref area/distance lists disagree in length")
        if self.areas_pred.shape != self.dist_pred_to_ref.shape:
            raise ValidationError("pred area/distance lists disagree in length")

    def total_area_ref(self) -> float:
        return float(self.areas_ref.sum())

    def total_area_pred(self) -> float:
        return float(self.areas_pred.sum())


def _union_bbox(bits: np.ndarray):
    nz = [np.nonzero(bits.any(axis=tuple(a for a in range(3) if a != ax)))[0] for ax in range(3)]
    if len(nz[0]) == 0:
        return None
    lo = [int(v[0]) for v in nz]
    hi = [int(v[-1]) for v in nz]
    return lo, hi


def _crop_with_pad(bits: np.ndarray, lo, hi) -> np.ndarray:
    # one zero voxel of padding at the high side; the correlate kernel covers
    # the low side through its constant boundary
    out = np.zeros([h - l + 2 for l, h in zip(lo, hi)], dtype=np.uint8)
    out[:-1, :-1, :-1] = bits[lo[0] : hi[0] + 1, lo[1] : hi[1] + 1, lo[2] : hi[2] + 1]
    return out


def surface_distances(ref: BinaryMask, pred: BinaryMask) -> SurfaceDistances:
    """Extract both masks' surfels and the directed distances between them.

    Both masks are cropped to their union bounding box (plus one voxel) so
    the dual grids align; a mask with no voxels contributes no surfels and
    the opposing directed distances are +inf.
    """
    _check_same_grid(ref, pred)
    bbox = _union_bbox(ref.bits | pred.bits)
    if bbox is None:
        raise EmptySurfaceError("both masks are empty; no surface exists")
    lo, hi = bbox
    crop_ref = _crop_with_pad(ref.bits, lo, hi)
    crop_pred = _crop_with_pad(pred.bits, lo, hi)

    codes_ref = neighbour_codes(crop_ref)
    codes_pred = neighbour_codes(crop_pred)
    borders_ref = border_map(codes_ref)
    borders_pred = border_map(codes_pred)

    area_table = surfel_area_table(ref.spacing)
    areas_ref = area_table[codes_ref][borders_ref]
    areas_pred = area_table[codes_pred][borders_pred]

    if borders_ref.any():
        distmap_ref = ndimage.distance_transform_edt(~borders_ref, sampling=ref.spacing)
    else:
        distmap_ref = np.full(borders_ref.shape, np.inf)
    if borders_pred.any():
        distmap_pred = ndimage.distance_transform_edt(~borders_pred, sampling=ref.spacing)
    else:
        distmap_pred = np.full(borders_pred.shape, np.inf)

    dist_ref_to_pred = distmap_pred[borders_ref]
    dist_pred_to_ref = distmap_ref[borders_pred]

    order_ref = np.argsort(dist_ref_to_pred, kind="stable")
    order_pred = np.argsort(dist_pred_to_ref, kind="stable")
    return SurfaceDistances(
        areas_ref=areas_ref[order_ref],
        areas_pred=areas_pred[order_pred],
        dist_ref_to_pred=dist_ref_to_pred[order_ref],
        dist_pred_to_ref=dist_pred_to_ref[order_pred],
    )


def surface_dice(sd: SurfaceDistances, tolerance_mm: float) -> float:
    """Area fraction of both surfaces lying within tolerance of the other."""
    if tolerance_mm < 0:
        raise ConfigError(f"tolerance must be >= 0, got {tolerance_mm}")
    total = sd.total_area_ref() + sd.total_area_pred()
    if total == 0:
        raise EmptySurfaceError("surface dice is undefined for two empty surfaces")
    hit_ref = float(sd.areas_ref[sd.dist_ref_to_pred <= tolerance_mm].sum())
    hit_pred = float(sd.areas_pred[sd.dist_pred_to_ref <= tolerance_mm].sum())
    return (hit_ref + hit_pred) / total


def masd(sd: SurfaceDistances) -> float:
    """Mean of the two area-weighted directed average surface distances."""
    if len(sd.dist_ref_to_pred) == 0 or len(sd.dist_pred_to_ref) == 0:
        raise EmptySurfaceError("masd requires both surfaces to be non-empty")
    mean_ref = float((sd.dist_ref_to_pred * sd.areas_ref).sum() / sd.areas_ref.sum())
    mean_pred = float((sd.dist_pred_to_ref * sd.areas_pred).sum() / sd.areas_pred.sum())
    return 0.5 * (mean_ref + mean_pred)


def _directed_percentile(distances: np.ndarray, areas: np.ndarray, fraction: float) -> float:
    # smallest distance whose cumulative area fraction reaches the target
    cum = np.cumsum(areas) / areas.sum()
    idx = int(np.searchsorted(cum, fraction))
    return float(distances[min(idx, len(distances) - 1)])


def hd95(sd: SurfaceDistances) -> float:
    """Max of the two directed area-weighted 95th-percentile distances."""
    if len(sd.dist_ref_to_pred) == 0 or len(sd.dist_pred_to_ref) == 0:
        raise EmptySurfaceError("hd95 requires both surfaces to be non-empty")
    return max(
        _directed_percentile(sd.dist_ref_to_pred, sd.areas_ref, HD_FRACTION),
        _directed_percentile(sd.dist_pred_to_ref, sd.areas_pred, HD_FRACTION),
    )


def tumor_volume(mask: BinaryMask) -> float:
    """True-voxel count times voxel volume, in mm^3."""
    sx, sy, sz = mask.spacing
    return float(int(mask.bits.sum())) * sx * sy * sz


@dataclass(frozen=True)
class CaseMetrics:
    case_id: str
    dice: Optional[float]
    surface_dice_5mm: Optional[float]
    masd_mm: Optional[float]
    hd95_mm: Optional[float]
    volume_ref_mm3: float
    volume_pred_mm3: float
    flags: tuple[str, ...] = ()


def evaluate_case(
    ref: Volume,
    pred: Volume,
    config: EvalConfig = EvalConfig(),
    case_id: str = "case",
) -> CaseMetrics:
    """All five per-case metric fields for one reference/prediction pair."""
    if ref.kind != "labels" or pred.kind != "labels":
        raise ValidationError("evaluate_case expects two label volumes")
    ref_mask = BinaryMask.from_labels(ref, config.label_id)
    pred_mask = BinaryMask.from_labels(pred, config.label_id)
    _check_same_grid(ref_mask, pred_mask)

    vol_ref = tumor_volume(ref_mask)
    vol_pred = tumor_volume(pred_mask)
    dice_value, flags = dice(ref_mask, pred_mask)

    if "both_empty" in flags:
        sdice, masd_mm, hd95_mm = 1.0, 0.0, 0.0
    elif flags:  # exactly one side empty
        if config.empty_policy == "penalize":
            diag = ref_mask.physical_diagonal_mm()
            sdice, masd_mm, hd95_mm = 0.0, diag, diag
            flags = flags + ("penalized",)
        else:
            sdice = masd_mm = hd95_mm = None
    else:
        sd = surface_distances(ref_mask, pred_mask)
        sdice = surface_dice(sd, config.tolerance_mm)
        masd_mm = masd(sd)
        hd95_mm = hd95(sd)

    return CaseMetrics(
        case_id=case_id,
        dice=dice_value,
        surface_dice_5mm=sdice,
        masd_mm=masd_mm,
        hd95_mm=hd95_mm,
        volume_ref_mm3=vol_ref,
        volume_pred_mm3=vol_pred,
        flags=flags,
    )


@dataclass(frozen=True)
class CohortReport:
    config: EvalConfig
    cases: tuple[CaseMetrics, ...]
    mean_dice: Optional[float]
    mean_surface_dice_5mm: Optional[float]
    mean_masd_mm: Optional[float]
    mean_hd95_mm: Optional[float]
    volume_rmse: float
    n_cases: int
    n_flagged: int
    flag_counts: tuple[tuple[str, int], ...] = ()


def aggregate_cohort(cases, config: EvalConfig = EvalConfig()) -> CohortReport:
    """Cohort means of the four overlap/surface metrics plus volume RMSE.

    Under ``penalize`` every case carries numeric values and all cases enter
    the means; under ``exclude`` flagged cases are dropped from the means.
    Volume RMSE always runs over all cases (volumes are defined regardless of
    emptiness) in the configured unit.
    """
    cases = tuple(cases)
    if not cases:
        raise ValidationError("cannot aggregate an empty cohort")
    if config.empty_policy == "exclude":
        included = [c for c in cases if not c.flags]
    else:
        included = list(cases)

    def mean_of(attr: str) -> Optional[float]:
        if not included:
            return None
        values = [getattr(c, attr) for c in included]
        if any(v is None for v in values):
            raise ValidationError(f"case without {attr} value entered the cohort mean")
        return float(np.mean(values))

    unit_scale = 1e-3 if config.volume_unit == "ml" else 1.0
    sq_errors = [
        ((c.volume_pred_mm3 - c.volume_ref_mm3) * unit_scale) ** 2 for c in cases
    ]
    rmse = float(np.sqrt(np.mean(sq_errors)))

    counts: dict[str, int] = {}
    for c in cases:
        for f in c.flags:
            counts[f] = counts.get(f, 0) + 1

    return CohortReport(
        config=config,
        cases=cases,
        mean_dice=mean_of("dice"),
        mean_surface_dice_5mm=mean_of("surface_dice_5mm"),
        mean_masd_mm=mean_of("masd_mm"),
        mean_hd95_mm=mean_of("hd95_mm"),
        volume_rmse=rmse,
        n_cases=len(cases),
        n_flagged=sum(1 for c in cases if c.flags),
        flag_counts=tuple(sorted(counts.items())),
    )
