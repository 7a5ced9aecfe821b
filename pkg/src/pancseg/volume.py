"""In-memory volume and manifest types.

The canonical in-memory layout is a numpy array indexed ``[x, y, z]`` (plus a
trailing class axis for probability stacks) with axis 0 increasing to the
anatomical Right, axis 1 to Anterior and axis 2 to Superior (RAS+).  Spacing
and origin are in millimetres; ``origin`` is the physical position of the
centre of voxel ``(0, 0, 0)``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError, LabelSetError, ValidationError

VOLUME_KINDS = ("image", "labels", "probabilities")

DEFAULT_LABEL_SET = (0, 1, 2)  # background, pancreas, tumor

PROB_SUM_TOL = 1e-5


@dataclass(frozen=True)
class Volume:
    """A 3D scalar image, integer label map or per-class probability stack.

    ``data`` has shape ``dims`` for image/labels and ``dims + (n_classes,)``
    for probabilities.  The array is frozen after construction so volumes can
    be shared freely across threads.
    """

    data: np.ndarray
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    kind: str = "image"
    meta: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        data = np.asarray(self.data)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        if self.kind not in VOLUME_KINDS:
            raise ValidationError(f"unknown volume kind {self.kind!r}")
        expected_ndim = 4 if self.kind == "probabilities" else 3
        if data.ndim != expected_ndim:
            raise ValidationError(
                f"{self.kind} volume must be {expected_ndim}D, got shape {data.shape}"
            )
        if any(d < 1 for d in data.shape):
            raise ValidationError(f"dims must all be >= 1, got {data.shape}")
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise ValidationError(f"spacing must be 3 positive reals, got {self.spacing}")
        if len(self.origin) != 3:
            raise ValidationError("origin must be a 3-tuple")
        self._validate_values(data)
        data.setflags(write=False)

    def _validate_values(self, data: np.ndarray):
        if self.kind == "image":
            if np.issubdtype(data.dtype, np.floating) and not np.isfinite(data).all():
                raise ValidationError("image volume contains non-finite voxels")
        elif self.kind == "labels":
            if not np.issubdtype(data.dtype, np.integer):
                raise ValidationError(f"label volume must have integer dtype, got {data.dtype}")
            if data.size and data.min() < 0:
                raise ValidationError("label volume contains negative values")
        else:  # probabilities
            if not np.issubdtype(data.dtype, np.floating):
                raise ValidationError("probability stack must have float dtype")
            if not np.isfinite(data).all():
                raise ValidationError("probability stack contains non-finite voxels")
            if data.min() < -1e-6 or data.max() > 1 + 1e-6:
                raise ValidationError("probability values must lie in [0, 1]")
            sums = data.sum(axis=-1)
            err = np.abs(sums - 1.0).max()
            if err > PROB_SUM_TOL:
                raise ValidationError(
                    f"per-voxel class probabilities must sum to 1 within {PROB_SUM_TOL}, "
                    f"worst deviation {err:.3g}"
                )

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(d) for d in self.data.shape[:3])

    @property
    def n_classes(self) -> int:
        if self.kind != "probabilities":
            raise ValidationError("n_classes is only defined for probability stacks")
        return int(self.data.shape[3])

    def voxel_volume_mm3(self) -> float:
        sx, sy, sz = self.spacing
        return sx * sy * sz

    def physical_diagonal_mm(self) -> float:
        """Length of the image diagonal in mm (used as the surface penalty)."""
        ext = [d * s for d, s in zip(self.dims, self.spacing)]
        return float(np.sqrt(sum(e * e for e in ext)))

    def same_grid(self, other: "Volume", rel_tol: float = 1e-5) -> bool:
        if self.dims != other.dims:
            return False
        for a, b in zip(self.spacing, other.spacing):
            if abs(a - b) > rel_tol * max(abs(a), abs(b)):
                return False
        return True

    def with_data(self, data: np.ndarray, kind: str | None = None) -> "Volume":
        """New volume on the same grid with replacement voxel data."""
        return Volume(
            data=data,
            spacing=self.spacing,
            origin=self.origin,
            kind=self.kind if kind is None else kind,
            meta=dict(self.meta),
        )

    def label_values(self) -> tuple[int, ...]:
        if self.kind != "labels":
            raise ValidationError("label_values is only defined for label volumes")
        return tuple(int(v) for v in np.unique(self.data))


def validate_label_set(volume: Volume, label_set: Iterable[int]) -> None:
    """Raise LabelSetError if the volume uses a label outside ``label_set``."""
    allowed = set(int(v) for v in label_set)
    present = set(volume.label_values())
    unknown = sorted(present - allowed)
    if unknown:
        raise LabelSetError(
            f"label volume contains unknown label(s) {unknown}; declared set is {sorted(allowed)}"
        )


@dataclass(frozen=True)
class ManifestRow:
    case_id: str
    reference: str
    prediction: str


@dataclass(frozen=True)
class Manifest:
    rows: tuple[ManifestRow, ...]

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def case_ids(self) -> tuple[str, ...]:
        return tuple(r.case_id for r in self.rows)


MANIFEST_COLUMNS = ("case_id", "reference", "prediction")


def read_manifest(path: str | Path) -> Manifest:
    """Parse a cohort manifest CSV with header ``case_id,reference,prediction``.

    Rows are kept in file order.  Duplicate case ids, missing columns and
    empty manifests are rejected.  CRLF and LF line endings parse identically.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise FormatError(f"manifest {path} is empty")
        missing = [c for c in MANIFEST_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise FormatError(f"manifest {path} is missing column(s) {missing}")
        rows = []
        seen: set[str] = set()
        for record in reader:
            case_id = (record["case_id"] or "").strip()
            reference = (record["reference"] or "").strip()
            prediction = (record["prediction"] or "").strip()
            if not case_id or not reference or not prediction:
                raise FormatError(f"manifest {path}: empty field in row {len(rows) + 2}")
            if case_id in seen:
                raise FormatError(f"manifest {path}: duplicate case_id {case_id!r}")
            seen.add(case_id)
            rows.append(ManifestRow(case_id, reference, prediction))
    if not rows:
        raise FormatError(f"manifest {path} has no rows")
    return Manifest(rows=tuple(rows))


def write_manifest(rows: Sequence[ManifestRow], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        for r in rows:
            writer.writerow([r.case_id, r.reference, r.prediction])
