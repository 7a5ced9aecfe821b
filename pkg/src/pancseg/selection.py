"""Metric-aware ensemble subset search.

Every candidate subset of the member pool is combined on the validation
cases, evaluated with the five challenge metrics, and scored by a composite:
each metric is normalized across the evaluated population (min-max by
default, rank optionally), aligned so higher is always better, and the
composite is the weighted mean.  Ranking ties break toward fewer members,
then lexicographic member ids, so leaderboards are reproducible.

Min-max normalization keeps the argmax invariant under positive affine
transforms of a raw metric; rank normalization extends that to arbitrary
strictly increasing transforms.
"""
from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import BudgetExceededError, ConfigError, FormatError, ValidationError
from .ensemble import EnsembleMember, EnsembleSpec, combine_volumes, load_member_volume
from .metrics import CohortReport, EvalConfig, aggregate_cohort, evaluate_case
from .nifti import read_volume
from .volume import read_manifest

NORMALIZATIONS = ("minmax", "rank")

# (CohortReport attribute, higher_is_better)
METRIC_FIELDS = (
    ("mean_dice", True),
    ("mean_surface_dice_5mm", True),
    ("mean_masd_mm", False),
    ("mean_hd95_mm", False),
    ("volume_rmse", False),
)

METRIC_NAMES = tuple(name for name, _ in METRIC_FIELDS)

DEFAULT_WEIGHTS = (0.2, 0.2, 0.2, 0.2, 0.2)

DEFAULT_BUDGET = 100_000

WEIGHT_SUM_TOL = 1e-9


@dataclass(frozen=True)
class CandidatePool:
    """Members plus the validation cases they are judged on."""

    members: tuple[EnsembleMember, ...]
    cases: tuple[tuple[str, str], ...]  # (case_id, reference path)
    mode: str = "prob_avg"
    base_dir: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        object.__setattr__(self, "cases", tuple((c, r) for c, r in self.cases))
        if len(self.members) < 2:
            raise ConfigError("a candidate pool needs at least 2 members")
        ids = [m.member_id for m in self.members]
        if len(set(ids)) != len(ids):
            raise ConfigError("member ids must be unique within a pool")
        if not self.cases:
            raise ConfigError("a candidate pool needs at least one validation case")

    def sorted_members(self) -> tuple[EnsembleMember, ...]:
        return tuple(sorted(self.members, key=lambda m: m.member_id))


def load_pool(path: str | Path) -> CandidatePool:
    """Parse a pool JSON file.

    Schema: {"mode": ..., "members": [...], and either "cases":
    [{"case_id", "reference"}...] or "manifest": "file.csv"} (only the
    case_id and reference columns of a manifest are used).  Relative paths
    resolve against the pool file's directory.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise FormatError(f"cannot read pool file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"pool file {path} is not valid JSON: {exc}") from exc
    base = path.parent
    members = []
    for i, entry in enumerate(doc.get("members", [])):
        try:
            members.append(
                EnsembleMember(
                    member_id=entry["member_id"],
                    path=entry["path"],
                    model_tag=entry.get("model_tag", ""),
                    fold=int(entry.get("fold", 0)),
                    checkpoint=entry.get("checkpoint", "best"),
                    weight=float(entry.get("weight", 1.0)),
                )
            )
        except KeyError as exc:
            raise FormatError(f"pool file {path}: member {i} is missing {exc}") from exc
    if "cases" in doc and "manifest" in doc:
        raise FormatError(f"pool file {path}: give either 'cases' or 'manifest', not both")
    if "cases" in doc:
        cases = [(entry["case_id"], entry["reference"]) for entry in doc["cases"]]
    elif "manifest" in doc:
        manifest_path = Path(doc["manifest"])
        if not manifest_path.is_absolute():
            manifest_path = base / manifest_path
        cases = [(row.case_id, row.reference) for row in read_manifest(manifest_path)]
    else:
        raise FormatError(f"pool file {path}: missing 'cases' or 'manifest'")
    return CandidatePool(
        members=tuple(members),
        cases=tuple(cases),
        mode=doc.get("mode", "prob_avg"),
        base_dir=str(base),
    )


@dataclass(frozen=True)
class CompositeScore:
    normalized: tuple[float, ...]  # direction-aligned, one per METRIC_FIELDS entry
    weights: tuple[float, ...]
    score: float


@dataclass(frozen=True)
class SubsetResult:
    member_ids: tuple[str, ...]  # sorted
    report: CohortReport
    score: CompositeScore


def _check_weights(weights) -> tuple[float, ...]:
    weights = tuple(float(w) for w in weights)
    if len(weights) != len(METRIC_FIELDS):
        raise ConfigError(f"need {len(METRIC_FIELDS)} metric weights, got {len(weights)}")
    if any(w < 0 for w in weights):
        raise ConfigError(f"metric weights must be nonnegative, got {weights}")
    if abs(sum(weights) - 1.0) > WEIGHT_SUM_TOL:
        raise ConfigError(f"metric weights must sum to 1, got sum {sum(weights)}")
    return weights


def _raw_matrix(reports: Sequence[CohortReport]) -> np.ndarray:
    rows = []
    for r in reports:
        row = []
        for name, _ in METRIC_FIELDS:
            value = getattr(r, name)
            if value is None:
                raise ValidationError(
                    f"report without {name} cannot enter subset scoring "
                    "(all validation cases were excluded)"
                )
            row.append(float(value))
        rows.append(row)
    return np.asarray(rows, dtype=np.float64)


def _normalize_column(values: np.ndarray, higher_better: bool, norm: str) -> np.ndarray:
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        # degenerate metric: full credit for every candidate
        return np.ones_like(values)
    if norm == "minmax":
        scaled = (values - lo) / (hi - lo)
        return scaled if higher_better else 1.0 - scaled
    # rank: average ranks on ties, rescaled to [0, 1]
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0
        i = j + 1
    scaled = ranks / (len(values) - 1)
    return scaled if higher_better else 1.0 - scaled


def normalize_metrics(
    reports: Sequence[CohortReport],
    weights: Sequence[float] = DEFAULT_WEIGHTS,
    norm: str = "minmax",
) -> list[CompositeScore]:
    """Direction-aligned normalized metrics and composite scores, one per report."""
    if not reports:
        raise ValidationError("no reports to normalize")
    if norm not in NORMALIZATIONS:
        raise ConfigError(f"normalization must be one of {NORMALIZATIONS}, got {norm!r}")
    weights = _check_weights(weights)
    raw = _raw_matrix(reports)
    columns = [
        _normalize_column(raw[:, j], higher, norm)
        for j, (_, higher) in enumerate(METRIC_FIELDS)
    ]
    normalized = np.stack(columns, axis=1)
    scores = normalized @ np.asarray(weights)
    return [
        CompositeScore(
            normalized=tuple(float(x) for x in normalized[i]),
            weights=weights,
            score=float(scores[i]),
        )
        for i in range(len(reports))
    ]


class SubsetEvaluator:
    """Loads member predictions once and evaluates subsets with caching.

    Reports are cached content-addressed: the key combines the sorted member
    ids with digests of the underlying prediction files (computed once per
    member), so two members are interchangeable in the cache exactly when
    their prediction bytes are identical.
    """

    def __init__(self, pool: CandidatePool, config: EvalConfig):
        self.pool = pool
        self.config = config
        self.base_dir = Path(pool.base_dir) if pool.base_dir else None
        self._references: dict[str, object] = {}
        self._member_volumes: dict[tuple[str, str], object] = {}
        self._member_digests: dict[str, str] = {}
        self._reports: dict[tuple, CohortReport] = {}
        self._members_by_id = {m.member_id: m for m in pool.members}

    def _reference(self, case_id: str, ref_path: str):
        if case_id not in self._references:
            path = Path(ref_path)
            if self.base_dir is not None and not path.is_absolute():
                path = self.base_dir / path
            self._references[case_id] = read_volume(path, kind="labels")
        return self._references[case_id]

    def _member_volume(self, member_id: str, case_id: str):
        key = (member_id, case_id)
        if key not in self._member_volumes:
            member = self._members_by_id[member_id]
            self._member_volumes[key] = load_member_volume(
                member, self.pool.mode, case_id, self.base_dir
            )
        return self._member_volumes[key]

    def member_digest(self, member_id: str) -> str:
        if member_id not in self._member_digests:
            member = self._members_by_id[member_id]
            h = hashlib.sha256()
            for case_id, _ in self.pool.cases:
                path = member.resolve_path(case_id, self.base_dir)
                try:
                    h.update(path.read_bytes())
                except OSError as exc:
                    raise FormatError(f"member {member_id}: cannot read {path}: {exc}") from exc
            self._member_digests[member_id] = h.hexdigest()
        return self._member_digests[member_id]

    def evaluate(self, member_ids: Sequence[str]) -> CohortReport:
        member_ids = tuple(sorted(member_ids))
        key = tuple((mid, self.member_digest(mid)) for mid in member_ids)
        if key in self._reports:
            return self._reports[key]
        spec = EnsembleSpec(
            members=tuple(self._members_by_id[mid] for mid in member_ids),
            mode=self.pool.mode,
        )
        cases = []
        for case_id, ref_path in self.pool.cases:
            volumes = {mid: self._member_volume(mid, case_id) for mid in member_ids}
            combined = combine_volumes(spec, volumes)
            ref = self._reference(case_id, ref_path)
            cases.append(evaluate_case(ref, combined, self.config, case_id=case_id))
        report = aggregate_cohort(cases, self.config)
        self._reports[key] = report
        return report


def _rank_results(
    subsets: Sequence[tuple[str, ...]],
    reports: Sequence[CohortReport],
    weights,
    norm: str,
) -> list[SubsetResult]:
    scores = normalize_metrics(reports, weights, norm)
    results = [
        SubsetResult(member_ids=s, report=r, score=c)
        for s, r, c in zip(subsets, reports, scores)
    ]
    results.sort(key=lambda r: (-r.score.score, len(r.member_ids), r.member_ids))
    return results


def count_subsets(n_members: int, size_min: int, size_max: int) -> int:
    return sum(math.comb(n_members, k) for k in range(size_min, size_max + 1))


def search_subsets(
    pool: CandidatePool,
    size_min: int,
    size_max: int,
    config: EvalConfig = EvalConfig(),
    weights: Sequence[float] = DEFAULT_WEIGHTS,
    norm: str = "minmax",
    budget: int = DEFAULT_BUDGET,
    evaluator: Optional[SubsetEvaluator] = None,
) -> list[SubsetResult]:
    """Exhaustively rank every member subset within the size range."""
    n = len(pool.members)
    if not 1 <= size_min <= size_max <= n:
        raise ConfigError(
            f"need 1 <= size_min <= size_max <= {n}, got ({size_min}, {size_max})"
        )
    total = count_subsets(n, size_min, size_max)
    if total > budget:
        raise BudgetExceededError(
            f"{total} subsets exceed the enumeration budget of {budget}; "
            "raise the budget or use beam search"
        )
    if evaluator is None:
        evaluator = SubsetEvaluator(pool, config)
    ids = sorted(m.member_id for m in pool.members)
    subsets = []
    reports = []
    for k in range(size_min, size_max + 1):
        for combo in itertools.combinations(ids, k):
            subsets.append(combo)
            reports.append(evaluator.evaluate(combo))
    return _rank_results(subsets, reports, weights, norm)


def beam_search_subsets(
    pool: CandidatePool,
    size_max: int,
    beam_width: int,
    config: EvalConfig = EvalConfig(),
    weights: Sequence[float] = DEFAULT_WEIGHTS,
    norm: str = "minmax",
    evaluator: Optional[SubsetEvaluator] = None,
) -> list[SubsetResult]:
    """Greedy beam growth over subset sizes 1..size_max.

    Each level extends the kept subsets by one member, pruning to the best
    beam_width by composite score over everything evaluated so far.  The
    final ranking covers all evaluated subsets; with beam_width at least the
    number of subsets per level the result equals exhaustive search.
    """
    n = len(pool.members)
    if beam_width < 1:
        raise ConfigError(f"beam_width must be >= 1, got {beam_width}")
    if not 1 <= size_max <= n:
        raise ConfigError(f"size_max must be in 1..{n}, got {size_max}")
    if evaluator is None:
        evaluator = SubsetEvaluator(pool, config)
    ids = sorted(m.member_id for m in pool.members)

    evaluated: dict[tuple[str, ...], CohortReport] = {}

    def ranked(candidates):
        subsets = sorted(candidates)
        return _rank_results(subsets, [evaluated[s] for s in subsets], weights, norm)

    frontier = []
    for mid in ids:
        subset = (mid,)
        evaluated[subset] = evaluator.evaluate(subset)
        frontier.append(subset)
    frontier = [r.member_ids for r in ranked(evaluated)[: beam_width] if len(r.member_ids) == 1]
    # the slice above is over all evaluated subsets, which at this point are
    # exactly the singletons
    for _ in range(2, size_max + 1):
        extensions = set()
        for subset in frontier:
            for mid in ids:
                if mid not in subset:
                    extensions.add(tuple(sorted(subset + (mid,))))
        if not extensions:
            break
        for subset in sorted(extensions):
            if subset not in evaluated:
                evaluated[subset] = evaluator.evaluate(subset)
        level_rank = ranked(evaluated)
        frontier = [
            r.member_ids for r in level_rank if r.member_ids in extensions
        ][:beam_width]
    return ranked(evaluated)
