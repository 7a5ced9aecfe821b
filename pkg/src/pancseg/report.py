"""Canonical JSON and CSV serialization of metric reports.

Documents are built with a fixed key order and every float pre-rounded to
9 significant digits, so identical inputs serialize to identical bytes on
every platform and run.  Optional fields serialize as JSON null.
"""
from __future__ import annotations

import json
from typing import Optional

from .metrics import CaseMetrics, CohortReport, EvalConfig

SIGNIFICANT_DIGITS = 9


def round_sig(value) -> Optional[float]:
    """Round to 9 significant digits; the JSON layer then prints the shortest
    exact representation of the rounded value."""
    if value is None:
        return None
    return float(format(float(value), f".{SIGNIFICANT_DIGITS}g"))


def format_sig(value) -> str:
    if value is None:
        return ""
    return format(float(value), f".{SIGNIFICANT_DIGITS}g")


def config_to_dict(config: EvalConfig) -> dict:
    return {
        "label_id": config.label_id,
        "tolerance_mm": round_sig(config.tolerance_mm),
        "empty_policy": config.empty_policy,
        "volume_unit": config.volume_unit,
    }


def case_to_dict(case: CaseMetrics) -> dict:
    return {
        "case_id": case.case_id,
        "dice": round_sig(case.dice),
        "surface_dice_5mm": round_sig(case.surface_dice_5mm),
        "masd_mm": round_sig(case.masd_mm),
        "hd95_mm": round_sig(case.hd95_mm),
        "volume_ref_mm3": round_sig(case.volume_ref_mm3),
        "volume_pred_mm3": round_sig(case.volume_pred_mm3),
        "flags": sorted(case.flags),
    }


def _rmse_key(config: EvalConfig) -> str:
    return "volume_rmse_ml" if config.volume_unit == "ml" else "volume_rmse_mm3"


def aggregate_to_dict(report: CohortReport) -> dict:
    return {
        "n_cases": report.n_cases,
        "mean_dice": round_sig(report.mean_dice),
        "mean_surface_dice_5mm": round_sig(report.mean_surface_dice_5mm),
        "mean_masd_mm": round_sig(report.mean_masd_mm),
        "mean_hd95_mm": round_sig(report.mean_hd95_mm),
        _rmse_key(report.config): round_sig(report.volume_rmse),
        "n_flagged": report.n_flagged,
        "flag_counts": {k: v for k, v in report.flag_counts},
    }


def report_to_dict(report: CohortReport, provenance: Optional[dict] = None) -> dict:
    doc = {
        "config": config_to_dict(report.config),
        "cases": [case_to_dict(c) for c in report.cases],
        "aggregate": aggregate_to_dict(report),
    }
    if provenance is not None:
        doc["provenance"] = provenance
    return doc


def case_report_to_dict(
    case: CaseMetrics, config: EvalConfig, provenance: Optional[dict] = None
) -> dict:
    doc = {"config": config_to_dict(config), "case": case_to_dict(case)}
    if provenance is not None:
        doc["provenance"] = provenance
    return doc


def dumps_json(doc) -> str:
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


CSV_COLUMNS = (
    "case_id",
    "dice",
    "surface_dice_5mm",
    "masd_mm",
    "hd95_mm",
    "volume_ref_mm3",
    "volume_pred_mm3",
    "volume_rmse",
    "flags",
)

AGGREGATE_ROW_ID = "__aggregate__"


def report_to_csv(report: CohortReport) -> str:
    """One row per case plus an aggregate footer row.

    Per-case rows leave the cohort-level volume_rmse column empty; the footer
    fills the metric columns with cohort means and flags with the flagged
    case count.
    """
    lines = [",".join(CSV_COLUMNS)]
    for c in report.cases:
        lines.append(
            ",".join(
                [
                    c.case_id,
                    format_sig(c.dice),
                    format_sig(c.surface_dice_5mm),
                    format_sig(c.masd_mm),
                    format_sig(c.hd95_mm),
                    format_sig(c.volume_ref_mm3),
                    format_sig(c.volume_pred_mm3),
                    "",
                    ";".join(sorted(c.flags)),
                ]
            )
        )
    lines.append(
        ",".join(
            [
                AGGREGATE_ROW_ID,
                format_sig(report.mean_dice),
                format_sig(report.mean_surface_dice_5mm),
                format_sig(report.mean_masd_mm),
                format_sig(report.mean_hd95_mm),
                "",
                "",
                format_sig(report.volume_rmse),
                f"flagged={report.n_flagged}",
            ]
        )
    )
    return "\n".join(lines) + "\n"
