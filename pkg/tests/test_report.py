from __future__ import annotations

import json

import pytest

from pancseg.metrics import CaseMetrics, EvalConfig, aggregate_cohort
from pancseg.report import (
    AGGREGATE_ROW_ID,
    CSV_COLUMNS,
    case_report_to_dict,
    dumps_json,
    format_sig,
    report_to_csv,
    report_to_dict,
    round_sig,
)


def _report(config=EvalConfig()):
    cases = [
        CaseMetrics("case_b", 0.5, 0.625, 2.0, 4.0, 1000.0, 1250.0),
        CaseMetrics(
            "case_a", 0.0, 0.0, 17.3205081, 17.3205081, 500.0, 0.0, ("pred_empty", "penalized")
        ),
    ]
    return aggregate_cohort(cases, config)


def test_round_sig_truncates_to_nine_digits():
    assert round_sig(0.123456789123456) == 0.123456789
    assert round_sig(123456789.123) == 123456789.0
    assert round_sig(1.0) == 1.0
    assert round_sig(0.0) == 0.0
    assert round_sig(None) is None
    assert round_sig(1e-300) == 1e-300


def test_format_sig_handles_missing_values():
    assert format_sig(None) == ""
    assert format_sig(2.5) == "2.5"
    assert format_sig(1 / 3) == "0.333333333"


def test_report_document_layout():
    doc = report_to_dict(_report())
    assert list(doc.keys()) == ["config", "cases", "aggregate"]
    assert list(doc["config"].keys()) == [
        "label_id",
        "tolerance_mm",
        "empty_policy",
        "volume_unit",
    ]
    assert [c["case_id"] for c in doc["cases"]] == ["case_b", "case_a"]
    assert list(doc["cases"][0].keys()) == [
        "case_id",
        "dice",
        "surface_dice_5mm",
        "masd_mm",
        "hd95_mm",
        "volume_ref_mm3",
        "volume_pred_mm3",
        "flags",
    ]
    agg = doc["aggregate"]
    assert list(agg.keys()) == [
        "n_cases",
        "mean_dice",
        "mean_surface_dice_5mm",
        "mean_masd_mm",
        "mean_hd95_mm",
        "volume_rmse_mm3",
        "n_flagged",
        "flag_counts",
    ]
    assert agg["n_cases"] == 2
    assert agg["n_flagged"] == 1
    assert agg["flag_counts"] == {"penalized": 1, "pred_empty": 1}
    assert doc["cases"][1]["flags"] == ["penalized", "pred_empty"]

    with_prov = report_to_dict(_report(), provenance={"tool": "x"})
    assert list(with_prov.keys()) == ["config", "cases", "aggregate", "provenance"]


def test_rmse_key_follows_volume_unit():
    doc = report_to_dict(_report(EvalConfig(volume_unit="ml")))
    assert "volume_rmse_ml" in doc["aggregate"]
    assert "volume_rmse_mm3" not in doc["aggregate"]


def test_excluded_metrics_serialize_as_null():
    cases = [CaseMetrics("only", 0.0, None, None, None, 10.0, 0.0, ("pred_empty",))]
    report = aggregate_cohort(cases, EvalConfig(empty_policy="exclude"))
    text = dumps_json(report_to_dict(report))
    doc = json.loads(text)
    assert doc["cases"][0]["masd_mm"] is None
    assert doc["aggregate"]["mean_dice"] is None


def test_case_report_document():
    case = CaseMetrics("case_x", 1.0, 1.0, 0.0, 0.0, 10.0, 10.0)
    doc = case_report_to_dict(case, EvalConfig())
    assert list(doc.keys()) == ["config", "case"]
    assert doc["case"]["case_id"] == "case_x"


def test_json_bytes_are_deterministic():
    a = dumps_json(report_to_dict(_report()))
    b = dumps_json(report_to_dict(_report()))
    assert a == b
    assert a.endswith("\n")
    assert not a.endswith("\n\n")


def test_json_rejects_non_finite_values():
    with pytest.raises(ValueError):
        dumps_json({"x": float("nan")})
    with pytest.raises(ValueError):
        dumps_json({"x": float("inf")})


def test_csv_layout():
    text = report_to_csv(_report())
    lines = text.splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert len(lines) == 4  # header + 2 cases + aggregate
    first = lines[1].split(",")
    assert first[0] == "case_b"
    assert first[7] == ""  # per-case rows leave cohort rmse empty
    flagged = lines[2].split(",")
    assert flagged[8] == "penalized;pred_empty"
    footer = lines[3].split(",")
    assert footer[0] == AGGREGATE_ROW_ID
    assert footer[1] == format_sig(0.25)
    assert footer[7] != ""
    assert footer[8] == "flagged=1"
    assert text.endswith("\n")
