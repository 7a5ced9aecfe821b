from __future__ import annotations

import gzip
import hashlib
import json

import numpy as np
import pytest

from pancseg.cli import main
from pancseg.ensemble import EnsembleMember, EnsembleSpec, combine_volumes, load_ensemble_spec, save_ensemble_spec
from pancseg.nifti import read_volume, write_volume
from pancseg.volume import Volume

from conftest import image_volume, probability_volume

SPACING = (1.0, 1.0, 1.5)


def _ball(dims=(10, 10, 10), shift=(0, 0, 0), radius=3.2):
    grid = np.indices(dims).astype(np.float64)
    center = [d / 2.0 - 0.5 + s for d, s in zip(dims, shift)]
    dist2 = sum((grid[i] - center[i]) ** 2 for i in range(3))
    return (dist2 <= radius**2).astype(np.int32) * 2


def _write_labels(path, arr, spacing=SPACING):
    path.parent.mkdir(parents=True, exist_ok=True)
    write_volume(Volume(arr, spacing, kind="labels"), path)


def _run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


# ---------------------------------------------------------------- resample


def test_resample_command_round_trip(tmp_path, capsys, rng):
    src = tmp_path / "img.nii.gz"
    write_volume(image_volume(rng, (8, 8, 8), (2.0, 2.0, 2.0)), src)
    dst = tmp_path / "out" / "img_1mm.nii.gz"
    code, out, err = _run(
        capsys,
        "resample", "--input", str(src), "--output", str(dst),
        "--spacing", "1", "1", "1",
    )
    assert code == 0
    doc = json.loads(out)
    assert doc["provenance"]["config"]["target_dims"] == [16, 16, 16]
    digest = "sha256:" + hashlib.sha256(dst.read_bytes()).hexdigest()
    assert doc["outputs"][str(dst)] == digest
    back = read_volume(dst, kind="image")
    assert back.data.shape == (16, 16, 16)
    assert back.spacing == (1.0, 1.0, 1.0)


def test_resample_identity_order0_is_bit_exact(tmp_path, capsys, rng):
    src = tmp_path / "img.nii.gz"
    vol = image_volume(rng, (6, 7, 5), SPACING)
    write_volume(vol, src)
    dst = tmp_path / "copy.nii.gz"
    code, out, _ = _run(
        capsys,
        "resample", "--input", str(src), "--output", str(dst),
        "--spacing", *map(str, SPACING), "--image-order", "0",
    )
    assert code == 0
    assert np.array_equal(read_volume(dst, kind="image").data, vol.data)


def test_resample_labels_kind(tmp_path, capsys):
    src = tmp_path / "lab.nii.gz"
    _write_labels(src, _ball(), spacing=(2.0, 2.0, 2.0))
    dst = tmp_path / "lab_1mm.nii.gz"
    code, out, _ = _run(
        capsys,
        "resample", "--input", str(src), "--output", str(dst),
        "--kind", "labels", "--spacing", "1", "1", "1",
    )
    assert code == 0
    back = read_volume(dst, kind="labels")
    assert back.data.shape == (20, 20, 20)
    assert set(np.unique(back.data)) <= {0, 2}


# ---------------------------------------------------------------- augment


def test_augment_command_is_deterministic(tmp_path, capsys, rng):
    img = tmp_path / "img.nii.gz"
    lab = tmp_path / "lab.nii.gz"
    write_volume(image_volume(rng, (9, 9, 9), SPACING), img)
    _write_labels(lab, _ball(dims=(9, 9, 9), radius=2.5))
    args = (
        "augment", "--image", str(img), "--labels", str(lab),
        "--preset", "da5", "--seed", "11",
    )
    code1, out1, _ = _run(
        capsys, *args,
        "--out-image", str(tmp_path / "a_img.nii.gz"),
        "--out-labels", str(tmp_path / "a_lab.nii.gz"),
    )
    code2, out2, _ = _run(
        capsys, *args,
        "--out-image", str(tmp_path / "b_img.nii.gz"),
        "--out-labels", str(tmp_path / "b_lab.nii.gz"),
    )
    assert code1 == code2 == 0
    assert (tmp_path / "a_img.nii.gz").read_bytes() == (tmp_path / "b_img.nii.gz").read_bytes()
    assert (tmp_path / "a_lab.nii.gz").read_bytes() == (tmp_path / "b_lab.nii.gz").read_bytes()
    doc = json.loads(out1)
    assert doc["provenance"]["config"]["preset"] == "da5"
    assert doc["provenance"]["config"]["seed"] == 11


def test_augment_with_preset_file(tmp_path, capsys, rng):
    img = tmp_path / "img.nii.gz"
    lab = tmp_path / "lab.nii.gz"
    write_volume(image_volume(rng, (8, 8, 8), SPACING), img)
    _write_labels(lab, _ball(dims=(8, 8, 8), radius=2.2))
    preset_file = tmp_path / "quiet.json"
    preset_file.write_text(json.dumps({"name": "quiet", "seed": 3, "transforms": []}))
    code, out, _ = _run(
        capsys,
        "augment", "--image", str(img), "--labels", str(lab),
        "--preset-file", str(preset_file),
        "--out-image", str(tmp_path / "o_img.nii.gz"),
        "--out-labels", str(tmp_path / "o_lab.nii.gz"),
    )
    assert code == 0
    assert json.loads(out)["provenance"]["config"]["preset"] == "quiet"
    # an empty transform list is the identity pipeline
    before = read_volume(img, kind="image").data
    after = read_volume(tmp_path / "o_img.nii.gz", kind="image").data
    assert np.array_equal(before, after)


# ---------------------------------------------------------------- ensemble


def _ensemble_fixture(tmp_path, rng, n_members=3, cases=("c1",)):
    members = []
    stacks = {case: {} for case in cases}
    for i in range(n_members):
        member_dir = tmp_path / f"m{i}"
        member_dir.mkdir()
        for case in cases:
            stack = probability_volume(rng, (5, 5, 5), SPACING)
            write_volume(stack, member_dir / f"{case}.nii.gz")
            stacks[case][f"m{i}"] = stack
        members.append(EnsembleMember(f"m{i}", f"m{i}/{{case}}.nii.gz"))
    spec = EnsembleSpec(members=tuple(members))
    spec_path = tmp_path / "spec.json"
    save_ensemble_spec(spec, spec_path)
    return spec, spec_path, stacks


def test_ensemble_single_case(tmp_path, capsys, rng):
    spec, spec_path, stacks = _ensemble_fixture(tmp_path, rng)
    out_file = tmp_path / "fused" / "c1.nii.gz"
    code, out, _ = _run(
        capsys,
        "ensemble", "--spec", str(spec_path), "--case-id", "c1",
        "--output", str(out_file),
    )
    assert code == 0
    fused = read_volume(out_file, kind="labels")
    want = combine_volumes(spec, stacks["c1"])
    assert np.array_equal(fused.data, want.data)
    doc = json.loads(out)
    assert doc["provenance"]["config"]["members"] == ["m0", "m1", "m2"]
    # every member file enters the provenance digests
    assert sum("m1/c1.nii.gz" in k for k in doc["provenance"]["inputs"]) == 1


def test_ensemble_cohort_with_explicit_cases(tmp_path, capsys, rng):
    spec, spec_path, stacks = _ensemble_fixture(tmp_path, rng, cases=("c1", "c2"))
    out_dir = tmp_path / "fused"
    code, out, _ = _run(
        capsys,
        "ensemble", "--spec", str(spec_path), "--cases", "c1", "c2",
        "--output-dir", str(out_dir),
    )
    assert code == 0
    for case in ("c1", "c2"):
        got = read_volume(out_dir / f"{case}.nii.gz", kind="labels")
        want = combine_volumes(spec, stacks[case])
        assert np.array_equal(got.data, want.data)


def test_ensemble_missing_member_file_is_an_io_error(tmp_path, capsys, rng):
    spec, spec_path, _ = _ensemble_fixture(tmp_path, rng)
    code, out, err = _run(
        capsys,
        "ensemble", "--spec", str(spec_path), "--case-id", "missing_case",
        "--output", str(tmp_path / "x.nii.gz"),
    )
    assert code == 2
    assert "member" in err


def test_ensemble_case_id_requires_output(tmp_path, capsys, rng):
    _, spec_path, _ = _ensemble_fixture(tmp_path, rng)
    code, _, err = _run(capsys, "ensemble", "--spec", str(spec_path), "--case-id", "c1")
    assert code == 1
    assert "--output" in err


# ---------------------------------------------------------------- evaluation


def test_eval_case_perfect_prediction(tmp_path, capsys):
    ref = tmp_path / "ref.nii.gz"
    pred = tmp_path / "tumor_pred.nii.gz"
    _write_labels(ref, _ball())
    _write_labels(pred, _ball())
    code, out, _ = _run(capsys, "eval-case", "--ref", str(ref), "--pred", str(pred))
    assert code == 0
    doc = json.loads(out)
    case = doc["case"]
    assert case["case_id"] == "tumor_pred"  # defaults to the prediction stem
    assert case["dice"] == 1.0
    assert case["masd_mm"] == 0.0
    assert case["hd95_mm"] == 0.0
    assert case["flags"] == []
    assert set(doc["provenance"]["inputs"]) == {str(ref), str(pred)}


def test_eval_case_no_provenance_and_out_file(tmp_path, capsys):
    ref = tmp_path / "ref.nii.gz"
    pred = tmp_path / "pred.nii.gz"
    _write_labels(ref, _ball())
    _write_labels(pred, _ball(shift=(1, 0, 0)))
    saved = tmp_path / "case.json"
    code, out, _ = _run(
        capsys,
        "eval-case", "--ref", str(ref), "--pred", str(pred),
        "--case-id", "c9", "--no-provenance", "--out", str(saved),
    )
    assert code == 0
    assert saved.read_text() == out
    doc = json.loads(out)
    assert "provenance" not in doc
    assert doc["case"]["case_id"] == "c9"
    assert 0.0 < doc["case"]["dice"] < 1.0


def test_eval_case_grid_mismatch_is_a_validation_error(tmp_path, capsys):
    ref = tmp_path / "ref.nii.gz"
    pred = tmp_path / "pred.nii.gz"
    _write_labels(ref, _ball(dims=(10, 10, 10)))
    _write_labels(pred, _ball(dims=(11, 11, 11)))
    code, _, err = _run(capsys, "eval-case", "--ref", str(ref), "--pred", str(pred))
    assert code == 1
    assert "error" in err


def _cohort_fixture(tmp_path):
    rows = ["case_id,reference,prediction"]
    for i, shift in enumerate(((0, 0, 0), (1, 0, 0))):
        ref = tmp_path / f"ref_{i}.nii.gz"
        pred = tmp_path / f"pred_{i}.nii.gz"
        _write_labels(ref, _ball())
        _write_labels(pred, _ball(shift=shift))
        rows.append(f"case_{i},{ref},{pred}")
    manifest = tmp_path / "cohort.csv"
    manifest.write_text("\n".join(rows) + "\n")
    return manifest


def test_eval_cohort_json_and_determinism(tmp_path, capsys):
    manifest = _cohort_fixture(tmp_path)
    code1, out1, _ = _run(capsys, "eval-cohort", "--manifest", str(manifest))
    code2, out2, _ = _run(capsys, "eval-cohort", "--manifest", str(manifest))
    assert code1 == code2 == 0
    assert out1 == out2  # reruns are byte-identical
    doc = json.loads(out1)
    assert doc["aggregate"]["n_cases"] == 2
    assert [c["case_id"] for c in doc["cases"]] == ["case_0", "case_1"]
    assert doc["cases"][0]["dice"] == 1.0
    assert "provenance" in doc


def test_eval_cohort_csv_and_jobs(tmp_path, capsys):
    manifest = _cohort_fixture(tmp_path)
    code, serial, _ = _run(capsys, "eval-cohort", "--manifest", str(manifest), "--csv")
    assert code == 0
    lines = serial.strip().split("\n")
    assert lines[0].startswith("case_id,")
    assert lines[-1].startswith("__aggregate__")
    code, threaded, _ = _run(
        capsys, "eval-cohort", "--manifest", str(manifest), "--csv", "--jobs", "2"
    )
    assert code == 0
    assert threaded == serial  # worker count must not leak into the document


def test_eval_cohort_missing_manifest_is_an_io_error(tmp_path, capsys):
    code, _, err = _run(capsys, "eval-cohort", "--manifest", str(tmp_path / "nope.csv"))
    assert code == 2


# ---------------------------------------------------------------- select


def _pool_fixture(tmp_path, mode="majority"):
    refs_dir = tmp_path / "refs"
    refs_dir.mkdir()
    ref = _ball()
    _write_labels(refs_dir / "c1.nii.gz", ref)
    predictions = {
        "good": ref.copy(),
        "off1": _ball(shift=(2, 0, 0)),
        "off2": _ball(shift=(0, 3, 0)),
    }
    members = []
    for member_id, arr in predictions.items():
        _write_labels(tmp_path / member_id / "c1.nii.gz", arr)
        members.append({"member_id": member_id, "path": f"{member_id}/{{case}}.nii.gz"})
    pool_path = tmp_path / "pool.json"
    pool_path.write_text(
        json.dumps(
            {
                "mode": mode,
                "members": members,
                "cases": [{"case_id": "c1", "reference": "refs/c1.nii.gz"}],
            }
        )
    )
    return pool_path


def test_select_finds_the_planted_member(tmp_path, capsys):
    pool_path = _pool_fixture(tmp_path)
    spec_out = tmp_path / "winner_spec.json"
    report_out = tmp_path / "winner_report.json"
    code, out, _ = _run(
        capsys,
        "select", "--pool", str(pool_path),
        "--spec-out", str(spec_out), "--report-out", str(report_out),
    )
    assert code == 0
    doc = json.loads(out)
    assert doc["n_evaluated"] == 7
    assert doc["ranking"][0]["member_ids"] == ["good"]
    assert doc["ranking"][0]["score"] == 1.0
    assert doc["ranking"][0]["report"]["aggregate"]["mean_dice"] == 1.0
    winner = load_ensemble_spec(spec_out)
    assert [m.member_id for m in winner.members] == ["good"]
    assert winner.mode == "majority"
    saved = json.loads(report_out.read_text())
    assert saved["aggregate"]["mean_dice"] == 1.0


def test_select_beam_agrees_with_exhaustive(tmp_path, capsys):
    pool_path = _pool_fixture(tmp_path)
    code, exhaustive, _ = _run(capsys, "select", "--pool", str(pool_path), "--top", "7")
    assert code == 0
    code, beamed, _ = _run(
        capsys, "select", "--pool", str(pool_path), "--beam", "3", "--top", "7"
    )
    assert code == 0
    full = json.loads(exhaustive)
    beam = json.loads(beamed)
    assert [r["member_ids"] for r in full["ranking"]] == [
        r["member_ids"] for r in beam["ranking"]
    ]


def test_select_budget_exhaustion_is_a_validation_error(tmp_path, capsys):
    pool_path = _pool_fixture(tmp_path)
    code, _, err = _run(capsys, "select", "--pool", str(pool_path), "--budget", "2")
    assert code == 1
    assert "budget" in err


def test_select_rank_normalization_flag(tmp_path, capsys):
    pool_path = _pool_fixture(tmp_path)
    code, out, _ = _run(capsys, "select", "--pool", str(pool_path), "--norm", "rank")
    assert code == 0
    doc = json.loads(out)
    assert doc["config"]["normalization"] == "rank"
    assert doc["ranking"][0]["member_ids"] == ["good"]


# ---------------------------------------------------------------- lr-curve


def test_lr_curve_csv(tmp_path, capsys):
    code, out, _ = _run(
        capsys, "lr-curve", "--family", "poly", "--lr0", "0.01", "--max-epochs", "4"
    )
    assert code == 0
    lines = out.strip().split("\n")
    assert lines[0] == "epoch,lr"
    assert len(lines) == 6
    assert lines[1] == "0,0.01"
    assert lines[-1] == "4,0"


def test_lr_curve_rejects_bad_family(capsys):
    code, _, err = _run(capsys, "lr-curve", "--family", "step", "--lr0", "0.01", "--max-epochs", "4")
    assert code == 1
    assert "usage" in err


# ---------------------------------------------------------------- shared plumbing


def test_unknown_flag_exits_one_with_usage(capsys):
    code, _, err = _run(capsys, "eval-case", "--ref", "r", "--pred", "p", "--frobnicate")
    assert code == 1
    assert "usage" in err


def test_missing_input_exits_two(tmp_path, capsys):
    code, _, err = _run(
        capsys,
        "resample", "--input", str(tmp_path / "nope.nii.gz"),
        "--output", str(tmp_path / "o.nii.gz"), "--spacing", "1", "1", "1",
    )
    assert code == 2


def test_json_errors_flag_emits_machine_readable_stderr(tmp_path, capsys):
    code, _, err = _run(
        capsys,
        "resample", "--input", str(tmp_path / "nope.nii.gz"),
        "--output", str(tmp_path / "o.nii.gz"), "--spacing", "1", "1", "1",
        "--json-errors",
    )
    assert code == 2
    doc = json.loads(err)
    assert doc["error"]["exit_code"] == 2
    assert doc["error"]["type"] in ("FormatError", "FileNotFoundError")


def test_config_layering_file_env_flags(tmp_path, capsys, monkeypatch):
    ref = tmp_path / "ref.nii.gz"
    pred = tmp_path / "pred.nii.gz"
    _write_labels(ref, _ball())
    _write_labels(pred, _ball(shift=(1, 0, 0)))
    config = tmp_path / "cfg.json"
    config.write_text(json.dumps({"tolerance_mm": 3.0}))
    base = (
        "eval-case", "--ref", str(ref), "--pred", str(pred),
        "--no-provenance", "--config", str(config),
    )

    code, out, _ = _run(capsys, *base)
    assert code == 0
    assert json.loads(out)["config"]["tolerance_mm"] == 3.0

    monkeypatch.setenv("PANCSEG_TOLERANCE_MM", "4.0")
    code, out, _ = _run(capsys, *base)
    assert code == 0
    assert json.loads(out)["config"]["tolerance_mm"] == 4.0

    code, out, _ = _run(capsys, *base, "--tolerance", "5.0")
    assert code == 0
    assert json.loads(out)["config"]["tolerance_mm"] == 5.0


def test_config_file_rejects_unknown_keys(tmp_path, capsys):
    ref = tmp_path / "ref.nii.gz"
    _write_labels(ref, _ball())
    config = tmp_path / "cfg.json"
    config.write_text(json.dumps({"tolerance": 3.0}))  # the key is tolerance_mm
    code, _, err = _run(
        capsys,
        "eval-case", "--ref", str(ref), "--pred", str(ref), "--config", str(config),
    )
    assert code == 1
    assert "tolerance" in err


def test_bad_environment_value_is_a_config_error(tmp_path, capsys, monkeypatch):
    ref = tmp_path / "ref.nii.gz"
    _write_labels(ref, _ball())
    monkeypatch.setenv("PANCSEG_TOLERANCE_MM", "five")
    code, _, err = _run(capsys, "eval-case", "--ref", str(ref), "--pred", str(ref))
    assert code == 1
    assert "PANCSEG_TOLERANCE_MM" in err
