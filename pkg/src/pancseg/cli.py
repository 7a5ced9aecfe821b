"""Batch command-line surface: resample, augment, ensemble, evaluate, select.

Conventions across all subcommands:

- stdout carries data (JSON or CSV documents), stderr carries diagnostics;
- exit 0 on success, 1 on validation/config errors, 2 on I/O or format
  errors; ``--json-errors`` emits a machine-readable error object on stderr;
- shared options resolve as config file < PANCSEG_* environment < flags;
- report documents embed the tool version, the resolved configuration and
  sha256 digests of every input file, and contain no timestamps, so reruns
  over identical inputs are byte-identical.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

from . import __version__
from .augment import apply_pipeline, load_preset, preset
from .ensemble import EnsembleSpec, combine, load_ensemble_spec, save_ensemble_spec
from .errors import BudgetExceededError, ConfigError, FormatError, PancsegError, ValidationError
from .geometry import ResamplePlan, resample_image, resample_labels
from .metrics import EvalConfig, aggregate_cohort, evaluate_case
from .nifti import read_volume, write_volume
from .report import (
    case_report_to_dict,
    dumps_json,
    format_sig,
    report_to_csv,
    report_to_dict,
    round_sig,
)
from .schedules import ScheduleSpec, schedule_curve
from .selection import (
    DEFAULT_BUDGET,
    DEFAULT_WEIGHTS,
    METRIC_NAMES,
    SubsetEvaluator,
    beam_search_subsets,
    load_pool,
    search_subsets,
)
from .volume import read_manifest

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2

ENV_PREFIX = "PANCSEG_"


class _UsageError(Exception):
    def __init__(self, parser: argparse.ArgumentParser, message: str):
        super().__init__(message)
        self.parser = parser


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on bad flags; the documented contract is 1
    def error(self, message):
        raise _UsageError(self, message)


@dataclass(frozen=True)
class RunConfig:
    label_id: int = 2
    tolerance_mm: float = 5.0
    empty_policy: str = "penalize"
    volume_unit: str = "mm3"
    seed: Optional[int] = None
    jobs: int = 1
    norm: str = "minmax"
    metric_weights: tuple[float, ...] = DEFAULT_WEIGHTS

    def eval_config(self) -> EvalConfig:
        return EvalConfig(
            label_id=self.label_id,
            tolerance_mm=self.tolerance_mm,
            empty_policy=self.empty_policy,
            volume_unit=self.volume_unit,
        )


_CONFIG_PARSERS = {
    "label_id": int,
    "tolerance_mm": float,
    "empty_policy": str,
    "volume_unit": str,
    "seed": int,
    "jobs": int,
    "norm": str,
    "metric_weights": lambda v: tuple(float(x) for x in v),
}


def load_config_file(path: str | Path) -> dict:
    """Strict JSON config: every key must be a known RunConfig field."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise FormatError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    out = {}
    for key, value in doc.items():
        if key not in _CONFIG_PARSERS:
            raise ConfigError(f"unknown config key {key!r} in {path}")
        try:
            out[key] = _CONFIG_PARSERS[key](value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config key {key!r} in {path}: {exc}") from exc
    return out


def _env_overrides() -> dict:
    out = {}
    for key, parse in _CONFIG_PARSERS.items():
        raw = os.environ.get(ENV_PREFIX + key.upper())
        if raw is None:
            continue
        try:
            if key == "metric_weights":
                out[key] = tuple(float(x) for x in raw.split(","))
            else:
                out[key] = parse(raw)
        except ValueError as exc:
            raise ConfigError(f"environment {ENV_PREFIX}{key.upper()}={raw!r}: {exc}") from exc
    return out


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Layer defaults < config file < environment < explicit flags."""
    values = {}
    config_path = getattr(args, "config", None)
    if config_path:
        values.update(load_config_file(config_path))
    values.update(_env_overrides())
    flag_map = {
        "label_id": getattr(args, "label", None),
        "tolerance_mm": getattr(args, "tolerance", None),
        "empty_policy": getattr(args, "empty_policy", None),
        "volume_unit": getattr(args, "volume_unit", None),
        "seed": getattr(args, "seed", None),
        "jobs": getattr(args, "jobs", None),
        "norm": getattr(args, "norm", None),
        "metric_weights": getattr(args, "metric_weights", None),
    }
    for key, value in flag_map.items():
        if value is not None:
            values[key] = tuple(value) if key == "metric_weights" else value
    return RunConfig(**values)


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    try:
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                h.update(chunk)
    except OSError as exc:
        raise FormatError(f"cannot digest {path}: {exc}") from exc
    return "sha256:" + h.hexdigest()


def provenance(config_echo: dict, inputs) -> dict:
    return {
        "tool": "pancseg",
        "version": __version__,
        "config": config_echo,
        "inputs": {str(p): sha256_file(p) for p in sorted(str(x) for x in inputs)},
    }


def _emit(text: str, out_path: Optional[str] = None):
    sys.stdout.write(text)
    if out_path:
        path = Path(out_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")


def _default_case_id(path: str | Path) -> str:
    name = Path(path).name
    for suffix in (".nii.gz", ".nii"):
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return Path(path).stem


# ---------------------------------------------------------------- subcommands


def cmd_resample(args, cfg: RunConfig) -> int:
    volume = read_volume(args.input, kind=args.kind, label_set=None)
    plan = ResamplePlan.for_volume(
        volume,
        target_spacing=tuple(args.spacing),
        image_order=args.image_order,
        label_order=args.label_order,
        clamp_cubic=args.clamp_cubic,
    )
    if args.kind == "image":
        out = resample_image(volume, plan)
    else:
        out = resample_labels(volume, plan)
    out_path = Path(args.output)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_volume(out, out_path)
    echo = {
        "command": "resample",
        "kind": args.kind,
        "target_spacing": [round_sig(s) for s in plan.target_spacing],
        "target_dims": list(plan.target_dims),
        "image_order": plan.image_order,
        "label_order": plan.label_order,
        "clamp_cubic": plan.clamp_cubic,
    }
    doc = {
        "outputs": {str(out_path): sha256_file(out_path)},
        "provenance": provenance(echo, [args.input]),
    }
    _emit(dumps_json(doc), args.out)
    return EXIT_OK


def cmd_augment(args, cfg: RunConfig) -> int:
    img = read_volume(args.image, kind="image")
    lab = read_volume(args.labels, kind="labels", label_set=None)
    if args.preset_file:
        pre = load_preset(args.preset_file)
    else:
        pre = preset(args.preset)
    if cfg.seed is not None:
        pre = replace(pre, seed=cfg.seed)
    img_out, lab_out = apply_pipeline(img, lab, pre)
    for path, vol in ((args.out_image, img_out), (args.out_labels, lab_out)):
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        write_volume(vol, p)
    echo = {
        "command": "augment",
        "preset": pre.name,
        "image_order": pre.image_order,
        "label_order": pre.label_order,
        "seed": pre.seed,
    }
    inputs = [args.image, args.labels] + ([args.preset_file] if args.preset_file else [])
    doc = {
        "outputs": {
            str(args.out_image): sha256_file(args.out_image),
            str(args.out_labels): sha256_file(args.out_labels),
        },
        "provenance": provenance(echo, inputs),
    }
    _emit(dumps_json(doc), args.out)
    return EXIT_OK


def cmd_ensemble(args, cfg: RunConfig) -> int:
    spec_path = Path(args.spec)
    spec = load_ensemble_spec(spec_path)
    base_dir = spec_path.parent

    if args.case_id:
        if not args.output:
            raise ConfigError("--case-id needs --output FILE")
        case_ids = [args.case_id]
        out_paths = [Path(args.output)]
    else:
        if args.manifest:
            case_ids = [row.case_id for row in read_manifest(args.manifest)]
        elif args.cases:
            case_ids = list(args.cases)
        else:
            raise ConfigError("give --case-id, --cases or --manifest")
        if not args.output_dir:
            raise ConfigError("cohort ensembling needs --output-dir DIR")
        out_dir = Path(args.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        out_paths = [out_dir / f"{c}.nii.gz" for c in case_ids]

    outputs = {}
    member_files = set()
    for case_id, out_path in zip(case_ids, out_paths):
        combined = combine(spec, case_id=case_id, base_dir=base_dir)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        write_volume(combined, out_path)
        outputs[str(out_path)] = sha256_file(out_path)
        for m in spec.members:
            member_files.add(str(m.resolve_path(case_id, base_dir)))

    echo = {
        "command": "ensemble",
        "mode": spec.mode,
        "members": [m.member_id for m in spec.sorted_members()],
    }
    inputs = [str(spec_path)] + sorted(member_files)
    if args.manifest:
        inputs.append(str(args.manifest))
    doc = {"outputs": outputs, "provenance": provenance(echo, inputs)}
    _emit(dumps_json(doc), args.out)
    return EXIT_OK


def cmd_eval_case(args, cfg: RunConfig) -> int:
    config = cfg.eval_config()
    ref = read_volume(args.ref, kind="labels")
    pred = read_volume(args.pred, kind="labels")
    case_id = args.case_id or _default_case_id(args.pred)
    case = evaluate_case(ref, pred, config, case_id=case_id)
    echo = _config_echo(config)
    prov = None if args.no_provenance else provenance(echo, [args.ref, args.pred])
    _emit(dumps_json(case_report_to_dict(case, config, prov)), args.out)
    return EXIT_OK


def _config_echo(config: EvalConfig) -> dict:
    return {
        "label_id": config.label_id,
        "tolerance_mm": round_sig(config.tolerance_mm),
        "empty_policy": config.empty_policy,
        "volume_unit": config.volume_unit,
    }


def _evaluate_manifest(manifest, config: EvalConfig, jobs: int):
    def one(row):
        ref = read_volume(row.reference, kind="labels")
        pred = read_volume(row.prediction, kind="labels")
        return evaluate_case(ref, pred, config, case_id=row.case_id)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(one, manifest.rows))
    return [one(row) for row in manifest.rows]


def cmd_eval_cohort(args, cfg: RunConfig) -> int:
    config = cfg.eval_config()
    manifest = read_manifest(args.manifest)
    cases = _evaluate_manifest(manifest, config, cfg.jobs)
    report = aggregate_cohort(cases, config)
    if args.csv:
        _emit(report_to_csv(report), args.out)
        return EXIT_OK
    prov = None
    if not args.no_provenance:
        inputs = [args.manifest]
        for row in manifest.rows:
            inputs.extend([row.reference, row.prediction])
        prov = provenance(_config_echo(config), inputs)
    _emit(dumps_json(report_to_dict(report, prov)), args.out)
    return EXIT_OK


def cmd_select(args, cfg: RunConfig) -> int:
    pool = load_pool(args.pool)
    config = cfg.eval_config()
    size_min = args.size_min
    size_max = args.size_max if args.size_max is not None else len(pool.members)
    evaluator = SubsetEvaluator(pool, config)
    if args.beam is not None:
        results = beam_search_subsets(
            pool,
            size_max=size_max,
            beam_width=args.beam,
            config=config,
            weights=cfg.metric_weights,
            norm=cfg.norm,
            evaluator=evaluator,
        )
    else:
        results = search_subsets(
            pool,
            size_min=size_min,
            size_max=size_max,
            config=config,
            weights=cfg.metric_weights,
            norm=cfg.norm,
            budget=args.budget,
            evaluator=evaluator,
        )

    top = results[: args.top]
    ranking = []
    for rank, res in enumerate(top, start=1):
        ranking.append(
            {
                "rank": rank,
                "member_ids": list(res.member_ids),
                "score": round_sig(res.score.score),
                "normalized": {
                    name: round_sig(value)
                    for name, value in zip(METRIC_NAMES, res.score.normalized)
                },
                "report": report_to_dict(res.report),
            }
        )
    echo = {
        "command": "select",
        "mode": pool.mode,
        "normalization": cfg.norm,
        "metric_weights": [round_sig(w) for w in cfg.metric_weights],
        "size_min": size_min,
        "size_max": size_max,
        "beam_width": args.beam,
        **_config_echo(config),
    }
    inputs = {str(args.pool)}
    base_dir = Path(pool.base_dir) if pool.base_dir else None
    for case_id, ref_path in pool.cases:
        p = Path(ref_path)
        inputs.add(str(p if p.is_absolute() or base_dir is None else base_dir / p))
        for m in pool.members:
            inputs.add(str(m.resolve_path(case_id, base_dir)))
    doc = {
        "config": echo,
        "n_evaluated": len(results),
        "ranking": ranking,
        "provenance": provenance(echo, sorted(inputs)),
    }
    _emit(dumps_json(doc), args.out)

    winner = results[0]
    if args.spec_out:
        members = tuple(
            m for m in pool.sorted_members() if m.member_id in set(winner.member_ids)
        )
        save_ensemble_spec(EnsembleSpec(members=members, mode=pool.mode), args.spec_out)
    if args.report_out:
        path = Path(args.report_out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(dumps_json(report_to_dict(winner.report)), encoding="utf-8")
    return EXIT_OK


def cmd_lr_curve(args, cfg: RunConfig) -> int:
    spec = ScheduleSpec(
        family=args.family,
        lr0=args.lr0,
        max_epochs=args.max_epochs,
        exponent=args.exponent,
        warmup_epochs=args.warmup_epochs,
    )
    lines = ["epoch,lr"]
    for epoch, lr in schedule_curve(spec):
        lines.append(f"{epoch},{format_sig(lr)}")
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


# -------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config file with shared option defaults")
    common.add_argument(
        "--json-errors",
        action="store_true",
        help="emit a machine-readable error object on stderr",
    )
    common.add_argument("--out", help="also write the stdout document to this file")

    eval_opts = _Parser(add_help=False)
    eval_opts.add_argument("--label", type=int, help="tumor label id (default 2)")
    eval_opts.add_argument("--tolerance", type=float, help="surface dice tolerance in mm (default 5.0)")
    eval_opts.add_argument(
        "--empty-policy", choices=("penalize", "exclude"), help="empty-mask policy"
    )
    eval_opts.add_argument("--volume-unit", choices=("mm3", "ml"), help="unit for volume RMSE")

    parser = _Parser(prog="pancseg", description=__doc__)
    parser.add_argument("--version", action="version", version=f"pancseg {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("resample", parents=[common], help="change a volume's voxel spacing")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--kind", choices=("image", "labels"), default="image")
    p.add_argument("--spacing", type=float, nargs=3, required=True, metavar=("SX", "SY", "SZ"))
    p.add_argument("--image-order", type=int, choices=(0, 1, 3), default=3)
    p.add_argument("--label-order", type=int, choices=(0, 1), default=1)
    p.add_argument("--clamp-cubic", action="store_true")
    p.set_defaults(handler=cmd_resample)

    p = sub.add_parser("augment", parents=[common], help="apply a deterministic augmentation preset")
    p.add_argument("--image", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out-image", required=True)
    p.add_argument("--out-labels", required=True)
    p.add_argument("--preset", default="da5", help="named preset (da5, da5ord0, da5segord0, default)")
    p.add_argument("--preset-file", help="JSON preset file (overrides --preset)")
    p.add_argument("--seed", type=int, help="pipeline seed")
    p.set_defaults(handler=cmd_augment)

    p = sub.add_parser("ensemble", parents=[common], help="combine member predictions")
    p.add_argument("--spec", required=True, help="ensemble spec JSON")
    p.add_argument("--case-id", help="single case id")
    p.add_argument("--cases", nargs="+", help="explicit case ids")
    p.add_argument("--manifest", help="manifest CSV naming the case ids")
    p.add_argument("--output", help="output file for --case-id")
    p.add_argument("--output-dir", help="output directory for cohort runs")
    p.set_defaults(handler=cmd_ensemble)

    p = sub.add_parser(
        "eval-case", parents=[common, eval_opts], help="five metrics for one ref/pred pair"
    )
    p.add_argument("--ref", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--case-id")
    p.add_argument("--no-provenance", action="store_true")
    p.set_defaults(handler=cmd_eval_case)

    p = sub.add_parser(
        "eval-cohort", parents=[common, eval_opts], help="evaluate every case in a manifest"
    )
    p.add_argument("--manifest", required=True)
    p.add_argument("--csv", action="store_true", help="emit CSV instead of JSON")
    p.add_argument("--jobs", type=int, help="parallel case evaluations")
    p.add_argument("--no-provenance", action="store_true")
    p.set_defaults(handler=cmd_eval_cohort)

    p = sub.add_parser(
        "select", parents=[common, eval_opts], help="search for the best ensemble subset"
    )
    p.add_argument("--pool", required=True, help="candidate pool JSON")
    p.add_argument("--size-min", type=int, default=1)
    p.add_argument("--size-max", type=int)
    p.add_argument("--norm", choices=("minmax", "rank"), help="metric normalization")
    p.add_argument(
        "--metric-weights",
        type=float,
        nargs=5,
        metavar=("W_DICE", "W_SDICE", "W_MASD", "W_HD95", "W_RMSE"),
    )
    p.add_argument("--budget", type=int, default=DEFAULT_BUDGET)
    p.add_argument("--beam", type=int, help="beam width (enables beam search)")
    p.add_argument("--top", type=int, default=10, help="ranking entries to emit")
    p.add_argument("--jobs", type=int)
    p.add_argument("--spec-out", help="write the winning ensemble spec here")
    p.add_argument("--report-out", help="write the winning cohort report here")
    p.set_defaults(handler=cmd_select)

    p = sub.add_parser("lr-curve", parents=[common], help="emit an (epoch, lr) CSV")
    p.add_argument("--family", choices=("poly", "poly_warmup", "cosine_warmup"), required=True)
    p.add_argument("--lr0", type=float, required=True)
    p.add_argument("--max-epochs", type=int, required=True)
    p.add_argument("--exponent", type=float, default=0.9)
    p.add_argument("--warmup-epochs", type=int, default=0)
    p.set_defaults(handler=cmd_lr_curve)

    return parser


def _emit_error(exc: Exception, exit_code: int, json_errors: bool):
    if json_errors:
        doc = {
            "error": {
                "type": type(exc).__name__,
                "message": str(exc),
                "exit_code": exit_code,
            }
        }
        sys.stderr.write(json.dumps(doc) + "\n")
    else:
        sys.stderr.write(f"pancseg: error: {exc}\n")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        exc.parser.print_usage(sys.stderr)
        sys.stderr.write(f"pancseg: error: {exc}\n")
        return EXIT_VALIDATION
    json_errors = bool(getattr(args, "json_errors", False))
    try:
        cfg = resolve_config(args)
        return args.handler(args, cfg)
    except (FormatError, OSError) as exc:
        _emit_error(exc, EXIT_IO, json_errors)
        return EXIT_IO
    except (ValidationError, BudgetExceededError, PancsegError) as exc:
        _emit_error(exc, EXIT_VALIDATION, json_errors)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
