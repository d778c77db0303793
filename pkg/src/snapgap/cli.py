"""Command-line interface.

Subcommands cover the full flow: `ingest` raw CSVs into a validated panel,
`label` a panel, `train` scorers on the early period, `backtest` end to end,
`synth` a verification panel, and `report` a saved manifest. A YAML config
supplies defaults; any key can be overridden with repeated `--set key=value`
flags (values parsed as YAML). Exit codes: 0 ok, 2 validation error,
3 insufficient cohort, 4 I/O failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from .config import (
    apply_overrides,
    backtest_config_from,
    label_config_from,
    load_config,
    synthetic_spec_from,
)
from .errors import CohortError, IoFailure, SnapGapError, ValidationError
from .ingest import (
    dedupe,
    designate_all,
    parse_crosswalk,
    parse_panel,
    write_records,
    write_rejects,
)
from .labeling import build_labels, write_labeled_panel
from .models import save_json, scorer_to_dict
from .pipeline import RunManifest, run_backtest, train_scorers
from .report import ALL_FORMATS, emit_report
from .synth import generate_synthetic

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_COHORT = 3
EXIT_IO = 4


def _file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _load_merged_config(args) -> dict:
    config = load_config(args.config) if args.config else {}
    if getattr(args, "seed", None) is not None:
        config["seed"] = args.seed
    return apply_overrides(config, args.set or [])


def _read_panel(path: Path, config: dict):
    schema = config.get("schema")  # None: identity headers, optional ones lax
    delimiter = config.get("delimiter", ",")
    records, rejects = parse_panel(path, schema, delimiter=delimiter)
    records = dedupe(records)
    return records, rejects


def cmd_ingest(args) -> int:
    config = _load_merged_config(args)
    records, rejects = _read_panel(Path(args.panel), config)
    if args.crosswalk:
        crosswalk, cw_rejects = parse_crosswalk(Path(args.crosswalk))
        records = designate_all(records, crosswalk)
        rejects = rejects + cw_rejects
    write_records(records, Path(args.out))
    if args.rejects:
        write_rejects(rejects, Path(args.rejects))
    print(f"ingested {len(records)} records, {len(rejects)} rejects -> {args.out}")
    return EXIT_OK


def cmd_label(args) -> int:
    config = _load_merged_config(args)
    records, _ = _read_panel(Path(args.panel), config)
    cfg = label_config_from(config, stratified=config.get("area_mode") == "stratified")
    panel = build_labels(records, cfg)
    write_labeled_panel(panel, Path(args.out))
    print(
        f"labeled {len(panel.rows)} rows: {panel.n_eligible()} eligible, "
        f"{panel.n_positive()} fragile (prevalence {panel.prevalence:.4f}) -> {args.out}"
    )
    return EXIT_OK


def _run_backtest(args) -> tuple[RunManifest, dict]:
    config = _load_merged_config(args)
    cfg = backtest_config_from(config)
    panel_path = Path(args.panel)
    records, _ = _read_panel(panel_path, config)
    digests = {"panel": _file_digest(panel_path)}
    if args.crosswalk:
        cw_path = Path(args.crosswalk)
        crosswalk, _ = parse_crosswalk(cw_path)
        records = designate_all(records, crosswalk)
        digests["crosswalk"] = _file_digest(cw_path)
    return run_backtest(cfg, records, input_digests=digests), config


def cmd_train(args) -> int:
    config = _load_merged_config(args)
    cfg = backtest_config_from(config)
    records, _ = _read_panel(Path(args.panel), config)
    if args.crosswalk:
        crosswalk, _ = parse_crosswalk(Path(args.crosswalk))
        records = designate_all(records, crosswalk)
    scorers = train_scorers(cfg, records)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    for (cohort, label), scorer in sorted(scorers.items()):
        name = f"model_{cohort}_{label}".replace("[", "_").replace("]", "").replace("+", "-")
        save_json(scorer_to_dict(scorer), outdir / f"{name}.json")
    print(f"wrote {len(scorers)} scorer files -> {outdir}")
    return EXIT_OK


def cmd_backtest(args) -> int:
    manifest, _ = _run_backtest(args)
    outdir = Path(args.out)
    formats = args.formats.split(",") if args.formats else list(ALL_FORMATS)
    written = emit_report(manifest, formats, outdir)
    if args.models:
        model_dir = outdir / "models"
        model_dir.mkdir(parents=True, exist_ok=True)
        for (cohort, label), scorer in sorted(manifest.scorers.items()):
            name = f"model_{cohort}_{label}".replace("[", "_").replace("]", "").replace("+", "-")
            save_json(scorer_to_dict(scorer), model_dir / f"{name}.json")
    print(f"manifest digest {manifest.digest}")
    print(f"wrote {len(written)} report files -> {outdir}")
    return EXIT_OK


def cmd_synth(args) -> int:
    config = _load_merged_config(args)
    spec = synthetic_spec_from(config)
    records, truth = generate_synthetic(spec)
    write_records(records, Path(args.out))
    truth_path = Path(args.truth) if args.truth else Path(args.out).with_suffix(".truth.json")
    with open(truth_path, "w", encoding="utf-8") as fh:
        json.dump(truth, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"generated {len(records)} rows -> {args.out} (truth: {truth_path})")
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        with open(Path(args.manifest), "r", encoding="utf-8") as fh:
            body = json.load(fh)
    except OSError as exc:
        raise IoFailure(f"cannot read manifest {args.manifest}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"manifest {args.manifest} is not valid JSON: {exc}") from exc
    formats = args.formats.split(",") if args.formats else list(ALL_FORMATS)
    written = emit_report(body, formats, Path(args.out))
    print(f"wrote {len(written)} report files -> {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="snapgap",
        description="Label high-poverty, low-uptake ZIPs and backtest classifiers out-of-time.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed_required=False):
        p.add_argument("--config", help="YAML config file")
        p.add_argument(
            "--set",
            action="append",
            metavar="KEY=VALUE",
            help="override any config key (YAML-parsed value); repeatable",
        )
        p.add_argument(
            "--seed", type=int, required=seed_required, help="root random seed"
        )

    p = sub.add_parser("ingest", help="parse + clean raw panel CSV into a validated panel")
    common(p)
    p.add_argument("--panel", required=True, help="raw panel CSV")
    p.add_argument("--crosswalk", help="ZIP-tract crosswalk CSV for area designation")
    p.add_argument("--out", required=True, help="output panel CSV")
    p.add_argument("--rejects", help="output reject-report CSV")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("label", help="build eligibility, thresholds, and the target")
    common(p)
    p.add_argument("--panel", required=True, help="validated panel CSV")
    p.add_argument("--out", required=True, help="labeled panel CSV (JSON sidecar beside it)")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("train", help="train calibrated scorers on the early period")
    common(p, seed_required=False)
    p.add_argument("--panel", required=True)
    p.add_argument("--crosswalk")
    p.add_argument("--out", required=True, help="directory for scorer JSON files")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("backtest", help="full out-of-time run with reports")
    common(p, seed_required=True)
    p.add_argument("--panel", required=True)
    p.add_argument("--crosswalk")
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--formats", help="comma list of json,csv,markdown (default all)")
    p.add_argument("--models", action="store_true", help="also write scorer JSON files")
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("synth", help="generate a synthetic verification panel")
    common(p, seed_required=True)
    p.add_argument("--out", required=True, help="output panel CSV")
    p.add_argument("--truth", help="ground-truth sidecar path (default: <out>.truth.json)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("report", help="render reports from a saved manifest")
    common(p)
    p.add_argument("--manifest", required=True, help="manifest.json from a backtest run")
    p.add_argument("--out", required=True)
    p.add_argument("--formats", help="comma list of json,csv,markdown (default all)")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except CohortError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COHORT
    except (IoFailure, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except SnapGapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
