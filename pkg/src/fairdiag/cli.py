"""Command-line interface: generate synthetic cohorts, run audits, re-render
reports."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .cohort import to_csv
from .pipeline import AuditConfig, ConfigError, load_config, parse_synthetic, run_audit_to_dir
from .report import load_report_json, render_outputs

logger = logging.getLogger(__name__)

DEFAULT_OUT = "audit_out"
OUT_ENV_VAR = "FAIRDIAG_OUT"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fairdiag",
        description="Fairness audit and bias mitigation for tabular diagnostic classifiers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write a synthetic cohort to CSV")
    gen.add_argument("--config", required=True, help="JSON config holding the synthetic block")
    gen.add_argument("--out", help="output directory (default: $FAIRDIAG_OUT or ./audit_out)")
    gen.add_argument("--seed", type=int, help="override the generator seed")

    audit = sub.add_parser("audit", help="run the full fairness audit")
    audit.add_argument("--config", required=True, help="audit config JSON")
    audit.add_argument("--out", help="output directory (default: $FAIRDIAG_OUT or ./audit_out)")
    audit.add_argument("--seed", type=int, help="override the config seed")
    audit.add_argument("--jobs", type=int, default=1, help="parallel worker cap")

    rep = sub.add_parser("report", help="re-render tables and charts from report.json")
    rep.add_argument("--report", required=True, help="path to an existing report.json")
    rep.add_argument("--out", help="output directory (default: $FAIRDIAG_OUT or ./audit_out)")
    return parser


def _out_dir(arg_value, config_value=None) -> Path:
    return Path(arg_value or config_value or os.environ.get(OUT_ENV_VAR) or DEFAULT_OUT)


def _synthetic_from_config(path: str, seed_override):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    block = data.get("synthetic") or data.get("data", {}).get("synthetic")
    if block is None:
        raise ConfigError("config holds no 'synthetic' block")
    if seed_override is not None:
        block = dict(block, seed=seed_override)
    return parse_synthetic(block)


def _cmd_generate(args) -> int:
    from .cohort import generate_synthetic

    config = _synthetic_from_config(args.config, args.seed)
    out = _out_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cohort = generate_synthetic(config)
    path = out / "cohort.csv"
    to_csv(cohort, path)
    print(f"wrote {len(cohort)} records to {path}")
    return 0


def _cmd_audit(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config = AuditConfig.from_dict(dict(config.raw, seed=args.seed))
    out = _out_dir(args.out, config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(out / "audit.log")
    handler.setFormatter(logging.Formatter("%(asctime)s %(name)s %(levelname)s %(message)s"))
    logging.getLogger().addHandler(handler)
    try:
        run_audit_to_dir(config, out, jobs=max(1, args.jobs))
    finally:
        logging.getLogger().removeHandler(handler)
        handler.close()
    print(f"audit complete: {out / 'report.json'}")
    return 0


def _cmd_report(args) -> int:
    path = Path(args.report)
    if not path.exists():
        raise ConfigError(f"report file not found: {path}")
    out = _out_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = render_outputs(load_report_json(path), out)
    print("rendered: " + ", ".join(str(p) for p in written))
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "generate":
            return _cmd_generate(args)
        if args.command == "audit":
            return _cmd_audit(args)
        return _cmd_report(args)
    except (ConfigError, FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
