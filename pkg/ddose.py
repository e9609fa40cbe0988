import argparse
import logging
import sys
from datetime import date
from pathlib import Path
from typing import List, Optional

from util.errors import DailyDoseError
from util.options import Options, resolve

logger = logging.getLogger("ddose")

DEFAULT_CONFIG = "config/options.yml"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ddose", description="The Daily Dose: per-physician morning digests.")
    parser.add_argument("--config", default=None, help=f"configuration file (default {DEFAULT_CONFIG})")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="generate and deliver the digests for one day")
    run.add_argument("--date", type=date.fromisoformat, default=None, help="run date, YYYY-MM-DD (default today)")
    run.add_argument("--physician", default=None, help="only this physician")
    run.add_argument("--dry-run", action="store_true", help="build and archive digests without delivering them")
    run.add_argument("--cohort", default=None)
    run.add_argument("--registry-mode", choices=["file", "http"], default=None)
    run.add_argument("--registry-url", default=None)
    run.add_argument("--output-root", default=None)
    run.add_argument("--parallelism", type=int, default=None)
    run.add_argument("--max-retries", type=int, default=None)

    serve = commands.add_parser("serve", help="start the API server and the daily trigger loop")
    serve.add_argument("--host", default=None)
    serve.add_argument("--port", type=int, default=None)

    fixtures = commands.add_parser("fixtures", help="fixture tooling")
    fixture_commands = fixtures.add_subparsers(dest="fixtures_command", required=True)
    validate = fixture_commands.add_parser("validate", help="check a cohort directory")
    validate.add_argument("root", nargs="?", default=None, help="cohort root (default: configured cohort)")

    survey = commands.add_parser("survey", help="survey statistics")
    survey_commands = survey.add_subparsers(dest="survey_command", required=True)
    analyze = survey_commands.add_parser("analyze", help="print the Markdown survey report")
    analyze.add_argument("data", nargs="?", default=None, help="responses CSV")
    analyze.add_argument("--manifest", default=None, help="item manifest (default: <data>.manifest.yml)")
    analyze.add_argument("--published", action="store_true", help="analyse the cohort rebuilt from published figures")

    return parser


def _config_path(args) -> str:
    return args.config or DEFAULT_CONFIG


def _setup_logging(level: str):
    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def command_run(args) -> int:
    from util.orchestrator import run_daily

    config = Options.run_config(
        _config_path(args),
        overrides={
            "cohort_path": args.cohort,
            "registry.mode": args.registry_mode,
            "registry.base_url": args.registry_url,
            "output_root": args.output_root,
            "parallelism": args.parallelism,
            "max_retries": args.max_retries,
        },
    )
    _setup_logging(config.log_level)
    report = run_daily(config, args.date, physician_id=args.physician, dry_run=args.dry_run)

    for outcome in report.physicians:
        line = f"{outcome.physician_id}: {outcome.status.value}, {outcome.appointments} appointments"
        if outcome.delivery:
            line += f", delivery {outcome.delivery}"
        if outcome.error:
            line += f" ({outcome.error})"
        print(line)
    print(f"run {report.run_id}: {report.totals.digests} digests, {report.totals.errors} errors")
    return report.exit_code()


def command_serve(args) -> int:
    import uvicorn

    from index import app

    http = Options.get("http", _config_path(args)) or {}
    _setup_logging(Options.run_config(_config_path(args)).log_level)
    uvicorn.run(app, host=args.host or http.get("host", "127.0.0.1"), port=args.port or http.get("port", 8000))
    return 0


def command_fixtures_validate(args) -> int:
    from util.ehr import validate_cohort

    root = resolve(args.root) if args.root else resolve(Options.run_config(_config_path(args)).cohort_path)
    findings = validate_cohort(root)
    if findings:
        print(f"{root}: {len(findings)} problem(s)", file=sys.stderr)
        for finding in findings:
            print(f"- {finding}", file=sys.stderr)
        return 1
    print(f"{root}: ok")
    return 0


def command_survey_analyze(args) -> int:
    from util.survey import DEFAULT_MIDPOINTS, analyze_file, survey_report, synthesize_published_cohort

    if args.published or args.data is None:
        print(survey_report(synthesize_published_cohort(), DEFAULT_MIDPOINTS, published=True))
        return 0
    manifest = Path(args.manifest) if args.manifest else None
    print(analyze_file(Path(args.data), manifest))
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    try:
        if args.command == "run":
            return command_run(args)
        if args.command == "serve":
            return command_serve(args)
        if args.command == "fixtures":
            return command_fixtures_validate(args)
        return command_survey_analyze(args)
    except DailyDoseError as e:
        print(f"ddose: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
