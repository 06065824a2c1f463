"""``groundcheck`` command line: ingest, credibility, ground, report.

Exit codes are a stable contract: 0 success, 1 usage error, 2 data error,
3 backend error. All paths resolve relative to ``--workdir``.
"""

from __future__ import annotations

import json
from pathlib import Path

import click

from . import credibility as cred_mod
from . import grounding as ground_mod
from . import report as report_mod
from .backend import BackendConfig, BackendError, HttpBackend, load_mock
from .config import ConfigError, RunConfig, build_config
from .evidence import DocumentCache, Fetcher
from .ingest import (
    BUILTIN_PROFILES,
    IngestError,
    Transcript,
    load_profiles,
    load_transcript,
    normalize,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_BACKEND = 3

click.UsageError.exit_code = EXIT_USAGE


class DataError(click.ClickException):
    exit_code = EXIT_DATA


class BackendCliError(click.ClickException):
    exit_code = EXIT_BACKEND


def _resolve(workdir: Path, value: str | None) -> Path | None:
    if value is None:
        return None
    path = Path(value)
    return path if path.is_absolute() else workdir / path


@click.group()
@click.option("--workdir", type=click.Path(path_type=Path), default=Path("."), show_default=True,
              help="Base directory for all relative paths.")
@click.option("--config", "config_path", type=click.Path(path_type=Path), default=None,
              help="JSON or key=value config file.")
@click.pass_context
def main(ctx: click.Context, workdir: Path, config_path: Path | None) -> None:
    """Evaluate chat-assistant transcripts for source credibility and groundedness."""
    ctx.ensure_object(dict)
    ctx.obj["workdir"] = workdir
    ctx.obj["config_path"] = _resolve(workdir, str(config_path)) if config_path else None


def _config(ctx: click.Context, **overrides) -> RunConfig:
    try:
        return build_config(ctx.obj.get("config_path"), overrides)
    except ConfigError as exc:
        raise click.UsageError(str(exc)) from exc


def _load_run(transcripts_dir: Path) -> list[Transcript]:
    if not transcripts_dir.is_dir():
        raise DataError(f"transcripts directory not found: {transcripts_dir}")
    transcripts = []
    for path in sorted(transcripts_dir.glob("*.json")):
        try:
            transcripts.append(load_transcript(path))
        except (IngestError, ValueError, KeyError) as exc:
            raise DataError(f"{path}: {exc}") from exc
    if not transcripts:
        raise DataError(f"no canonical transcripts under {transcripts_dir}")
    return transcripts


def _load_db(config: RunConfig, workdir: Path) -> cred_mod.RatingDatabase:
    if not config.rating_db:
        raise click.UsageError("a rating database is required (--rating-db or config)")
    try:
        return cred_mod.load_rating_db(_resolve(workdir, config.rating_db))
    except cred_mod.RatingError as exc:
        raise DataError(str(exc)) from exc


@main.command()
@click.option("--raw-dir", required=True, help="Directory of archived conversation JSON files.")
@click.option("--out-dir", default="transcripts", show_default=True)
@click.option("--profiles", "profiles_path", default=None,
              help="JSON file of provider profiles; built-ins are used otherwise.")
@click.option("--default-profile", default="fallback_all", show_default=True,
              help="Profile for archives without a provider field.")
@click.pass_context
def ingest(ctx: click.Context, raw_dir: str, out_dir: str, profiles_path: str | None,
           default_profile: str) -> None:
    """Normalize archived conversations into canonical transcript JSON."""
    workdir: Path = ctx.obj["workdir"]
    raw_path = _resolve(workdir, raw_dir)
    out_path = _resolve(workdir, out_dir)
    if not raw_path.is_dir():
        raise DataError(f"raw directory not found: {raw_path}")

    profiles = dict(BUILTIN_PROFILES)
    if profiles_path:
        try:
            profiles.update(load_profiles(_resolve(workdir, profiles_path)))
        except (IngestError, OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot load profiles: {exc}") from exc
    if default_profile not in profiles:
        raise click.UsageError(f"unknown default profile {default_profile!r}")

    raw_files = sorted(raw_path.glob("*.json"))
    if not raw_files:
        raise DataError(f"no inputs: {raw_path} contains no .json archives")

    out_path.mkdir(parents=True, exist_ok=True)
    written = 0
    refusals = 0
    failures: list[tuple[Path, str]] = []
    for path in raw_files:
        try:
            with path.open(encoding="utf-8") as fh:
                raw = json.load(fh)
            if not isinstance(raw, dict):
                raise IngestError("expected a JSON object")
            profile_name = raw.get("provider", default_profile)
            profile = profiles.get(profile_name)
            if profile is None:
                raise IngestError(f"unknown provider profile {profile_name!r}")
            transcript = normalize(raw, profile)
        except (IngestError, json.JSONDecodeError, ValueError) as exc:
            failures.append((path, str(exc)))
            continue
        refusals += int(transcript.refused)
        report_mod.write_text_atomic(
            out_path / f"{path.stem}.transcript.json",
            json.dumps(transcript.to_json_dict(), ensure_ascii=False, indent=2, sort_keys=True) + "\n",
        )
        written += 1

    click.echo(f"ingested {written}/{len(raw_files)} archives into {out_path}")
    click.echo(f"refusals: {refusals}")
    click.echo(f"parse failures: {len(failures)}")
    for path, reason in failures:
        click.echo(f"  FAILED {path.name}: {reason}", err=True)
    if written == 0:
        raise DataError("all archives failed to ingest")


@main.command()
@click.option("--transcripts-dir", default=None)
@click.option("--rating-db", default=None)
@click.option("--out-dir", default=None)
@click.option("--group-by", default=None, help="Comma-separated dimensions "
              "(assistant, topic, user_type, thinking_mode).")
@click.option("--confidence", type=float, default=None)
@click.pass_context
def credibility(ctx: click.Context, transcripts_dir: str | None, rating_db: str | None,
                out_dir: str | None, group_by: str | None, confidence: float | None) -> None:
    """Credibility/non-credibility tables, citation stats, and distribution data."""
    workdir: Path = ctx.obj["workdir"]
    config = _config(ctx, transcripts_dir=transcripts_dir, rating_db=rating_db,
                     output_dir=out_dir, group_by=group_by, confidence=confidence)
    if not config.transcripts_dir:
        raise click.UsageError("a transcripts directory is required (--transcripts-dir or config)")
    run = _load_run(_resolve(workdir, config.transcripts_dir))
    db = _load_db(config, workdir)
    try:
        rows = cred_mod.aggregate(run, db, config.group_by, config.confidence)
        stats = cred_mod.citation_stats(run, db)
        distribution = cred_mod.factuality_distribution(run, db)
    except cred_mod.RatingError as exc:
        raise click.UsageError(str(exc)) from exc

    out_path = _resolve(workdir, config.output_dir)
    report_mod.write_credibility_csv(out_path / "credibility.csv", rows)
    report_mod.write_stats_json(out_path / "stats.json", stats)
    report_mod.write_distribution_csv(out_path / "distribution.csv", distribution)
    click.echo(f"wrote credibility.csv, stats.json, distribution.csv to {out_path}")


def _make_backend(config: RunConfig, workdir: Path):
    if config.mock_script:
        try:
            return load_mock(_resolve(workdir, config.mock_script))
        except BackendError as exc:
            raise BackendCliError(str(exc)) from exc
    if not config.endpoint or not config.model:
        raise click.UsageError("either --mock-script or both --endpoint and --model are required")
    try:
        return HttpBackend(
            BackendConfig(
                endpoint=config.endpoint,
                model=config.model,
                api_key_env=config.api_key_env or None,
                timeout=config.timeout,
                max_retries=config.max_retries,
                rate_limit_per_minute=config.rate_limit_per_minute,
            )
        )
    except BackendError as exc:
        raise BackendCliError(str(exc)) from exc


@main.command()
@click.option("--transcripts-dir", default=None)
@click.option("--rating-db", default=None)
@click.option("--cache-dir", default=None)
@click.option("--out-dir", default=None)
@click.option("--group-by", default=None)
@click.option("--confidence", type=float, default=None)
@click.option("--k", type=int, default=None, help="Evidence chunks retrieved per unit.")
@click.option("--chunk-size", type=int, default=None)
@click.option("--alpha", type=float, default=None, help="Weight of undecidable units in HS.")
@click.option("--mock-script", default=None, help="Mock backend script (offline run).")
@click.option("--endpoint", default=None, help="OpenAI-compatible endpoint base URL.")
@click.option("--model", default=None)
@click.option("--api-key-env", default=None)
@click.pass_context
def ground(ctx: click.Context, transcripts_dir: str | None, rating_db: str | None,
           cache_dir: str | None, out_dir: str | None, group_by: str | None,
           confidence: float | None, k: int | None, chunk_size: int | None,
           alpha: float | None, mock_script: str | None, endpoint: str | None,
           model: str | None, api_key_env: str | None) -> None:
    """Groundedness evaluation: GS/NCG/CG tables, HS, per-response data, audit log."""
    workdir: Path = ctx.obj["workdir"]
    config = _config(ctx, transcripts_dir=transcripts_dir, rating_db=rating_db,
                     cache_dir=cache_dir, output_dir=out_dir, group_by=group_by,
                     confidence=confidence, k=k, chunk_size=chunk_size, alpha=alpha,
                     mock_script=mock_script, endpoint=endpoint, model=model,
                     api_key_env=api_key_env)
    if not config.transcripts_dir:
        raise click.UsageError("a transcripts directory is required (--transcripts-dir or config)")
    if not config.cache_dir:
        raise click.UsageError("a cache directory is required (--cache-dir or config)")
    run = _load_run(_resolve(workdir, config.transcripts_dir))
    db = _load_db(config, workdir)
    backend = _make_backend(config, workdir)
    fetcher = Fetcher(DocumentCache(_resolve(workdir, config.cache_dir)))

    evaluations: list[ground_mod.TranscriptGrounding] = []
    failures: list[tuple[str, str]] = []
    backend_failures = 0
    for transcript in run:
        try:
            evaluations.append(
                ground_mod.evaluate_transcript(
                    transcript, db, backend, fetcher,
                    k=config.k, chunk_size=config.chunk_size, alpha=config.alpha,
                )
            )
        except ground_mod.TranscriptEvaluationError as exc:
            failures.append((ground_mod.transcript_key(transcript), str(exc)))
            backend_failures += 1

    click.echo(f"evaluated {len(evaluations)}/{len(run)} transcripts")
    for key, reason in failures:
        click.echo(f"  FAILED {key}: {reason}", err=True)
    if not evaluations:
        if backend_failures:
            raise BackendCliError("no transcript could be evaluated (backend failures)")
        raise DataError("no transcript could be evaluated")

    rows = ground_mod.aggregate_grounding(
        evaluations, config.group_by, config.confidence, config.alpha
    )
    out_path = _resolve(workdir, config.output_dir)
    report_mod.write_groundedness_csv(out_path / "groundedness.csv", rows)
    report_mod.write_hallucination_csv(out_path / "hallucination.csv", rows)
    report_mod.write_per_response_csv(out_path / "per_response.csv", evaluations)
    report_mod.write_audit_log(out_path / "groundedness_audit.jsonl", evaluations)
    click.echo(
        f"wrote groundedness.csv, hallucination.csv, per_response.csv, "
        f"groundedness_audit.jsonl to {out_path}"
    )


@main.command()
@click.option("--out-dir", default=None, help="Directory holding the command outputs to merge.")
@click.option("--figures/--no-figures", "render_figures", default=True, show_default=True,
              help="Also render PNG figures from the distribution data files.")
@click.pass_context
def report(ctx: click.Context, out_dir: str | None, render_figures: bool) -> None:
    """Merge prior outputs into report.json plus a plain-text summary."""
    workdir: Path = ctx.obj["workdir"]
    config = _config(ctx, output_dir=out_dir)
    out_path = _resolve(workdir, config.output_dir)
    try:
        merged = report_mod.merge_report(out_path)
    except report_mod.ReportError as exc:
        raise DataError(str(exc)) from exc
    report_mod.write_json_atomic(out_path / "report.json", merged)
    report_mod.write_text_atomic(out_path / "summary.txt", report_mod.summary_text(merged))
    click.echo(f"wrote report.json, summary.txt to {out_path}")

    if render_figures:
        from . import figures as figures_mod

        figures_dir = out_path / "figures"
        rendered = []
        if (out_path / "distribution.csv").is_file():
            rendered.append(
                figures_mod.render_credibility_distribution(
                    out_path / "distribution.csv", figures_dir / "credibility_distribution.png"
                )
            )
        if (out_path / "per_response.csv").is_file():
            rendered.append(
                figures_mod.render_groundedness_distribution(
                    out_path / "per_response.csv", figures_dir / "groundedness_distribution.png"
                )
            )
        for path in rendered:
            click.echo(f"rendered {path}")


if __name__ == "__main__":
    main()
