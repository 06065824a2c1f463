"""Report files: the delimited tables, the merged JSON report, and the plain
text summary.

Rates are emitted as fractions with 4 decimals (converting to percentages is
the consumer's job); undefined rates are empty cells. All files are written
atomically (temp file + rename) and contain no timestamps, so re-running a
command on unchanged inputs reproduces identical bytes.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Sequence

from .credibility import CitationStats, CredibilityRow, DistributionRow
from .grounding import GroundingRow, TranscriptGrounding, transcript_key

GROUP_DIMS = ("assistant", "topic", "user_type", "thinking_mode")
OVERALL = "Overall"


class ReportError(ValueError):
    pass


def _fmt(value: float | None) -> str:
    return "" if value is None else f"{value:.4f}"


def write_text_atomic(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv_atomic(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    import io

    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    write_text_atomic(path, buffer.getvalue())


def write_json_atomic(path: str | Path, payload: Any) -> None:
    write_text_atomic(path, json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n")


def _group_columns(group_by: tuple[str, ...]) -> list[str]:
    return list(group_by) if group_by else ["group"]


def _group_cells(group_by: tuple[str, ...], values: tuple[str, ...]) -> list[str]:
    if not values:  # Overall row
        return [OVERALL] * len(_group_columns(group_by))
    return list(values)


def write_credibility_csv(path: str | Path, rows: Sequence[CredibilityRow]) -> None:
    if not rows:
        raise ReportError("no credibility rows to write")
    group_by = rows[0].group_by
    header = _group_columns(group_by) + ["CR", "CR_lo", "CR_hi", "NCR", "NCR_lo", "NCR_hi", "n"]
    out = []
    for row in rows:
        out.append(
            _group_cells(group_by, row.group_values)
            + [
                _fmt(row.cr.rate), _fmt(row.cr.ci_low), _fmt(row.cr.ci_high),
                _fmt(row.ncr.rate), _fmt(row.ncr.ci_low), _fmt(row.ncr.ci_high),
                str(row.cr.n),
            ]
        )
    write_csv_atomic(path, header, out)


def write_stats_json(path: str | Path, stats: Sequence[CitationStats]) -> None:
    payload = {
        "assistants": {
            s.assistant: {
                "total_sources": s.total_sources,
                "unique_domains": s.unique_domains,
                "avg_sources_per_chat": round(s.avg_sources_per_chat, 4),
                "refused_responses": s.refused_responses,
                "avg_response_length_words": round(s.avg_response_length_words, 4),
                "fc_citations_share": round(s.fc_citations_share, 4),
                "chats_with_fc_share": round(s.chats_with_fc_share, 4),
                "chats_with_disinfo_share": round(s.chats_with_disinfo_share, 4),
                "social_media_citations_share": round(s.social_media_citations_share, 4),
            }
            for s in stats
        }
    }
    write_json_atomic(path, payload)


def write_distribution_csv(path: str | Path, rows: Sequence[DistributionRow]) -> None:
    write_csv_atomic(
        path,
        ["assistant", "factuality", "count", "share"],
        [[r.assistant, r.factuality.value, str(r.count), _fmt(r.share)] for r in rows],
    )


def write_groundedness_csv(path: str | Path, rows: Sequence[GroundingRow]) -> None:
    if not rows:
        raise ReportError("no groundedness rows to write")
    group_by = rows[0].group_by
    header = _group_columns(group_by) + [
        "GS", "GS_lo", "GS_hi", "NCG", "NCG_lo", "NCG_hi", "CG", "CG_lo", "CG_hi", "n",
    ]
    out = []
    for row in rows:
        out.append(
            _group_cells(group_by, row.group_values)
            + [
                _fmt(row.gs.rate), _fmt(row.gs.ci_low), _fmt(row.gs.ci_high),
                _fmt(row.ncg.rate), _fmt(row.ncg.ci_low), _fmt(row.ncg.ci_high),
                _fmt(row.cg.rate), _fmt(row.cg.ci_low), _fmt(row.cg.ci_high),
                str(row.v),
            ]
        )
    write_csv_atomic(path, header, out)


def write_hallucination_csv(path: str | Path, rows: Sequence[GroundingRow]) -> None:
    if not rows:
        raise ReportError("no hallucination rows to write")
    group_by = rows[0].group_by
    header = _group_columns(group_by) + ["HS", "US", "UD", "V", "transcripts"]
    out = []
    for row in rows:
        out.append(
            _group_cells(group_by, row.group_values)
            + [_fmt(row.hs), str(row.us), str(row.ud), str(row.v), str(row.transcripts)]
        )
    write_csv_atomic(path, header, out)


def write_per_response_csv(path: str | Path, run: Sequence[TranscriptGrounding]) -> None:
    header = [
        "assistant", "topic", "user_type", "thinking_mode", "claim_id", "template_id",
        "verifiable_units", "GS", "CG", "NCG", "HS",
    ]
    rows = []
    for item in sorted(run, key=lambda g: transcript_key(g.transcript)):
        t = item.transcript
        r = item.report
        rows.append(
            [
                t.assistant_id, t.topic.value, t.user_type.value,
                "thinking" if t.thinking_mode else "non-thinking",
                t.claim_id, str(t.template_id), str(r.v),
                _fmt(r.gs), _fmt(r.cg), _fmt(r.ncg), _fmt(r.hs),
            ]
        )
    write_csv_atomic(path, header, rows)


def write_audit_log(path: str | Path, run: Sequence[TranscriptGrounding]) -> None:
    lines = []
    for item in sorted(run, key=lambda g: transcript_key(g.transcript)):
        for record in item.audit:
            lines.append(
                json.dumps(
                    {
                        "transcript": record.transcript_key,
                        "unit_id": record.unit_id,
                        "unit_text": record.unit_text,
                        "group": record.group_kind,
                        "decision": record.decision,
                        "summary": record.summary,
                        "prompt_hash": record.prompt_hash,
                        "parse_failure": record.parse_failure,
                    },
                    ensure_ascii=False,
                    sort_keys=True,
                )
            )
    write_text_atomic(path, "\n".join(lines) + ("\n" if lines else ""))


# --- Merged report -------------------------------------------------------------


def _cell_key_from_row(row: dict[str, str]) -> tuple[str | None, ...]:
    key = []
    for dim in GROUP_DIMS:
        value = row.get(dim, "")
        key.append(None if value in ("", OVERALL) else value)
    return tuple(key)


def _read_table(path: Path) -> list[dict[str, str]]:
    with path.open(encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def _num(row: dict[str, str], column: str) -> float | None:
    value = row.get(column, "")
    return float(value) if value not in ("", None) else None


def merge_report(output_dir: str | Path) -> dict[str, Any]:
    """Merge credibility and groundedness tables into one cell-keyed report.

    Cells are keyed by (assistant, topic, user_type, thinking_mode); dimensions
    a table did not group by are null. A missing table yields null sections.
    """
    output_dir = Path(output_dir)
    credibility_path = output_dir / "credibility.csv"
    groundedness_path = output_dir / "groundedness.csv"
    hallucination_path = output_dir / "hallucination.csv"
    if not credibility_path.is_file() and not groundedness_path.is_file():
        raise ReportError(f"no credibility.csv or groundedness.csv under {output_dir}")

    cells: dict[tuple[str | None, ...], dict[str, Any]] = {}

    def cell_for(key: tuple[str | None, ...]) -> dict[str, Any]:
        if key not in cells:
            cells[key] = {
                "assistant": key[0], "topic": key[1], "user_type": key[2],
                "thinking_mode": key[3], "credibility": None, "groundedness": None,
            }
        return cells[key]

    if credibility_path.is_file():
        seen: set[tuple[str | None, ...]] = set()
        for row in _read_table(credibility_path):
            key = _cell_key_from_row(row)
            if key in seen:
                raise ReportError(f"conflicting credibility cell key: {key}")
            seen.add(key)
            cell_for(key)["credibility"] = {
                "cr": _num(row, "CR"), "cr_lo": _num(row, "CR_lo"), "cr_hi": _num(row, "CR_hi"),
                "ncr": _num(row, "NCR"), "ncr_lo": _num(row, "NCR_lo"), "ncr_hi": _num(row, "NCR_hi"),
                "n": int(row["n"]),
            }

    hallucination_by_key: dict[tuple[str | None, ...], dict[str, str]] = {}
    if hallucination_path.is_file():
        for row in _read_table(hallucination_path):
            hallucination_by_key[_cell_key_from_row(row)] = row

    if groundedness_path.is_file():
        seen = set()
        for row in _read_table(groundedness_path):
            key = _cell_key_from_row(row)
            if key in seen:
                raise ReportError(f"conflicting groundedness cell key: {key}")
            seen.add(key)
            section = {
                "gs": _num(row, "GS"), "gs_lo": _num(row, "GS_lo"), "gs_hi": _num(row, "GS_hi"),
                "ncg": _num(row, "NCG"), "ncg_lo": _num(row, "NCG_lo"), "ncg_hi": _num(row, "NCG_hi"),
                "cg": _num(row, "CG"), "cg_lo": _num(row, "CG_lo"), "cg_hi": _num(row, "CG_hi"),
                "n_units": int(row["n"]),
                "hs": None,
            }
            hall = hallucination_by_key.get(key)
            if hall is not None:
                section["hs"] = _num(hall, "HS")
            cell_for(key)["groundedness"] = section

    ordered = [cells[key] for key in sorted(cells, key=lambda k: tuple(str(v) for v in k))]
    return {"cells": ordered}


def summary_text(report: dict[str, Any]) -> str:
    """Fixed-width table over the merged cells."""
    header = f"{'cell':<58} {'CR':>8} {'NCR':>8} {'GS':>8} {'CG':>8} {'NCG':>8} {'HS':>8}"
    lines = [header, "-" * len(header)]

    def show(value: float | None) -> str:
        return f"{value:.4f}" if value is not None else "-"

    for cell in report["cells"]:
        name_parts = [
            cell[dim] for dim in GROUP_DIMS if cell[dim] is not None
        ]
        name = " / ".join(name_parts) if name_parts else OVERALL
        cred = cell["credibility"] or {}
        ground = cell["groundedness"] or {}
        lines.append(
            f"{name:<58} {show(cred.get('cr')):>8} {show(cred.get('ncr')):>8}"
            f" {show(ground.get('gs')):>8} {show(ground.get('cg')):>8}"
            f" {show(ground.get('ncg')):>8} {show(ground.get('hs')):>8}"
        )
    return "\n".join(lines) + "\n"
