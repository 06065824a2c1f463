"""Unit extraction, per-credibility-group support judging, and the
GS/CG/NCG/HS metric suite.

A response decomposes into labeled units; only ``Fact`` and ``Claim`` units
are verifiable. ``ReportedClaim`` marks statements attributed to an external
source and is excluded from the verifiable set entirely, since treating such
units as claims routinely scores them as contradicted by the very sources
reporting on them.

The transcript's citations partition into credible / non-credible / none
groups by credibility score (positive / negative / zero-or-unrated). Each
verifiable unit is judged separately against evidence retrieved from each
non-empty group's documents; a group whose evidence set is empty yields an
``Unverifiable`` verdict without any model call.

Unit rollup: a unit is unsupported (US) when some group judged it Contradicted
and none judged it Supported; undecidable (UD) when every available verdict is
Unverifiable (or no group produced a verdict); supported (S) otherwise. Then::

    GS  = |S| / |V|        CG = |S_credible| / |V|     NCG = |S_low_credible| / |V|
    HS  = (|US| + alpha * |UD|) / sqrt(|V|)             (alpha defaults to 0.5)

where S_credible / S_low_credible count units the credible / non-credible
group judged Supported. A unit supported only by unrated sources counts toward
GS but neither CG nor NCG.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from math import sqrt
from typing import Sequence

from .backend import BackendError
from .credibility import (
    FactualityLevel,
    MetricResult,
    RatingDatabase,
    agresti_coull_ci,
    group_key_of,
    score,
)
from .evidence import (
    DocumentStatus,
    EvidenceChunk,
    Fetcher,
    RetrievalResult,
    build_index,
    chunk_document,
    retrieve,
)
from .ingest import Citation, Transcript

DEFAULT_ALPHA = 0.5


class GroundingError(RuntimeError):
    """Contract violations in the grounding pipeline."""


class TranscriptEvaluationError(GroundingError):
    """A single transcript could not be evaluated (recorded, run continues)."""


class UnitLabel(Enum):
    FACT = "Fact"
    CLAIM = "Claim"
    REPORTED_CLAIM = "ReportedClaim"
    INSTRUCTION = "Instruction"
    DATA_FORMAT = "DataFormat"
    META_STATEMENT = "MetaStatement"
    QUESTION = "Question"
    OTHER = "Other"


VERIFIABLE_LABELS = frozenset({UnitLabel.FACT, UnitLabel.CLAIM})


class GroupKind(Enum):
    CREDIBLE = "Credible"
    NON_CREDIBLE = "NonCredible"
    NONE = "None"


class Decision(Enum):
    SUPPORTED = "Supported"
    CONTRADICTED = "Contradicted"
    UNVERIFIABLE = "Unverifiable"


@dataclass(frozen=True)
class Unit:
    id: str
    raw_text: str
    label: UnitLabel
    decontextualized_text: str | None = None
    source_segment: int = 0

    @property
    def verifiable(self) -> bool:
        return self.label in VERIFIABLE_LABELS

    @property
    def query_text(self) -> str:
        return self.decontextualized_text or self.raw_text


@dataclass(frozen=True)
class SourceGroup:
    kind: GroupKind
    citations: tuple[Citation, ...]

    @property
    def empty(self) -> bool:
        return not self.citations


@dataclass(frozen=True)
class Verdict:
    unit_id: str
    group_kind: GroupKind
    decision: Decision
    judge_summary: str
    prompt_hash: str | None = None
    parse_failure: bool = False


# --- Prompt templates ---------------------------------------------------------


def _load_prompt(name: str) -> str:
    return resources.files("groundcheck").joinpath(f"prompts/{name}").read_text(encoding="utf-8")


EXTRACTION_PROMPT = _load_prompt("unit_extraction.txt")
DECONTEXTUALIZATION_PROMPT = _load_prompt("decontextualization.txt")
JUDGMENT_PROMPT = _load_prompt("judgment.txt")

# Mock scripts can key on these to recognize which stage a prompt belongs to.
PROMPT_HASHES = {
    "unit_extraction": hashlib.sha256(EXTRACTION_PROMPT.encode("utf-8")).hexdigest(),
    "decontextualization": hashlib.sha256(DECONTEXTUALIZATION_PROMPT.encode("utf-8")).hexdigest(),
    "judgment": hashlib.sha256(JUDGMENT_PROMPT.encode("utf-8")).hexdigest(),
}

_FENCE_RE = re.compile(r"^```[a-zA-Z]*\n(.*)\n```$", re.DOTALL)


def _strip_fence(text: str) -> str:
    text = text.strip()
    match = _FENCE_RE.match(text)
    return match.group(1).strip() if match else text


# --- Extraction and decontextualization ---------------------------------------


def _parse_unit_list(raw: str) -> list[tuple[str, UnitLabel]]:
    payload = json.loads(_strip_fence(raw))
    if not isinstance(payload, list):
        raise ValueError("expected a JSON array of units")
    units = []
    for entry in payload:
        text = entry["text"]
        label = UnitLabel(entry["label"])
        if not isinstance(text, str) or not text.strip():
            raise ValueError(f"unit text must be a non-empty string: {entry!r}")
        units.append((text.strip(), label))
    return units


def _locate_segment(raw_text: str, transcript: Transcript) -> int:
    for pos, segment in enumerate(transcript.segments):
        if raw_text in segment.text:
            return pos
    unit_words = set(raw_text.lower().split())
    best, best_overlap = 0, -1
    for pos, segment in enumerate(transcript.segments):
        overlap = len(unit_words & set(segment.text.lower().split()))
        if overlap > best_overlap:
            best, best_overlap = pos, overlap
    return best


def extract_units(transcript: Transcript, backend) -> list[Unit]:
    """Decompose the response into labeled units via the extraction prompt.

    One retry on backend or format failure, then the transcript is aborted.
    """
    prompt = EXTRACTION_PROMPT.replace("{response}", transcript.response_text)
    last_error: Exception | None = None
    for _ in range(2):
        try:
            parsed = _parse_unit_list(backend.chat_complete(prompt, temperature=0.0))
        except (BackendError, ValueError, KeyError, TypeError) as exc:
            last_error = exc
            continue
        return [
            Unit(
                id=f"u{i}",
                raw_text=text,
                label=label,
                source_segment=_locate_segment(text, transcript),
            )
            for i, (text, label) in enumerate(parsed)
        ]
    raise TranscriptEvaluationError(f"unit extraction failed twice: {last_error}")


def decontextualize(unit: Unit, full_response: str, backend) -> Unit:
    """Rewrite a verifiable unit to stand alone; non-verifiable labels are refused."""
    if not unit.verifiable:
        raise GroundingError(f"unit {unit.id} has label {unit.label.value}; nothing to rewrite")
    prompt = DECONTEXTUALIZATION_PROMPT.replace("{response}", full_response).replace(
        "{unit}", unit.raw_text
    )
    last_error: Exception | None = None
    for _ in range(2):
        try:
            rewritten = backend.chat_complete(prompt, temperature=0.0).strip()
        except BackendError as exc:
            last_error = exc
            continue
        if not rewritten:
            last_error = ValueError("empty rewrite")
            continue
        return Unit(
            id=unit.id,
            raw_text=unit.raw_text,
            label=unit.label,
            decontextualized_text=_strip_fence(rewritten).splitlines()[0].strip(),
            source_segment=unit.source_segment,
        )
    raise TranscriptEvaluationError(f"decontextualization failed twice: {last_error}")


# --- Source groups and judging -------------------------------------------------


def partition_sources(transcript: Transcript, db: RatingDatabase) -> dict[GroupKind, SourceGroup]:
    """Partition citations into credible (score>0), non-credible (score<0), and
    none (score 0 or unrated) groups."""
    grouped: dict[GroupKind, list[Citation]] = {kind: [] for kind in GroupKind}
    for citation in transcript.citations:
        rating = db.lookup(citation.domain)
        value = score(rating)
        if rating.factuality is FactualityLevel.NOT_RATED or value == 0:
            grouped[GroupKind.NONE].append(citation)
        elif value > 0:
            grouped[GroupKind.CREDIBLE].append(citation)
        else:
            grouped[GroupKind.NON_CREDIBLE].append(citation)
    return {kind: SourceGroup(kind, tuple(citations)) for kind, citations in grouped.items()}


def _format_evidence(result: RetrievalResult) -> str:
    lines = []
    for i, scored in enumerate(result.chunks, start=1):
        lines.append(f"[{i}] ({scored.chunk.doc_url}) {scored.chunk.text}")
    return "\n".join(lines)


_DECISION_RE = re.compile(r"^\s*Decision:\s*(Supported|Contradicted|Unverifiable)\s*$", re.MULTILINE)
_SUMMARY_RE = re.compile(r"^\s*Summary:\s*(.*)$", re.MULTILINE)


def _parse_judgment(raw: str) -> tuple[Decision, str]:
    decision_match = _DECISION_RE.search(raw)
    if decision_match is None:
        raise ValueError(f"no Decision line in judge output: {raw[:120]!r}")
    summary_match = _SUMMARY_RE.search(raw)
    summary = summary_match.group(1).strip() if summary_match else ""
    return Decision(decision_match.group(1)), summary


def judge(unit: Unit, group_kind: GroupKind, group_evidence: RetrievalResult, backend) -> Verdict:
    """Judge one unit against one group's retrieved evidence.

    An empty evidence set short-circuits to Unverifiable without a model call;
    a malformed judge reply gets one reprompt, then Unverifiable with a
    parse-failure flag.
    """
    if group_evidence.empty:
        return Verdict(unit.id, group_kind, Decision.UNVERIFIABLE, "no evidence available")
    prompt = JUDGMENT_PROMPT.replace("{evidence}", _format_evidence(group_evidence)).replace(
        "{unit}", unit.query_text
    )
    prompt_hash = hashlib.sha256(prompt.encode("utf-8")).hexdigest()
    last_error: Exception | None = None
    for _ in range(2):
        try:
            reply = backend.chat_complete(prompt, temperature=0.0)
            decision, summary = _parse_judgment(reply)
        except BackendError as exc:
            raise TranscriptEvaluationError(f"judge call failed: {exc}") from exc
        except ValueError as exc:
            last_error = exc
            continue
        return Verdict(unit.id, group_kind, decision, summary, prompt_hash=prompt_hash)
    return Verdict(
        unit.id,
        group_kind,
        Decision.UNVERIFIABLE,
        f"judge output unparseable: {last_error}",
        prompt_hash=prompt_hash,
        parse_failure=True,
    )


# --- Scores ---------------------------------------------------------------------


@dataclass(frozen=True)
class GroundednessReport:
    v: int
    s: int
    s_credible: int
    s_low_credible: int
    us: int
    ud: int
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self) -> None:
        if self.v != self.s + self.us + self.ud:
            raise GroundingError(
                f"unit rollup leak: V={self.v} != S={self.s} + US={self.us} + UD={self.ud}"
            )
        if max(self.s_credible, self.s_low_credible) > self.s:
            raise GroundingError("per-group supported counts exceed total supported units")

    @property
    def defined(self) -> bool:
        return self.v > 0

    @property
    def gs(self) -> float | None:
        return self.s / self.v if self.defined else None

    @property
    def cg(self) -> float | None:
        return self.s_credible / self.v if self.defined else None

    @property
    def ncg(self) -> float | None:
        return self.s_low_credible / self.v if self.defined else None

    @property
    def hs(self) -> float | None:
        return (self.us + self.alpha * self.ud) / sqrt(self.v) if self.defined else None


def rollup_unit(decisions: Sequence[Decision]) -> str:
    """Classify one unit's verdicts into 's', 'us' or 'ud' (exclusive)."""
    if any(d is Decision.SUPPORTED for d in decisions):
        return "s"
    if any(d is Decision.CONTRADICTED for d in decisions):
        return "us"
    return "ud"


def scores(
    units: Sequence[Unit], verdicts: Sequence[Verdict], alpha: float = DEFAULT_ALPHA
) -> GroundednessReport:
    """Roll verdicts up into a per-transcript report.

    Requires a verdict per (verifiable unit, non-empty group); units with no
    verdicts at all (no cited sources) count as undecidable.
    """
    verifiable = [unit for unit in units if unit.verifiable]
    by_unit: dict[str, list[Verdict]] = {unit.id: [] for unit in verifiable}
    for verdict in verdicts:
        if verdict.unit_id not in by_unit:
            raise GroundingError(f"verdict for unknown or non-verifiable unit {verdict.unit_id!r}")
        by_unit[verdict.unit_id].append(verdict)

    s = us = ud = s_credible = s_low_credible = 0
    for unit in verifiable:
        unit_verdicts = by_unit[unit.id]
        bucket = rollup_unit([v.decision for v in unit_verdicts])
        if bucket == "s":
            s += 1
            for verdict in unit_verdicts:
                if verdict.decision is Decision.SUPPORTED:
                    if verdict.group_kind is GroupKind.CREDIBLE:
                        s_credible += 1
                    elif verdict.group_kind is GroupKind.NON_CREDIBLE:
                        s_low_credible += 1
        elif bucket == "us":
            us += 1
        else:
            ud += 1
    return GroundednessReport(
        v=len(verifiable),
        s=s,
        s_credible=s_credible,
        s_low_credible=s_low_credible,
        us=us,
        ud=ud,
        alpha=alpha,
    )


def unclassified_share(units: Sequence[Unit]) -> float:
    """Share of units whose label is neither Fact nor Claim (0.0 for no units)."""
    if not units:
        return 0.0
    return sum(1 for unit in units if not unit.verifiable) / len(units)


# --- Per-transcript orchestration -----------------------------------------------


@dataclass(frozen=True)
class AuditRecord:
    transcript_key: str
    unit_id: str
    unit_text: str
    group_kind: str
    decision: str
    summary: str
    prompt_hash: str | None
    parse_failure: bool


@dataclass(frozen=True)
class TranscriptGrounding:
    transcript: Transcript
    units: tuple[Unit, ...]
    verdicts: tuple[Verdict, ...]
    report: GroundednessReport
    audit: tuple[AuditRecord, ...] = ()


def transcript_key(transcript: Transcript) -> str:
    return (
        f"{transcript.assistant_id}/{transcript.claim_id}"
        f"/{transcript.user_type.value}-{transcript.template_id}"
    )


def evaluate_transcript(
    transcript: Transcript,
    db: RatingDatabase,
    backend,
    fetcher: Fetcher,
    k: int = 5,
    chunk_size: int = 500,
    alpha: float = DEFAULT_ALPHA,
) -> TranscriptGrounding:
    """Run the full grounding pipeline for one transcript.

    Refused transcripts (and empty responses) yield an undefined report without
    touching the backend.
    """
    key = transcript_key(transcript)
    if transcript.refused or not transcript.response_text.strip():
        return TranscriptGrounding(
            transcript, (), (), GroundednessReport(0, 0, 0, 0, 0, 0, alpha)
        )

    units = extract_units(transcript, backend)
    units = [
        decontextualize(unit, transcript.response_text, backend) if unit.verifiable else unit
        for unit in units
    ]
    verifiable = [unit for unit in units if unit.verifiable]

    groups = partition_sources(transcript, db)
    indexes: dict[GroupKind, object] = {}
    for kind, group in groups.items():
        if group.empty:
            continue
        chunks: list[EvidenceChunk] = []
        for citation in group.citations:
            document = fetcher.fetch(citation.url)
            if document.status is DocumentStatus.OK:
                chunks.extend(chunk_document(document, chunk_size))
        indexes[kind] = build_index(chunks, backend)

    verdicts: list[Verdict] = []
    audit: list[AuditRecord] = []
    for unit in verifiable:
        for kind in GroupKind:
            group = groups[kind]
            if group.empty:
                continue
            index = indexes[kind]
            evidence = (
                retrieve(unit.query_text, index, backend, k)
                if len(index) > 0
                else RetrievalResult((), k)
            )
            verdict = judge(unit, kind, evidence, backend)
            verdicts.append(verdict)
            audit.append(
                AuditRecord(
                    transcript_key=key,
                    unit_id=unit.id,
                    unit_text=unit.query_text,
                    group_kind=kind.value,
                    decision=verdict.decision.value,
                    summary=verdict.judge_summary,
                    prompt_hash=verdict.prompt_hash,
                    parse_failure=verdict.parse_failure,
                )
            )

    report = scores(units, verdicts, alpha)
    return TranscriptGrounding(transcript, tuple(units), tuple(verdicts), report, tuple(audit))


# --- Run-level aggregation --------------------------------------------------------


@dataclass(frozen=True)
class GroundingRow:
    group_by: tuple[str, ...]
    group_values: tuple[str, ...]  # empty tuple marks the Overall row
    gs: MetricResult
    ncg: MetricResult
    cg: MetricResult
    hs: float | None
    us: int
    ud: int
    v: int
    transcripts: int


def _pool(
    items: Sequence[TranscriptGrounding], group_by: tuple[str, ...], confidence: float, alpha: float
) -> dict[tuple[str, ...], GroundingRow]:
    def make_row(key: tuple[str, ...], members: list[TranscriptGrounding]) -> GroundingRow:
        v = sum(m.report.v for m in members)
        s = sum(m.report.s for m in members)
        s_cred = sum(m.report.s_credible for m in members)
        s_low = sum(m.report.s_low_credible for m in members)
        us = sum(m.report.us for m in members)
        ud = sum(m.report.ud for m in members)

        def metric(x: int) -> MetricResult:
            if v == 0:
                return MetricResult(x=0, n=0, rate=None, ci_low=None, ci_high=None)
            low, high = agresti_coull_ci(x, v, confidence)
            return MetricResult(x=x, n=v, rate=x / v, ci_low=low, ci_high=high)

        hs = (us + alpha * ud) / sqrt(v) if v > 0 else None
        return GroundingRow(
            group_by, key, metric(s), metric(s_low), metric(s_cred), hs, us, ud, v, len(members)
        )

    buckets: dict[tuple[str, ...], list[TranscriptGrounding]] = {}
    for item in items:
        key = group_key_of(item.transcript, group_by) if group_by else ()
        buckets.setdefault(key, []).append(item)
    return {key: make_row(key, members) for key, members in sorted(buckets.items())}


def aggregate_grounding(
    run: Sequence[TranscriptGrounding],
    group_by: Sequence[str] = (),
    confidence: float = 0.95,
    alpha: float = DEFAULT_ALPHA,
) -> list[GroundingRow]:
    """Pooled GS/NCG/CG (with Agresti-Coull CIs) and HS per cell, plus Overall."""
    group_by = tuple(group_by)
    rows: list[GroundingRow] = []
    if group_by:
        rows.extend(_pool(run, group_by, confidence, alpha).values())
    rows.extend(_pool(run, (), confidence, alpha).values())
    return rows
