"""Normalization of archived assistant conversations into canonical transcripts.

A raw archive is one JSON object per conversation. Provider profiles select how
citation markers are associated with response segments:

* ``TrailingMarker`` - ``[n]`` markers at segment ends bind that segment to the
  n-th citation.
* ``HighlightMap`` - the archive carries explicit character-range highlights
  (``{"start": .., "end": .., "citations": [..]}``) mapping spans to citations.
* ``FallbackAll`` - no per-segment association is attempted.

Segments without an explicit association are implicitly paired with every
citation in the conversation. Segmentation splits on paragraph breaks first,
then on terminal punctuation followed by whitespace; segments partition the
response text exactly (separators stay attached to the preceding segment), so
concatenating segment texts reproduces the response byte-for-byte.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any
from urllib.parse import urlsplit

from .corpus import Topic, UserRole


class IngestError(ValueError):
    """Raised for unparseable archives or inconsistent citation references."""


class AssociationStrategy(Enum):
    HIGHLIGHT_MAP = "HighlightMap"
    TRAILING_MARKER = "TrailingMarker"
    FALLBACK_ALL = "FallbackAll"


# A body matching one of these (case-insensitive) with zero citations counts
# as a refusal; the list is configurable per profile.
DEFAULT_REFUSAL_PHRASES: tuple[str, ...] = (
    "i can't help with that",
    "i cannot help with that",
    "i can't assist with that",
    "i cannot assist with",
    "i'm sorry, but i can't",
    "i am sorry, but i cannot",
    "i'm unable to help with",
    "i won't be able to help with",
)


@dataclass(frozen=True)
class ProviderProfile:
    name: str
    strategy: AssociationStrategy
    selectors: dict[str, str] = field(default_factory=dict)
    refusal_phrases: tuple[str, ...] = DEFAULT_REFUSAL_PHRASES

    @property
    def marker_pattern(self) -> str:
        return self.selectors.get("marker_pattern", r"\[(\d+)\]")

    @property
    def highlights_field(self) -> str:
        return self.selectors.get("highlights_field", "highlights")


BUILTIN_PROFILES: dict[str, ProviderProfile] = {
    "trailing_marker": ProviderProfile("trailing_marker", AssociationStrategy.TRAILING_MARKER),
    "highlight_map": ProviderProfile("highlight_map", AssociationStrategy.HIGHLIGHT_MAP),
    "fallback_all": ProviderProfile("fallback_all", AssociationStrategy.FALLBACK_ALL),
}


def load_profiles(path: str | Path) -> dict[str, ProviderProfile]:
    """Load provider profiles from a JSON file ({name: {strategy, selectors}})."""
    with Path(path).open(encoding="utf-8") as fh:
        raw = json.load(fh)
    if isinstance(raw, list):
        raw = {entry["name"]: entry for entry in raw}
    profiles: dict[str, ProviderProfile] = {}
    for name, entry in raw.items():
        try:
            strategy = AssociationStrategy(entry["strategy"])
        except (KeyError, ValueError) as exc:
            raise IngestError(f"profile {name!r}: bad or missing strategy") from exc
        phrases = tuple(p.lower() for p in entry.get("refusal_phrases", DEFAULT_REFUSAL_PHRASES))
        profiles[name] = ProviderProfile(
            name=name,
            strategy=strategy,
            selectors=dict(entry.get("selectors", {})),
            refusal_phrases=phrases,
        )
    return profiles


@dataclass(frozen=True)
class Citation:
    index: int
    url: str
    domain: str


@dataclass(frozen=True)
class Segment:
    text: str
    citation_refs: frozenset[int]
    explicit: bool


@dataclass(frozen=True)
class Transcript:
    assistant_id: str
    claim_id: str
    topic: Topic
    user_type: UserRole
    template_id: int
    response_text: str
    segments: tuple[Segment, ...]
    citations: tuple[Citation, ...]
    refused: bool
    thinking_mode: bool

    @property
    def citation_indices(self) -> frozenset[int]:
        return frozenset(c.index for c in self.citations)

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "assistant_id": self.assistant_id,
            "claim_id": self.claim_id,
            "topic": self.topic.value,
            "user_type": self.user_type.value,
            "template_id": self.template_id,
            "response_text": self.response_text,
            "segments": [
                {
                    "text": seg.text,
                    "citation_refs": sorted(seg.citation_refs),
                    "explicit": seg.explicit,
                }
                for seg in self.segments
            ],
            "citations": [
                {"index": c.index, "url": c.url, "domain": c.domain} for c in self.citations
            ],
            "refused": self.refused,
            "thinking_mode": self.thinking_mode,
        }

    @classmethod
    def from_json_dict(cls, data: dict[str, Any]) -> "Transcript":
        transcript = cls(
            assistant_id=data["assistant_id"],
            claim_id=data["claim_id"],
            topic=Topic(data["topic"]),
            user_type=UserRole(data["user_type"]),
            template_id=int(data["template_id"]),
            response_text=data["response_text"],
            segments=tuple(
                Segment(
                    text=seg["text"],
                    citation_refs=frozenset(seg["citation_refs"]),
                    explicit=bool(seg["explicit"]),
                )
                for seg in data["segments"]
            ),
            citations=tuple(
                Citation(index=int(c["index"]), url=c["url"], domain=c["domain"])
                for c in data["citations"]
            ),
            refused=bool(data["refused"]),
            thinking_mode=bool(data["thinking_mode"]),
        )
        _check_invariants(transcript)
        return transcript


def load_transcript(path: str | Path) -> Transcript:
    with Path(path).open(encoding="utf-8") as fh:
        return Transcript.from_json_dict(json.load(fh))


def _check_invariants(transcript: Transcript) -> None:
    indices = [c.index for c in transcript.citations]
    if len(indices) != len(set(indices)):
        raise IngestError("duplicate citation indices")
    index_set = frozenset(indices)
    for pos, seg in enumerate(transcript.segments):
        if not seg.citation_refs <= index_set:
            missing = sorted(seg.citation_refs - index_set)
            raise IngestError(f"segment {pos} references missing citations {missing}")
        if not seg.explicit and seg.citation_refs != index_set:
            raise IngestError(f"implicit segment {pos} must carry the full citation set")
    if transcript.refused:
        if transcript.segments:
            raise IngestError("refused transcript must have no segments")
    else:
        joined = "".join(seg.text for seg in transcript.segments)
        if joined != transcript.response_text:
            raise IngestError("segments do not reconstruct response_text")


def extract_domain(url: str) -> str:
    """Lowercase host of an absolute http(s) URL, with any ``www.`` prefix dropped.

    Subdomains are kept (``en.iz.ru`` stays distinct from ``iz.ru``); the rating
    database handles suffix matching.
    """
    parts = urlsplit(url)
    if parts.scheme not in ("http", "https") or not parts.hostname:
        raise IngestError(f"malformed URL: {url!r}")
    host = parts.hostname.lower().rstrip(".")
    if host.startswith("www."):
        host = host[4:]
    if not host:
        raise IngestError(f"malformed URL: {url!r}")
    return host


_PARAGRAPH_RE = re.compile(r"\n\s*\n")
_SENTENCE_RE = re.compile(r"(?<=[.!?])\s+")


def segment_text(text: str) -> list[str]:
    """Split into sentence/paragraph pieces that partition ``text`` exactly.

    Split points fall after paragraph breaks and after terminal punctuation
    followed by whitespace; the separator whitespace stays with the preceding
    piece so ``"".join(pieces) == text``.
    """
    if not text:
        return []
    pieces: list[str] = []
    start = 0
    for match in _PARAGRAPH_RE.finditer(text):
        pieces.extend(_split_sentences(text[start : match.end()]))
        start = match.end()
    if start < len(text):
        pieces.extend(_split_sentences(text[start:]))
    return pieces


def _split_sentences(paragraph: str) -> list[str]:
    out: list[str] = []
    start = 0
    for match in _SENTENCE_RE.finditer(paragraph):
        out.append(paragraph[start : match.end()])
        start = match.end()
    if start < len(paragraph):
        out.append(paragraph[start:])
    return out


def _trailing_markers(segment_text: str, pattern: str) -> set[int]:
    # Markers count as trailing when only whitespace or terminal punctuation
    # follows them, e.g. "... happened. [1][2]" or "... happened [1][2]."
    tail_re = re.compile(rf"(?:\s*{pattern})+\s*[.!?]?\s*$")
    match = tail_re.search(segment_text)
    if not match:
        return set()
    return {int(m) for m in re.findall(pattern, match.group(0))}


def _segments_for(
    text: str,
    citations: tuple[Citation, ...],
    profile: ProviderProfile,
    raw: dict[str, Any],
) -> tuple[Segment, ...]:
    all_refs = frozenset(c.index for c in citations)
    pieces = segment_text(text)
    segments: list[Segment] = []

    if profile.strategy is AssociationStrategy.HIGHLIGHT_MAP:
        highlights = raw.get(profile.highlights_field) or []
        spans: list[tuple[int, int, set[int]]] = []
        for entry in highlights:
            try:
                spans.append((int(entry["start"]), int(entry["end"]), set(entry["citations"])))
            except (KeyError, TypeError, ValueError) as exc:
                raise IngestError(f"bad highlight entry: {entry!r}") from exc
        offset = 0
        for piece in pieces:
            lo, hi = offset, offset + len(piece)
            refs: set[int] = set()
            for start, end, cites in spans:
                if start < hi and end > lo:
                    refs |= cites
            offset = hi
            if refs:
                segments.append(Segment(piece, frozenset(refs), explicit=True))
            else:
                segments.append(Segment(piece, all_refs, explicit=False))
    elif profile.strategy is AssociationStrategy.TRAILING_MARKER:
        for piece in pieces:
            refs = _trailing_markers(piece, profile.marker_pattern)
            if refs:
                segments.append(Segment(piece, frozenset(refs), explicit=True))
            else:
                segments.append(Segment(piece, all_refs, explicit=False))
    else:
        segments = [Segment(piece, all_refs, explicit=False) for piece in pieces]

    for pos, seg in enumerate(segments):
        if seg.explicit and not seg.citation_refs <= all_refs:
            missing = sorted(seg.citation_refs - all_refs)
            raise IngestError(f"segment {pos} cites missing source entries {missing}")
    return tuple(segments)


def detect_refusal(
    response_text: str,
    citation_count: int,
    refusal_phrases: tuple[str, ...] = DEFAULT_REFUSAL_PHRASES,
) -> bool:
    """True for an empty body, or a refusal-phrase match with zero citations."""
    body = response_text.strip()
    if not body:
        return True
    if citation_count > 0:
        return False
    lowered = body.lower()
    return any(phrase in lowered for phrase in refusal_phrases)


def normalize(raw: dict[str, Any], profile: ProviderProfile) -> Transcript:
    """Turn one archived conversation blob into a canonical Transcript."""
    try:
        assistant_id = raw["assistant"]
        claim_id = raw["claim_id"]
        topic = Topic(raw["topic"])
        user_type = UserRole(raw["user_type"])
        template_id = int(raw["template_id"])
        response_text = raw.get("response_text", "") or ""
        citation_urls = list(raw.get("citations", []))
    except (KeyError, TypeError, ValueError) as exc:
        raise IngestError(f"unparseable archive: {exc}") from exc

    citations = tuple(
        Citation(index=i, url=url, domain=extract_domain(url))
        for i, url in enumerate(citation_urls, start=1)
    )
    refused = detect_refusal(response_text, len(citations), profile.refusal_phrases)
    segments: tuple[Segment, ...]
    segments = () if refused else _segments_for(response_text, citations, profile, raw)

    transcript = Transcript(
        assistant_id=assistant_id,
        claim_id=claim_id,
        topic=topic,
        user_type=user_type,
        template_id=template_id,
        response_text=response_text,
        segments=segments,
        citations=citations,
        refused=refused,
        thinking_mode=bool(raw.get("thinking_mode", False)),
    )
    _check_invariants(transcript)
    return transcript


def map_citations(transcript: Transcript) -> dict[int, frozenset[int]]:
    """Total map from segment position to cited source indices.

    Implicit segments fall back to the transcript's full citation set; with no
    citations at all every segment maps to the empty set.
    """
    all_refs = transcript.citation_indices
    mapping: dict[int, frozenset[int]] = {}
    for pos, seg in enumerate(transcript.segments):
        mapping[pos] = seg.citation_refs if seg.explicit else all_refs
    return mapping


def normalize_file(path: str | Path, profile: ProviderProfile) -> Transcript:
    with Path(path).open(encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise IngestError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise IngestError(f"{path}: expected a JSON object")
    return normalize(raw, profile)


def transcript_with_citations(transcript: Transcript, keep: frozenset[int]) -> Transcript:
    """Copy of ``transcript`` restricted to the citations in ``keep``."""
    citations = tuple(c for c in transcript.citations if c.index in keep)
    segments = tuple(
        replace(seg, citation_refs=frozenset(seg.citation_refs & keep)) for seg in transcript.segments
    )
    return replace(transcript, citations=citations, segments=segments)
