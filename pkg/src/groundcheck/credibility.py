"""Domain credibility ratings and the credibility / non-credibility rate metrics.

Ratings come from a user-supplied CSV (``domain,factuality,category,origin``).
Each rated domain maps onto a numeric credibility score::

    satire, very low -> -1      low -> -0.5     mixed, not rated -> 0
    mostly factual   -> 0.5     high, very high -> 1

The credibility rate is the share of classified sources (factuality other than
``NotRated``) with a positive score; the non-credibility rate is the share with
a negative score. ``NotRated`` domains are excluded from rate denominators but
keep their 0 score for distribution plots. All reported rates carry
Agresti-Coull confidence intervals.
"""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .ingest import Citation, Transcript


class RatingError(ValueError):
    """Raised for malformed rating files or invalid metric arguments."""


class FactualityLevel(Enum):
    VERY_HIGH = "VeryHigh"
    HIGH = "High"
    MOSTLY_FACTUAL = "MostlyFactual"
    MIXED = "Mixed"
    LOW = "Low"
    VERY_LOW = "VeryLow"
    SATIRE = "Satire"
    NOT_RATED = "NotRated"


# Total order VeryHigh > ... > Satire used by monotonicity checks; NotRated
# sits outside the order.
FACTUALITY_ORDER: tuple[FactualityLevel, ...] = (
    FactualityLevel.SATIRE,
    FactualityLevel.VERY_LOW,
    FactualityLevel.LOW,
    FactualityLevel.MIXED,
    FactualityLevel.MOSTLY_FACTUAL,
    FactualityLevel.HIGH,
    FactualityLevel.VERY_HIGH,
)


class SourceCategory(Enum):
    FACT_CHECKING = "FactChecking"
    GOVERNMENT = "Government"
    SOCIAL_MEDIA = "SocialMedia"
    RESEARCH_PUBLICATION = "ResearchPublication"
    DISINFORMATION = "Disinformation"
    OTHER = "Other"


class RatingOrigin(Enum):
    MBFC = "MBFC"
    CURATED_LIST = "CuratedList"
    UNKNOWN = "Unknown"


@dataclass(frozen=True)
class DomainRating:
    domain: str
    factuality: FactualityLevel
    category: SourceCategory
    origin: RatingOrigin

    def __post_init__(self) -> None:
        if self.category is SourceCategory.DISINFORMATION and self.factuality not in (
            FactualityLevel.LOW,
            FactualityLevel.VERY_LOW,
            FactualityLevel.SATIRE,
        ):
            raise RatingError(
                f"{self.domain}: Disinformation entries need Low/VeryLow/Satire factuality"
            )
        if self.category is SourceCategory.FACT_CHECKING and self.factuality not in (
            FactualityLevel.HIGH,
            FactualityLevel.VERY_HIGH,
        ):
            raise RatingError(f"{self.domain}: FactChecking entries need High/VeryHigh factuality")


_SCORES: dict[FactualityLevel, float] = {
    FactualityLevel.SATIRE: -1.0,
    FactualityLevel.VERY_LOW: -1.0,
    FactualityLevel.LOW: -0.5,
    FactualityLevel.MIXED: 0.0,
    FactualityLevel.NOT_RATED: 0.0,
    FactualityLevel.MOSTLY_FACTUAL: 0.5,
    FactualityLevel.HIGH: 1.0,
    FactualityLevel.VERY_HIGH: 1.0,
}


def score(rating: DomainRating) -> float:
    return _SCORES[rating.factuality]


def default_rating(domain: str) -> DomainRating:
    return DomainRating(domain, FactualityLevel.NOT_RATED, SourceCategory.OTHER, RatingOrigin.UNKNOWN)


class RatingDatabase:
    """Immutable domain -> rating map with registered-suffix fallback."""

    def __init__(self, ratings: Iterable[DomainRating]):
        self._exact: dict[str, DomainRating] = {}
        for rating in ratings:
            key = rating.domain.lower()
            if key in self._exact:
                raise RatingError(f"duplicate rating for domain {key!r}")
            self._exact[key] = rating

    def __len__(self) -> int:
        return len(self._exact)

    def lookup(self, domain: str) -> DomainRating:
        """Exact host match, else the longest rated suffix on a dot boundary,
        else an unrated default entry."""
        key = domain.lower()
        hit = self._exact.get(key)
        if hit is not None:
            return hit
        labels = key.split(".")
        for start in range(1, len(labels) - 1):
            candidate = ".".join(labels[start:])
            hit = self._exact.get(candidate)
            if hit is not None:
                return hit
        return default_rating(domain)

    def score_of(self, domain: str) -> float:
        return score(self.lookup(domain))


def load_rating_db(path: str | Path) -> RatingDatabase:
    """Load and merge rating rows.

    A domain may appear once per origin; when both an MBFC row and a curated
    row exist, the curated category wins while MBFC factuality wins if present.
    """
    path = Path(path)
    if not path.is_file():
        raise RatingError(f"rating database not found: {path}")
    by_domain: dict[str, dict[RatingOrigin, tuple[FactualityLevel, SourceCategory]]] = {}
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        expected = ["domain", "factuality", "category", "origin"]
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != expected:
            raise RatingError(f"{path}: bad header, expected {','.join(expected)}")
        for lineno, row in enumerate(reader, start=2):
            domain = (row["domain"] or "").strip().lower()
            if not domain:
                raise RatingError(f"{path}:{lineno}: empty domain")
            try:
                factuality = FactualityLevel(row["factuality"].strip())
                category = SourceCategory(row["category"].strip())
                origin = RatingOrigin(row["origin"].strip())
            except (AttributeError, ValueError) as exc:
                raise RatingError(f"{path}:{lineno}: {exc}") from None
            per_origin = by_domain.setdefault(domain, {})
            if origin in per_origin:
                raise RatingError(f"{path}:{lineno}: duplicate {origin.value} row for {domain!r}")
            per_origin[origin] = (factuality, category)

    merged: list[DomainRating] = []
    for domain, per_origin in by_domain.items():
        if len(per_origin) == 1:
            origin, (factuality, category) = next(iter(per_origin.items()))
        else:
            mbfc = per_origin.get(RatingOrigin.MBFC)
            curated = per_origin.get(RatingOrigin.CURATED_LIST)
            if mbfc is None or curated is None:
                raise RatingError(f"{domain!r}: conflicting rows share an origin family")
            factuality = mbfc[0] if mbfc[0] is not FactualityLevel.NOT_RATED else curated[0]
            category = curated[1]
            origin = RatingOrigin.MBFC
        merged.append(DomainRating(domain, factuality, category, origin))
    return RatingDatabase(merged)


# --- Agresti-Coull confidence intervals -------------------------------------

# Wichura's AS 241 (PPND16) rational approximation of the standard normal
# quantile; absolute error below 1e-15 on (0, 1), well inside the 1e-8 budget.
_A = (
    3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3,
    1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
    3.3430575583588128105e4, 2.5090809287301226727e3,
)
_B = (
    1.0, 4.2313330701600911252e1, 6.8718700749205790830e2, 5.3941960214247511077e3,
    2.1213794301586595867e4, 3.9307895800092710610e4, 2.8729085735721942674e4,
    5.2264952788528545610e3,
)
_C = (
    1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
    3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
    2.27238449892691845833e-2, 7.74545014278341407640e-4,
)
_D = (
    1.0, 2.05319162663775882187e0, 1.67638483018380384940e0, 6.89767334985100004550e-1,
    1.48103976427480074590e-1, 1.51986665636164571966e-2, 5.47593808499534494600e-4,
    1.05075007164441684324e-9,
)
_E = (
    6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
    2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
    2.71155556874348757815e-5, 2.01033439929228813265e-7,
)
_F = (
    1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1, 1.48753612908506148525e-2,
    7.86869131145613259100e-4, 1.84631831751005468180e-5, 1.42151175831644588870e-7,
    2.04426310338993978564e-15,
)


def _poly(coeffs: Sequence[float], x: float) -> float:
    acc = 0.0
    for c in reversed(coeffs):
        acc = acc * x + c
    return acc


def normal_quantile(p: float) -> float:
    """Inverse standard normal CDF via AS 241."""
    if not 0.0 < p < 1.0:
        raise RatingError(f"quantile argument must be in (0, 1), got {p}")
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        return q * _poly(_A, r) / _poly(_B, r)
    r = p if q < 0 else 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r -= 1.6
        value = _poly(_C, r) / _poly(_D, r)
    else:
        r -= 5.0
        value = _poly(_E, r) / _poly(_F, r)
    return -value if q < 0 else value


def agresti_coull_ci(x: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    """Adjusted-count binomial interval, clamped to [0, 1]."""
    if n < 1:
        raise RatingError(f"n must be >= 1, got {n}")
    if not 0 <= x <= n:
        raise RatingError(f"x must satisfy 0 <= x <= n, got x={x}, n={n}")
    if not 0.0 < confidence < 1.0:
        raise RatingError(f"confidence must be in (0, 1), got {confidence}")
    z = normal_quantile(1.0 - (1.0 - confidence) / 2.0)
    z2 = z * z
    n_adj = n + z2
    p_adj = (x + z2 / 2.0) / n_adj
    half_width = z * math.sqrt(p_adj * (1.0 - p_adj) / n_adj)
    return (max(0.0, p_adj - half_width), min(1.0, p_adj + half_width))


# --- Rates ------------------------------------------------------------------


@dataclass(frozen=True)
class MetricResult:
    """A pooled binomial rate: x qualifying out of n classified sources."""

    x: int
    n: int
    rate: float | None
    ci_low: float | None
    ci_high: float | None

    @property
    def defined(self) -> bool:
        return self.rate is not None


def _metric(x: int, n: int, confidence: float) -> MetricResult:
    if n == 0:
        return MetricResult(x=0, n=0, rate=None, ci_low=None, ci_high=None)
    low, high = agresti_coull_ci(x, n, confidence)
    return MetricResult(x=x, n=n, rate=x / n, ci_low=low, ci_high=high)


def classified_scores(citations: Iterable[Citation], db: RatingDatabase) -> list[float]:
    """Scores of the classified citations only (NotRated excluded)."""
    out = []
    for citation in citations:
        rating = db.lookup(citation.domain)
        if rating.factuality is not FactualityLevel.NOT_RATED:
            out.append(score(rating))
    return out


def credibility_rate(
    citations: Iterable[Citation], db: RatingDatabase, confidence: float = 0.95
) -> MetricResult:
    scores = classified_scores(citations, db)
    return _metric(sum(1 for s in scores if s > 0), len(scores), confidence)


def non_credibility_rate(
    citations: Iterable[Citation], db: RatingDatabase, confidence: float = 0.95
) -> MetricResult:
    scores = classified_scores(citations, db)
    return _metric(sum(1 for s in scores if s < 0), len(scores), confidence)


# --- Run-level aggregation ---------------------------------------------------

GROUP_DIMENSIONS = ("assistant", "topic", "user_type", "thinking_mode")


def group_key_of(transcript: Transcript, group_by: Sequence[str]) -> tuple[str, ...]:
    values = {
        "assistant": transcript.assistant_id,
        "topic": transcript.topic.value,
        "user_type": transcript.user_type.value,
        "thinking_mode": "thinking" if transcript.thinking_mode else "non-thinking",
    }
    for dim in group_by:
        if dim not in values:
            raise RatingError(f"unknown group dimension {dim!r}")
    return tuple(values[dim] for dim in group_by)


@dataclass(frozen=True)
class CredibilityRow:
    group_by: tuple[str, ...]
    group_values: tuple[str, ...]  # empty tuple marks the Overall row
    cr: MetricResult
    ncr: MetricResult


def aggregate(
    run: Sequence[Transcript],
    db: RatingDatabase,
    group_by: Sequence[str] = (),
    confidence: float = 0.95,
) -> list[CredibilityRow]:
    """Pooled CR/NCR per group-value combination, plus an Overall row.

    Rates pool individual citations across all transcripts in the group; there
    is no per-chat averaging step.
    """
    group_by = tuple(group_by)
    buckets: dict[tuple[str, ...], list[Citation]] = {}
    overall: list[Citation] = []
    for transcript in run:
        overall.extend(transcript.citations)
        if group_by:
            key = group_key_of(transcript, group_by)
            buckets.setdefault(key, []).extend(transcript.citations)
    rows = [
        CredibilityRow(
            group_by,
            key,
            credibility_rate(citations, db, confidence),
            non_credibility_rate(citations, db, confidence),
        )
        for key, citations in sorted(buckets.items())
    ]
    rows.append(
        CredibilityRow(
            group_by,
            (),
            credibility_rate(overall, db, confidence),
            non_credibility_rate(overall, db, confidence),
        )
    )
    return rows


@dataclass(frozen=True)
class CitationStats:
    assistant: str
    total_sources: int
    unique_domains: int
    avg_sources_per_chat: float
    refused_responses: int
    avg_response_length_words: float
    fc_citations_share: float
    chats_with_fc_share: float
    chats_with_disinfo_share: float
    social_media_citations_share: float


def citation_stats(run: Sequence[Transcript], db: RatingDatabase) -> list[CitationStats]:
    """Per-assistant retrieval/response behaviour summary."""
    by_assistant: dict[str, list[Transcript]] = {}
    for transcript in run:
        by_assistant.setdefault(transcript.assistant_id, []).append(transcript)

    stats = []
    for assistant, transcripts in sorted(by_assistant.items()):
        chats = len(transcripts)
        citations = [c for t in transcripts for c in t.citations]
        total = len(citations)
        categories = [db.lookup(c.domain).category for c in citations]
        fc_citations = sum(1 for cat in categories if cat is SourceCategory.FACT_CHECKING)
        social = sum(1 for cat in categories if cat is SourceCategory.SOCIAL_MEDIA)

        def chats_with(category: SourceCategory) -> int:
            return sum(
                1
                for t in transcripts
                if any(db.lookup(c.domain).category is category for c in t.citations)
            )

        stats.append(
            CitationStats(
                assistant=assistant,
                total_sources=total,
                unique_domains=len({c.domain for c in citations}),
                avg_sources_per_chat=total / chats if chats else 0.0,
                refused_responses=sum(1 for t in transcripts if t.refused),
                avg_response_length_words=(
                    sum(len(t.response_text.split()) for t in transcripts) / chats if chats else 0.0
                ),
                fc_citations_share=fc_citations / total if total else 0.0,
                chats_with_fc_share=chats_with(SourceCategory.FACT_CHECKING) / chats if chats else 0.0,
                chats_with_disinfo_share=(
                    chats_with(SourceCategory.DISINFORMATION) / chats if chats else 0.0
                ),
                social_media_citations_share=social / total if total else 0.0,
            )
        )
    return stats


@dataclass(frozen=True)
class DistributionRow:
    assistant: str
    factuality: FactualityLevel
    count: int
    share: float


def factuality_distribution(run: Sequence[Transcript], db: RatingDatabase) -> list[DistributionRow]:
    """Citation counts and shares per factuality level, NotRated included."""
    by_assistant: dict[str, Counter] = {}
    for transcript in run:
        counter = by_assistant.setdefault(transcript.assistant_id, Counter())
        for citation in transcript.citations:
            counter[db.lookup(citation.domain).factuality] += 1
    rows = []
    for assistant in sorted(by_assistant):
        counter = by_assistant[assistant]
        total = sum(counter.values())
        for level in FactualityLevel:
            count = counter.get(level, 0)
            rows.append(
                DistributionRow(assistant, level, count, count / total if total else 0.0)
            )
    return rows
