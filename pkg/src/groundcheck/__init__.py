"""groundcheck: source-credibility and groundedness evaluation for
web-search-enabled chat-assistant transcripts."""

__version__ = "0.1.0"

from .corpus import (  # noqa: F401
    Claim,
    ClaimSet,
    PromptTemplate,
    Topic,
    UserRole,
    DEFAULT_TEMPLATES,
    enumerate_jobs,
    load_claims,
    load_shipped_claims,
    render_prompt,
)
from .credibility import (  # noqa: F401
    DomainRating,
    FactualityLevel,
    MetricResult,
    RatingDatabase,
    SourceCategory,
    agresti_coull_ci,
    credibility_rate,
    load_rating_db,
    non_credibility_rate,
    score,
)
from .grounding import (  # noqa: F401
    Decision,
    GroundednessReport,
    GroupKind,
    Unit,
    UnitLabel,
    Verdict,
    evaluate_transcript,
    scores,
)
from .ingest import (  # noqa: F401
    Citation,
    ProviderProfile,
    Segment,
    Transcript,
    detect_refusal,
    extract_domain,
    map_citations,
    normalize,
)
