import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # golden / oracles helpers

from groundcheck.backend import mock_from_dict
from groundcheck.credibility import load_rating_db
from groundcheck.evidence import DocumentCache, Fetcher

import golden as golden_mod

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def ratings_path() -> Path:
    return DATA_DIR / "ratings.csv"


@pytest.fixture(scope="session")
def rating_db(ratings_path):
    return load_rating_db(ratings_path)


@pytest.fixture()
def golden_backend():
    return mock_from_dict(golden_mod.mock_script_dict(), source="golden")


@pytest.fixture()
def golden_fetcher(tmp_path):
    """Cache pre-seeded with the golden documents; network access forbidden."""
    golden_mod.seed_cache(tmp_path / "cache")

    def no_network(url: str, timeout: float):
        raise AssertionError(f"unexpected network fetch: {url}")

    return Fetcher(DocumentCache(tmp_path / "cache"), get=no_network)


@pytest.fixture()
def offline_fetcher_factory(tmp_path):
    """Fetcher whose transport is a stub; returns (fetcher, calls list)."""

    def factory(responder=None, subdir="cache"):
        calls: list[str] = []

        def transport(url: str, timeout: float):
            calls.append(url)
            if responder is None:
                raise ConnectionError("offline")
            return responder(url)

        fetcher = Fetcher(DocumentCache(tmp_path / subdir), get=transport, clock=lambda: 0.0)
        return fetcher, calls

    return factory
