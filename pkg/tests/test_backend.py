import json
import math
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from groundcheck.backend import (
    BackendConfig,
    BackendConfigError,
    BackendError,
    BackendResponseError,
    ChatRule,
    HttpBackend,
    MockBackend,
    RateLimiter,
    hashed_bag_of_words,
    load_mock,
    mock_from_dict,
)


class FakeOpenAIServer:
    """Tiny OpenAI-compatible server with scriptable status codes per request."""

    def __init__(self, status_plan=None, embedding_dim=4):
        self.requests: list[dict] = []
        self.status_plan = list(status_plan or [])
        self.embedding_dim = embedding_dim
        server = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length) or b"{}")
                server.requests.append(
                    {"path": self.path, "body": body, "auth": self.headers.get("Authorization")}
                )
                status = server.status_plan.pop(0) if server.status_plan else 200
                if status != 200:
                    self.send_response(status)
                    self.end_headers()
                    self.wfile.write(b"try later")
                    return
                if self.path.endswith("/chat/completions"):
                    payload = {
                        "choices": [{"message": {"role": "assistant", "content": "pong"}}]
                    }
                else:
                    inputs = body.get("input", [])
                    payload = {
                        "data": [
                            {"index": i, "embedding": [float(i + 1)] * server.embedding_dim}
                            for i in range(len(inputs))
                        ]
                    }
                raw = json.dumps(payload).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(raw)))
                self.end_headers()
                self.wfile.write(raw)

            def log_message(self, *args):
                pass

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()

    @property
    def endpoint(self):
        host, port = self.httpd.server_address
        return f"http://{host}:{port}/v1"


def config_for(server, **overrides):
    values = dict(
        endpoint=server.endpoint, model="judge-1", api_key_env=None,
        timeout=5.0, max_retries=3,
    )
    values.update(overrides)
    return BackendConfig(**values)


class TestHttpBackend:
    def test_chat_complete_round_trip(self):
        with FakeOpenAIServer() as server:
            backend = HttpBackend(config_for(server), sleep=lambda s: None)
            assert backend.chat_complete("ping") == "pong"
            assert server.requests[0]["body"]["messages"][0]["content"] == "ping"
            assert server.requests[0]["body"]["temperature"] == 0.0

    def test_transient_429_then_success(self):
        with FakeOpenAIServer(status_plan=[429, 200]) as server:
            backend = HttpBackend(config_for(server), sleep=lambda s: None)
            assert backend.chat_complete("ping") == "pong"
            assert len(server.requests) == 2

    def test_retries_exhausted(self):
        with FakeOpenAIServer(status_plan=[503, 503, 503]) as server:
            backend = HttpBackend(config_for(server, max_retries=2), sleep=lambda s: None)
            with pytest.raises(BackendError, match="exhausted 3 attempts"):
                backend.chat_complete("ping")
            assert len(server.requests) == 3

    def test_auth_failure_not_retried(self):
        with FakeOpenAIServer(status_plan=[401]) as server:
            backend = HttpBackend(config_for(server), sleep=lambda s: None)
            with pytest.raises(BackendError, match="authentication failed"):
                backend.chat_complete("ping")
            assert len(server.requests) == 1

    def test_missing_api_key_env_fails_before_network(self, monkeypatch):
        monkeypatch.delenv("GROUNDCHECK_API_KEY", raising=False)
        with FakeOpenAIServer() as server:
            with pytest.raises(BackendConfigError, match="GROUNDCHECK_API_KEY"):
                HttpBackend(config_for(server, api_key_env="GROUNDCHECK_API_KEY"))
            assert server.requests == []

    def test_api_key_sent_as_bearer(self, monkeypatch):
        monkeypatch.setenv("MY_KEY_VAR", "sekrit")
        with FakeOpenAIServer() as server:
            backend = HttpBackend(config_for(server, api_key_env="MY_KEY_VAR"), sleep=lambda s: None)
            backend.chat_complete("ping")
            assert server.requests[0]["auth"] == "Bearer sekrit"

    def test_embed_batching_1000_texts_8_requests(self):
        with FakeOpenAIServer() as server:
            backend = HttpBackend(config_for(server), sleep=lambda s: None)
            vectors = backend.embed_batch([f"text {i}" for i in range(1000)])
            assert len(vectors) == 1000
            assert len(server.requests) == 8  # ceil(1000 / 128)
            sizes = [len(r["body"]["input"]) for r in server.requests]
            assert sizes == [128] * 7 + [104]

    def test_malformed_chat_body_raises_response_error(self, monkeypatch):
        with FakeOpenAIServer() as server:
            backend = HttpBackend(config_for(server), sleep=lambda s: None)
            monkeypatch.setattr(backend, "_post", lambda path, payload: {"unexpected": True})
            with pytest.raises(BackendResponseError, match="malformed chat completion"):
                backend.chat_complete("x")

    def test_embedding_count_mismatch_raises(self, monkeypatch):
        with FakeOpenAIServer() as server:
            backend = HttpBackend(config_for(server), sleep=lambda s: None)
            monkeypatch.setattr(
                backend, "_post",
                lambda path, payload: {"data": [{"index": 0, "embedding": [1.0]}]},
            )
            with pytest.raises(BackendResponseError, match="expected 2 embeddings"):
                backend.embed_batch(["a", "b"])


class TestBackendConfig:
    def test_invalid_timeout(self):
        with pytest.raises(BackendConfigError):
            BackendConfig(endpoint="http://x", model="m", timeout=0)

    def test_invalid_retries(self):
        with pytest.raises(BackendConfigError):
            BackendConfig(endpoint="http://x", model="m", max_retries=-1)

    def test_invalid_rate_limit(self):
        with pytest.raises(BackendConfigError):
            BackendConfig(endpoint="http://x", model="m", rate_limit_per_minute=0)


class TestRateLimiter:
    def test_limit_respected_over_60s_window(self):
        clock = VirtualClock()
        limiter = RateLimiter(5, clock=clock.now, sleep=clock.sleep)
        acquired = []
        for _ in range(12):
            limiter.acquire()
            acquired.append(clock.now())
        for i, t in enumerate(acquired):
            window = [u for u in acquired if t - 60.0 < u <= t]
            assert len(window) <= 5
        # 12 acquisitions at limit 5/min need to span at least two full windows
        assert acquired[-1] - acquired[0] >= 120.0 - 1e-9

    def test_no_wait_under_limit(self):
        clock = VirtualClock()
        limiter = RateLimiter(10, clock=clock.now, sleep=clock.sleep)
        for _ in range(10):
            limiter.acquire()
        assert clock.now() == 0.0


class VirtualClock:
    def __init__(self):
        self._t = 0.0

    def now(self):
        return self._t

    def sleep(self, seconds):
        self._t += max(seconds, 0.0)


class TestHashedEmbedding:
    def test_deterministic_and_frozen(self):
        first = hashed_bag_of_words("abc", 256)
        second = hashed_bag_of_words("abc", 256)
        assert first == second
        # Frozen reference: BLAKE2-based hashing is stable across processes and
        # platforms; this pins the exact nonzero bucket for "abc" at dim 256.
        nonzero = [(i, v) for i, v in enumerate(first) if v != 0.0]
        assert nonzero == [(216, -1.0)]

    def test_l2_normalized(self):
        vec = hashed_bag_of_words("several distinct words in here", 128)
        assert sum(v * v for v in vec) == pytest.approx(1.0)

    def test_empty_text_fixed_basis_vector(self):
        vec = hashed_bag_of_words("", 64)
        assert vec[0] == 1.0 and sum(abs(v) for v in vec) == 1.0

    def test_distinct_sentences_get_distinct_vectors(self):
        # Multi-token texts: whole count-profiles colliding would need every
        # bucket and sign to coincide, vanishingly unlikely at dim 256.
        sentences = [
            f"case {i} reports outcome number {i} with token{i} detail" for i in range(200)
        ]
        vectors = {tuple(hashed_bag_of_words(s, 256)) for s in sentences}
        assert len(vectors) == 200


class TestMockBackend:
    def test_scripted_key_returns_canned_text(self):
        mock = MockBackend(chat_rules=(ChatRule(response="canned", contains=("magic needle",)),))
        assert mock.chat_complete("prompt with magic needle inside") == "canned"

    def test_contains_all_requires_every_needle(self):
        mock = MockBackend(
            chat_rules=(ChatRule(response="both", contains=("alpha", "beta")),),
            default_response="fallback",
        )
        assert mock.chat_complete("alpha and beta") == "both"
        assert mock.chat_complete("alpha only") == "fallback"

    def test_regex_rule(self):
        mock = MockBackend(chat_rules=(ChatRule(response="rules", regex=r"unit \d+"),))
        assert mock.chat_complete("judging unit 42 now") == "rules"

    def test_unmatched_without_default_raises(self):
        mock = MockBackend()
        with pytest.raises(BackendError, match="no rule"):
            mock.chat_complete("anything")

    def test_identical_texts_identical_vectors(self):
        mock = MockBackend()
        a, b = mock.embed_batch(["same text", "same text"])
        assert a == b

    def test_scripted_vectors(self):
        mock = MockBackend(
            embedding_mode="scripted", scripted_vectors={"a": (1.0, 0.0), "b": (0.0, 1.0)}
        )
        assert mock.embed_batch(["a", "b"]) == [[1.0, 0.0], [0.0, 1.0]]

    def test_never_touches_network(self, monkeypatch):
        import requests

        def explode(*args, **kwargs):
            raise AssertionError("network call from mock backend")

        monkeypatch.setattr(requests.Session, "request", explode)
        mock = MockBackend(default_response="offline")
        assert mock.chat_complete("x") == "offline"
        assert len(mock.embed_batch(["x"])) == 1


class TestLoadMock:
    def test_valid_script(self, tmp_path):
        path = tmp_path / "mock.json"
        path.write_text(
            json.dumps(
                {
                    "chat_rules": [{"contains": "key", "response": "value"}],
                    "default_response": "dflt",
                    "embedding": {"mode": "hashed_bag_of_words", "dim": 64},
                }
            )
        )
        mock = load_mock(path)
        assert mock.chat_complete("with key inside") == "value"
        assert mock.chat_complete("nothing") == "dflt"
        assert len(mock.embed_batch(["hello"])[0]) == 64

    def test_missing_file(self, tmp_path):
        with pytest.raises(BackendConfigError, match="not found"):
            load_mock(tmp_path / "absent.json")

    def test_unknown_embedding_mode(self):
        with pytest.raises(BackendConfigError, match="unknown embedding mode"):
            mock_from_dict({"embedding": {"mode": "quantum"}})

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(BackendConfigError, match="malformed"):
            load_mock(path)

    def test_rule_without_matcher_rejected(self):
        with pytest.raises(BackendConfigError, match="chat rule needs"):
            mock_from_dict({"chat_rules": [{"response": "x"}]})
