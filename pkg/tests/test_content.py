import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mmrec.content import (Caption, EndpointConfig, InvocationPolicy, MediaItem, RemoteCaptioner,
                           SyntheticCaptioner, parse_caption_reply, remote_caption_request,
                           should_invoke)
from mmrec.datagen import WorldConfig, gen_world
from mmrec.errors import (CaptionTimeout, CaptionUnavailable, InvocationSkipped,
                          MalformedResponse)


def item(i=7, has_media=True, value=0.9, ref=None):
    return MediaItem(i, np.zeros(4), has_media, value, ref, f"synthetic://item/{i}")


@pytest.mark.parametrize("has_media,value,policy,expected", [
    (True, 0.9, InvocationPolicy(True, 0.5), True),
    (False, 0.9, InvocationPolicy(True, 0.5), False),
    (True, 0.5, InvocationPolicy(True, 0.5), True),
    (True, 0.49, InvocationPolicy(True, 0.5), False),
    (False, 0.1, InvocationPolicy(False, 0.0), True),
])
def test_gate(has_media, value, policy, expected):
    assert should_invoke(item(has_media=has_media, value=value), policy) is expected


@given(st.booleans(), st.floats(0, 1), st.booleans(), st.floats(0, 1), st.integers(0, 10**6))
def test_gate_depends_only_on_media_value_and_policy(has_media, value, req, thr, other_id):
    policy = InvocationPolicy(req, thr)
    a = MediaItem(1, np.ones(3), has_media, value, None, "x")
    b = MediaItem(other_id, np.full(5, -2.0), has_media, value, 99, "y")
    assert should_invoke(a, policy) == should_invoke(b, policy)
    assert should_invoke(a, policy) == ((not req or has_media) and value >= thr)


def test_validation():
    with pytest.raises(ValueError):
        MediaItem(-1, np.zeros(2))
    with pytest.raises(ValueError):
        MediaItem(1, np.zeros(2), value_score=1.5)
    with pytest.raises(ValueError):
        InvocationPolicy(min_value_score=-0.1)


@pytest.fixture(scope="module")
def world():
    return gen_world(WorldConfig(n_users=10, n_items=2000, n_impressions=10))


def test_synthetic_golden_caption(world):
    # find an item whose latent topic/attribute/phrasing is (dog_play, park, canonical)
    idx = np.flatnonzero((world.item_topic == 0) & (world.item_attribute == 0)
                         & (world.item_phrasing == 0))
    assert len(idx)
    i = int(idx[0])
    cap = SyntheticCaptioner(world).caption(MediaItem(i, world.visual[i], True, 1.0, i))
    assert cap.text == "a man playing with his dog in a park"
    assert cap.captioner_id == "synthetic"


def test_synthetic_deterministic(world):
    a = SyntheticCaptioner(world).caption(world.media_item(3))
    b = SyntheticCaptioner(gen_world(world.config)).caption(world.media_item(3))
    assert a == b


def test_gate_enforced_and_caption_many(world):
    cap = SyntheticCaptioner(world, InvocationPolicy(True, 0.5))
    items = [item(1, True, 0.9, 1), item(2, False, 0.9, 2), item(3, True, 0.1, 3)]
    with pytest.raises(InvocationSkipped):
        cap.caption(items[1])
    out = cap.caption_many(items)
    assert out[0].text == world.caption_text(1) and out[1] is None and out[2] is None
    assert cap.caption_many(items, workers=3) == out


def test_synthetic_without_reference_is_unavailable(world):
    with pytest.raises(CaptionUnavailable):
        SyntheticCaptioner(world).caption(item(ref=None))


def test_caption_never_depends_on_labels():
    # captions are a function of item latents only: changing interactions changes nothing
    w1 = gen_world(WorldConfig(n_users=10, n_items=40, n_impressions=10, seed=3))
    w2 = gen_world(WorldConfig(n_users=10, n_items=40, n_impressions=99999, seed=3,
                               caption_signal_strength=0.0))
    assert [w1.caption_text(i) for i in range(40)] == [w2.caption_text(i) for i in range(40)]


@pytest.mark.parametrize("body,ok", [
    (b'{"item_id": 7, "caption": "a dog"}', True),
    (b'{"item_id": 7}', False),
    (b'{"caption": "a dog"}', False),
    (b'{"item_id": 8, "caption": "a dog"}', False),
    (b'{"item_id": 7, "caption": ""}', False),
    (b'not json', False),
    (b'[1, 2]', False),
])
def test_parse_reply(body, ok):
    if ok:
        assert parse_caption_reply(200, body, 7) == "a dog"
    else:
        with pytest.raises(MalformedResponse):
            parse_caption_reply(200, body, 7)


def test_parse_reply_rejects_http_errors():
    with pytest.raises(MalformedResponse):
        parse_caption_reply(500, b'{"item_id": 7, "caption": "a dog"}', 7)


class FlakyTransport:
    def __init__(self, failures, exc=CaptionTimeout, reply=b'{"item_id": 7, "caption": "a dog"}'):
        self.failures, self.exc, self.reply, self.calls = failures, exc, reply, 0

    def __call__(self, url, payload, timeout_s):
        self.calls += 1
        assert payload == {"item_id": 7, "media_ref": "synthetic://item/7"}
        assert timeout_s == pytest.approx(0.2)
        if self.calls <= self.failures:
            raise self.exc("boom")
        return 200, self.reply


def test_retries_then_succeeds():
    t = FlakyTransport(failures=2)
    cap = remote_caption_request(item(), EndpointConfig("http://x"), transport=t, clock=lambda: 5)
    assert cap == Caption(7, "a dog", "remote", 5)
    assert t.calls == 3


@pytest.mark.parametrize("exc", [CaptionTimeout, CaptionUnavailable])
def test_retry_exhaustion(exc):
    t = FlakyTransport(failures=3, exc=exc)
    with pytest.raises(CaptionUnavailable):
        remote_caption_request(item(), EndpointConfig("http://x", retries=2), transport=t)
    assert t.calls == 3


def test_malformed_not_retried():
    t = FlakyTransport(failures=0, reply=b'{"item_id": 7}')
    with pytest.raises(MalformedResponse):
        remote_caption_request(item(), EndpointConfig("http://x"), transport=t)
    assert t.calls == 1


class _Handler(BaseHTTPRequestHandler):
    mode = "ok"

    def do_POST(self):
        req = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        if self.server.mode == "slow":
            time.sleep(0.5)
        if self.server.mode == "error":
            self.send_response(503)
            self.end_headers()
            return
        body = json.dumps({"item_id": req["item_id"],
                           "caption": f"caption for {req['media_ref']}"}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


@pytest.fixture
def server():
    srv = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    srv.mode = "ok"
    thread = threading.Thread(target=srv.serve_forever, daemon=True)
    thread.start()
    yield srv
    srv.shutdown()
    srv.server_close()


def _url(srv):
    return f"http://127.0.0.1:{srv.server_address[1]}/caption"


def test_remote_over_http(server):
    cap = RemoteCaptioner(EndpointConfig(_url(server), timeout_ms=2000), clock=lambda: 1)
    out = cap.caption(item())
    assert out == Caption(7, "caption for synthetic://item/7", "remote", 1)


def test_remote_timeout_becomes_unavailable(server):
    server.mode = "slow"
    cap = RemoteCaptioner(EndpointConfig(_url(server), timeout_ms=50, retries=1))
    with pytest.raises(CaptionUnavailable):
        cap.caption(item())


def test_remote_http_error_is_malformed(server):
    server.mode = "error"
    with pytest.raises(MalformedResponse):
        RemoteCaptioner(EndpointConfig(_url(server), timeout_ms=2000)).caption(item())


def test_remote_unreachable():
    srv = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    port = srv.server_address[1]
    srv.server_close()
    cap = RemoteCaptioner(EndpointConfig(f"http://127.0.0.1:{port}/", timeout_ms=200, retries=2))
    with pytest.raises(CaptionUnavailable):
        cap.caption(item())


def test_remote_respects_gate():
    t = FlakyTransport(failures=0)
    cap = RemoteCaptioner(EndpointConfig("http://x"), InvocationPolicy(True, 0.95), transport=t)
    with pytest.raises(InvocationSkipped):
        cap.caption(item(value=0.9))
    assert t.calls == 0
