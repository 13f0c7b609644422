"""Media items, the invocation gate and captioner backends.

Two captioners share one call contract: ``SyntheticCaptioner`` reads templated
captions out of a generated world, ``RemoteCaptioner`` talks JSON over HTTP
to an external caption service.
"""

from __future__ import annotations

import json
import logging
import socket
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, List, Optional

import numpy as np

from .errors import CaptionTimeout, CaptionUnavailable, InvocationSkipped, MalformedResponse

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MediaItem:
    item_id: int
    visual_embedding: np.ndarray
    has_media: bool = True
    value_score: float = 1.0
    ground_truth_ref: Optional[int] = None
    media_ref: str = ""

    def __post_init__(self):
        if self.item_id < 0:
            raise ValueError(f"item_id must be non-negative, got {self.item_id}")
        if not 0.0 <= self.value_score <= 1.0:
            raise ValueError(f"value_score must lie in [0, 1], got {self.value_score}")


@dataclass(frozen=True)
class Caption:
    item_id: int
    text: str
    captioner_id: str
    created_at: int = 0


@dataclass(frozen=True)
class InvocationPolicy:
    require_media: bool = True
    min_value_score: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.min_value_score <= 1.0:
            raise ValueError(f"min_value_score must lie in [0, 1], got {self.min_value_score}")


def should_invoke(item: MediaItem, policy: InvocationPolicy) -> bool:
    if policy.require_media and not item.has_media:
        return False
    return item.value_score >= policy.min_value_score


class Captioner:
    """Base class. Subclasses implement ``_generate``; ``caption`` enforces the gate."""

    captioner_id = "base"

    def __init__(self, policy: Optional[InvocationPolicy] = None,
                 clock: Optional[Callable[[], float]] = None):
        self.policy = policy or InvocationPolicy()
        self._clock = clock or time.time

    def caption(self, item: MediaItem) -> Caption:
        if not should_invoke(item, self.policy):
            raise InvocationSkipped(f"item {item.item_id} does not pass the invocation policy")
        text = self._generate(item)
        return Caption(item.item_id, text, self.captioner_id, int(self._clock()))

    def caption_many(self, items: Iterable[MediaItem], workers: int = 1) -> List[Optional[Caption]]:
        """Caption every gated item; ``None`` for items the gate rejects.

        Failures of individual remote calls propagate.
        """
        items = list(items)

        def one(item):
            if not should_invoke(item, self.policy):
                return None
            return self.caption(item)

        if workers <= 1:
            return [one(it) for it in items]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, items))

    def _generate(self, item: MediaItem) -> str:
        raise NotImplementedError


class SyntheticCaptioner(Captioner):
    """Deterministic captions from a synthetic world's template tables.

    ``world`` must expose ``caption_text(ref) -> str``.
    """

    captioner_id = "synthetic"

    def __init__(self, world, policy: Optional[InvocationPolicy] = None,
                 clock: Optional[Callable[[], float]] = None):
        super().__init__(policy, clock or (lambda: 0))
        self.world = world

    def _generate(self, item: MediaItem) -> str:
        if item.ground_truth_ref is None:
            raise CaptionUnavailable(f"item {item.item_id} has no ground-truth reference")
        return self.world.caption_text(item.ground_truth_ref)


@dataclass(frozen=True)
class EndpointConfig:
    url: str
    timeout_ms: int = 200
    retries: int = 2


def _post_json(url: str, payload: dict, timeout_s: float):
    body = json.dumps(payload).encode("utf-8")
    req = urllib.request.Request(url, data=body, method="POST",
                                 headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req, timeout=timeout_s) as resp:
            return resp.status, resp.read()
    except urllib.error.HTTPError as e:
        return e.code, b""
    except (socket.timeout, TimeoutError) as e:
        raise CaptionTimeout(str(e)) from e
    except urllib.error.URLError as e:
        if isinstance(e.reason, (socket.timeout, TimeoutError)):
            raise CaptionTimeout(str(e)) from e
        raise CaptionUnavailable(str(e)) from e
    except ConnectionError as e:
        raise CaptionUnavailable(str(e)) from e


def parse_caption_reply(status: int, body: bytes, item_id: int) -> str:
    if status != 200:
        raise MalformedResponse(f"caption service returned HTTP {status}")
    try:
        reply = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise MalformedResponse(f"reply is not JSON: {e}") from e
    if not isinstance(reply, dict) or "item_id" not in reply or "caption" not in reply:
        raise MalformedResponse("reply must be an object with 'item_id' and 'caption'")
    if not isinstance(reply["caption"], str) or not reply["caption"]:
        raise MalformedResponse("'caption' must be a non-empty string")
    if reply["item_id"] != item_id:
        raise MalformedResponse(f"reply item_id {reply['item_id']} != requested {item_id}")
    return reply["caption"]


def remote_caption_request(item: MediaItem, endpoint: EndpointConfig, *,
                           transport=_post_json, clock=time.time) -> Caption:
    """Request a caption for ``item`` without consulting the invocation gate.

    Timeouts and connection failures are retried ``endpoint.retries`` times;
    malformed replies are not retried.
    """
    payload = {"item_id": int(item.item_id), "media_ref": item.media_ref}
    last: Exception = CaptionUnavailable("no attempt made")
    for attempt in range(endpoint.retries + 1):
        try:
            status, body = transport(endpoint.url, payload, endpoint.timeout_ms / 1000.0)
        except (CaptionTimeout, CaptionUnavailable) as e:
            logger.debug("caption attempt %d for item %d failed: %s", attempt, item.item_id, e)
            last = e
            continue
        text = parse_caption_reply(status, body, item.item_id)
        return Caption(item.item_id, text, "remote", int(clock()))
    raise CaptionUnavailable(
        f"item {item.item_id}: {endpoint.retries + 1} attempts failed ({last})") from last


class RemoteCaptioner(Captioner):
    captioner_id = "remote"

    def __init__(self, endpoint: EndpointConfig, policy: Optional[InvocationPolicy] = None,
                 transport=_post_json, clock: Optional[Callable[[], float]] = None):
        super().__init__(policy, clock)
        self.endpoint = endpoint
        self._transport = transport

    def caption(self, item: MediaItem) -> Caption:
        if not should_invoke(item, self.policy):
            raise InvocationSkipped(f"item {item.item_id} does not pass the invocation policy")
        return remote_caption_request(item, self.endpoint, transport=self._transport,
                                      clock=self._clock)
