"""Per-user token affinity profiles with exponential half-life decay."""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Sequence

from . import TASKS
from .errors import StaleEvent

EVENT_TYPES = TASKS
DEFAULT_HALF_LIFE_S = 7 * 24 * 3600.0
DEFAULT_TOPK = 32


@dataclass(frozen=True)
class EngagementEvent:
    user_id: int
    item_id: int
    event_type: str
    timestamp: int

    def __post_init__(self):
        if self.event_type not in EVENT_TYPES:
            raise ValueError(f"unknown event type {self.event_type!r}")
        if self.timestamp < 0:
            raise ValueError(f"timestamp must be non-negative, got {self.timestamp}")

    def to_json(self) -> str:
        return json.dumps({"user_id": self.user_id, "item_id": self.item_id,
                           "event_type": self.event_type, "ts": self.timestamp})

    @classmethod
    def from_json(cls, line: str) -> "EngagementEvent":
        rec = json.loads(line)
        return cls(int(rec["user_id"]), int(rec["item_id"]), rec["event_type"], int(rec["ts"]))


@dataclass
class UserInterestProfile:
    """Decayed token weights per event type.

    ``weights[t]`` is stored as of ``type_updated[t]``; use ``weights_at`` for
    values decayed to a later time.
    """

    user_id: int
    weights: Dict[str, Dict[int, float]] = field(
        default_factory=lambda: {t: {} for t in EVENT_TYPES})
    last_update: int = 0
    type_updated: Dict[str, int] = field(default_factory=lambda: {t: 0 for t in EVENT_TYPES})
    half_life_s: float = DEFAULT_HALF_LIFE_S

    def weights_at(self, event_type: str, ts: int) -> Dict[int, float]:
        dt = ts - self.type_updated[event_type]
        if dt < 0:
            raise StaleEvent(f"cannot read weights at {ts}, before {self.type_updated[event_type]}")
        factor = 2.0 ** (-dt / self.half_life_s)
        return {tok: w * factor for tok, w in self.weights[event_type].items()}


def update_profile(profile: UserInterestProfile, event: EngagementEvent,
                   item_tokens: Sequence[int],
                   half_life_s: float = DEFAULT_HALF_LIFE_S) -> UserInterestProfile:
    """Decay the event type's weights by elapsed time, then add 1 per distinct token.

    Mutates and returns ``profile``.
    """
    if half_life_s <= 0:
        raise ValueError(f"half_life_s must be positive, got {half_life_s}")
    if event.timestamp < profile.last_update:
        raise StaleEvent(f"event at {event.timestamp} precedes last update {profile.last_update}")
    wmap = profile.weights[event.event_type]
    # decay is tracked per type so untouched types keep their own clock
    dt = event.timestamp - profile.type_updated[event.event_type]
    if dt and wmap:
        factor = 2.0 ** (-dt / half_life_s)
        for tok in wmap:
            wmap[tok] *= factor
    for tok in set(item_tokens):
        wmap[tok] = wmap.get(tok, 0.0) + 1.0
    profile.type_updated[event.event_type] = event.timestamp
    profile.last_update = event.timestamp
    profile.half_life_s = half_life_s
    return profile


def snapshot_topk(profile: UserInterestProfile, event_type: str, k: int = DEFAULT_TOPK) -> List[int]:
    """Top-``k`` token ids by weight; equal weights go to the smaller id first."""
    wmap = profile.weights[event_type]
    top = heapq.nsmallest(k, wmap.items(), key=lambda kv: (-kv[1], kv[0]))
    return [tok for tok, _ in top]


def replay(events: Iterable[EngagementEvent], item_tokens, half_life_s: float = DEFAULT_HALF_LIFE_S
           ) -> Dict[int, UserInterestProfile]:
    """Rebuild every user's profile from an event log.

    ``item_tokens`` maps item id to its token list; events must be time-ordered per user.
    """
    profiles: Dict[int, UserInterestProfile] = {}
    for ev in events:
        prof = profiles.get(ev.user_id)
        if prof is None:
            prof = profiles[ev.user_id] = UserInterestProfile(ev.user_id)
        update_profile(prof, ev, item_tokens[ev.item_id], half_life_s)
    return profiles


def read_event_log(path) -> Iterator[EngagementEvent]:
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                yield EngagementEvent.from_json(line)


def write_event_log(path, events: Iterable[EngagementEvent]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for ev in events:
            f.write(ev.to_json())
            f.write("\n")
