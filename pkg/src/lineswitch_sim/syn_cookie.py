"""Stateless SYN-cookie ISNs.

Layout of the 32-bit cookie::

    bits 31..29  time counter mod 8
    bits 28..0   keyed BLAKE2b of (flow, full time counter), truncated

Validation recomputes the cookie for the current and the previous counter
value, so nothing per connection is ever stored.
"""

from __future__ import annotations

import hashlib
import random
import struct
from dataclasses import dataclass

from .core import US_PER_S, FlowKey, SimTime

HASH_BITS = 29
HASH_MASK = (1 << HASH_BITS) - 1
COUNTER_MASK = 0x7

_PACK = struct.Struct(">IHIHQ").pack


@dataclass(frozen=True)
class CookieKey:
    secret: bytes
    epoch_len: float = 64.0

    def __post_init__(self):
        if len(self.secret) != 16:
            raise ValueError("cookie secret must be 128 bits")
        if self.epoch_len <= 0:
            raise ValueError("epoch_len must be positive")

    @classmethod
    def from_rng(cls, rng: random.Random, epoch_len: float = 64.0) -> CookieKey:
        return cls(rng.getrandbits(128).to_bytes(16, "big"), epoch_len)

    def counter(self, now: SimTime) -> int:
        return int(now // (self.epoch_len * US_PER_S))


def _cookie_for(key: CookieKey, flow: FlowKey, counter: int) -> int:
    digest = hashlib.blake2b(_PACK(flow[0], flow[1], flow[2], flow[3], counter),
                             digest_size=8, key=key.secret).digest()
    h = int.from_bytes(digest, "big")
    return ((counter & COUNTER_MASK) << HASH_BITS) | (h & HASH_MASK)


def issue_cookie(key: CookieKey, flow: FlowKey, now: SimTime) -> int:
    """ISN for the SYN-ACK answering ``flow``'s SYN at time ``now``."""
    return _cookie_for(key, flow, key.counter(now))


def validate_cookie(key: CookieKey, flow: FlowKey, echoed_isn: int,
                    now: SimTime) -> bool:
    """True iff ``echoed_isn`` was issued for ``flow`` this epoch or the last."""
    counter = key.counter(now)
    # The top bits name the epoch; use them to pick the one candidate to hash.
    top = echoed_isn >> HASH_BITS
    if top == counter & COUNTER_MASK:
        return _cookie_for(key, flow, counter) == echoed_isn
    if counter > 0 and top == (counter - 1) & COUNTER_MASK:
        return _cookie_for(key, flow, counter - 1) == echoed_isn
    return False
