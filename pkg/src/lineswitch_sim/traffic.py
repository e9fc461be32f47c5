"""Workload and attack generators, plus the web server they talk to.

Generators are driven by the engine through two calls:

* ``next_events(now)`` at ``wakeup_at``, returning the segments due now;
* ``on_segment(segment, now)`` for every segment delivered to an address
  the generator owns.

Both return ``[(time, segment), ...]`` and may move ``wakeup_at``.
"""

from __future__ import annotations

import hashlib
import ipaddress
import random
import struct
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from .core import (ACK, FIN, RST, SEQ_MASK, SYN, US_PER_S, IpAddress, SimTime,
                   TcpSegment, ip, ip_str)

CONN_PER_MBPS = 780.0
SYN_FRAME_BYTES = 64

LEGIT = "legit"
SPOOFED_SYN_FLOOD = "spoofed_syn_flood"
BUFFER_SATURATION = "buffer_saturation"
PORT_EXHAUSTION = "port_exhaustion"
KINDS = (LEGIT, SPOOFED_SYN_FLOOD, BUFFER_SATURATION, PORT_EXHAUSTION)

MBPS = "mbps"
CPS = "cps"


def bandwidth_to_conn_rate(mbps: float) -> float:
    """Completed-handshake rate an attacker sustains on an ``mbps`` link."""
    if mbps <= 0:
        raise ValueError("bandwidth must be positive")
    return mbps * CONN_PER_MBPS


def syn_rate(mbps: float) -> float:
    return mbps * 1e6 / (8 * SYN_FRAME_BYTES)


@dataclass
class WorkloadSpec:
    kind: str
    rate: float = 1.0
    unit: str = MBPS
    src: str = ""
    dst: tuple[IpAddress, int] = (0, 80)
    start: float = 0.0
    stop: Optional[float] = None
    page_size: int = 1024
    request_size: int = 64
    think_time: float = 0.1
    page_timeout: float = 3.0
    hold: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown workload kind {self.kind!r}")
        if self.unit not in (MBPS, CPS):
            raise ValueError(f"unknown rate unit {self.unit!r}")
        if self.rate <= 0:
            raise ValueError("workload rate must be > 0")
        if self.stop is not None and self.stop <= self.start:
            raise ValueError("workload stop must be after start")
        if self.page_size <= 0:
            raise ValueError("page_size must be > 0")

    def sources(self) -> list[IpAddress]:
        """Source pool: comma-separated addresses and/or CIDR blocks."""
        out: list[IpAddress] = []
        for part in self.src.split(","):
            part = part.strip()
            if "/" in part:
                out.extend(int(a) for a in ipaddress.IPv4Network(part, strict=False))
            elif part:
                out.append(ip(part))
        return out

    def network(self) -> ipaddress.IPv4Network:
        return ipaddress.IPv4Network(self.src.strip(), strict=False)

    @property
    def event_rate(self) -> float:
        """Events per second: SYNs for floods, connections otherwise."""
        if self.unit == CPS:
            return self.rate
        if self.kind == SPOOFED_SYN_FLOOD:
            return syn_rate(self.rate)
        return bandwidth_to_conn_rate(self.rate)

    def describe(self) -> str:
        return f"{self.kind}@{self.rate:g}{self.unit}"


class _Ticker:
    """Times start + round(k / rate); no accumulated rounding drift."""

    def __init__(self, rate: float, start: SimTime):
        self.gap = US_PER_S / rate
        self.start = start
        self.k = 0

    def peek(self) -> SimTime:
        return self.start + int(round(self.k * self.gap))

    def advance(self) -> SimTime:
        t = self.peek()
        self.k += 1
        return t


class Generator:
    host = "attacker"

    def __init__(self, spec: WorkloadSpec, rng: random.Random):
        self.spec = spec
        self.rng = rng
        self.start = int(round(spec.start * US_PER_S))
        self.stop = None if spec.stop is None else int(round(spec.stop * US_PER_S))
        self.wakeup_at: Optional[SimTime] = self.start

    def owns(self, addr: IpAddress) -> bool:
        raise NotImplementedError

    def addresses(self) -> list[IpAddress]:
        return []

    def next_events(self, now: SimTime) -> list:
        raise NotImplementedError

    def on_segment(self, segment: TcpSegment, now: SimTime) -> list:
        return []

    def _active(self, t: SimTime) -> bool:
        return self.stop is None or t < self.stop


class SpoofedSynFlood(Generator):
    """Pure SYNs from random addresses of a network, random ports and ISNs."""

    def __init__(self, spec: WorkloadSpec, rng: random.Random):
        super().__init__(spec, rng)
        net = spec.network() if spec.src else ipaddress.IPv4Network("11.0.0.0/8")
        self.base = int(net.network_address)
        self.size = net.num_addresses
        self._ticker = _Ticker(spec.event_rate, self.start)
        self.sent = 0

    def owns(self, addr: IpAddress) -> bool:
        return self.base <= addr < self.base + self.size

    def next_events(self, now: SimTime) -> list:
        out = []
        ticker = self._ticker
        rng = self.rng
        dst_ip, dst_port = self.spec.dst
        while ticker.peek() <= now:
            t = ticker.advance()
            if not self._active(t):
                self.wakeup_at = None
                return out
            seg = TcpSegment(self.base + rng.randrange(self.size),
                             rng.randrange(1024, 65536), dst_ip, dst_port, SYN,
                             rng.getrandbits(32), 0, 0)
            out.append((t, seg))
            self.sent += 1
        nxt = ticker.peek()
        self.wakeup_at = nxt if self._active(nxt) else None
        return out


class CompletingFlood(Generator):
    """Complete handshakes from the attacker's real addresses, never closed
    unless ``hold`` is set.

    Source ports run 1..65535 on the first address, then move to the next.
    The attacker is stateless: every reply is derived from the segment it
    answers.
    """

    def __init__(self, spec: WorkloadSpec, rng: random.Random):
        super().__init__(spec, rng)
        self.pool = spec.sources()
        if not self.pool:
            raise ValueError(f"{spec.kind} needs at least one source address")
        self._owned = frozenset(self.pool)
        self._ticker = _Ticker(spec.event_rate, self.start)
        self._hold = None if spec.hold is None else int(round(spec.hold * US_PER_S))
        self._closing: deque = deque()
        self._addr_idx = 0
        self._port = 0
        self.attempts = 0
        self.established = 0
        self.refused = 0

    def owns(self, addr: IpAddress) -> bool:
        return addr in self._owned

    def addresses(self) -> list[IpAddress]:
        return list(self.pool)

    def _next_source(self) -> tuple[IpAddress, int]:
        self._port += 1
        if self._port > 65535:
            self._port = 1
            self._addr_idx = (self._addr_idx + 1) % len(self.pool)
        return self.pool[self._addr_idx], self._port

    def next_events(self, now: SimTime) -> list:
        out = []
        ticker = self._ticker
        dst_ip, dst_port = self.spec.dst
        while ticker.peek() <= now and self._active(ticker.peek()):
            t = ticker.advance()
            src_ip, src_port = self._next_source()
            out.append((t, TcpSegment(src_ip, src_port, dst_ip, dst_port, SYN,
                                      self.rng.getrandbits(32), 0, 0)))
            self.attempts += 1
        closing = self._closing
        while closing and closing[0][0] <= now:
            out.append(closing.popleft())
        nxt = ticker.peek()
        candidates = [nxt] if self._active(nxt) else []
        if closing:
            candidates.append(closing[0][0])
        self.wakeup_at = min(candidates) if candidates else None
        return out

    def on_segment(self, segment: TcpSegment, now: SimTime) -> list:
        flags = segment.flags
        if flags & RST:
            self.refused += 1
            return []
        reply_ack = (segment.seq + 1) & SEQ_MASK
        if flags & (SYN | ACK) == SYN | ACK:
            self.established += 1
            ack = TcpSegment(segment.dst_ip, segment.dst_port, segment.src_ip,
                             segment.src_port, ACK, segment.ack, reply_ack, 0)
            if self._hold is not None:
                fin = ack._replace(flags=FIN | ACK)
                self._closing.append((now + self._hold, fin))
                if self.wakeup_at is None or now + self._hold < self.wakeup_at:
                    self.wakeup_at = now + self._hold
            return [(now, ack)]
        if flags & FIN:
            return [(now, TcpSegment(segment.dst_ip, segment.dst_port, segment.src_ip,
                                     segment.src_port, ACK, segment.ack, reply_ack, 0))]
        return []


class BufferSaturation(CompletingFlood):
    pass


class PortExhaustion(CompletingFlood):
    pass


@dataclass
class _Page:
    src_port: int
    isn: int
    started: SimTime
    deadline: SimTime
    server_next: Optional[int] = None
    received: int = 0


@dataclass
class PageStats:
    latencies: list = field(default_factory=list)
    ok: int = 0
    failed: int = 0
    seq_errors: int = 0


class LegitClient(Generator):
    """Fetches one page at a time: handshake, request, response, FIN.

    A page fails if it is not fully received within ``page_timeout``; the
    client never retransmits. The next fetch starts ``think_time`` after the
    previous one finished or failed.
    """

    host = "client"
    FIRST_EPHEMERAL = 32768
    LAST_EPHEMERAL = 60999

    def __init__(self, spec: WorkloadSpec, rng: random.Random):
        super().__init__(spec, rng)
        sources = spec.sources()
        if len(sources) != 1:
            raise ValueError("legit workload needs exactly one source address")
        self.addr = sources[0]
        self._think = int(round(spec.think_time * US_PER_S))
        self._timeout = int(round(spec.page_timeout * US_PER_S))
        self._port = self.LAST_EPHEMERAL
        self.page: Optional[_Page] = None
        self.stats = PageStats()

    def owns(self, addr: IpAddress) -> bool:
        return addr == self.addr

    def addresses(self) -> list[IpAddress]:
        return [self.addr]

    def next_events(self, now: SimTime) -> list:
        page = self.page
        if page is not None:
            if now < page.deadline:
                self.wakeup_at = page.deadline
                return []
            self.stats.failed += 1
            self.page = None
            nxt = now + self._think
            self.wakeup_at = nxt if self._active(nxt) else None
            return []
        if not self._active(now):
            self.wakeup_at = None
            return []
        self._port += 1
        if self._port > self.LAST_EPHEMERAL:
            self._port = self.FIRST_EPHEMERAL
        isn = self.rng.getrandbits(32)
        self.page = _Page(self._port, isn, now, now + self._timeout)
        self.wakeup_at = self.page.deadline
        dst_ip, dst_port = self.spec.dst
        return [(now, TcpSegment(self.addr, self._port, dst_ip, dst_port, SYN, isn, 0, 0))]

    def _finish(self, ok: bool, now: SimTime) -> None:
        page = self.page
        if ok:
            self.stats.ok += 1
            self.stats.latencies.append(now - page.started)
        else:
            self.stats.failed += 1
        self.page = None
        nxt = now + self._think
        self.wakeup_at = nxt if self._active(nxt) else None

    def on_segment(self, segment: TcpSegment, now: SimTime) -> list:
        page = self.page
        flags = segment.flags
        reply = TcpSegment(segment.dst_ip, segment.dst_port, segment.src_ip,
                           segment.src_port, ACK, segment.ack,
                           (segment.seq + segment.payload_len + (1 if flags & (SYN | FIN) else 0)) & SEQ_MASK,
                           0)
        if page is None or segment.dst_port != page.src_port:
            # Teardown of an earlier page: acknowledge its FIN, ignore the rest.
            if flags & FIN and not flags & RST:
                return [(now, reply)]
            return []
        if flags & RST:
            self._finish(False, now)
            return []
        if flags & (SYN | ACK) == SYN | ACK:
            if segment.ack != (page.isn + 1) & SEQ_MASK or page.server_next is not None:
                self.stats.seq_errors += 1
                return []
            page.server_next = (segment.seq + 1) & SEQ_MASK
            request = reply._replace(payload_len=self.spec.request_size)
            return [(now, reply), (now, request)]
        if page.server_next is None:
            return []
        if segment.payload_len:
            if segment.seq != page.server_next:
                self.stats.seq_errors += 1
                return []
            page.server_next = (page.server_next + segment.payload_len) & SEQ_MASK
            page.received += segment.payload_len
            if page.received >= self.spec.page_size:
                fin = reply._replace(flags=FIN | ACK)
                self._finish(True, now)
                return [(now, fin)]
            return [(now, reply)]
        return []


GENERATORS = {
    LEGIT: LegitClient,
    SPOOFED_SYN_FLOOD: SpoofedSynFlood,
    BUFFER_SATURATION: BufferSaturation,
    PORT_EXHAUSTION: PortExhaustion,
}


def make_generator(spec: WorkloadSpec, rng: random.Random) -> Generator:
    return GENERATORS[spec.kind](spec, rng)


def next_events(generator: Generator, now: SimTime) -> list:
    """Next batch of ``(time, segment)`` a generator emits at ``now``."""
    return generator.next_events(now)


_ISN = struct.Struct(">IHIH").pack


class WebServer:
    """Stateless HTTP-ish server.

    ISNs are a keyed hash of the connection 4-tuple in the style of RFC 6528,
    so the server can answer and check every segment without a TCB. ACK
    numbers that do not fit its own numbering are counted in
    ``seq_errors``.
    """

    def __init__(self, addr: IpAddress, port: int, secret: bytes, page_size: int = 1024):
        self.addr = addr
        self.port = port
        self.secret = secret
        self.page_size = page_size
        self.handshakes = 0
        self.requests = 0
        self.seq_errors = 0

    def isn(self, remote_ip: IpAddress, remote_port: int) -> int:
        digest = hashlib.blake2b(_ISN(remote_ip, remote_port, self.addr, self.port),
                                 digest_size=4, key=self.secret).digest()
        return int.from_bytes(digest, "big")

    def on_segment(self, seg: TcpSegment, now: SimTime) -> list:
        flags = seg.flags
        if flags & RST or seg.dst_ip != self.addr or seg.dst_port != self.port:
            return []
        isn = self.isn(seg.src_ip, seg.src_port)
        if flags & (SYN | ACK) == SYN:
            return [TcpSegment(self.addr, self.port, seg.src_ip, seg.src_port,
                               SYN | ACK, isn, (seg.seq + 1) & SEQ_MASK, 0)]
        if not flags & ACK:
            return []
        rel = (seg.ack - isn - 1) & SEQ_MASK
        if rel not in (0, self.page_size, self.page_size + 1):
            self.seq_errors += 1
            return []
        if seg.payload_len:
            if rel != 0:
                self.seq_errors += 1
                return []
            self.requests += 1
            return [TcpSegment(self.addr, self.port, seg.src_ip, seg.src_port, ACK,
                               (isn + 1) & SEQ_MASK,
                               (seg.seq + seg.payload_len) & SEQ_MASK, self.page_size)]
        if flags & FIN:
            return [TcpSegment(self.addr, self.port, seg.src_ip, seg.src_port,
                               FIN | ACK, seg.ack, (seg.seq + 1) & SEQ_MASK, 0)]
        if rel == 0:
            self.handshakes += 1
        return []

    def __repr__(self) -> str:
        return f"WebServer({ip_str(self.addr)}:{self.port})"
