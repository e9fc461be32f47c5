"""LineSwitch: proxy a source until it completes once, then only with probability p.

Sources whose proxied handshakes are left hanging get blacklisted for
``t_base * 2**k`` seconds, doubling on each further failure.

Only sources that have already completed a handshake get a
:class:`SourceRecord`. First-contact SYNs are answered with a stateless
cookie exactly like Avant-Guard, so a spoofed flood allocates nothing.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass
from typing import Optional

from .conn_migration import AvantGuardSwitch, MigrationConn
from .core import (ACK, RST, SYN, US_PER_S, FlowKey, IpAddress, SimTime,
                   TcpSegment, flow_key_of)
from .of_switch import StartTimer

RECORD_BYTES = 32

BLACKLIST_FIRST_T = "T"
BLACKLIST_FIRST_2T = "2T"


class Decision(enum.Enum):
    PROXY = "proxy"
    FORWARD = "forward"
    DROP = "drop"


@dataclass(frozen=True)
class LineSwitchConfig:
    p_proxy: float = 0.05
    t_base: float = 5.0
    rng_seed: int = 0
    handshake_timeout: float = 3.0
    blacklist_enabled: bool = True
    blacklist_first: str = BLACKLIST_FIRST_T
    idle_horizon: float = 30.0
    gc_interval: Optional[float] = 10.0

    def __post_init__(self):
        if not 0.0 < self.p_proxy <= 1.0:
            raise ValueError(f"p_proxy must be in (0, 1], got {self.p_proxy}")
        if self.t_base <= 0:
            raise ValueError(f"t_base must be > 0, got {self.t_base}")
        if self.handshake_timeout <= 0:
            raise ValueError("handshake_timeout must be > 0")
        if self.blacklist_first not in (BLACKLIST_FIRST_T, BLACKLIST_FIRST_2T):
            raise ValueError("blacklist_first must be 'T' or '2T'")


@dataclass
class SourceRecord:
    ip: IpAddress
    completed_once: bool = False
    fail_count: int = 0
    blacklist_until: Optional[SimTime] = None
    last_seen: SimTime = 0
    live: int = 0


class LineSwitchPolicy:
    def __init__(self, config: LineSwitchConfig, rng: Optional[random.Random] = None):
        self.config = config
        self.rng = rng if rng is not None else random.Random(config.rng_seed)
        self.records: dict[IpAddress, SourceRecord] = {}
        self.blacklist_events = 0
        self.proxied = 0
        self.forwarded = 0
        self.dropped = 0
        self.peak_records = 0

    @property
    def memory_bytes(self) -> int:
        return len(self.records) * RECORD_BYTES

    def classify_syn(self, src: IpAddress, now: SimTime,
                     rng: Optional[random.Random] = None) -> Decision:
        rec = self.records.get(src)
        if rec is None:
            self.proxied += 1
            return Decision.PROXY
        rec.last_seen = now
        if rec.blacklist_until is not None and now < rec.blacklist_until:
            self.dropped += 1
            return Decision.DROP
        if not rec.completed_once:
            self.proxied += 1
            return Decision.PROXY
        if (rng or self.rng).random() < self.config.p_proxy:
            self.proxied += 1
            return Decision.PROXY
        self.forwarded += 1
        return Decision.FORWARD

    def record(self, src: IpAddress, now: SimTime) -> SourceRecord:
        rec = self.records.get(src)
        if rec is None:
            rec = self.records[src] = SourceRecord(src, last_seen=now)
            if len(self.records) > self.peak_records:
                self.peak_records = len(self.records)
        return rec

    def on_handshake_complete(self, src: IpAddress, now: SimTime = 0) -> None:
        rec = self.record(src, now)
        rec.completed_once = True
        rec.last_seen = now

    def blacklist_duration(self, fail_count: int) -> float:
        exponent = fail_count - 1 if self.config.blacklist_first == BLACKLIST_FIRST_T else fail_count
        return self.config.t_base * (2 ** exponent)

    def on_handshake_failed(self, src: IpAddress, now: SimTime) -> float:
        rec = self.record(src, now)
        rec.fail_count += 1
        duration = self.blacklist_duration(rec.fail_count)
        rec.blacklist_until = now + int(round(duration * US_PER_S))
        rec.last_seen = now
        self.blacklist_events += 1
        return duration

    def gc_expired(self, now: SimTime) -> int:
        horizon = int(round(self.config.idle_horizon * US_PER_S))
        stale = [ip for ip, rec in self.records.items()
                 if rec.live == 0
                 and (rec.blacklist_until is None or rec.blacklist_until <= now)
                 and now - rec.last_seen >= horizon]
        for addr in stale:
            del self.records[addr]
        return len(stale)


_GC = "gc"


class LineSwitch(AvantGuardSwitch):
    """Avant-Guard machinery, entered only for SYNs the policy chooses to proxy.

    Forwarded SYNs take the ordinary pipeline and reach the controller on a
    table miss.
    """

    def __init__(self, hosts, client_ports, *, config: LineSwitchConfig,
                 rng: Optional[random.Random] = None, **kwargs):
        super().__init__(hosts, client_ports, **kwargs)
        self.policy = LineSwitchPolicy(config, rng)
        self.config = config
        self._timeout = int(round(config.handshake_timeout * US_PER_S))
        self._pending: dict[FlowKey, IpAddress] = {}
        self._gc_armed = False
        self._gc_request: Optional[SimTime] = None
        self.gc_removed = 0
        mig = self.migration
        mig.on_validated = self._validated
        mig.on_admitted = self._admitted
        mig.on_closed = self._closed

    def receive(self, segment: TcpSegment, in_port: str, now: SimTime) -> list:
        if in_port not in self.client_ports:
            return super().receive(segment, in_port, now)
        actions = self._client(segment, in_port, now)
        if self._gc_request is not None:
            actions.append(StartTimer(self._gc_request, _GC))
            self._gc_request = None
        return actions

    def _client(self, segment: TcpSegment, in_port: str, now: SimTime) -> list:
        key = flow_key_of(segment)
        mig = self.migration
        if key in mig.conns:
            return mig.on_client_segment(segment, now, in_port)
        flags = segment.flags
        if flags & (SYN | ACK) == SYN:
            decision = self.policy.classify_syn(segment.src_ip, now)
            if decision is Decision.FORWARD:
                return self.pipeline(segment, in_port, now)
            if decision is Decision.DROP:
                return []
            actions = mig.answer_syn(segment, key, now, in_port)
            return self._watch(segment.src_ip, key, now, actions)
        if flags & ACK and not flags & (SYN | RST) and key not in self.table.rules:
            actions = mig.try_complete(segment, key, now, in_port)
            if actions is not None:
                return actions
        return self.pipeline(segment, in_port, now)

    def _watch(self, src: IpAddress, key: FlowKey, now: SimTime, actions: list) -> list:
        if not self.config.blacklist_enabled:
            return actions
        rec = self.policy.records.get(src)
        if rec is None or key in self._pending:
            return actions
        self._pending[key] = src
        rec.live += 1
        actions.append(StartTimer(now + self._timeout, key))
        return actions

    def _validated(self, key: FlowKey, now: SimTime) -> None:
        src = self._pending.pop(key, None)
        if src is not None:
            self.policy.records[src].live -= 1
        self.policy.on_handshake_complete(key.src_ip, now)
        if (not self._gc_armed and self.config.gc_interval
                and self.config.blacklist_enabled):
            self._gc_armed = True
            self._gc_request = now + int(round(self.config.gc_interval * US_PER_S))

    def _admitted(self, conn: MigrationConn) -> None:
        rec = self.policy.records.get(conn.flow.src_ip)
        if rec is not None:
            rec.live += 1

    def _closed(self, conn: MigrationConn) -> None:
        rec = self.policy.records.get(conn.flow.src_ip)
        if rec is not None and rec.live > 0:
            rec.live -= 1

    def on_timer(self, token, now: SimTime) -> list:
        if token == _GC:
            self.gc_removed += self.policy.gc_expired(now)
            if self.policy.records:
                return [StartTimer(now + int(round(self.config.gc_interval * US_PER_S)), _GC)]
            self._gc_armed = False
            return []
        src = self._pending.pop(token, None)
        if src is not None:
            rec = self.policy.records.get(src)
            if rec is not None:
                rec.live -= 1
            self.policy.on_handshake_failed(src, now)
        return []
