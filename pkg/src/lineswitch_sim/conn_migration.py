"""Avant-Guard style connection migration.

The switch answers every SYN with a cookie SYN-ACK spoofed from the
destination, reports cookie-valid handshakes to the controller, opens its own
handshake to the server from one of its addresses, then relays the two halves
with sequence/ACK translation.

Per-connection state begins at cookie validation and is accounted against a
fixed-size translation buffer; the switch side of each migrated connection
also consumes one port per destination. Both are finite and both can be
exhausted by an attacker that completes handshakes.
"""

from __future__ import annotations

import enum
import heapq
from dataclasses import dataclass, field
from typing import Callable, Optional

from .core import (ACK, FIN, RST, SEQ_MASK, SYN, FlowKey, IpAddress, SimTime,
                   TcpSegment, flow_key_of)
from .of_switch import (DROP, MIGRATION, ControllerReply, Emit, HandshakeReport,
                        OFSwitch, PacketIn)
from .syn_cookie import CookieKey, issue_cookie, validate_cookie

FIRST_PORT = 1024
LAST_PORT = 65535
PORTS_PER_ADDRESS = LAST_PORT - FIRST_PORT + 1  # 2**16 - 1024 == 64512

DEFAULT_ENTRY_BYTES = 72

CLIENT_TO_SERVER = "c2s"
SERVER_TO_CLIENT = "s2c"


class PortsExhausted(Exception):
    """No switch address has a free port toward the destination."""


class Phase(enum.Enum):
    CLASSIFICATION = "classification"
    REPORT = "report"
    MIGRATION = "migration"
    RELAY = "relay"
    CLOSED = "closed"


@dataclass(frozen=True)
class TranslationEntry:
    ip_src: IpAddress
    port_src: int
    switch_ip: IpAddress
    port_r: int
    delta_seq: int
    dest: tuple[IpAddress, int]
    created: SimTime = 0


class TranslationBuffer:
    """Byte-accounted store of per-connection proxy state.

    A slot is taken at cookie validation (a reservation) and becomes a
    :class:`TranslationEntry` once the server handshake finishes; both count
    the same ``entry_bytes``.
    """

    def __init__(self, capacity_bytes: int, entry_bytes: int = DEFAULT_ENTRY_BYTES):
        if entry_bytes <= 0 or capacity_bytes < 0:
            raise ValueError("buffer sizes must be positive")
        self.capacity_bytes = capacity_bytes
        self.entry_bytes = entry_bytes
        self.slots = capacity_bytes // entry_bytes
        self.used = 0
        self.peak = 0
        self.entries: dict[FlowKey, TranslationEntry] = {}
        self.saturated_at: Optional[SimTime] = None

    @property
    def used_bytes(self) -> int:
        return self.used * self.entry_bytes

    def is_full(self) -> bool:
        return self.used >= self.slots

    def reserve(self, now: SimTime) -> bool:
        if self.used >= self.slots:
            return False
        self.used += 1
        if self.used > self.peak:
            self.peak = self.used
        if self.used >= self.slots and self.saturated_at is None:
            self.saturated_at = now
        return True

    def commit(self, client_flow: FlowKey, entry: TranslationEntry) -> None:
        """Turn an existing reservation into a live entry."""
        self.entries[client_flow] = entry

    def release(self, client_flow: Optional[FlowKey] = None) -> None:
        if client_flow is not None:
            self.entries.pop(client_flow, None)
        if self.used <= 0:
            raise RuntimeError("release without reservation")
        self.used -= 1


class _AddressPool:
    __slots__ = ("next_port", "released", "busy")

    def __init__(self):
        self.next_port = FIRST_PORT
        self.released: list[int] = []
        self.busy: set[int] = set()


class PortAllocator:
    """Switch-side ports per destination, over one or more switch addresses.

    Addresses are used in order; the next one is only touched once every
    port of the previous one is busy toward that destination.
    """

    def __init__(self, switch_addresses: list[IpAddress]):
        if not switch_addresses:
            raise ValueError("at least one switch address is required")
        self.switch_addresses = list(switch_addresses)
        self._pools: dict[tuple[IpAddress, int], list[_AddressPool]] = {}

    def _pools_for(self, dest):
        pools = self._pools.get(dest)
        if pools is None:
            pools = [_AddressPool() for _ in self.switch_addresses]
            self._pools[dest] = pools
        return pools

    def allocate_port(self, dest: tuple[IpAddress, int]) -> tuple[IpAddress, int]:
        for addr, pool in zip(self.switch_addresses, self._pools_for(dest)):
            if pool.released:
                port = heapq.heappop(pool.released)
            elif pool.next_port <= LAST_PORT:
                port = pool.next_port
                pool.next_port += 1
            else:
                continue
            pool.busy.add(port)
            return addr, port
        raise PortsExhausted(dest)

    def release(self, dest: tuple[IpAddress, int], addr: IpAddress, port: int) -> None:
        pool = self._pools_for(dest)[self.switch_addresses.index(addr)]
        pool.busy.remove(port)
        heapq.heappush(pool.released, port)

    def in_use(self, dest: tuple[IpAddress, int]) -> int:
        return sum(len(p.busy) for p in self._pools.get(dest, ()))

    @property
    def capacity_per_destination(self) -> int:
        return PORTS_PER_ADDRESS * len(self.switch_addresses)


@dataclass(eq=False)
class MigrationConn:
    flow: FlowKey
    client_port: str
    cookie: int
    isn_a: int
    phase: Phase = Phase.REPORT
    reported: bool = False
    switch_ip: IpAddress = 0
    port_r: int = 0
    entry: Optional[TranslationEntry] = None
    pending: list = field(default_factory=list)
    fin_client: bool = False
    fin_server: bool = False

    @property
    def dest(self) -> tuple[IpAddress, int]:
        return self.flow.dst_ip, self.flow.dst_port


def translate(segment: TcpSegment, entry: TranslationEntry, direction: str) -> TcpSegment:
    """Rewrite a relayed segment for the other half of the connection."""
    if direction == CLIENT_TO_SERVER:
        return segment._replace(src_ip=entry.switch_ip, src_port=entry.port_r,
                                ack=(segment.ack - entry.delta_seq) & SEQ_MASK)
    return segment._replace(dst_ip=entry.ip_src, dst_port=entry.port_src,
                            seq=(segment.seq + entry.delta_seq) & SEQ_MASK)


class ConnectionMigration:
    """The proxy agent inside a defended switch.

    Returns lists of engine actions (:class:`Emit`, :class:`PacketIn`,
    :class:`HandshakeReport`). ``hosts`` maps attached addresses to ports and
    is used to reach the destination server.
    """

    def __init__(self, cookie_key: CookieKey, buffer: TranslationBuffer,
                 ports: PortAllocator, hosts: dict[IpAddress, str], *,
                 switch_id: int = 0, delayed: bool = False, proxy_delay: int = 0):
        self.cookie_key = cookie_key
        self.buffer = buffer
        self.ports = ports
        self.hosts = hosts
        self.switch_id = switch_id
        self.delayed = delayed
        self.proxy_delay = proxy_delay
        self.conns: dict[FlowKey, MigrationConn] = {}
        self._by_server: dict[tuple, MigrationConn] = {}
        self.on_validated: Optional[Callable[[FlowKey, SimTime], None]] = None
        self.on_admitted: Optional[Callable[[MigrationConn], None]] = None
        self.on_closed: Optional[Callable[[MigrationConn], None]] = None

        self.syn_acks_sent = 0
        self.validated = 0
        self.admitted = 0
        self.buffer_refusals = 0
        self.ports_exhausted = 0
        self.migrations = 0
        self.relays = 0
        self.closed = 0
        self.dropped = 0

    # client side

    def on_client_segment(self, segment: TcpSegment, now: SimTime,
                          in_port: str = "") -> list:
        key = flow_key_of(segment)
        conn = self.conns.get(key)
        if conn is not None:
            return self._client_known(conn, segment, now)
        flags = segment.flags
        if flags & (SYN | ACK) == SYN:
            return self.answer_syn(segment, key, now, in_port)
        if flags & ACK and not flags & (SYN | RST):
            actions = self.try_complete(segment, key, now, in_port)
            if actions is not None:
                return actions
        self.dropped += 1
        return []

    def answer_syn(self, segment: TcpSegment, key: FlowKey, now: SimTime,
                   in_port: str) -> list:
        cookie = issue_cookie(self.cookie_key, key, now)
        self.syn_acks_sent += 1
        reply = TcpSegment(segment.dst_ip, segment.dst_port, segment.src_ip,
                           segment.src_port, SYN | ACK, cookie,
                           (segment.seq + 1) & SEQ_MASK, 0)
        return [Emit(in_port, reply, self.proxy_delay)]

    def try_complete(self, segment: TcpSegment, key: FlowKey, now: SimTime,
                     in_port: str) -> Optional[list]:
        """Handle a possible cookie echo; None if the cookie does not validate."""
        cookie = (segment.ack - 1) & SEQ_MASK
        if not validate_cookie(self.cookie_key, key, cookie, now):
            return None
        self.validated += 1
        if self.on_validated is not None:
            self.on_validated(key, now)
        if not self.buffer.reserve(now):
            self.buffer_refusals += 1
            return [Emit(in_port, self._rst_to_client(key, segment.ack), self.proxy_delay)]
        conn = MigrationConn(key, in_port, cookie, (segment.seq - 1) & SEQ_MASK)
        self.conns[key] = conn
        self.admitted += 1
        if self.on_admitted is not None:
            self.on_admitted(conn)
        if segment.payload_len or segment.flags & FIN:
            conn.pending.append(segment)
        if self.delayed and not conn.pending:
            return []
        return [self._report(conn)]

    def _report(self, conn: MigrationConn) -> PacketIn:
        conn.reported = True
        header = conn.pending[0] if conn.pending else TcpSegment(*conn.flow, ACK)
        return PacketIn(header, self.switch_id, conn.client_port, MIGRATION)

    def _client_known(self, conn: MigrationConn, segment: TcpSegment,
                      now: SimTime) -> list:
        if conn.phase is Phase.RELAY:
            return self._relay_from_client(conn, segment, now)
        if segment.flags & RST:
            self._close(conn, now)
            return []
        if segment.payload_len or segment.flags & FIN:
            conn.pending.append(segment)
            if not conn.reported:
                return [self._report(conn)]
        return []

    def _relay_from_client(self, conn: MigrationConn, segment: TcpSegment,
                           now: SimTime) -> list:
        out = translate(segment, conn.entry, CLIENT_TO_SERVER)
        server_port = self.hosts.get(segment.dst_ip, "")
        actions = [Emit(server_port, out, self.proxy_delay)]
        flags = segment.flags
        if flags & RST:
            self._close(conn, now)
        elif flags & FIN:
            conn.fin_client = True
        elif conn.fin_client and conn.fin_server and flags & ACK:
            self._close(conn, now)
        return actions

    # controller side

    def on_controller_verdict(self, flow: FlowKey, allow: bool, now: SimTime) -> list:
        conn = self.conns.get(flow)
        if conn is None or conn.phase is not Phase.REPORT:
            return []
        if not allow:
            return self._refuse(conn, now)
        try:
            switch_ip, port_r = self.ports.allocate_port(conn.dest)
        except PortsExhausted:
            self.ports_exhausted += 1
            return self._refuse(conn, now)
        conn.switch_ip, conn.port_r = switch_ip, port_r
        conn.phase = Phase.MIGRATION
        self._by_server[(switch_ip, port_r, flow.dst_ip, flow.dst_port)] = conn
        self.migrations += 1
        syn = TcpSegment(switch_ip, port_r, flow.dst_ip, flow.dst_port, SYN,
                         conn.isn_a, 0, 0)
        return [Emit(self.hosts.get(flow.dst_ip, ""), syn, self.proxy_delay)]

    def _refuse(self, conn: MigrationConn, now: SimTime) -> list:
        self._close(conn, now)
        return [Emit(conn.client_port,
                     self._rst_to_client(conn.flow, (conn.cookie + 1) & SEQ_MASK),
                     self.proxy_delay)]

    # server side

    def on_server_segment(self, segment: TcpSegment, now: SimTime) -> list:
        conn = self._by_server.get((segment.dst_ip, segment.dst_port,
                                    segment.src_ip, segment.src_port))
        if conn is None:
            self.dropped += 1
            return []
        flags = segment.flags
        if conn.phase is Phase.MIGRATION:
            if flags & RST:
                return self._refuse(conn, now)
            if flags & (SYN | ACK) != SYN | ACK:
                return []
            return self._finish_migration(conn, segment, now)
        if conn.phase is not Phase.RELAY:
            return []
        out = translate(segment, conn.entry, SERVER_TO_CLIENT)
        actions = [Emit(conn.client_port, out, self.proxy_delay)]
        if flags & RST:
            self._close(conn, now)
        elif flags & FIN:
            conn.fin_server = True
        elif conn.fin_client and conn.fin_server and flags & ACK:
            self._close(conn, now)
        return actions

    def _finish_migration(self, conn: MigrationConn, segment: TcpSegment,
                          now: SimTime) -> list:
        flow = conn.flow
        isn_b = segment.seq
        entry = TranslationEntry(flow.src_ip, flow.src_port, conn.switch_ip,
                                 conn.port_r, (conn.cookie - isn_b) & SEQ_MASK,
                                 conn.dest, now)
        conn.entry = entry
        self.buffer.commit(flow, entry)
        conn.phase = Phase.RELAY
        self.relays += 1
        server_port = self.hosts.get(flow.dst_ip, "")
        final_ack = TcpSegment(conn.switch_ip, conn.port_r, flow.dst_ip, flow.dst_port,
                               ACK, (conn.isn_a + 1) & SEQ_MASK,
                               (isn_b + 1) & SEQ_MASK, 0)
        actions: list = [Emit(server_port, final_ack, self.proxy_delay),
                         HandshakeReport(flow, True)]
        pending, conn.pending = conn.pending, []
        for held in pending:
            actions.extend(self._relay_from_client(conn, held, now))
        return actions

    def _rst_to_client(self, flow: FlowKey, seq: int) -> TcpSegment:
        return TcpSegment(flow.dst_ip, flow.dst_port, flow.src_ip, flow.src_port,
                          RST, seq, 0, 0)

    def _close(self, conn: MigrationConn, now: SimTime) -> None:
        if conn.phase is Phase.CLOSED:
            return
        if conn.port_r:
            self._by_server.pop((conn.switch_ip, conn.port_r) + conn.dest, None)
            self.ports.release(conn.dest, conn.switch_ip, conn.port_r)
        self.buffer.release(conn.flow)
        del self.conns[conn.flow]
        conn.phase = Phase.CLOSED
        self.closed += 1
        if self.on_closed is not None:
            self.on_closed(conn)


class AvantGuardSwitch(OFSwitch):
    """Switch whose client-facing ports are fronted by connection migration."""

    def __init__(self, hosts: dict[IpAddress, str], client_ports, *,
                 cookie_key: CookieKey, buffer: TranslationBuffer,
                 switch_addresses: list[IpAddress], switch_id: int = 0,
                 table_capacity: int = 100_000, delayed: bool = False,
                 proxy_delay: int = 0):
        super().__init__(hosts, switch_id, table_capacity)
        self.client_ports = frozenset(client_ports)
        self.switch_addresses = frozenset(switch_addresses)
        self.migration = ConnectionMigration(
            cookie_key, buffer, PortAllocator(switch_addresses), self.hosts,
            switch_id=switch_id, delayed=delayed, proxy_delay=proxy_delay)

    @property
    def buffer(self) -> TranslationBuffer:
        return self.migration.buffer

    def receive(self, segment: TcpSegment, in_port: str, now: SimTime) -> list:
        if in_port in self.client_ports:
            return self.migration.on_client_segment(segment, now, in_port)
        if segment.dst_ip in self.switch_addresses:
            return self.migration.on_server_segment(segment, now)
        return self.pipeline(segment, in_port, now)

    def on_controller_reply(self, reply: ControllerReply, now: SimTime) -> list:
        pin = reply.packet_in
        if pin.reason != MIGRATION:
            return super().on_controller_reply(reply, now)
        flow = flow_key_of(pin.segment)
        allow = any(rule.match == flow and rule.action is not DROP
                    for _, rule in reply.installs)
        return self.migration.on_controller_verdict(flow, allow, now)
