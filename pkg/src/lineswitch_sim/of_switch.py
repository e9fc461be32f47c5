"""Undefended OpenFlow-style switch: one exact-match table, misses go to the controller."""

from __future__ import annotations

from typing import NamedTuple, Optional, Union

from .core import FlowKey, IpAddress, SimTime, TcpSegment, flow_key_of

TABLE_MISS = "table_miss"
MIGRATION = "migration"


class Forward(NamedTuple):
    egress: str


class _Drop(NamedTuple):
    def __repr__(self) -> str:
        return "Drop"


DROP = _Drop()
RuleAction = Union[Forward, _Drop]


class FlowRule(NamedTuple):
    match: FlowKey
    action: RuleAction
    install_time: SimTime = 0


# Switch -> engine actions.

class Emit(NamedTuple):
    """Send ``segment`` out of ``port`` after ``delay`` microseconds."""
    port: str
    segment: TcpSegment
    delay: int = 0


class PacketIn(NamedTuple):
    segment: TcpSegment
    switch_id: int
    in_port: str
    reason: str = TABLE_MISS


class HandshakeReport(NamedTuple):
    flow: FlowKey
    ok: bool


class StartTimer(NamedTuple):
    at: SimTime
    token: object


class ControllerReply(NamedTuple):
    """What the controller sends back after servicing one packet-in."""
    packet_in: PacketIn
    installs: tuple


# process_segment outcomes.

class Forwarded(NamedTuple):
    egress: str


class PacketInSent(NamedTuple):
    packet_in: PacketIn


class Dropped(NamedTuple):
    pass


class FlowTable:
    def __init__(self, capacity: int = 100_000):
        if capacity < 1:
            raise ValueError("flow table capacity must be >= 1")
        self.capacity = capacity
        self.rules: dict[FlowKey, FlowRule] = {}

    def __len__(self) -> int:
        return len(self.rules)

    def lookup(self, key: FlowKey) -> Optional[FlowRule]:
        return self.rules.get(key)

    def install(self, rule: FlowRule) -> bool:
        rules = self.rules
        if rule.match not in rules and len(rules) >= self.capacity:
            return False
        rules[rule.match] = rule
        return True


class OFSwitch:
    """Vanilla data plane.

    ``hosts`` maps the addresses of directly attached hosts to their port
    name; it is only used to route segments the switch originates itself.
    """

    def __init__(self, hosts: dict[IpAddress, str], switch_id: int = 0,
                 table_capacity: int = 100_000):
        self.switch_id = switch_id
        self.hosts = dict(hosts)
        self.table = FlowTable(table_capacity)
        self.packet_ins = 0
        self.table_rejects = 0

    def process_segment(self, segment: TcpSegment, now: SimTime,
                        in_port: str = "") -> Union[Forwarded, PacketInSent, Dropped]:
        rule = self.table.rules.get(flow_key_of(segment))
        if rule is None:
            self.packet_ins += 1
            return PacketInSent(PacketIn(segment, self.switch_id, in_port, TABLE_MISS))
        action = rule.action
        if action is DROP:
            return Dropped()
        return Forwarded(action.egress)

    def install_rule(self, rule: FlowRule) -> bool:
        accepted = self.table.install(rule)
        if not accepted:
            self.table_rejects += 1
        return accepted

    def pipeline(self, segment: TcpSegment, in_port: str, now: SimTime) -> list:
        outcome = self.process_segment(segment, now, in_port)
        if type(outcome) is Forwarded:
            return [Emit(outcome.egress, segment)]
        if type(outcome) is PacketInSent:
            return [outcome.packet_in]
        return []

    # Engine entry points; defended switches override these.

    def receive(self, segment: TcpSegment, in_port: str, now: SimTime) -> list:
        return self.pipeline(segment, in_port, now)

    def on_controller_reply(self, reply: ControllerReply, now: SimTime) -> list:
        out_rule = None
        key = flow_key_of(reply.packet_in.segment)
        for _, rule in reply.installs:
            self.install_rule(rule)
            if rule.match == key:
                out_rule = rule
        # Packet-out: the buffered header leaves even if the table was full.
        if out_rule is not None and out_rule.action is not DROP:
            return [Emit(out_rule.action.egress, reply.packet_in.segment)]
        return []

    def on_timer(self, token: object, now: SimTime) -> list:
        return []
