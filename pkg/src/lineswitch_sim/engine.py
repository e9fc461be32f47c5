"""Deterministic discrete-event core.

One heap of :class:`Event` ordered by ``(at, seqno)``; ``seqno`` is handed
out at scheduling time so simultaneous events run in scheduling order.
A control link with no delay and no bandwidth limit is delivered inline:
packet-ins reach the controller queue, and controller replies reach the
switch, within the event that sent them.
Events scheduled for the current instant skip the heap and go to a FIFO:
anything already in the heap at that instant was scheduled earlier, so
draining the heap's ``now`` events first and then the FIFO is exactly
``(at, seqno)`` order.
Topology: client, attacker and server hosts each on one link to a single
switch, and the controller on its own control link.
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

from .controller import Controller
from .core import US_PER_S, IpAddress, SimTime, TcpSegment, to_seconds
from .of_switch import (ControllerReply, Emit, HandshakeReport, OFSwitch,
                        PacketIn, StartTimer)
from .traffic import Generator, LegitClient, WebServer

SEGMENT_ARRIVAL = 0
TIMER_EXPIRY = 1
CONTROLLER_SERVICE = 2
GENERATOR_WAKEUP = 3
CONTROL_MESSAGE = 4

KIND_NAMES = ("SegmentArrival", "TimerExpiry", "ControllerService",
              "GeneratorWakeup", "ControlMessage")

SWITCH = "switch"
CONTROLLER = "controller"


class SchedulingError(RuntimeError):
    """An event was scheduled before the current clock."""


class Event(NamedTuple):
    at: SimTime
    seqno: int
    kind: int
    payload: object


_tuple_new = tuple.__new__


class Link:
    """Full-duplex link; each direction is a FIFO with its own busy-until time.

    ``bandwidth`` is in Mbps (None means infinite), ``rtt`` in ms; the
    one-way propagation delay is rtt / 2.
    """

    def __init__(self, a: str, b: str, bandwidth: Optional[float] = None,
                 rtt: float = 0.0):
        if bandwidth is not None and bandwidth <= 0:
            raise ValueError("link bandwidth must be positive")
        if rtt < 0:
            raise ValueError("link rtt must be >= 0")
        self.endpoints = (a, b)
        self.bandwidth = bandwidth
        self.rtt = rtt
        self.one_way = int(round(rtt * 1000 / 2))
        self._busy_until = {a: 0, b: 0}
        self.bytes_sent = {a: 0, b: 0}

    def serialization(self, nbytes: int) -> int:
        if self.bandwidth is None:
            return 0
        return int(math.ceil(nbytes * 8 / self.bandwidth))

    def transmit(self, sender: str, nbytes: int, at: SimTime) -> SimTime:
        """Arrival time at the far end of a frame handed to the link at ``at``."""
        self.bytes_sent[sender] += nbytes
        if self.bandwidth is None:
            return at + self.one_way
        start = max(at, self._busy_until[sender])
        done = start + self.serialization(nbytes)
        self._busy_until[sender] = done
        return done + self.one_way


@dataclass
class Topology:
    client_ip: IpAddress
    attacker_ips: list[IpAddress]
    server_ip: IpAddress
    server_port: int
    switch_ips: list[IpAddress]
    links: dict[str, Link]
    control_link: Link

    HOSTS = ("client", "attacker", "server")

    def host_ports(self) -> dict[IpAddress, str]:
        ports = {self.client_ip: "client", self.server_ip: "server"}
        for addr in self.attacker_ips:
            ports[addr] = "attacker"
        return ports


@dataclass
class SimulationReport:
    saturation_time: Optional[float] = None
    buffer_saturation_time: Optional[float] = None
    controller_saturation_time: Optional[float] = None
    packet_ins: int = 0
    controller_drops: int = 0
    controller_processed: int = 0
    page_latencies: list = field(default_factory=list)
    pages_ok: int = 0
    pages_failed: int = 0
    retrieval_success_rate: Optional[float] = None
    peak_translation_entries: int = 0
    blacklist_events: int = 0
    syn_cookies: int = 0
    proxied_connections: int = 0
    migrations: int = 0
    buffer_refusals: int = 0
    ports_exhausted: int = 0
    seq_errors: int = 0
    end_time: float = 0.0
    events: int = 0

    @property
    def mean_page_latency(self) -> Optional[float]:
        if not self.page_latencies:
            return None
        return sum(self.page_latencies) / len(self.page_latencies)


class Simulation:
    """Wires hosts, switch and controller, and runs the event loop."""

    def __init__(self, topology: Topology, switch: OFSwitch, controller: Controller,
                 server: WebServer, generators: list[Generator],
                 saturation: str = "any", trace: bool = False):
        self.topology = topology
        self.switch = switch
        self.controller = controller
        self.server = server
        self.generators = list(generators)
        self.saturation = saturation
        self.now: SimTime = 0
        self.dispatched = 0
        self.packet_ins = 0
        self._heap: list[Event] = []
        self._now_q: deque = deque()
        self._seq = 0
        self._wakeup_version = [0] * len(self.generators)
        self._wakeup_at: list[Optional[SimTime]] = [None] * len(self.generators)
        self._exact_owner: dict[IpAddress, int] = {}
        self._range_owners: list[int] = []
        for idx, gen in enumerate(self.generators):
            addrs = gen.addresses()
            for addr in addrs:
                self._exact_owner[addr] = idx
            if not addrs:
                self._range_owners.append(idx)
        self.trace: Optional[list[str]] = [] if trace else None
        ctl = topology.control_link
        self._inline_control = ctl.bandwidth is None and ctl.one_way == 0
        handlers = {SEGMENT_ARRIVAL: self._on_segment, TIMER_EXPIRY: self._on_timer,
                    CONTROLLER_SERVICE: self._on_service,
                    GENERATOR_WAKEUP: self._on_wakeup, CONTROL_MESSAGE: self._on_control}
        self._handlers = tuple(handlers[k] for k in range(len(KIND_NAMES)))
        for idx in range(len(self.generators)):
            self._arm(idx)

    # scheduling

    def schedule(self, event: Event) -> None:
        if event.at < self.now:
            raise SchedulingError(f"event at {event.at} scheduled at clock {self.now}")
        heapq.heappush(self._heap, event)

    def _push(self, at: SimTime, kind: int, payload: object) -> None:
        now = self.now
        if at < now:
            raise SchedulingError(f"event at {at} scheduled at clock {now}")
        self._seq += 1
        ev = _tuple_new(Event, (at, self._seq, kind, payload))
        if at == now:
            self._now_q.append(ev)
        else:
            heapq.heappush(self._heap, ev)

    @property
    def pending(self) -> int:
        return len(self._heap) + len(self._now_q)

    def new_event(self, at: SimTime, kind: int, payload: object) -> Event:
        self._seq += 1
        return Event(at, self._seq, kind, payload)

    def _arm(self, idx: int) -> None:
        at = self.generators[idx].wakeup_at
        if at is None or at == self._wakeup_at[idx]:
            return
        self._wakeup_version[idx] += 1
        self._wakeup_at[idx] = at
        self._push(max(at, self.now), GENERATOR_WAKEUP, (idx, self._wakeup_version[idx]))

    # senders

    def _host_send(self, host: str, seg: TcpSegment, at: SimTime) -> None:
        arrival = self.topology.links[host].transmit(host, seg.wire_bytes(), at)
        self._push(arrival, SEGMENT_ARRIVAL, (SWITCH, host, seg))

    def _switch_actions(self, actions: list) -> None:
        now = self.now
        links = self.topology.links
        for act in actions:
            cls = type(act)
            if cls is Emit:
                link = links.get(act.port)
                if link is None:
                    continue
                seg = act.segment
                arrival = link.transmit(SWITCH, seg.wire_bytes(), now + act.delay)
                self._push(arrival, SEGMENT_ARRIVAL, (act.port, SWITCH, seg))
            elif cls is PacketIn:
                self.packet_ins += 1
                arrival = self.topology.control_link.transmit(
                    SWITCH, act.segment.wire_bytes(), now)
                if self._inline_control:
                    self._controller_receive(act)
                else:
                    self._push(arrival, CONTROL_MESSAGE, (CONTROLLER, act))
            elif cls is StartTimer:
                self._push(max(act.at, now), TIMER_EXPIRY, act.token)
            elif cls is HandshakeReport:
                arrival = self.topology.control_link.transmit(SWITCH, 64, now)
                if self._inline_control:
                    self._controller_receive(act)
                else:
                    self._push(arrival, CONTROL_MESSAGE, (CONTROLLER, act))
            else:
                raise TypeError(f"unknown switch action {act!r}")

    # dispatch

    def _dispatch(self, ev: Event) -> None:
        self._handlers[ev[2]](ev[3])

    def _on_segment(self, payload) -> None:
        node, port, seg = payload
        now = self.now
        if self.trace is not None:
            self.trace.append(f"{now} {node}<{port} {seg}")
        if node == SWITCH:
            self._switch_actions(self.switch.receive(seg, port, now))
        elif node == "server":
            for out in self.server.on_segment(seg, now):
                self._host_send("server", out, now)
        else:
            idx = self._exact_owner.get(seg.dst_ip)
            if idx is None:
                for cand in self._range_owners:
                    if self.generators[cand].owns(seg.dst_ip):
                        idx = cand
                        break
                else:
                    return
            gen = self.generators[idx]
            for at, out in gen.on_segment(seg, now):
                self._host_send(gen.host, out, at)
            self._arm(idx)

    def _on_wakeup(self, payload) -> None:
        idx, version = payload
        if version != self._wakeup_version[idx]:
            return
        self._wakeup_at[idx] = None
        gen = self.generators[idx]
        for at, out in gen.next_events(self.now):
            self._host_send(gen.host, out, at)
        self._arm(idx)

    def _on_control(self, payload) -> None:
        dest, msg = payload
        if dest == CONTROLLER:
            self._controller_receive(msg)
        else:
            self._switch_actions(self.switch.on_controller_reply(msg, self.now))

    def _on_service(self, payload) -> None:
        ctrl = self.controller
        now = self.now
        installs = ctrl.service_step(now)
        pin = ctrl.last_serviced
        if pin is not None:
            reply = ControllerReply(pin, tuple(installs))
            arrival = self.topology.control_link.transmit(
                CONTROLLER, 64 * max(1, len(installs)) + pin.segment.wire_bytes(), now)
            if self._inline_control:
                self._switch_actions(self.switch.on_controller_reply(reply, now))
            else:
                self._push(arrival, CONTROL_MESSAGE, (SWITCH, reply))
        if ctrl.queue:
            self._push(now + ctrl.service_time, CONTROLLER_SERVICE, None)

    def _on_timer(self, payload) -> None:
        self._switch_actions(self.switch.on_timer(payload, self.now))

    def _controller_receive(self, msg) -> None:
        ctrl = self.controller
        if type(msg) is HandshakeReport:
            ctrl.on_handshake_report(msg.flow, msg.ok, self.now)
            return
        idle = not ctrl.queue
        if ctrl.offer(msg, self.now) and idle:
            self._push(self.now + ctrl.service_time, CONTROLLER_SERVICE, None)

    def run_until(self, stop: Optional[float] = None,
                  predicate: Optional[Callable[["Simulation"], bool]] = None) -> SimulationReport:
        """Dispatch events until ``stop`` seconds, ``predicate`` holds, or the queue drains.

        Events stamped exactly at ``stop`` are still dispatched.
        """
        limit = None if stop is None else int(round(stop * US_PER_S))
        heap = self._heap
        now_q = self._now_q
        pop = heapq.heappop
        popleft = now_q.popleft
        handlers = self._handlers
        while True:
            if now_q and not (heap and heap[0].at == self.now):
                ev = popleft()
            elif heap:
                if limit is not None and heap[0].at > limit:
                    self.now = limit
                    break
                ev = pop(heap)
                self.now = ev.at
            else:
                if limit is not None and limit > self.now:
                    self.now = limit
                break
            handlers[ev[2]](ev[3])
            self.dispatched += 1
            if predicate is not None and predicate(self):
                break
        return self.report()

    # metrics

    def buffer_saturated_at(self) -> Optional[SimTime]:
        buf = getattr(self.switch, "buffer", None)
        return None if buf is None else buf.saturated_at

    def saturated_at(self) -> Optional[SimTime]:
        buf = self.buffer_saturated_at()
        ctrl = self.controller.saturated_at
        if self.saturation == "buffer":
            return buf
        if self.saturation == "controller":
            return ctrl
        times = [t for t in (buf, ctrl) if t is not None]
        return min(times) if times else None

    def report(self) -> SimulationReport:
        sw = self.switch
        ctrl = self.controller
        mig = getattr(sw, "migration", None)
        policy = getattr(sw, "policy", None)
        clients = [g for g in self.generators if isinstance(g, LegitClient)]
        latencies = [to_seconds(t) for g in clients for t in g.stats.latencies]
        ok = sum(g.stats.ok for g in clients)
        failed = sum(g.stats.failed for g in clients)
        sat = self.saturated_at()
        buf_sat = self.buffer_saturated_at()
        return SimulationReport(
            saturation_time=None if sat is None else to_seconds(sat),
            buffer_saturation_time=None if buf_sat is None else to_seconds(buf_sat),
            controller_saturation_time=(None if ctrl.saturated_at is None
                                        else to_seconds(ctrl.saturated_at)),
            packet_ins=self.packet_ins,
            controller_drops=ctrl.dropped_count,
            controller_processed=ctrl.processed_count,
            page_latencies=latencies,
            pages_ok=ok,
            pages_failed=failed,
            retrieval_success_rate=(ok / (ok + failed)) if ok + failed else None,
            peak_translation_entries=sw.buffer.peak if mig else 0,
            blacklist_events=policy.blacklist_events if policy else 0,
            syn_cookies=mig.syn_acks_sent if mig else 0,
            proxied_connections=mig.admitted if mig else 0,
            migrations=mig.migrations if mig else 0,
            buffer_refusals=mig.buffer_refusals if mig else 0,
            ports_exhausted=mig.ports_exhausted if mig else 0,
            seq_errors=self.server.seq_errors + sum(g.stats.seq_errors for g in clients),
            end_time=to_seconds(self.now),
            events=self.dispatched,
        )
