"""Finite-capacity control plane with learning-style forwarding."""

from __future__ import annotations

from collections import deque
from typing import Optional

from .core import US_PER_S, IpAddress, SimTime, TcpSegment, flow_key_of
from .of_switch import DROP, TABLE_MISS, FlowRule, Forward, PacketIn


class Controller:
    """FIFO of packet-ins served one at a time, each taking 1/service_rate.

    The engine calls :meth:`service_step` at every service completion; the
    packet-in at the head of the queue counts as queued until then.
    """

    def __init__(self, hosts: dict[IpAddress, str], service_rate: float = 2000.0,
                 queue_capacity: int = 10_000,
                 latency_threshold: Optional[float] = None):
        if service_rate <= 0:
            raise ValueError("service_rate must be positive")
        if queue_capacity < 1:
            raise ValueError("queue_capacity must be >= 1")
        self.service_rate = service_rate
        self.service_time = max(1, int(round(US_PER_S / service_rate)))
        self.queue_capacity = queue_capacity
        self.latency_threshold = latency_threshold
        self.queue: deque[PacketIn] = deque()
        self.learned: dict[IpAddress, str] = dict(hosts)
        self.enqueued_count = 0
        self.processed_count = 0
        self.dropped_count = 0
        self.handshake_reports = 0
        self.peak_queue = 0
        self.saturated_at: Optional[SimTime] = None
        self.last_serviced: Optional[PacketIn] = None

    def enqueue_packet_in(self, header: TcpSegment, from_switch: int, now: SimTime,
                          in_port: str = "", reason: str = TABLE_MISS) -> bool:
        return self.offer(PacketIn(header, from_switch, in_port, reason), now)

    def offer(self, pin: PacketIn, now: SimTime) -> bool:
        """Queue ``pin``, or drop it and return False when the queue is full."""
        queue = self.queue
        if len(queue) >= self.queue_capacity:
            self.dropped_count += 1
            if self.saturated_at is None:
                self.saturated_at = now
            return False
        queue.append(pin)
        self.enqueued_count += 1
        depth = len(queue)
        if depth > self.peak_queue:
            self.peak_queue = depth
        if (self.latency_threshold is not None and self.saturated_at is None
                and depth * self.service_time > self.latency_threshold * US_PER_S):
            self.saturated_at = now
        return True

    def service_step(self, now: SimTime) -> list[tuple[int, FlowRule]]:
        if not self.queue:
            self.last_serviced = None
            return []
        pin = self.queue.popleft()
        self.processed_count += 1
        self.last_serviced = pin
        seg = pin.segment
        learned = self.learned
        learned[seg.src_ip] = pin.in_port
        key = flow_key_of(seg)
        egress = learned.get(seg.dst_ip)
        if egress is None:
            return [(pin.switch_id, FlowRule(key, DROP, now))]
        return [(pin.switch_id, FlowRule(key, Forward(egress), now)),
                (pin.switch_id, FlowRule(key.reversed(), Forward(pin.in_port), now))]

    def on_handshake_report(self, flow, ok: bool, now: SimTime) -> None:
        self.handshake_reports += 1

    @property
    def queue_latency(self) -> float:
        """Seconds a packet-in enqueued now would wait before completion."""
        return len(self.queue) * self.service_time / US_PER_S
