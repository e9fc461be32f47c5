"""Shared vocabulary: addresses, TCP segments, flow keys and simulated time.

Addresses are plain 32-bit ints and time is integer microseconds, so every
value here is cheap to hash and compare inside the event loop.
"""

from __future__ import annotations

import ipaddress
from typing import NamedTuple

IpAddress = int
SimTime = int

FIN = 0x01
SYN = 0x02
RST = 0x04
ACK = 0x10

SEQ_MOD = 1 << 32
SEQ_MASK = SEQ_MOD - 1

US_PER_S = 1_000_000

_FLAG_NAMES = ((SYN, "S"), (ACK, "A"), (FIN, "F"), (RST, "R"))


def ip(text: str) -> IpAddress:
    """Parse dotted-quad text into an address."""
    return int(ipaddress.IPv4Address(text))


def ip_str(addr: IpAddress) -> str:
    return str(ipaddress.IPv4Address(addr))


def seq_add(a: int, b: int) -> int:
    return (a + b) & SEQ_MASK


def seq_sub(a: int, b: int) -> int:
    return (a - b) & SEQ_MASK


def seconds(value: float) -> SimTime:
    """Convert seconds to simulation microseconds (rounded)."""
    return int(round(value * US_PER_S))


def to_seconds(t: SimTime) -> float:
    return t / US_PER_S


def flags_str(flags: int) -> str:
    return "".join(name for bit, name in _FLAG_NAMES if flags & bit) or "."


class FlowKey(NamedTuple):
    """Directed TCP 4-tuple."""

    src_ip: IpAddress
    src_port: int
    dst_ip: IpAddress
    dst_port: int

    def reversed(self) -> FlowKey:
        return FlowKey(self.dst_ip, self.dst_port, self.src_ip, self.src_port)

    def __str__(self) -> str:
        return (f"{ip_str(self.src_ip)}:{self.src_port}>"
                f"{ip_str(self.dst_ip)}:{self.dst_port}")


class TcpSegment(NamedTuple):
    src_ip: IpAddress
    src_port: int
    dst_ip: IpAddress
    dst_port: int
    flags: int
    seq: int = 0
    ack: int = 0
    payload_len: int = 0

    @property
    def is_pure_syn(self) -> bool:
        return self.flags & (SYN | ACK) == SYN

    @property
    def is_syn_ack(self) -> bool:
        return self.flags & (SYN | ACK) == SYN | ACK

    def wire_bytes(self) -> int:
        # Ethernet + IPv4 + TCP headers, padded to the 64 B minimum frame.
        n = 54 + self.payload_len
        return n if n > 64 else 64

    def __str__(self) -> str:
        return (f"{ip_str(self.src_ip)}:{self.src_port}>"
                f"{ip_str(self.dst_ip)}:{self.dst_port} "
                f"[{flags_str(self.flags)}] seq={self.seq} ack={self.ack} "
                f"len={self.payload_len}")


_tuple_new = tuple.__new__


def flow_key_of(segment: TcpSegment) -> FlowKey:
    # Direct tuple construction; this runs several times per segment.
    return _tuple_new(FlowKey, segment[:4])
