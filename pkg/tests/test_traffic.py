import random

import pytest

from lineswitch_sim.core import ACK, FIN, RST, SEQ_MASK, SYN, US_PER_S, TcpSegment, ip
from lineswitch_sim.traffic import (BUFFER_SATURATION, LEGIT, PORT_EXHAUSTION,
                                    SPOOFED_SYN_FLOOD, LegitClient, WebServer, WorkloadSpec,
                                    bandwidth_to_conn_rate, make_generator, next_events,
                                    syn_rate)

SERVER = ip("10.0.0.3")
ATTACKER = ip("10.0.0.2")
DST = (SERVER, 80)


def drain(gen, until):
    out = []
    while gen.wakeup_at is not None and gen.wakeup_at <= until:
        out.extend(next_events(gen, gen.wakeup_at))
    return out


def test_rate_conversions():
    assert bandwidth_to_conn_rate(1) == 780
    assert bandwidth_to_conn_rate(5) == 3900
    assert bandwidth_to_conn_rate(0.5) == 390
    assert syn_rate(6.5) == pytest.approx(6.5e6 / 512)
    with pytest.raises(ValueError):
        bandwidth_to_conn_rate(0)


def test_spec_validation():
    with pytest.raises(ValueError):
        WorkloadSpec("nonsense")
    with pytest.raises(ValueError):
        WorkloadSpec(LEGIT, rate=0)
    with pytest.raises(ValueError):
        WorkloadSpec(LEGIT, start=5, stop=1)
    with pytest.raises(ValueError):
        WorkloadSpec(LEGIT, unit="pps")


def test_sources_accept_cidr_and_lists():
    assert WorkloadSpec(BUFFER_SATURATION, src="10.0.0.2, 10.0.0.9").sources() == [
        ATTACKER, ip("10.0.0.9")]
    assert len(WorkloadSpec(BUFFER_SATURATION, src="10.0.1.0/24").sources()) == 256


def test_buffer_saturation_one_second_is_780_distinct_syns():
    spec = WorkloadSpec(BUFFER_SATURATION, rate=1.0, src="10.0.0.2", dst=DST)
    gen = make_generator(spec, random.Random(1))
    segs = [s for t, s in drain(gen, US_PER_S - 1)]
    assert len(segs) == 780
    assert all(s.flags == SYN and s.src_ip == ATTACKER for s in segs)
    assert len({s.src_port for s in segs}) == 780


def test_ticker_has_no_drift():
    spec = WorkloadSpec(BUFFER_SATURATION, rate=3.0, unit="cps", src="10.0.0.2", dst=DST)
    gen = make_generator(spec, random.Random(1))
    times = [t for t, _ in drain(gen, 10 * US_PER_S)]
    assert len(times) == 31
    assert times[30] == 10 * US_PER_S
    assert times[1] == 333_333 and times[2] == 666_667


def test_completing_flood_rotates_addresses_after_port_space():
    spec = WorkloadSpec(BUFFER_SATURATION, rate=100_000, unit="cps",
                        src="10.0.1.0,10.0.1.1", dst=DST)
    gen = make_generator(spec, random.Random(1))
    segs = [s for _, s in drain(gen, 700_000)]
    keys = {(s.src_ip, s.src_port) for s in segs}
    assert len(keys) == len(segs) == 70_001
    assert segs[65535].src_ip == ip("10.0.1.1") and segs[65535].src_port == 1


def test_completing_flood_is_a_stateless_responder():
    spec = WorkloadSpec(BUFFER_SATURATION, src="10.0.0.2", dst=DST)
    gen = make_generator(spec, random.Random(1))
    synack = TcpSegment(SERVER, 80, ATTACKER, 1, SYN | ACK, 5000, 78)
    [(t, ack)] = gen.on_segment(synack, 9)
    assert (ack.flags, ack.seq, ack.ack) == (ACK, 78, 5001)
    assert (ack.dst_ip, ack.dst_port, ack.src_port) == (SERVER, 80, 1)
    assert gen.on_segment(synack._replace(flags=RST), 10) == []
    assert gen.established == 1 and gen.refused == 1


def test_port_exhaustion_hold_closes_later():
    spec = WorkloadSpec(PORT_EXHAUSTION, src="10.0.0.2", dst=DST, hold=2.0)
    gen = make_generator(spec, random.Random(1))
    gen.on_segment(TcpSegment(SERVER, 80, ATTACKER, 1, SYN | ACK, 5000, 78), 0)
    out = drain(gen, 2 * US_PER_S)
    fins = [s for _, s in out if s.flags & FIN]
    assert len(fins) == 1 and fins[0].src_port == 1


def test_spoofed_flood_rate_and_sources():
    spec = WorkloadSpec(SPOOFED_SYN_FLOOD, rate=1.0, src="11.0.0.0/8", dst=DST)
    gen = make_generator(spec, random.Random(5))
    segs = [s for _, s in drain(gen, US_PER_S - 1)]
    # one SYN every 512 us, counting the one at t = 0
    assert len(segs) == (US_PER_S - 1) // 512 + 1
    assert all(gen.owns(s.src_ip) and s.flags == SYN for s in segs)
    assert len({s.src_ip for s in segs}) > len(segs) - 5


def test_generators_are_deterministic():
    spec = WorkloadSpec(SPOOFED_SYN_FLOOD, rate=1.0, src="11.0.0.0/8", dst=DST)
    a = drain(make_generator(spec, random.Random(9)), US_PER_S)
    b = drain(make_generator(spec, random.Random(9)), US_PER_S)
    c = drain(make_generator(spec, random.Random(10)), US_PER_S)
    assert a == b and a != c


def test_legit_client_fetches_one_page():
    client_ip = ip("10.0.0.1")
    spec = WorkloadSpec(LEGIT, rate=1, unit="cps", src="10.0.0.1", dst=DST)
    client = LegitClient(spec, random.Random(2))
    server = WebServer(SERVER, 80, b"s" * 16)
    [(t0, syn)] = next_events(client, 0)
    assert syn.flags == SYN and syn.src_ip == client_ip
    skeleton = []
    wire = [syn]
    while wire:
        seg = wire.pop(0)
        skeleton.append(("c>s" if seg.src_ip == client_ip else "s>c", seg.flags, seg.payload_len))
        if seg.src_ip == client_ip:
            wire.extend(server.on_segment(seg, 5))
        else:
            wire.extend(s for _, s in client.on_segment(seg, 5))
    assert skeleton == [("c>s", SYN, 0), ("s>c", SYN | ACK, 0), ("c>s", ACK, 0),
                        ("c>s", ACK, 64), ("s>c", ACK, 1024), ("c>s", FIN | ACK, 0),
                        ("s>c", FIN | ACK, 0), ("c>s", ACK, 0)]
    assert client.stats.ok == 1 and client.stats.latencies == [5]
    assert server.seq_errors == 0 and client.stats.seq_errors == 0
    assert client.wakeup_at == 5 + 100_000


def test_legit_page_times_out_without_retransmission():
    spec = WorkloadSpec(LEGIT, rate=1, unit="cps", src="10.0.0.1", dst=DST)
    client = LegitClient(spec, random.Random(2))
    next_events(client, 0)
    assert client.wakeup_at == 3 * US_PER_S
    assert next_events(client, 3 * US_PER_S) == []
    assert client.stats.failed == 1
    assert client.wakeup_at == 3 * US_PER_S + 100_000


def test_web_server_checks_ack_numbers():
    server = WebServer(SERVER, 80, b"s" * 16)
    isn = server.isn(ATTACKER, 1)
    assert server.isn(ATTACKER, 1) == isn != server.isn(ATTACKER, 2)
    assert server.on_segment(TcpSegment(ATTACKER, 1, SERVER, 80, ACK, 1, isn + 1), 0) == []
    assert server.handshakes == 1 and server.seq_errors == 0
    server.on_segment(TcpSegment(ATTACKER, 1, SERVER, 80, ACK, 1, (isn + 77) & SEQ_MASK), 0)
    assert server.seq_errors == 1
    assert server.on_segment(TcpSegment(ATTACKER, 1, SERVER, 81, SYN, 1), 0) == []
