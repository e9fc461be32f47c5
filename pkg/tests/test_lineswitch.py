import math
import random

import pytest

from lineswitch_sim.core import ACK, RST, SYN, US_PER_S, TcpSegment, ip
from lineswitch_sim.lineswitch import (Decision, LineSwitch, LineSwitchConfig,
                                       LineSwitchPolicy)
from lineswitch_sim.of_switch import TABLE_MISS, PacketIn
from rig import CLIENT, SERVER, Rig

SRC = ip("10.0.0.2")
S = US_PER_S


def policy(**kw):
    return LineSwitchPolicy(LineSwitchConfig(**kw), random.Random(42))


def test_unknown_source_is_proxied_without_state():
    pol = policy()
    for i in range(10_000):
        assert pol.classify_syn(ip("11.0.0.0") + i, i) is Decision.PROXY
    assert pol.records == {} and pol.memory_bytes == 0


def test_completed_source_proxied_with_probability_p():
    pol = policy(p_proxy=0.05)
    pol.on_handshake_complete(SRC, 0)
    n = 10_000
    proxied = sum(pol.classify_syn(SRC, t) is Decision.PROXY for t in range(n))
    # 3 sigma of Binomial(10000, 0.05) is about 0.0065
    assert abs(proxied / n - 0.05) <= 0.007
    assert pol.forwarded == n - proxied


def test_p_one_always_proxies():
    pol = policy(p_proxy=1.0)
    pol.on_handshake_complete(SRC, 0)
    assert all(pol.classify_syn(SRC, t) is Decision.PROXY for t in range(1000))


def test_blacklist_doubles_from_t():
    pol = policy(t_base=5.0)
    durations = [pol.on_handshake_failed(SRC, 0) for _ in range(4)]
    assert durations == [5.0, 10.0, 20.0, 40.0]
    assert pol.blacklist_events == 4


def test_blacklist_first_two_t_variant():
    pol = policy(t_base=5.0, blacklist_first="2T")
    assert [pol.on_handshake_failed(SRC, 0) for _ in range(3)] == [10.0, 20.0, 40.0]


def test_blacklisted_source_dropped_until_expiry():
    pol = policy(t_base=5.0)
    pol.on_handshake_complete(SRC, 0)
    pol.on_handshake_failed(SRC, 1 * S)
    assert pol.classify_syn(SRC, 1 * S) is Decision.DROP
    assert pol.classify_syn(SRC, 6 * S - 1) is Decision.DROP
    assert pol.classify_syn(SRC, 6 * S) is not Decision.DROP
    pol.on_handshake_failed(SRC, 7 * S)
    assert pol.classify_syn(SRC, 17 * S - 1) is Decision.DROP
    assert pol.classify_syn(SRC, 17 * S) is not Decision.DROP


def test_gc_removes_only_idle_records():
    pol = policy(idle_horizon=30.0)
    for addr in (1, 2, 3):
        pol.on_handshake_complete(addr, 0)
    pol.records[2].live = 1
    pol.on_handshake_failed(3, 0)
    pol.on_handshake_failed(3, 0)
    pol.on_handshake_failed(3, 0)              # blacklisted for 20 s
    assert pol.gc_expired(29 * S) == 0       # nothing idle long enough yet
    assert pol.gc_expired(30 * S) == 2       # 1 idle, 3's blacklist has lapsed
    assert set(pol.records) == {2}
    pol.records[2].live = 0
    assert pol.gc_expired(60 * S) == 1
    assert pol.peak_records == 3


def test_gc_keeps_active_blacklist():
    pol = policy(t_base=100.0, idle_horizon=1.0)
    pol.on_handshake_failed(SRC, 0)
    assert pol.gc_expired(50 * S) == 0
    assert pol.gc_expired(100 * S) == 1


@pytest.mark.parametrize("kw", [dict(p_proxy=0.0), dict(p_proxy=1.5), dict(t_base=0),
                                dict(handshake_timeout=0), dict(blacklist_first="3T")])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        LineSwitchConfig(**kw)


# switch level

def ls_rig(**kw):
    return Rig(switch_cls=LineSwitch, config=LineSwitchConfig(**kw), rng=random.Random(3))


def test_first_connection_proxied_then_forwarded():
    rig = ls_rig(p_proxy=0.05)
    rig.handshake(port=5000)
    sw = rig.switch
    assert sw.migration.admitted == 1
    assert sw.policy.records[CLIENT].completed_once
    for port in range(5001, 5101):
        rig.handshake(port=port)
    assert sw.policy.forwarded + sw.policy.proxied == 101
    assert sw.migration.admitted == sw.policy.proxied
    assert rig.server.seq_errors == 0
    assert sw.policy.forwarded > 80


def test_forwarded_syn_reaches_pipeline():
    rig = ls_rig(p_proxy=0.0001)
    rig.handshake(port=5000)
    actions = rig.switch.receive(TcpSegment(CLIENT, 5001, SERVER, 80, SYN, 1), "client", 99)
    assert [type(a) for a in actions] == [PacketIn]
    assert actions[0].reason == TABLE_MISS


def test_hanging_proxied_handshake_blacklists_known_source():
    rig = ls_rig(p_proxy=1.0, t_base=5.0, handshake_timeout=3.0)
    rig.handshake(port=5000)
    rig.send(TcpSegment(CLIENT, 5001, SERVER, 80, SYN, 1))   # never ACKed
    [timer] = [t for t in rig.timers if t.token != "gc"]
    assert timer.at == rig.now + 3 * S
    rig.fire_timers(timer.at)
    rec = rig.switch.policy.records[CLIENT]
    assert rec.fail_count == 1 and rig.switch.policy.blacklist_events == 1
    replies = len(rig.to_client)
    rig.send(TcpSegment(CLIENT, 5002, SERVER, 80, SYN, 1))
    assert len(rig.to_client) == replies      # dropped silently
    rig.fire_timers(rig.now + 5 * S)
    rig.send(TcpSegment(CLIENT, 5003, SERVER, 80, SYN, 1))
    assert rig.to_client[-1].flags == SYN | ACK


def test_completed_proxied_handshake_clears_pending():
    rig = ls_rig(p_proxy=1.0)
    rig.handshake(port=5000)
    rig.handshake(port=5001)
    rig.fire_timers(rig.now + 10 * S)
    assert rig.switch.policy.blacklist_events == 0


def test_spoofed_flood_leaves_no_records():
    rig = ls_rig()
    for i in range(2000):
        rig.send(TcpSegment(ip("11.0.0.0") + i, 1024 + i, SERVER, 80, SYN, i))
    assert rig.switch.policy.records == {}
    assert rig.timers == []
    assert rig.controller.enqueued_count == 0


def test_gc_timer_runs_and_reclaims():
    rig = ls_rig(idle_horizon=30.0, gc_interval=10.0)
    cookie = rig.handshake(port=5000)
    rig.send(TcpSegment(CLIENT, 5000, SERVER, 80, ACK | RST, 1001, cookie + 1))
    assert any(t.token == "gc" for t in rig.timers)
    rig.fire_timers(rig.now + 45 * S)
    assert rig.switch.policy.records == {}
    assert rig.switch.gc_removed == 1


def test_expected_proxied_count_closed_form():
    # one completed source, n attempts: 1 + (n - 1) p in expectation
    n, p = 64512, 0.05
    pol = policy(p_proxy=p)
    proxied = 0
    for t in range(n):
        d = pol.classify_syn(SRC, t)
        if t == 0:
            pol.on_handshake_complete(SRC, t)
        proxied += d is Decision.PROXY
    mean = 1 + (n - 1) * p
    assert abs(proxied - mean) <= 3 * math.sqrt((n - 1) * p * (1 - p))
