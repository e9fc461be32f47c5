import pytest

from lineswitch_sim.controller import Controller
from lineswitch_sim.core import ip
from lineswitch_sim.engine import (TIMER_EXPIRY, Event, Link, SchedulingError, Simulation,
                                   Topology)
from lineswitch_sim.experiment import ExperimentConfig, build_simulation
from lineswitch_sim.of_switch import OFSwitch, StartTimer
from lineswitch_sim.traffic import LEGIT, SPOOFED_SYN_FLOOD, WebServer, WorkloadSpec


class TimerSwitch(OFSwitch):
    """Records timer tokens; a token ("again", n) re-arms itself n more times now."""

    def __init__(self, hosts):
        super().__init__(hosts)
        self.fired = []

    def on_timer(self, token, now):
        self.fired.append((now, token))
        if isinstance(token, tuple) and token[1] > 0:
            return [StartTimer(now, (token[0], token[1] - 1))]
        return []


def bare_sim():
    hosts = {ip("10.0.0.1"): "client", ip("10.0.0.3"): "server"}
    links = {h: Link(h, "switch") for h in ("client", "attacker", "server")}
    topo = Topology(ip("10.0.0.1"), [], ip("10.0.0.3"), 80, [ip("10.0.0.254")], links,
                    Link("switch", "controller"))
    return Simulation(topo, TimerSwitch(hosts), Controller(hosts),
                      WebServer(ip("10.0.0.3"), 80, bytes(16)), [])


def test_empty_queue_returns_immediately():
    sim = bare_sim()
    rep = sim.run_until(10.0)
    assert rep.events == 0 and sim.now == 10_000_000
    assert bare_sim().run_until().events == 0


def test_equal_timestamps_run_in_scheduling_order():
    sim = bare_sim()
    for token in "abcde":
        sim.schedule(sim.new_event(100, TIMER_EXPIRY, token))
    sim.schedule(sim.new_event(50, TIMER_EXPIRY, "first"))
    sim.run_until()
    assert [tok for _, tok in sim.switch.fired] == ["first", "a", "b", "c", "d", "e"]


def test_same_instant_events_follow_earlier_scheduled_ones():
    sim = bare_sim()
    sim.schedule(sim.new_event(10, TIMER_EXPIRY, ("x", 2)))
    sim.schedule(sim.new_event(10, TIMER_EXPIRY, "y"))
    sim.run_until()
    # x's re-arms at t=10 were scheduled after y, so y runs before them
    assert sim.switch.fired == [(10, ("x", 2)), (10, "y"), (10, ("x", 1)), (10, ("x", 0))]


def test_scheduling_in_the_past_raises():
    sim = bare_sim()
    sim.schedule(sim.new_event(100, TIMER_EXPIRY, "a"))
    sim.run_until()
    with pytest.raises(SchedulingError):
        sim.schedule(Event(99, 0, TIMER_EXPIRY, "late"))
    with pytest.raises(SchedulingError):
        sim._push(5, TIMER_EXPIRY, "late")


def test_stop_time_is_inclusive():
    sim = bare_sim()
    sim.schedule(sim.new_event(1_000_000, TIMER_EXPIRY, "edge"))
    sim.schedule(sim.new_event(1_000_001, TIMER_EXPIRY, "after"))
    sim.run_until(1.0)
    assert [tok for _, tok in sim.switch.fired] == ["edge"]
    assert sim.pending == 1


def test_link_serialization_and_fifo():
    link = Link("a", "b", bandwidth=10.0, rtt=20.0)
    # 1078 bytes at 10 Mbps: ceil(862.4) us, plus 10 ms one way
    assert link.transmit("a", 1078, 0) == 863 + 10_000
    # queued behind the first frame
    assert link.transmit("a", 64, 0) == 863 + 52 + 10_000
    # the other direction is independent
    assert link.transmit("b", 64, 0) == 52 + 10_000
    assert Link("a", "b").transmit("a", 10 ** 6, 7) == 7
    with pytest.raises(ValueError):
        Link("a", "b", bandwidth=0)


def test_vanilla_legit_pages_succeed():
    cfg = ExperimentConfig(policy="vanilla", attack=[WorkloadSpec(LEGIT, rate=1, unit="cps")],
                           stop=2.0, rtt_ms=20.0)
    rep = build_simulation(cfg, 1).run_until(2.0)
    assert rep.pages_ok >= 9 and rep.pages_failed == 0
    assert rep.seq_errors == 0
    # two client-server round trips over two 20 ms links (80 ms), one packet-in
    # round trip on the control link (20 ms) and one 0.5 ms service
    assert rep.page_latencies[0] == pytest.approx(0.1005)


def test_trace_is_deterministic():
    cfg = ExperimentConfig(policy="avantguard",
                           attack=[WorkloadSpec(LEGIT, rate=1, unit="cps"),
                                   WorkloadSpec(SPOOFED_SYN_FLOOD, rate=0.1)], stop=0.5)
    a = build_simulation(cfg, 3, trace=True)
    b = build_simulation(cfg, 3, trace=True)
    a.run_until(0.5)
    b.run_until(0.5)
    assert a.trace == b.trace and len(a.trace) > 100
