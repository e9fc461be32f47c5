"""Scenario configuration, trial batches, CSV output and canned presets."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import math
import random
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Union

from .conn_migration import AvantGuardSwitch, TranslationBuffer
from .controller import Controller
from .core import US_PER_S, ip, ip_str
from .engine import Link, Simulation, SimulationReport, Topology
from .lineswitch import LineSwitch, LineSwitchConfig
from .of_switch import OFSwitch
from .syn_cookie import CookieKey
from .traffic import (BUFFER_SATURATION, LEGIT, PORT_EXHAUSTION, SPOOFED_SYN_FLOOD,
                      WebServer, WorkloadSpec, make_generator)

VANILLA = "vanilla"
AVANTGUARD = "avantguard"
LINESWITCH = "lineswitch"
POLICIES = (VANILLA, AVANTGUARD, LINESWITCH)

STOP_PREDICATES = ("buffer_saturated", "controller_saturated", "saturated")

CLIENT_IP = "10.0.0.1"
ATTACKER_IP = "10.0.0.2"
SERVER_IP = "10.0.0.3"
SERVER_PORT = 80
SWITCH_IP_BASE = "10.0.0.254"
SPOOF_NET = "11.0.0.0/8"
# Real addresses for completing floods: one address caps out at 65535 open
# connections per server port, so long runs rotate through the block.
ATTACKER_POOL = "10.0.1.0/24"


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class ExperimentConfig:
    policy: str = AVANTGUARD
    label: str = ""
    delayed_migration: bool = False
    buffer_bytes: int = 2 ** 22
    entry_bytes: int = 72
    p_proxy: Optional[float] = None
    t_base: float = 5.0
    handshake_timeout: float = 3.0
    blacklist: bool = True
    blacklist_first: str = "T"
    attack: list = field(default_factory=list)
    trials: int = 1
    seed: int = 1
    stop: Union[float, str] = 60.0
    horizon: float = 100_000.0
    output: Optional[str] = None
    rtt_ms: float = 0.0
    control_rtt_ms: Optional[float] = None
    link_mbps: Optional[float] = None
    proxy_delay_ms: float = 0.0
    controller_rate: float = 2000.0
    controller_queue: int = 10_000
    latency_threshold: Optional[float] = None
    table_capacity: int = 100_000
    switch_addresses: int = 1
    cookie_epoch: float = 64.0
    page_size: int = 1024
    saturation: Optional[str] = None

    def validate(self) -> None:
        if self.policy not in POLICIES:
            raise ConfigError("policy", f"must be one of {', '.join(POLICIES)}")
        if self.trials < 1:
            raise ConfigError("trials", "must be >= 1")
        if self.policy == LINESWITCH:
            if self.p_proxy is None:
                raise ConfigError("p_proxy", "required for lineswitch")
            if not 0 < self.p_proxy <= 1:
                raise ConfigError("p_proxy", "must be in (0, 1]")
        if self.t_base <= 0:
            raise ConfigError("t_base", "must be > 0")
        if self.entry_bytes <= 0:
            raise ConfigError("entry_bytes", "must be > 0")
        if self.buffer_bytes < 0:
            raise ConfigError("buffer_bytes", "must be >= 0")
        if self.switch_addresses < 1:
            raise ConfigError("switch_addresses", "must be >= 1")
        if self.blacklist_first not in ("T", "2T"):
            raise ConfigError("blacklist_first", "must be T or 2T")
        if isinstance(self.stop, str):
            if self.stop not in STOP_PREDICATES:
                raise ConfigError("stop", f"must be seconds or one of {', '.join(STOP_PREDICATES)}")
        elif self.stop <= 0:
            raise ConfigError("stop", "must be > 0")
        if self.saturation not in (None, "buffer", "controller", "any"):
            raise ConfigError("saturation", "must be buffer, controller or any")
        if not self.attack:
            raise ConfigError("attack", "at least one [workload] is required")

    @property
    def saturation_metric(self) -> str:
        if self.saturation:
            return self.saturation
        return "controller" if self.policy == VANILLA else "buffer"

    def describe_policy(self) -> str:
        if self.policy == LINESWITCH:
            return f"lineswitch({self.p_proxy:g})"
        return self.policy


def substream(seed: int, name: str) -> random.Random:
    """Independent RNG for one component of one trial."""
    digest = hashlib.blake2b(f"{seed}/{name}".encode(), digest_size=8).digest()
    return random.Random(int.from_bytes(digest, "big"))


def _resolve(spec: WorkloadSpec) -> WorkloadSpec:
    src = spec.src
    if not src:
        src = {LEGIT: CLIENT_IP, SPOOFED_SYN_FLOOD: SPOOF_NET}.get(spec.kind, ATTACKER_IP)
    dst = spec.dst if spec.dst[0] else (ip(SERVER_IP), spec.dst[1] or SERVER_PORT)
    return dataclasses.replace(spec, src=src, dst=dst)


def build_simulation(config: ExperimentConfig, trial_seed: int,
                     trace: bool = False) -> Simulation:
    config.validate()
    workloads = [_resolve(w) for w in config.attack]
    attacker_ips = [ip(ATTACKER_IP)]
    for w in workloads:
        if w.kind in (BUFFER_SATURATION, PORT_EXHAUSTION):
            attacker_ips.extend(a for a in w.sources() if a not in attacker_ips)
    base = ip(SWITCH_IP_BASE)
    switch_ips = [base - i for i in range(config.switch_addresses)]
    links = {h: Link(h, "switch", config.link_mbps, config.rtt_ms)
             for h in Topology.HOSTS}
    control_rtt = config.rtt_ms if config.control_rtt_ms is None else config.control_rtt_ms
    topo = Topology(ip(CLIENT_IP), attacker_ips, ip(SERVER_IP), SERVER_PORT,
                    switch_ips, links, Link("switch", "controller", None, control_rtt))
    hosts = topo.host_ports()
    client_ports = ("client", "attacker")
    proxy_delay = int(round(config.proxy_delay_ms * 1000))

    def defended_kwargs():
        return dict(
            cookie_key=CookieKey.from_rng(substream(trial_seed, "cookie"), config.cookie_epoch),
            buffer=TranslationBuffer(config.buffer_bytes, config.entry_bytes),
            switch_addresses=switch_ips, table_capacity=config.table_capacity,
            delayed=config.delayed_migration, proxy_delay=proxy_delay)

    if config.policy == VANILLA:
        switch = OFSwitch(hosts, table_capacity=config.table_capacity)
    elif config.policy == AVANTGUARD:
        switch = AvantGuardSwitch(hosts, client_ports, **defended_kwargs())
    else:
        ls_config = LineSwitchConfig(
            p_proxy=config.p_proxy, t_base=config.t_base, rng_seed=trial_seed,
            handshake_timeout=config.handshake_timeout,
            blacklist_enabled=config.blacklist, blacklist_first=config.blacklist_first)
        switch = LineSwitch(hosts, client_ports, config=ls_config,
                            rng=substream(trial_seed, "lineswitch"), **defended_kwargs())
    controller = Controller(hosts, config.controller_rate, config.controller_queue,
                            config.latency_threshold)
    server = WebServer(topo.server_ip, SERVER_PORT,
                       substream(trial_seed, "server").getrandbits(128).to_bytes(16, "big"),
                       config.page_size)
    generators = [make_generator(w, substream(trial_seed, f"workload{i}"))
                  for i, w in enumerate(workloads)]
    return Simulation(topo, switch, controller, server, generators,
                      saturation=config.saturation_metric, trace=trace)


def _predicate(name: str):
    if name == "buffer_saturated":
        return lambda sim: sim.buffer_saturated_at() is not None
    if name == "controller_saturated":
        return lambda sim: sim.controller.saturated_at is not None
    return lambda sim: sim.saturated_at() is not None


def run_trial(config: ExperimentConfig, trial: int) -> SimulationReport:
    sim = build_simulation(config, config.seed + trial)
    if isinstance(config.stop, str):
        return sim.run_until(config.horizon, _predicate(config.stop))
    return sim.run_until(config.stop)


def _run_trial_args(args):
    return run_trial(*args)


def run_experiment(config: ExperimentConfig, jobs: int = 1) -> list[SimulationReport]:
    """One report per trial; trial ``i`` is seeded with ``seed + i``."""
    config.validate()
    work = [(config, i) for i in range(config.trials)]
    if jobs <= 1 or config.trials == 1:
        return [run_trial(c, i) for c, i in work]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_trial_args, work))


# CSV

CONFIG_COLUMNS = ("label", "policy", "p_proxy", "delayed_migration", "buffer_bytes",
                  "entry_bytes", "t_base", "workloads", "trial", "seed")
REPORT_COLUMNS = tuple(f.name for f in dataclasses.fields(SimulationReport))
CSV_COLUMNS = CONFIG_COLUMNS + REPORT_COLUMNS
_SKIP_STATS = {"page_latencies"}


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return "nan" if math.isnan(value) else f"{value:.6f}"
    if isinstance(value, list):
        return ";".join(_fmt(v) for v in value)
    return str(value)


def _config_cells(config: ExperimentConfig, trial, seed) -> list:
    return [config.label, config.policy, config.p_proxy, config.delayed_migration,
            config.buffer_bytes, config.entry_bytes, config.t_base,
            " ".join(w.describe() for w in config.attack), trial, seed]


def summary(reports: list[SimulationReport]) -> dict[str, tuple[Optional[float], Optional[float]]]:
    """Mean and sample standard deviation of every numeric report column."""
    out = {}
    for name in REPORT_COLUMNS:
        if name in _SKIP_STATS:
            continue
        values = [getattr(r, name) for r in reports]
        values = [float(v) for v in values if v is not None]
        if not values:
            out[name] = (None, None)
            continue
        mean = statistics.fmean(values)
        std = statistics.stdev(values) if len(values) > 1 else 0.0
        out[name] = (mean, std)
    return out


def reports_to_csv(config: ExperimentConfig, reports: list[SimulationReport],
                   header: bool = True) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if header:
        writer.writerow(CSV_COLUMNS)
    for i, rep in enumerate(reports):
        row = _config_cells(config, i, config.seed + i)
        row += [getattr(rep, name) for name in REPORT_COLUMNS]
        writer.writerow([_fmt(v) for v in row])
    stats = summary(reports)
    for which, idx in (("mean", 0), ("stddev", 1)):
        row = _config_cells(config, which, "")
        row += ["" if name in _SKIP_STATS else stats[name][idx] for name in REPORT_COLUMNS]
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def overhead_report(baseline: list[SimulationReport],
                    treatment: list[SimulationReport]) -> float:
    """Percent increase of mean page latency over the baseline."""
    if not baseline or not treatment:
        raise ValueError("overhead needs non-empty baseline and treatment")
    base = [x for r in baseline for x in r.page_latencies]
    treat = [x for r in treatment for x in r.page_latencies]
    if not base or not treat:
        raise ValueError("overhead needs page latencies on both sides")
    base_mean = statistics.fmean(base)
    if base_mean == 0:
        raise ValueError("baseline mean latency is zero")
    return 100.0 * (statistics.fmean(treat) / base_mean - 1.0)


def calibrate_entry_bytes(buffer_bytes: int, mbps: float, target_seconds: float) -> float:
    """Per-entry size that makes a completing flood fill the buffer in ``target_seconds``."""
    from .traffic import bandwidth_to_conn_rate
    return buffer_bytes / (bandwidth_to_conn_rate(mbps) * target_seconds)


# presets

FIG3_RATES = (1.0, 2.0, 5.0)
FIG3_P_PROXY = (0.01, 0.05)
OVERHEAD_P_PROXY = 0.05
OVERHEAD_RTT_MS = 20.0
OVERHEAD_LINK_MBPS = 10.0
# Added to every segment the proxy emits; about four lie on a page's critical
# path, so this puts the defended no-attack overhead near 42%.
OVERHEAD_PROXY_DELAY_MS = 10.75
OVERHEAD_DURATION = 60.0
ATTACK_MBPS = 6.5


def buffer_saturation_config(policy: str, buffer_bytes: int, mbps: float,
                             p_proxy: Optional[float] = None, trials: int = 5,
                             seed: int = 1) -> ExperimentConfig:
    label = f"{policy if p_proxy is None else f'lineswitch({p_proxy:g})'}-{buffer_bytes}B-{mbps:g}Mbps"
    return ExperimentConfig(policy=policy, label=label, buffer_bytes=buffer_bytes,
                            p_proxy=p_proxy, trials=trials, seed=seed,
                            attack=[WorkloadSpec(BUFFER_SATURATION, rate=mbps, src=ATTACKER_POOL)],
                            stop="buffer_saturated", saturation="buffer")


def _fig3(buffer_bytes: int, trials: int) -> list[ExperimentConfig]:
    configs = []
    for mbps in FIG3_RATES:
        configs.append(buffer_saturation_config(AVANTGUARD, buffer_bytes, mbps, trials=trials))
        for p in FIG3_P_PROXY:
            configs.append(buffer_saturation_config(LINESWITCH, buffer_bytes, mbps, p, trials=trials))
    return configs


def overhead_config(policy: str, attack: bool, p_proxy: Optional[float] = None,
                    trials: int = 10, duration: float = OVERHEAD_DURATION,
                    seed: int = 1) -> ExperimentConfig:
    workloads = [WorkloadSpec(LEGIT, rate=1.0, unit="cps")]
    if attack:
        workloads.append(WorkloadSpec(SPOOFED_SYN_FLOOD, rate=ATTACK_MBPS))
    name = policy if p_proxy is None else f"lineswitch({p_proxy:g})"
    return ExperimentConfig(
        policy=policy, label=f"{name}-{'attack' if attack else 'noattack'}",
        p_proxy=p_proxy, attack=workloads, trials=trials, seed=seed, stop=duration,
        rtt_ms=OVERHEAD_RTT_MS, link_mbps=OVERHEAD_LINK_MBPS,
        proxy_delay_ms=OVERHEAD_PROXY_DELAY_MS)


PRESETS = ("fig3a", "fig3b", "overhead_noattack", "overhead_attack")


def preset(name: str, trials: Optional[int] = None) -> list[ExperimentConfig]:
    """Canned sweeps. Overhead presets put the no-attack vanilla baseline first."""
    if name == "fig3a":
        return _fig3(2 ** 20, trials or 5)
    if name == "fig3b":
        return _fig3(2 ** 22, trials or 5)
    n = trials or 10
    if name == "overhead_noattack":
        return [overhead_config(VANILLA, False, trials=n),
                overhead_config(AVANTGUARD, False, trials=n),
                overhead_config(LINESWITCH, False, OVERHEAD_P_PROXY, trials=n)]
    if name == "overhead_attack":
        return [overhead_config(VANILLA, False, trials=n),
                overhead_config(VANILLA, True, trials=n),
                overhead_config(AVANTGUARD, True, trials=n),
                overhead_config(LINESWITCH, True, OVERHEAD_P_PROXY, trials=n)]
    raise ConfigError("preset", f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")


# config files

_BOOL = {"1": True, "true": True, "yes": True, "on": True,
         "0": False, "false": False, "no": False, "off": False}


def _convert(field_name: str, raw: str, kind):
    raw = raw.strip()
    text = str(kind)
    try:
        if raw.lower() in ("", "none") and "Optional" in text:
            return None
        if "bool" in text:
            return _BOOL[raw.lower()]
        if "Union[float, str]" in text:
            try:
                return float(raw)
            except ValueError:
                return raw
        if "int" in text and "float" not in text:
            return int(raw, 0)
        if "float" in text:
            return float(raw)
        return raw
    except (KeyError, ValueError):
        raise ConfigError(field_name, f"cannot parse {raw!r}") from None


def _parse_dst(raw: str) -> tuple[int, int]:
    host, _, port = raw.strip().rpartition(":")
    if not host:
        return ip(raw.strip()), SERVER_PORT
    return ip(host), int(port)


def _workload(items: dict[str, str]) -> WorkloadSpec:
    fields = {f.name: f.type for f in dataclasses.fields(WorkloadSpec)}
    kwargs = {}
    for key, raw in items.items():
        if key not in fields:
            raise ConfigError(f"workload.{key}", "unknown key")
        if key == "dst":
            try:
                kwargs["dst"] = _parse_dst(raw)
            except ValueError:
                raise ConfigError("workload.dst", f"cannot parse {raw!r}") from None
        else:
            kwargs[key] = _convert(f"workload.{key}", raw, fields[key])
    if "kind" not in kwargs:
        raise ConfigError("workload.kind", "missing")
    try:
        return WorkloadSpec(**kwargs)
    except ValueError as exc:
        raise ConfigError("workload", str(exc)) from None


def parse_config(text: str) -> ExperimentConfig:
    """Flat ``key = value`` lines; each ``[workload]`` header opens a workload."""
    fields = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}
    top: dict = {}
    workloads: list[dict[str, str]] = []
    current = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if line != "[workload]":
                raise ConfigError(f"line {lineno}", f"unknown section {line}")
            current = {}
            workloads.append(current)
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}", "expected key = value")
        key = key.strip()
        if current is not None:
            current[key] = value.strip()
            continue
        if key not in fields or key == "attack":
            raise ConfigError(key, "unknown key")
        top[key] = _convert(key, value, fields[key])
    config = ExperimentConfig(**top, attack=[_workload(w) for w in workloads])
    config.validate()
    return config


def format_config(config: ExperimentConfig) -> str:
    """Inverse of :func:`parse_config`."""
    lines = []
    for f in dataclasses.fields(ExperimentConfig):
        if f.name == "attack":
            continue
        value = getattr(config, f.name)
        if value is None:
            continue
        lines.append(f"{f.name} = {_fmt(value) if not isinstance(value, float) else repr(value)}")
    for w in config.attack:
        lines.append("")
        lines.append("[workload]")
        for f in dataclasses.fields(WorkloadSpec):
            value = getattr(w, f.name)
            if value is None or value == "":
                continue
            if f.name == "dst":
                if not value[0]:
                    continue
                value = f"{ip_str(value[0])}:{value[1]}"
            lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
