"""Discrete-event simulator for SDN control-plane saturation attacks.

Models an OpenFlow switch and controller, the connection-migration SYN
proxy defense and the two attacks against it (translation-buffer
saturation and switch port exhaustion), and the LineSwitch probabilistic
proxy with blacklisting.
"""

from .conn_migration import (AvantGuardSwitch, ConnectionMigration, PortAllocator,
                             PortsExhausted, TranslationBuffer, translate)
from .controller import Controller
from .core import FlowKey, TcpSegment, flow_key_of, ip, ip_str
from .engine import Event, Link, SchedulingError, Simulation, SimulationReport
from .experiment import (ConfigError, ExperimentConfig, build_simulation, overhead_report,
                         parse_config, preset, reports_to_csv, run_experiment, run_trial)
from .lineswitch import Decision, LineSwitch, LineSwitchConfig, LineSwitchPolicy
from .of_switch import FlowRule, FlowTable, OFSwitch
from .syn_cookie import CookieKey, issue_cookie, validate_cookie
from .traffic import WorkloadSpec, bandwidth_to_conn_rate

__version__ = "0.1.0"
