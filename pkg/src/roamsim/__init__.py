"""Deterministic simulator and closed-form model for IPv6 mobility handovers."""

from .binding import BindingCache, BindingEntry, EntryKind
from .engine import EventQueue, PastTimeError
from .formulas import (
    DelayProfile,
    correspondent_update_approx,
    correspondent_update_exact,
    handoff_time_approx,
    handoff_time_exact,
    jitter_ratio_approx,
    jitter_ratio_exact,
)
from .metrics import (
    EmptySampleError,
    FlowCollector,
    FlowStats,
    ProbeConfig,
    ZeroBaselineError,
    flow_stats,
    jitter_amplification,
    percentile,
)
from .multicast import (
    MulticastConfig,
    MulticastReceiver,
    MulticastRouting,
    MulticastSource,
)
from .network import Network
from .packet import (
    AddressRole,
    Ipv6Addr,
    Packet,
    combine,
    decapsulate,
    encapsulate,
    make_packet,
    rewrite_dest,
    rewrite_src,
    upper_layer_checksum,
    verify_checksum,
)
from .scenario import ParseError, Scenario, ValidationError, load_scenario, loads
from .topology import NodeKind, Topology, UnknownNodeError, UnreachableError
from .unicast import (
    CorrespondentNode,
    DetectionKind,
    DetectionMode,
    Fabric,
    HandoverReport,
    HomeAgent,
    MapAgent,
    MobileNode,
    ProtocolConfig,
    Variant,
)

__version__ = "0.1.0"
