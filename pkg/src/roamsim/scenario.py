"""Scenario files: a line-based key-value format with repeated sections.

Grammar (see README for the key reference):

    file       = { blank | comment | section }
    section    = '[' name ']' NL { blank | comment | assignment }
    assignment = key '=' value NL
    comment    = '#' ...

Sections may repeat ([node], [link], [move], ...).  Values are integers,
floats, booleans (true/false), identifiers, IPv6 addresses/prefixes, or
space-separated lists.  Loading aggregates every semantic problem with its
line number instead of stopping at the first.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .multicast import MulticastConfig
from .packet import AddressRole, Ipv6Addr
from .topology import NodeKind
from .unicast import DetectionKind, DetectionMode, ProtocolConfig, Variant


class ParseError(ValueError):
    """Syntactic problem; carries the offending line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ValidationError(ValueError):
    """Aggregated semantic problems, each tagged with a line number."""

    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


@dataclass
class NodeDecl:
    id: str
    kind: NodeKind
    prefix: Ipv6Addr | None = None
    address: Ipv6Addr | None = None
    line: int = 0


@dataclass
class LinkDecl:
    a: str
    b: str
    latency_us: int
    epsilon: float = 0.0
    line: int = 0


@dataclass
class DomainDecl:
    map: str
    aps: list[str] = field(default_factory=list)
    line: int = 0


@dataclass
class MobileDecl:
    id: str
    home_agent: str
    start: str | None = None
    correspondents: list[str] = field(default_factory=list)
    warm_start: bool = True
    line: int = 0


@dataclass
class MoveDecl:
    at_us: int
    ap: str
    mn: str | None = None
    l2_delay_us: int = 0
    # optional range; when set the layer-2 delay is drawn per trial
    l2_min_us: int | None = None
    l2_max_us: int | None = None
    line: int = 0


@dataclass
class ProbeDecl:
    src: str
    reflector: str
    interval_us: int = 15_000
    start_us: int = 0
    stop_us: int = 1_000_000
    payload_len: int = 32
    flow: str = "probe"
    line: int = 0


@dataclass
class GroupDecl:
    address: Ipv6Addr
    flow: str = "group"
    sender: str | None = None
    interval_us: int = 15_000
    start_us: int = 0
    stop_us: int = 1_000_000
    listeners: list[str] = field(default_factory=list)
    warm: bool = True
    receiver_mode: str = "mhmip"          # mhmip | bt | rs
    line: int = 0


@dataclass
class Scenario:
    seed: int = 0
    trials: int = 1
    duration_us: int | None = None
    nodes: list[NodeDecl] = field(default_factory=list)
    links: list[LinkDecl] = field(default_factory=list)
    domains: list[DomainDecl] = field(default_factory=list)
    mobiles: list[MobileDecl] = field(default_factory=list)
    moves: list[MoveDecl] = field(default_factory=list)
    probes: list[ProbeDecl] = field(default_factory=list)
    groups: list[GroupDecl] = field(default_factory=list)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    multicast: MulticastConfig = field(default_factory=MulticastConfig)

    def node(self, node_id: str) -> NodeDecl | None:
        for n in self.nodes:
            if n.id == node_id:
                return n
        return None

    def end_time(self) -> int:
        if self.duration_us is not None:
            return self.duration_us
        candidates = [p.stop_us for p in self.probes]
        candidates += [g.stop_us for g in self.groups]
        candidates += [m.at_us + 2_000_000 for m in self.moves]
        return max(candidates, default=1_000_000) + 2_000_000

    def with_scaled_links(self, factor: int,
                          touching: set[str] | None = None) -> "Scenario":
        """Copy with some link latencies multiplied (geometry stretching)."""
        links = []
        for link in self.links:
            if touching is None or link.a in touching or link.b in touching:
                link = replace(link, latency_us=link.latency_us * factor)
            links.append(link)
        return replace(self, links=links)


_NODE_KINDS = {k.value: k for k in NodeKind}
_PREFIX_KINDS = {NodeKind.ACCESS_POINT, NodeKind.MAP, NodeKind.HOME_AGENT}


def _parse_sections(text: str) -> list[tuple[str, int, list[tuple[str, str, int]]]]:
    sections = []
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("["):
            if not line.endswith("]") or len(line) < 3:
                raise ParseError(lineno, f"malformed section header {line!r}")
            current = (line[1:-1].strip().lower(), lineno, [])
            sections.append(current)
            continue
        if "=" not in line:
            raise ParseError(lineno, f"expected 'key = value', got {line!r}")
        if current is None:
            raise ParseError(lineno, "assignment before any section header")
        key, value = line.split("=", 1)
        current[2].append((key.strip().lower(), value.strip(), lineno))
    return sections


def _to_bool(value: str, line: int) -> bool:
    low = value.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ParseError(line, f"expected a boolean, got {value!r}")


def _to_int(value: str, line: int) -> int:
    try:
        return int(value.replace("_", ""))
    except ValueError:
        raise ParseError(line, f"expected an integer, got {value!r}") from None


def _to_float(value: str, line: int) -> float:
    try:
        return float(value)
    except ValueError:
        raise ParseError(line, f"expected a number, got {value!r}") from None


def loads(text: str) -> Scenario:
    """Parse and validate scenario text; raises ParseError / ValidationError."""
    scenario = Scenario()
    problems: list[str] = []

    for name, header_line, entries in _parse_sections(text):
        kv = {k: (v, ln) for k, v, ln in entries}

        def take(key, default=None):
            return kv.pop(key, (default, header_line))

        if name == "general":
            value, ln = take("seed", "0")
            scenario.seed = _to_int(value, ln)
            value, ln = take("trials", "1")
            scenario.trials = _to_int(value, ln)
            value, ln = take("duration_us")
            if value is not None:
                scenario.duration_us = _to_int(value, ln)
        elif name == "node":
            value, ln = take("id")
            node_id = value
            kind_value, kline = take("kind")
            kind = _NODE_KINDS.get(kind_value or "")
            if node_id is None:
                problems.append(f"line {header_line}: [node] missing id")
                continue
            if kind is None:
                problems.append(f"line {kline}: unknown node kind {kind_value!r}")
                continue
            prefix_value, _ = take("prefix")
            prefix = Ipv6Addr.parse(prefix_value) if prefix_value else None
            addr_value, _ = take("address")
            address = Ipv6Addr.parse(addr_value) if addr_value else None
            scenario.nodes.append(NodeDecl(node_id, kind, prefix, address,
                                           header_line))
        elif name == "link":
            a, _ = take("a")
            b, _ = take("b")
            lat_value, lline = take("latency_us", "0")
            eps_value, eline = take("epsilon", "0")
            scenario.links.append(LinkDecl(a or "", b or "",
                                           _to_int(lat_value, lline),
                                           _to_float(eps_value, eline),
                                           header_line))
        elif name == "domain":
            map_value, _ = take("map")
            aps_value, _ = take("aps", "")
            scenario.domains.append(DomainDecl(map_value or "",
                                               (aps_value or "").split(),
                                               header_line))
        elif name == "mobile":
            decl = MobileDecl(id=take("id")[0] or "",
                              home_agent=take("home_agent")[0] or "",
                              start=take("start")[0],
                              line=header_line)
            peers_value, _ = take("correspondents", "")
            decl.correspondents = (peers_value or "").split()
            warm_value, wline = take("warm_start", "true")
            decl.warm_start = _to_bool(warm_value, wline)
            scenario.mobiles.append(decl)
        elif name == "move":
            at_value, aline = take("at_us", "0")
            l2_value, lline = take("l2_delay_us", "0")
            decl = MoveDecl(_to_int(at_value, aline),
                            take("ap")[0] or "",
                            take("mn")[0],
                            _to_int(l2_value, lline),
                            line=header_line)
            for attr in ("l2_min_us", "l2_max_us"):
                value, ln = take(attr)
                if value is not None:
                    setattr(decl, attr, _to_int(value, ln))
            scenario.moves.append(decl)
        elif name == "protocol":
            scenario.protocol = _parse_protocol(kv, header_line, problems)
            kv.clear()
        elif name == "multicast":
            scenario.multicast = _parse_multicast(kv, header_line)
            kv.clear()
        elif name == "probe":
            decl = ProbeDecl(src=take("src")[0] or "",
                             reflector=take("reflector")[0] or "",
                             line=header_line)
            for attr in ("interval_us", "start_us", "stop_us", "payload_len"):
                value, ln = take(attr)
                if value is not None:
                    setattr(decl, attr, _to_int(value, ln))
            flow_value, _ = take("flow")
            if flow_value:
                decl.flow = flow_value
            scenario.probes.append(decl)
        elif name == "group":
            addr_value, aline = take("address")
            if not addr_value:
                problems.append(f"line {header_line}: [group] missing address")
                continue
            decl = GroupDecl(Ipv6Addr.parse(addr_value), line=header_line)
            for attr in ("interval_us", "start_us", "stop_us"):
                value, ln = take(attr)
                if value is not None:
                    setattr(decl, attr, _to_int(value, ln))
            value, _ = take("flow")
            if value:
                decl.flow = value
            decl.sender = take("sender")[0]
            listeners_value, _ = take("listeners", "")
            decl.listeners = (listeners_value or "").split()
            warm_value, wline = take("warm", "true")
            decl.warm = _to_bool(warm_value, wline)
            mode_value, mline = take("receiver_mode", "mhmip")
            if mode_value not in ("mhmip", "bt", "rs"):
                problems.append(f"line {mline}: unknown receiver_mode {mode_value!r}")
            decl.receiver_mode = mode_value
            scenario.groups.append(decl)
        else:
            problems.append(f"line {header_line}: unknown section [{name}]")
            continue
        for key, (_value, ln) in kv.items():
            problems.append(f"line {ln}: unknown key {key!r} in [{name}]")

    problems.extend(_validate(scenario))
    if problems:
        raise ValidationError(problems)
    return scenario


def _parse_protocol(kv: dict, header_line: int, problems: list[str]) -> ProtocolConfig:
    def take(key, default=None):
        return kv.get(key, (default, header_line))

    variant_value, vline = take("variant", "mipv6")
    try:
        variant = Variant(variant_value)
    except ValueError:
        problems.append(f"line {vline}: unknown variant {variant_value!r}")
        variant = Variant.MIPV6
    kind_value, kline = take("detection", "ra")
    try:
        kind = DetectionKind(kind_value)
    except ValueError:
        problems.append(f"line {kline}: unknown detection mode {kind_value!r}")
        kind = DetectionKind.RA

    detection_fields = {}
    for attr in ("ra_min_us", "ra_max_us", "readdress_us", "max_sol_delay_us",
                 "max_ra_delay_us", "handshake_flight_us"):
        value, ln = take(attr)
        if value is not None:
            detection_fields[attr] = _to_int(value, ln)
    detection = DetectionMode(kind=kind, **detection_fields)

    config = ProtocolConfig(variant=variant, detection=detection)
    value, ln = take("route_optimization")
    if value is not None:
        config.route_optimization = _to_bool(value, ln)
    value, ln = take("ba_from_cn")
    if value is not None:
        config.ba_from_cn = _to_bool(value, ln)
    value, ln = take("dual_entry")
    if value is not None:
        config.dual_entry = _to_bool(value, ln)
    for attr in ("previous_lifetime_us", "binding_lifetime_us",
                 "retransmit_initial_us", "retransmit_tries"):
        value, ln = take(attr)
        if value is not None:
            setattr(config, attr, _to_int(value, ln))
    return config


def _parse_multicast(kv: dict, header_line: int) -> MulticastConfig:
    config = MulticastConfig()
    for attr in ("join_delay_us", "tree_convergence_us", "bicast_timeout_us",
                 "probe_interval_us"):
        value, ln = kv.get(attr, (None, header_line))
        if value is not None:
            setattr(config, attr, _to_int(value, ln))
    value, _ = kv.get("bicast_mode", (None, header_line))
    if value is not None:
        config.bicast_mode = value
    return config


def _validate(s: Scenario) -> list[str]:
    problems = []
    ids: dict[str, NodeDecl] = {}
    for node in s.nodes:
        if node.id in ids:
            problems.append(f"line {node.line}: duplicate node id {node.id!r}")
        ids[node.id] = node
        if node.kind in _PREFIX_KINDS and node.prefix is None:
            problems.append(
                f"line {node.line}: {node.kind.value} {node.id!r} needs a prefix")

    def known(node_id: str | None, line: int, what: str,
              kinds: set[NodeKind] | None = None) -> bool:
        if node_id is None or node_id not in ids:
            problems.append(f"line {line}: {what} references unknown node "
                            f"{node_id!r}")
            return False
        if kinds is not None and ids[node_id].kind not in kinds:
            problems.append(f"line {line}: {what} {node_id!r} has kind "
                            f"{ids[node_id].kind.value}, expected "
                            f"{'/'.join(sorted(k.value for k in kinds))}")
            return False
        return True

    for link in s.links:
        known(link.a, link.line, "link endpoint")
        known(link.b, link.line, "link endpoint")
        if link.latency_us <= 0:
            problems.append(f"line {link.line}: link latency must be positive")
        if link.epsilon < 0:
            problems.append(f"line {link.line}: epsilon must be >= 0")

    for domain in s.domains:
        known(domain.map, domain.line, "domain map", {NodeKind.MAP})
        for ap in domain.aps:
            known(ap, domain.line, "domain access point",
                  {NodeKind.ACCESS_POINT})

    for mobile in s.mobiles:
        known(mobile.id, mobile.line, "mobile", {NodeKind.MOBILE})
        known(mobile.home_agent, mobile.line, "home agent",
              {NodeKind.HOME_AGENT})
        if mobile.start is not None:
            known(mobile.start, mobile.line, "start attachment",
                  {NodeKind.ACCESS_POINT})
        for peer in mobile.correspondents:
            known(peer, mobile.line, "correspondent",
                  {NodeKind.CORRESPONDENT})

    by_mn: dict[str, int] = {}
    sole_mobile = s.mobiles[0].id if len(s.mobiles) == 1 else None
    for move in s.moves:
        mn = move.mn or sole_mobile
        if mn is None:
            problems.append(f"line {move.line}: move needs mn "
                            "(several mobiles declared)")
            continue
        known(mn, move.line, "move target", {NodeKind.MOBILE})
        known(move.ap, move.line, "move access point", {NodeKind.ACCESS_POINT})
        if move.l2_delay_us < 0:
            problems.append(f"line {move.line}: l2_delay_us must be >= 0")
        if (move.l2_min_us is None) != (move.l2_max_us is None):
            problems.append(f"line {move.line}: l2_min_us and l2_max_us "
                            "must be given together")
        elif move.l2_min_us is not None and move.l2_min_us > move.l2_max_us:
            problems.append(f"line {move.line}: l2_min_us must be <= l2_max_us")
        previous = by_mn.get(mn)
        if previous is not None and move.at_us <= previous:
            problems.append(f"line {move.line}: move times for {mn!r} must be "
                            "strictly increasing")
        by_mn[mn] = move.at_us

    for probe in s.probes:
        known(probe.src, probe.line, "probe source")
        known(probe.reflector, probe.line, "probe reflector")
        if probe.interval_us <= 0:
            problems.append(f"line {probe.line}: probe interval must be > 0")

    for group in s.groups:
        if group.address.role is not AddressRole.GROUP:
            problems.append(f"line {group.line}: {group.address} is not a "
                            "multicast group address")
        if group.sender is not None:
            known(group.sender, group.line, "group sender")
        for listener in group.listeners:
            known(listener, group.line, "group listener")

    return problems


def load_scenario(path: str) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        return loads(fh.read())
