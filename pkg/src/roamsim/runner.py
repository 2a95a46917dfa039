"""Scenario orchestration: build the live simulation, run trials, harvest rows.

A trial is a pure function of (scenario, seed, trial index): the engine is
single threaded, every random draw comes from one seeded generator, and all
construction happens in declaration order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .formulas import DelayProfile
from .metrics import FlowCollector, FlowStats, ProbeConfig, ProbeDriver, flow_stats
from .multicast import (
    ListenerSite,
    MulticastReceiver,
    MulticastRouting,
    MulticastSource,
    RsReceiver,
)
from .network import Network
from .packet import AddressRole, Ipv6Addr, combine, make_packet
from .scenario import Scenario
from .topology import NodeKind, Topology
from .unicast import (
    CorrespondentNode,
    DetectionKind,
    DetectionMode,
    Fabric,
    HandoverReport,
    HomeAgent,
    MapAgent,
    MobileNode,
    Variant,
)

MOBILE_IID_BASE = 0x1000
AGENT_IID = 0x1
FALLBACK_HOST_PREFIX = "2001:db8:fffe::"


def expected_local_us(d: DetectionMode) -> int:
    """Mean local handover time implied by a detection configuration."""
    if d.kind is DetectionKind.RA:
        return d.readdress_us + (d.ra_min_us + d.ra_max_us) // 4
    return (d.readdress_us + d.max_sol_delay_us // 2 + d.max_ra_delay_us // 2
            + 2 * d.handshake_flight_us)


@dataclass
class LiveRun:
    scenario: Scenario
    trial: int
    net: Network
    fabric: Fabric
    mobiles: dict[str, MobileNode] = field(default_factory=dict)
    correspondents: dict[str, CorrespondentNode] = field(default_factory=dict)
    home_agents: dict[str, HomeAgent] = field(default_factory=dict)
    collectors: dict[str, FlowCollector] = field(default_factory=dict)
    nominal: dict[str, int] = field(default_factory=dict)
    routing: MulticastRouting | None = None
    receivers: list = field(default_factory=list)
    sources: list[MulticastSource] = field(default_factory=list)
    sites: dict[str, ListenerSite] = field(default_factory=dict)

    def run(self) -> None:
        self.net.run_until(self.scenario.end_time())

    def stats(self, key: str, window=None, via_home=None) -> FlowStats:
        return flow_stats(self.collectors[key], self.nominal[key],
                          window=window, via_home=via_home)

    def reports(self, mn: str | None = None) -> list[HandoverReport]:
        if mn is None:
            mn = next(iter(self.mobiles))
        return self.mobiles[mn].reports

    def profile_for(self, report: HandoverReport, mn: str | None = None,
                    t_local_us: int | None = None) -> DelayProfile:
        """Round trips measured from the report's access point."""
        if mn is None:
            mn = next(iter(self.mobiles))
        mobile = self.mobiles[mn]
        ha = mobile.home_agent.node_id
        cn_addr = mobile.correspondents[0]
        cn = self.net.resolve(cn_addr)
        topo = self.net.topo
        return DelayProfile(
            local_us=report.t_local_us if t_local_us is None else t_local_us,
            home_rtt_us=2 * topo.path_delay(report.ap, ha),
            corr_rtt_us=2 * topo.path_delay(report.ap, cn),
            home_corr_rtt_us=2 * topo.path_delay(ha, cn),
        )


def build(scenario: Scenario, trial: int = 0,
          seed: int | None = None) -> LiveRun:
    base_seed = scenario.seed if seed is None else seed
    topo = Topology()
    for node in scenario.nodes:
        topo.add_node(node.id, node.kind)
    for link in scenario.links:
        topo.add_link(link.a, link.b, link.latency_us, link.epsilon)

    net = Network(topo, seed=f"{base_seed}/{trial}")
    fabric = Fabric(net)
    live = LiveRun(scenario, trial, net, fabric)

    for node in scenario.nodes:
        if node.kind is NodeKind.ACCESS_POINT:
            fabric.ap_prefix[node.id] = node.prefix
    for domain in scenario.domains:
        for ap in domain.aps:
            fabric.map_of_ap[ap] = domain.map

    home_prefixes = {n.prefix.network() for n in scenario.nodes
                     if n.kind is NodeKind.HOME_AGENT}
    fallback_hosts = 0
    for node in scenario.nodes:
        if node.kind is NodeKind.HOME_AGENT:
            addr = node.address or combine(node.prefix, AGENT_IID,
                                           AddressRole.PLAIN)
            home_aps = tuple(ap for ap, prefix in fabric.ap_prefix.items()
                             if prefix.network() == node.prefix.network())
            agent = HomeAgent(fabric, node.id, addr, node.prefix, home_aps)
            live.home_agents[node.id] = agent
        elif node.kind is NodeKind.MAP:
            addr = node.address or combine(node.prefix, AGENT_IID,
                                           AddressRole.PLAIN)
            MapAgent(fabric, node.id, addr, node.prefix)
        elif node.kind is NodeKind.ACCESS_POINT:
            if node.prefix.network() not in home_prefixes:
                net.bind_prefix(node.prefix, node.id)
        elif node.kind is NodeKind.CORRESPONDENT:
            fallback_hosts += 1
            addr = node.address or Ipv6Addr.parse(
                FALLBACK_HOST_PREFIX + format(fallback_hosts, "x"))
            live.correspondents[node.id] = CorrespondentNode(
                fabric, node.id, addr, scenario.protocol)
        elif node.kind is NodeKind.MULTICAST_ROUTER and node.address is not None:
            net.claim_address(node.address, node.id)

    for index, decl in enumerate(scenario.mobiles):
        ha = live.home_agents[decl.home_agent]
        hoa = combine(ha.home_prefix, MOBILE_IID_BASE + index, AddressRole.HOME)
        peers = [live.correspondents[c].addr for c in decl.correspondents]
        mn = MobileNode(fabric, decl.id, hoa, ha, scenario.protocol, peers)
        live.mobiles[decl.id] = mn
        if decl.start is not None:
            if decl.warm_start:
                mn.warm_attach(decl.start)
                if scenario.protocol.route_optimization:
                    for peer_id in decl.correspondents:
                        mn.seed_correspondent_binding(live.correspondents[peer_id])
            else:
                topo.attach(decl.id, decl.start)
                mn._configure_addresses(decl.start)
                mn.at_home = mn._is_home(decl.start)

    _wire_multicast(scenario, live)
    _wire_probes(scenario, live)

    sole = next(iter(live.mobiles)) if live.mobiles else None
    for move in scenario.moves:
        mn_id = move.mn or sole

        def do_move(m=mn_id, mv=move):
            delay = mv.l2_delay_us
            if mv.l2_min_us is not None:
                delay = net.rng.randint(mv.l2_min_us, mv.l2_max_us)
            net.move_mobile(m, mv.ap, delay)

        net.queue.schedule(move.at_us, do_move)

    return live


def _wire_probes(scenario: Scenario, live: LiveRun) -> None:
    for probe in scenario.probes:
        cfg = ProbeConfig(interval_us=probe.interval_us,
                          payload_len=probe.payload_len,
                          start_us=probe.start_us, stop_us=probe.stop_us,
                          flow=probe.flow)
        fwd = FlowCollector(probe.flow)
        echo = FlowCollector(probe.flow + "-echo")
        live.collectors[probe.flow] = fwd
        live.collectors[probe.flow + "-echo"] = echo
        live.nominal[probe.flow] = probe.interval_us
        live.nominal[probe.flow + "-echo"] = probe.interval_us

        if probe.src in live.mobiles:
            mn = live.mobiles[probe.src]
            reflector = live.correspondents[probe.reflector]
            peer = reflector.addr
            reflector.install_echo_app(probe.flow, fwd)
            mn.install_probe_sink(probe.flow, echo)

            def send_fn(seq, t, payload, mn=mn, peer=peer, flow=probe.flow,
                        echo=echo):
                echo.on_send(seq, t)
                mn.send_data(peer, kind="probe", flow=flow, seq=seq,
                             sent_at=t, payload=payload)

            ProbeDriver(live.net, cfg, send_fn, fwd)
        else:
            cn = live.correspondents[probe.src]
            mn = live.mobiles[probe.reflector]
            mn.install_echo_app(probe.flow, fwd)

            def echo_app(_cn, pkt, echo=echo, net=live.net):
                echo.on_deliver(pkt.seq, net.now, via_home=pkt.via_home)
                if pkt.kind == "probe-echo" and pkt.meta is not None:
                    echo.on_rtt(pkt.seq, net.now - pkt.meta.orig_sent_at)

            cn.apps[probe.flow] = echo_app

            def send_fn(seq, t, payload, cn=cn, mn=mn, flow=probe.flow,
                        echo=echo):
                echo.on_send(seq, t)
                cn.send_data(mn.hoa, kind="probe", flow=flow, seq=seq,
                             sent_at=t, payload=payload)

            ProbeDriver(live.net, cfg, send_fn, fwd)


def _wire_multicast(scenario: Scenario, live: LiveRun) -> None:
    if not scenario.groups:
        return
    routing = MulticastRouting(live.net, scenario.multicast)
    live.routing = routing
    receivers: dict[str, MulticastReceiver] = {}
    rs_receivers: dict[str, RsReceiver] = {}

    for group in scenario.groups:
        for listener in group.listeners:
            key = f"{group.flow}@{listener}"
            col = FlowCollector(key)
            live.collectors[key] = col
            live.nominal[key] = group.interval_us
            if listener in live.mobiles:
                mn = live.mobiles[listener]
                if group.receiver_mode == "rs":
                    receiver = rs_receivers.get(listener)
                    if receiver is None:
                        receiver = RsReceiver(routing, mn, {})
                        rs_receivers[listener] = receiver
                        live.receivers.append(receiver)
                    receiver.collectors[group.flow] = col
                    receiver.join(group.address, group.flow, warm=group.warm)
                else:
                    receiver = receivers.get(listener)
                    if receiver is None:
                        receiver = MulticastReceiver(routing, mn, {})
                        receivers[listener] = receiver
                        live.receivers.append(receiver)
                    receiver.collectors[group.flow] = col
                    if group.warm:
                        receiver.warm_join(group.address, group.flow)
                    else:
                        receiver.join(group.address, group.flow)
            else:
                site = live.sites.get(listener)
                if site is None:
                    site = ListenerSite(routing, listener)
                    live.sites[listener] = site
                site.watch(group.flow, col)
                if group.warm:
                    routing.warm_join(group.address, listener)
                else:
                    routing.join(group.address, listener, 0)

        if group.sender is None:
            continue
        if group.sender in live.mobiles:
            mn = live.mobiles[group.sender]
            source = MulticastSource(routing, mn, group.address, group.flow,
                                     group.interval_us, group.start_us,
                                     group.stop_us)
            if group.warm:
                source.start_warm()
            live.sources.append(source)
            live.collectors[group.flow + "-sent"] = source.collector
            live.nominal[group.flow + "-sent"] = group.interval_us
        else:
            sender = group.sender
            decl = scenario.node(sender)
            src_addr = decl.address if decl and decl.address else None
            if src_addr is None:
                src_addr = Ipv6Addr.parse("2001:db8:feed::1")
                live.net.claim_address(src_addr, sender)
            if group.warm:
                routing.warm_tree(group.address, src_addr)
            sent = FlowCollector(group.flow + "-sent")
            live.collectors[group.flow + "-sent"] = sent
            live.nominal[group.flow + "-sent"] = group.interval_us
            _FixedGroupSender(live.net, sender, src_addr, group, sent)


class _FixedGroupSender:
    def __init__(self, net: Network, node_id: str, src: Ipv6Addr, decl, collector):
        self.net = net
        self.node_id = node_id
        self.src = src
        self.decl = decl
        self.collector = collector
        self._seq = 0
        net.queue.schedule(decl.start_us, self._tick)

    def _tick(self) -> None:
        now = self.net.now
        if now >= self.decl.stop_us:
            return
        seq = self._seq
        self._seq += 1
        self.collector.on_send(seq, now)
        pkt = make_packet(self.src, self.decl.address, kind="data",
                          flow=self.decl.flow, seq=seq, sent_at=now)
        self.net.send_from(self.node_id, pkt)
        self.net.queue.schedule(now + self.decl.interval_us, self._tick)


def run_trial(scenario: Scenario, trial: int = 0,
              seed: int | None = None) -> LiveRun:
    live = build(scenario, trial, seed)
    live.run()
    return live
