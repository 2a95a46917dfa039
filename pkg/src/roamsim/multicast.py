"""Multicast mobility over an abstracted routing layer.

The routing oracle has exactly two knobs: how long a membership branch takes
to become operational and how long a new source tree takes to converge.  No
concrete multicast routing protocol is modelled; a packet flows from its
root anchor to every active member along shortest paths once its source
tree is operational, and is dropped (and counted) before that.

Receiver mobility: group subscriptions travel through the serving anchor,
which records them next to the mobile's binding and joins on its behalf.
On a domain change the mobile reports the groups inside the new domain and
re-aims the previous anchor in the same instant; the previous anchor keeps
forwarding group traffic to the new on-link address until a zero-lifetime
release goes out after the first native reception.

Source mobility: the mobile keeps transmitting through its previous anchor
with the previous regional address while a new tree rooted at the current
anchor converges, either duplicating the stream (bi-casting) or probing the
new path sparsely.  The old path stops at a configured timeout sized to
routing convergence.  Rapid movement terminates the intermediate anchor and
falls back to the last established one; leaving home puts the home agent in
the previous-anchor role.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .metrics import FlowCollector
from .network import Network
from .packet import AddressRole, Ipv6Addr, Packet, encapsulate, make_packet
from .unicast import Fabric, HomeAgent, MapAgent, MobileNode


@dataclass
class MulticastConfig:
    join_delay_us: int = 30_000_000          # membership branch build-out
    tree_convergence_us: int = 30_000_000    # source tree build-out
    bicast_timeout_us: int | None = None     # default: convergence + 10 %
    bicast_mode: str = "bicast"              # or "probe"
    probe_interval_us: int = 1_000_000

    def timeout(self) -> int:
        if self.bicast_timeout_us is not None:
            return self.bicast_timeout_us
        return self.tree_convergence_us + self.tree_convergence_us // 10


class MulticastRouting:
    """Oracle distribution layer: members, per-source trees, fan-out."""

    def __init__(self, net: Network, config: MulticastConfig):
        self.net = net
        self.config = config
        self.members: dict[int, dict[str, int]] = {}
        self.trees: dict[tuple[int, int], int] = {}
        self.sinks: dict[str, object] = {}
        self.undelivered = 0
        net.group_router = self.route_from

    def register_sink(self, node_id: str, sink) -> None:
        self.sinks[node_id] = sink

    def join(self, group: Ipv6Addr, node: str, now: int) -> int:
        """Subscribe a router/anchor; returns when its branch is operational."""
        branch = self.members.setdefault(group.value, {})
        if node in branch:
            return branch[node]
        active_from = now + self.config.join_delay_us
        branch[node] = active_from
        return active_from

    def warm_join(self, group: Ipv6Addr, node: str) -> None:
        self.members.setdefault(group.value, {})[node] = 0

    def leave(self, group: Ipv6Addr, node: str) -> None:
        self.members.get(group.value, {}).pop(node, None)

    def request_tree(self, group: Ipv6Addr, source: Ipv6Addr, now: int) -> int:
        key = (group.value, source.value)
        if key not in self.trees:
            self.trees[key] = now + self.config.tree_convergence_us
        return self.trees[key]

    def warm_tree(self, group: Ipv6Addr, source: Ipv6Addr) -> None:
        self.trees[(group.value, source.value)] = 0

    def tree_operational(self, group: Ipv6Addr, source: Ipv6Addr, now: int) -> bool:
        key = (group.value, source.value)
        return key in self.trees and self.trees[key] <= now

    def route_from(self, origin: str, pkt: Packet) -> None:
        self.root_send(self.net.topo.anchor_of(origin), pkt)

    def root_send(self, root: str, pkt: Packet) -> None:
        """Distribute from a tree root to every active member."""
        now = self.net.now
        if not self.tree_operational(pkt.dst, pkt.src, now):
            self.request_tree(pkt.dst, pkt.src, now)
            self.undelivered += 1
            self.net.drop(pkt, "tree-not-converged")
            return
        for member, active_from in self.members.get(pkt.dst.value, {}).items():
            if active_from > now:
                continue
            sink = self.sinks.get(member)
            if sink is None:
                continue
            self.net.deliver_to(root, member, pkt, sink)


class ListenerSite:
    """Fixed subscribed node (multicast router or correspondent host)."""

    def __init__(self, routing: MulticastRouting, node_id: str):
        self.net = routing.net
        self.node_id = node_id
        self.collectors: dict[str, FlowCollector] = {}
        self.identities: set[int] = set()
        routing.register_sink(node_id, self.sink)

    def watch(self, flow: str, collector: FlowCollector) -> None:
        self.collectors[flow] = collector

    def sink(self, pkt: Packet) -> None:
        col = self.collectors.get(pkt.flow or "")
        if col is None:
            return
        self.identities.add(pkt.pseudo_src().value)
        col.on_deliver(pkt.seq, self.net.now, via_home=pkt.via_home)


def anchor_group_sink(routing: MulticastRouting, cache, anchor_id: str,
                      anchor_addr: Ipv6Addr):
    """Fan tree deliveries out to every mobile bound here that subscribed.

    Group traffic carries no routing header, so the anchor-to-mobile hop is
    always tunnelled.
    """
    net = routing.net

    def sink(pkt: Packet) -> None:
        for entry in cache.primary_entries(net.now):
            if pkt.dst in entry.multicast_groups:
                fwd = encapsulate(pkt, anchor_addr, entry.coa)
                net.send_from(anchor_id, replace(fwd, forwarder=anchor_id))

    return sink


@dataclass
class ReceiverReport:
    handover_index: int
    readdressed_at: int
    first_native_at: int | None = None
    release_sent_at: int | None = None
    fallback: bool = False


class MulticastReceiver:
    """Mobile listener role layered on a mobile node's handover machinery."""

    def __init__(self, routing: MulticastRouting, mn: MobileNode,
                 collectors: dict[str, FlowCollector] | None = None):
        self.routing = routing
        self.net = routing.net
        self.mn = mn
        self.groups: dict[int, tuple[Ipv6Addr, str]] = {}   # value -> (addr, flow)
        self.collectors = collectors or {}
        self.reports: list[ReceiverReport] = []
        self.identities: set[int] = set()
        self._prev_anchor: str | None = None
        self._native_seen = False
        mn.handover_hooks.append(self._on_handover)
        self._wire_maps()

    def _wire_maps(self) -> None:
        fabric = self.mn.fabric
        for map_id, agent in fabric.maps.items():
            if map_id not in self.routing.sinks:
                self.routing.register_sink(
                    map_id, anchor_group_sink(self.routing, agent.cache,
                                              map_id, agent.addr))
            agent.mld_hook = self._on_mld
        ha = self.mn.home_agent
        if ha.node_id not in self.routing.sinks:
            self.routing.register_sink(
                ha.node_id, anchor_group_sink(self.routing, ha.cache,
                                              ha.node_id, ha.addr))
        ha.mld_hook = self._on_mld

    def _on_mld(self, anchor: str, group: Ipv6Addr, report: Packet, now: int) -> None:
        self.routing.join(group, anchor, now)

    def join(self, group: Ipv6Addr, flow: str) -> None:
        """Tunnel the listener report through the current anchor."""
        self.groups[group.value] = (group, flow)
        self.mn.extra_prev_holds.add("multicast")
        self.mn.apps[flow] = self._deliver
        self._report_membership(group)

    def warm_join(self, group: Ipv6Addr, flow: str) -> None:
        """Subscription long established: anchor already a member."""
        self.groups[group.value] = (group, flow)
        self.mn.extra_prev_holds.add("multicast")
        self.mn.apps[flow] = self._deliver
        anchor, cache = self._current_anchor()
        entry = cache.lookup_by_coa(self.mn.lcoa, self.net.now)
        if entry is None:
            entry = cache.lookup(self.mn.hoa, self.net.now)
        if entry is not None:
            entry.multicast_groups.add(group)
        self.routing.warm_join(group, anchor)

    def _current_anchor(self):
        if self.mn.map_id is not None and not self.mn.at_home:
            agent = self.mn.fabric.maps[self.mn.map_id]
            return agent.node_id, agent.cache
        ha = self.mn.home_agent
        return ha.node_id, ha.cache

    def _report_membership(self, group: Ipv6Addr) -> None:
        mn = self.mn
        if mn.map_id is not None and not mn.at_home:
            agent = mn.fabric.maps[mn.map_id]
            src = mn.rcoa if mn.rcoa is not None else mn.lcoa
            inner = make_packet(src, agent.addr, kind="mld-report", meta=group)
            mn.net.send_from(mn.node_id,
                             encapsulate(inner, mn.lcoa, agent.addr))
        else:
            ha = mn.home_agent
            src = mn.hoa if mn.at_home else (mn.lcoa or mn.hoa)
            inner = make_packet(src, ha.addr, kind="mld-report", meta=group)
            mn.net.send_from(mn.node_id, encapsulate(inner, src, ha.addr))

    def _on_handover(self, mn: MobileNode, report, phase: str) -> None:
        if phase != "readdressed" or not self.groups:
            return
        if report.intra_domain:
            # movement inside the domain is invisible to multicast routing
            return
        self.reports.append(ReceiverReport(report.index, self.net.now))
        self._native_seen = False
        self._prev_anchor = None
        for group, _flow in self.groups.values():
            self._report_membership(group)
        # the binding update towards the previous anchor is issued by the
        # handover machinery in this same instant; remember who it was
        if mn.last_established is not None:
            self._prev_anchor = mn.last_established[0]

    def _deliver(self, mn: MobileNode, pkt: Packet) -> None:
        if pkt.dst.role is not AddressRole.GROUP:
            return
        group = self.groups.get(pkt.dst.value)
        if group is None:
            return
        _, flow = group
        col = self.collectors.get(flow)
        if col is not None:
            col.on_deliver(pkt.seq, self.net.now, via_home=pkt.via_home)
        self.identities.add(pkt.pseudo_src().value)
        if (not self._native_seen and self.reports
                and pkt.forwarder == mn.map_id):
            self._native_seen = True
            self.reports[-1].first_native_at = self.net.now
            mn.release_previous_hold("multicast")
            if not mn.prev_hold:
                self.reports[-1].release_sent_at = self.net.now


class RsReceiver:
    """Remote-subscription baseline: rejoin natively in every visited network.

    No anchor forwards anything; reception stops at detachment and resumes
    only once the freshly joined branch at the new access network converges.
    """

    def __init__(self, routing: MulticastRouting, mn: MobileNode,
                 collectors: dict[str, FlowCollector] | None = None):
        self.routing = routing
        self.net = routing.net
        self.mn = mn
        self.groups: dict[int, tuple[Ipv6Addr, str]] = {}
        self.collectors = collectors or {}
        self._ap: str | None = None
        mn.handover_hooks.append(self._on_handover)

    def join(self, group: Ipv6Addr, flow: str, warm: bool = False) -> None:
        self.groups[group.value] = (group, flow)
        self.mn.apps[flow] = self._deliver
        self._subscribe(self.net.topo.attachment_of(self.mn.node_id), warm)

    def _subscribe(self, ap: str, warm: bool = False) -> None:
        if ap is None:
            return
        self._ap = ap
        for group, _flow in self.groups.values():
            if warm:
                self.routing.warm_join(group, ap)
            else:
                self.routing.join(group, ap, self.net.now)
        self.routing.register_sink(ap, self._ap_sink(ap))

    def _ap_sink(self, ap: str):
        def sink(pkt: Packet) -> None:
            if self.net.topo.attachment.get(self.mn.node_id) == ap:
                self._deliver(self.mn, pkt)
        return sink

    def _on_handover(self, mn: MobileNode, report, phase: str) -> None:
        if phase != "readdressed" or not self.groups:
            return
        old = self._ap
        if old is not None and old != report.ap:
            for group, _flow in self.groups.values():
                self.routing.leave(group, old)
        self._subscribe(report.ap)

    def _deliver(self, mn: MobileNode, pkt: Packet) -> None:
        entry = self.groups.get(pkt.dst.value)
        if entry is None:
            return
        col = self.collectors.get(entry[1])
        if col is not None:
            col.on_deliver(pkt.seq, self.net.now, via_home=pkt.via_home)


@dataclass
class SourceReport:
    handover_index: int
    readdressed_at: int
    previous_anchor: str | None
    rapid: bool = False
    old_path_stopped_at: int | None = None
    sent_old_path: int = 0
    sent_new_path: int = 0


class MulticastSource:
    """Mobile sender: constant-rate group stream with bi-cast handover."""

    def __init__(self, routing: MulticastRouting, mn: MobileNode,
                 group: Ipv6Addr, flow: str, interval_us: int,
                 start_us: int = 0, stop_us: int = 1_000_000,
                 mode: str | None = None):
        self.routing = routing
        self.net = routing.net
        self.mn = mn
        self.group = group
        self.flow = flow
        self.interval_us = interval_us
        self.stop_us = stop_us
        self.mode = mode or routing.config.bicast_mode
        self.collector = FlowCollector(flow)
        self.reports: list[SourceReport] = []

        self._seq = 0
        self._prev: tuple[str, Ipv6Addr] | None = None   # (anchor node, source addr)
        self._current: tuple[str, Ipv6Addr] | None = None
        self._timer: int | None = None
        self._next_probe_at = 0
        mn.handover_hooks.append(self._on_handover)
        self.net.queue.schedule(start_us, self._tick)

    # -- steady-state sending ------------------------------------------------

    def start_warm(self) -> None:
        """Assume the current tree has long converged."""
        self._current = self._here()
        self.routing.warm_tree(self.group, self._current[1])

    def _here(self) -> tuple[str, Ipv6Addr]:
        mn = self.mn
        if mn.at_home or mn.map_id is None:
            return (mn.home_agent.node_id, mn.hoa)
        return (mn.map_id, mn.rcoa)

    def _tick(self) -> None:
        now = self.net.now
        if now >= self.stop_us:
            return
        seq = self._seq
        self._seq += 1
        self.collector.on_send(seq, now)
        self._transmit(seq, now)
        self.net.queue.schedule(now + self.interval_us, self._tick)

    def _transmit(self, seq: int, now: int) -> None:
        mn = self.mn
        if not mn.link_ready or mn.net.topo.attachment_of(mn.node_id) is None:
            self.net.drop(make_packet(mn.hoa, self.group, flow=self.flow,
                                      seq=seq), "mn-not-readdressed")
            return
        if self._current is None:
            self._current = self._here()
        if self._prev is None:
            self._send_on(self._current, seq, now, empty=False)
            return
        # overlap window: keep the stream on the old path; the new path
        # carries either the duplicate stream or sparse empty probes
        if self.mode == "bicast":
            if self._send_on(self._current, seq, now, empty=False):
                self.reports[-1].sent_new_path += 1
        else:
            self._probe_if_due(now)
        if self._send_on(self._prev, seq, now, empty=False):
            self.reports[-1].sent_old_path += 1

    def _probe_if_due(self, now: int) -> None:
        if now >= self._next_probe_at:
            self._next_probe_at = now + self.routing.config.probe_interval_us
            self._send_on(self._current, -1, now, empty=True)

    def _send_on(self, path: tuple[str, Ipv6Addr], seq: int, now: int,
                 empty: bool) -> bool:
        anchor, source = path
        mn = self.mn
        fields = dict(kind="bicast-probe" if empty else "data",
                      flow=None if empty else self.flow,
                      seq=seq, sent_at=now)
        if source == mn.hoa:
            # home path: tunnel back to the home agent, plain home source
            inner = make_packet(mn.hoa, self.group, **fields)
            return mn.net.send_from(
                mn.node_id, encapsulate(inner, mn.lcoa or mn.hoa,
                                        mn.home_agent.addr))
        pkt = make_packet(source, self.group, hao=mn.hoa, **fields)
        return mn.net.send_via(mn.node_id, anchor, pkt)

    # -- handover ------------------------------------------------------------

    def _on_handover(self, mn: MobileNode, report, phase: str) -> None:
        if phase != "readdressed":
            return
        if report.intra_domain:
            return
        now = self.net.now
        old = self._current
        here = self._here()
        if old is not None and old == here:
            return
        rapid = self._timer is not None and self._prev is not None
        if rapid:
            # stay with the formerly established anchor, cut the intermediate
            if self.reports:
                self.reports[-1].old_path_stopped_at = now
            self.net.queue.cancel(self._timer)
        else:
            self._prev = old
        self._current = here
        self.routing.request_tree(self.group, here[1], now)
        timeout = self.routing.config.timeout()
        self.reports.append(SourceReport(report.index, now,
                                         self._prev[0] if self._prev else None,
                                         rapid=rapid))
        if timeout == 0:
            self._stop_old_path()
        else:
            self._timer = self.net.queue.schedule(now + timeout,
                                                  self._stop_old_path)

    def _stop_old_path(self) -> None:
        if self.reports and self.reports[-1].old_path_stopped_at is None:
            self.reports[-1].old_path_stopped_at = self.net.now
        self._prev = None
        self._timer = None
