"""Mobility state machines: mobile node, home agent, anchor point, correspondent.

Handover choreography after a layer-2 attach:

* plain MIPv6: readdress, register with the home agent, then run the
  reachability exchange and update the correspondent.  The stream towards a
  route-optimised correspondent stays down for the whole chain, which is why
  its length equals the closed-form handoff time on noiseless links.
* hierarchical: movements inside one anchor domain need only a local binding
  update; domain changes repeat the full distant chain.
* shuffling: the mobile first re-aims its previous anchor at the new on-link
  address and keeps talking through it (dual cache entries at the
  correspondent) while the distant updates complete, so the outage stops
  depending on how far away the home agent and the correspondent are.

Forwarding at anchors follows the checksum-neutral rules: packets carrying a
type-2 routing header get their destination swapped, packets carrying a
home-address option get their source swapped, anything else is tunnelled.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field, replace

from .binding import BindingCache, DEFAULT_PREVIOUS_LIFETIME_US
from .network import Network
from .packet import (
    AddressRole,
    Ipv6Addr,
    Packet,
    Tunnel,
    combine,
    decapsulate,
    encapsulate,
    make_packet,
    rewrite_dest,
    rewrite_src,
    verify_checksum,
)


class Variant(enum.Enum):
    MIPV6 = "mipv6"
    HMIPV6 = "hmipv6"
    SHUFFLING = "hmipv6-shuffling"


class DetectionKind(enum.Enum):
    RA = "ra"
    L2_TRIGGER = "l2-trigger"


@dataclass(frozen=True)
class DetectionMode:
    """How a network change is noticed and how long readdressing takes.

    RA mode waits out the residual time to the next unsolicited router
    advertisement (interval drawn uniformly between the two bounds, arrival
    lands uniformly inside it).  Trigger mode runs a solicited handshake:
    random solicitation delay, flight, random advertisement delay, flight.
    """

    kind: DetectionKind = DetectionKind.RA
    ra_min_us: int = 37_000
    ra_max_us: int = 50_000
    readdress_us: int = 25_000
    max_sol_delay_us: int = 1_000
    max_ra_delay_us: int = 1_000
    handshake_flight_us: int = 0

    def __post_init__(self) -> None:
        if self.ra_min_us > self.ra_max_us:
            raise ValueError("ra_min_us must be <= ra_max_us")
        for name in ("readdress_us", "max_sol_delay_us", "max_ra_delay_us",
                     "handshake_flight_us"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def sample_local_delay(self, rng) -> int:
        if self.kind is DetectionKind.RA:
            interval = rng.randint(self.ra_min_us, self.ra_max_us)
            residual = rng.randint(0, interval)
            return residual + self.readdress_us
        wait = rng.randint(0, self.max_sol_delay_us) + self.handshake_flight_us
        wait += rng.randint(0, self.max_ra_delay_us) + self.handshake_flight_us
        return wait + self.readdress_us


@dataclass
class ProtocolConfig:
    variant: Variant = Variant.MIPV6
    detection: DetectionMode = field(default_factory=DetectionMode)
    route_optimization: bool = True
    ba_from_cn: bool = False
    dual_entry: bool | None = None         # defaults to shuffling only
    previous_lifetime_us: int = DEFAULT_PREVIOUS_LIFETIME_US
    binding_lifetime_us: int = 600_000_000
    retransmit_initial_us: int = 1_000_000
    retransmit_tries: int = 3

    def wants_dual(self) -> bool:
        if self.dual_entry is None:
            return self.variant is Variant.SHUFFLING
        return self.dual_entry


@dataclass(frozen=True)
class BindingInfo:
    key: Ipv6Addr
    coa: Ipv6Addr
    lifetime_us: int
    token: int = -1


@dataclass(frozen=True)
class EchoInfo:
    orig_sent_at: int
    token: int = -1


@dataclass
class HandoverReport:
    index: int
    variant: Variant
    ap: str
    l2_up_at: int
    t_local_us: int = -1
    readdress_done_at: int = -1
    intra_domain: bool = False
    local_restore_at: int | None = None
    map_registered_at: int | None = None
    ha_updated_at: int | None = None
    cn_updated_at: int | None = None
    completed_at: int | None = None
    disruption_us: int | None = None
    fallback: str | None = None
    superseded: bool = False


class Fabric:
    """Shared wiring between agents plus a tiny pub/sub bus for reports."""

    def __init__(self, net: Network) -> None:
        self.net = net
        self.ap_prefix: dict[str, Ipv6Addr] = {}
        self.map_of_ap: dict[str, str] = {}
        self.maps: dict[str, "MapAgent"] = {}
        self.home_agents: dict[str, "HomeAgent"] = {}
        self._subscribers: dict[str, list] = {}

    def subscribe(self, topic: str, fn) -> None:
        self._subscribers.setdefault(topic, []).append(fn)

    def publish(self, topic: str, **kw) -> None:
        for fn in self._subscribers.get(topic, []):
            fn(**kw)


class HomeAgent:
    def __init__(self, fabric: Fabric, node_id: str, addr: Ipv6Addr,
                 home_prefix: Ipv6Addr, home_aps: tuple[str, ...] = ()):
        self.fabric = fabric
        self.net = fabric.net
        self.node_id = node_id
        self.addr = addr
        self.home_prefix = home_prefix
        self.cache = BindingCache()
        self.group_hook = None          # set by the multicast layer
        self.mld_hook = None
        fabric.home_agents[node_id] = self
        self.net.register_handler(node_id, self.receive)
        self.net.claim_address(addr, node_id)
        self.net.bind_prefix(home_prefix, node_id, home_aps)

    def receive(self, pkt: Packet) -> None:
        now = self.net.now
        if pkt.tunnel is not None and pkt.tunnel.outer_dst == self.addr:
            inner = decapsulate(pkt)
            if inner.kind == "mld-report":
                entry = self.cache.lookup_by_coa(pkt.tunnel.outer_src, now)
                if entry is not None:
                    entry.multicast_groups.add(inner.meta)
                if self.mld_hook:
                    self.mld_hook(self.node_id, inner.meta, inner, now)
                return
            if inner.dst.role is AddressRole.GROUP and self.group_hook:
                self.group_hook(self.node_id, replace(inner, via_home=True))
                return
            self.net.send_from(self.node_id, replace(inner, via_home=True))
            return
        if pkt.kind == "bu" and pkt.dst == self.addr:
            info: BindingInfo = pkt.meta
            self.cache.update(info.key, info.coa, info.lifetime_us, now)
            self.fabric.publish("ha-binding", agent=self.node_id, key=info.key,
                                coa=info.coa, at=now)
            ack = make_packet(self.addr, pkt.src, kind="ba", meta=info)
            self.net.send_from(self.node_id, ack)
            return
        if pkt.dst.role is AddressRole.GROUP:
            if self.group_hook:
                self.group_hook(self.node_id, pkt)
            return
        self._forward_home_bound(pkt, now)

    def _forward_home_bound(self, pkt: Packet, now: int) -> None:
        entry = self.cache.lookup(pkt.dst, now)
        if entry is not None:
            if pkt.rh2 is not None:
                fwd = rewrite_dest(pkt, entry.coa)
            else:
                fwd = encapsulate(pkt, self.addr, entry.coa)
            self.net.send_from(self.node_id, replace(fwd, via_home=True))
            return
        owner = self.net.owner_of(pkt.dst)
        if owner is not None and self.net.topo.attachment.get(owner) is not None:
            # owner is home; hand over to its access point
            self.net.deliver_leg(self.node_id, self.net.topo.attachment[owner], pkt)
            return
        self.net.drop(pkt, "ha-no-binding")


class MapAgent:
    """Mobility anchor: allocates regional addresses, pivots domain traffic."""

    def __init__(self, fabric: Fabric, node_id: str, addr: Ipv6Addr,
                 prefix: Ipv6Addr):
        self.fabric = fabric
        self.net = fabric.net
        self.node_id = node_id
        self.addr = addr
        self.prefix = prefix
        self.cache = BindingCache()
        self.group_hook = None
        self.mld_hook = None
        # listener reports may arrive before the registration they belong to
        self.pending_groups: dict[int, set] = {}
        fabric.maps[node_id] = self
        self.net.register_handler(node_id, self.receive)
        self.net.claim_address(addr, node_id)
        self.net.bind_prefix(prefix, node_id)

    def regional_addr(self, interface_id: int) -> Ipv6Addr:
        return combine(self.prefix, interface_id, AddressRole.REGIONAL)

    def receive(self, pkt: Packet) -> None:
        now = self.net.now
        if pkt.tunnel is not None:
            if pkt.tunnel.outer_dst == self.addr:
                inner = decapsulate(pkt)
                if inner.kind == "mld-report":
                    self._record_membership(inner, now)
                    return
                if inner.dst.role is AddressRole.GROUP:
                    if self.group_hook:
                        self.group_hook(self.node_id, inner)
                    return
                self._relay_outbound(inner, now)
                return
            # tunnel endpoint is a regional address anchored here: swap the
            # outer header towards the current on-link address
            entry = self.cache.lookup(pkt.tunnel.outer_dst, now)
            if entry is None:
                self.net.drop(pkt, "map-no-binding")
                return
            self.net.send_from(self.node_id,
                               replace(pkt, tunnel=Tunnel(self.addr, entry.coa)))
            return
        if pkt.kind == "bu" and pkt.dst == self.addr:
            info: BindingInfo = pkt.meta
            self.cache.update(info.key, info.coa, info.lifetime_us, now)
            entry = self.cache.lookup(info.key, now)
            if entry is not None and info.key.value in self.pending_groups:
                entry.multicast_groups |= self.pending_groups.pop(info.key.value)
            self.fabric.publish("map-binding", agent=self.node_id, key=info.key,
                                coa=info.coa, lifetime_us=info.lifetime_us, at=now)
            self.net.send_from(self.node_id, make_packet(
                self.addr, pkt.src, kind="ba", meta=info))
            return
        if pkt.dst.role is AddressRole.GROUP:
            if self.group_hook:
                self.group_hook(self.node_id, pkt)
            return
        if pkt.dst.role is AddressRole.REGIONAL and pkt.dst != self.addr:
            self._forward_inbound(pkt, now)
            return
        self._relay_outbound(pkt, now)

    def _forward_inbound(self, pkt: Packet, now: int) -> None:
        entry = self.cache.lookup(pkt.dst, now)
        if entry is None:
            self.net.drop(pkt, "map-no-binding")
            return
        if pkt.rh2 is not None:
            fwd = rewrite_dest(pkt, entry.coa)
        else:
            fwd = encapsulate(pkt, self.addr, entry.coa)
        self.net.send_from(self.node_id, replace(fwd, forwarder=self.node_id))

    def _relay_outbound(self, pkt: Packet, now: int) -> None:
        """Traffic handed to the anchor by a mobile on its way out of the domain."""
        if pkt.src.role is AddressRole.REGIONAL and pkt.src.network() == self.prefix.network():
            self.net.send_from(self.node_id, pkt)
            return
        entry = self.cache.lookup_by_coa(pkt.src, now)
        if entry is None:
            self.net.drop(pkt, "map-unknown-source")
            return
        if pkt.dst.role is AddressRole.GROUP:
            out = replace(pkt, src=entry.key) if pkt.hao is None else rewrite_src(pkt, entry.key)
            if self.group_hook:
                self.group_hook(self.node_id, out)
            return
        self.net.send_from(self.node_id, rewrite_src(pkt, entry.key))

    def _record_membership(self, report: Packet, now: int) -> None:
        group = report.meta
        entry = self.cache.lookup(report.src, now)
        if entry is None:
            entry = self.cache.lookup_by_coa(report.src, now)
        if entry is not None:
            entry.multicast_groups.add(group)
        else:
            self.pending_groups.setdefault(report.src.value, set()).add(group)
        if self.mld_hook:
            self.mld_hook(self.node_id, group, report, now)


class CorrespondentNode:
    """Peer endpoint: reachability-test responder, binding cache, data apps."""

    def __init__(self, fabric: Fabric, node_id: str, addr: Ipv6Addr,
                 config: ProtocolConfig):
        self.fabric = fabric
        self.net = fabric.net
        self.node_id = node_id
        self.addr = addr
        self.config = config
        self.cache = BindingCache(config.previous_lifetime_us)
        self.apps: dict[str, object] = {}
        self.rejected = 0
        self.checksum_failures = 0
        self.net.register_handler(node_id, self.receive)
        self.net.claim_address(addr, node_id)

    def receive(self, pkt: Packet) -> None:
        now = self.net.now
        if pkt.tunnel is not None:
            pkt = replace(decapsulate(pkt), via_home=pkt.via_home)
        if pkt.kind == "hoti":
            self.net.send_from(self.node_id, make_packet(
                self.addr, pkt.src, kind="hot", meta=pkt.meta))
            return
        if pkt.kind == "coti":
            self.net.send_from(self.node_id, make_packet(
                self.addr, pkt.src, kind="cot", meta=pkt.meta))
            return
        if pkt.kind == "bu":
            info: BindingInfo = pkt.meta
            self.cache.update(info.key, info.coa, info.lifetime_us, now,
                              dual=self.config.wants_dual())
            self.fabric.publish("cn-binding", agent=self.node_id, key=info.key,
                                coa=info.coa, at=now)
            if self.config.ba_from_cn:
                self.net.send_from(self.node_id, make_packet(
                    self.addr, pkt.src, kind="ba", meta=info))
            return
        self._accept_data(pkt, now)

    def _accept_data(self, pkt: Packet, now: int) -> None:
        if not verify_checksum(pkt):
            self.checksum_failures += 1
            return
        # multicast packets cannot be checked against the cache: a listener
        # generally holds no binding for the sender's home address
        if pkt.hao is not None and pkt.dst.role is not AddressRole.GROUP:
            if not self.cache.accepts_source(pkt.hao, pkt.src, now):
                self.rejected += 1
                self.net.drop(pkt, "cn-unverified-hao")
                return
            if self.cache.note_source_seen(pkt.hao, pkt.src, now):
                self.fabric.publish("cn-previous-evicted", agent=self.node_id,
                                    key=pkt.hao, at=now)
        app = self.apps.get(pkt.flow or "")
        if app is not None:
            app(self, pkt)

    def send_data(self, to: Ipv6Addr, **fields) -> None:
        """Address a packet by the peer's stable identity, using the cache."""
        entry = self.cache.lookup(to, self.net.now)
        if entry is not None:
            pkt = make_packet(self.addr, entry.coa, rh2=to, **fields)
        else:
            pkt = make_packet(self.addr, to, **fields)
        self.net.send_from(self.node_id, pkt)

    def install_echo_app(self, flow: str, collector) -> None:
        """Reflect probe packets back to their applicative source."""

        def app(cn, pkt: Packet) -> None:
            collector.on_deliver(pkt.seq, self.net.now, via_home=pkt.via_home)
            if pkt.kind == "probe":
                cn.send_data(pkt.pseudo_src(), kind="probe-echo", flow=pkt.flow,
                             seq=pkt.seq, payload=pkt.payload,
                             meta=EchoInfo(pkt.sent_at))

        self.apps[flow] = app


class MobileNode:
    def __init__(self, fabric: Fabric, node_id: str, hoa: Ipv6Addr,
                 home_agent: HomeAgent, config: ProtocolConfig,
                 correspondents: list[Ipv6Addr] | None = None):
        self.fabric = fabric
        self.net = fabric.net
        self.node_id = node_id
        self.hoa = hoa
        self.home_agent = home_agent
        self.config = config
        self.correspondents = list(correspondents or [])
        self.iid = hoa.host_part()

        self.lcoa: Ipv6Addr | None = None
        self.map_id: str | None = None
        self.rcoa: Ipv6Addr | None = None
        self.prev_map_id: str | None = None
        self.prev_rcoa: Ipv6Addr | None = None
        self.last_established: tuple[str, Ipv6Addr] | None = None
        self.ha_registered = False
        self.rr_done: dict[int, bool] = {}
        self.use_new_path = True
        self.at_home = False
        self.link_ready = True
        # tags other agents add while they still need the previous anchor;
        # the zero-lifetime release goes out once every hold is gone
        self.extra_prev_holds: set[str] = set()
        self.prev_hold: set[str] = set()

        self.reports: list[HandoverReport] = []
        self.apps: dict[str, object] = {}
        self.handover_hooks: list = []      # fn(mn, report, phase)
        self.checksum_failures = 0

        self._token = itertools.count(1)
        self._pending: dict[int, int] = {}        # token -> timer event id
        self._continuations: dict[int, object] = {}
        self._rr_state: dict[int, dict] = {}
        self._generation = 0

        self.net.register_handler(node_id, self.receive)
        self.net.claim_address(hoa, node_id)
        self.net.on_l2_up(node_id, self.on_l2_up)
        fabric.subscribe("cn-binding", self._on_cn_binding)

    # -- bootstrap ---------------------------------------------------------

    def warm_attach(self, ap: str) -> None:
        """Place the mobile at `ap` with all bindings pre-established, as if
        every registration had long completed (no signalling is generated)."""
        now = self.net.now
        self.net.topo.attach(self.node_id, ap)
        self._configure_addresses(ap)
        self.at_home = self._is_home(ap)
        self.link_ready = True
        if self.at_home:
            return
        care_of = self.rcoa if self.rcoa is not None else self.lcoa
        self.home_agent.cache.update(self.hoa, care_of,
                                     self.config.binding_lifetime_us, now)
        self.ha_registered = True
        if self.map_id is not None:
            self.fabric.maps[self.map_id].cache.update(
                self.rcoa, self.lcoa, self.config.binding_lifetime_us, now)
            self.last_established = (self.map_id, self.rcoa)
        if self.config.route_optimization:
            for peer in self.correspondents:
                self.rr_done[peer.value] = True

    def seed_correspondent_binding(self, cn: CorrespondentNode) -> None:
        care_of = self.rcoa if self.rcoa is not None else self.lcoa
        if care_of is not None and not self.at_home:
            cn.cache.update(self.hoa, care_of, self.config.binding_lifetime_us,
                            self.net.now, dual=self.config.wants_dual())

    # -- handover ----------------------------------------------------------

    def on_l2_up(self, ap: str) -> None:
        now = self.net.now
        self._generation += 1
        gen = self._generation
        self._cancel_all_timers()
        self.link_ready = False
        if self.reports and self.reports[-1].completed_at is None:
            self.reports[-1].superseded = True
        report = HandoverReport(index=len(self.reports), variant=self.config.variant,
                                ap=ap, l2_up_at=now)
        report.t_local_us = self.config.detection.sample_local_delay(self.net.rng)
        self.reports.append(report)
        self.net.queue.schedule(now + report.t_local_us,
                                lambda: self._guard(gen, self._readdressed, ap, report))

    def _readdressed(self, ap: str, report: HandoverReport) -> None:
        report.readdress_done_at = self.net.now
        old_map, old_rcoa = self.map_id, self.rcoa
        was_home = self.at_home
        self._configure_addresses(ap)
        self.at_home = self._is_home(ap)
        self.link_ready = True
        intra = (self.config.variant is not Variant.MIPV6
                 and old_map is not None and self.map_id == old_map)
        if not intra:
            # the care-of address visible to distant peers changed
            self.ha_registered = False
            for peer in self.correspondents:
                self.rr_done[peer.value] = False
        self._notify_hooks(report, "readdressed")

        if self.config.variant is Variant.MIPV6:
            self._bu_home(report)
            return
        if intra:
            report.intra_domain = True
            self._register_map(report)
            return
        if self.last_established is None and old_map is not None:
            self.last_established = (old_map, old_rcoa)
        if self.config.variant is Variant.SHUFFLING and self.last_established \
                and not was_home:
            self.prev_map_id, self.prev_rcoa = self.last_established
            self._shuffle_previous_anchor(report)
            return
        self._register_map(report)

    def _configure_addresses(self, ap: str) -> None:
        prefix = self.fabric.ap_prefix[ap]
        self.lcoa = combine(prefix, self.iid, AddressRole.ON_LINK)
        self.net.claim_address(self.lcoa, self.node_id)
        if self.config.variant is Variant.MIPV6:
            self.map_id = None
            self.rcoa = None
            return
        self.map_id = self.fabric.map_of_ap.get(ap)
        if self.map_id is not None:
            self.rcoa = self.fabric.maps[self.map_id].regional_addr(self.iid)
            self.net.claim_address(self.rcoa, self.node_id)
        else:
            self.rcoa = None

    def _is_home(self, ap: str) -> bool:
        return self.fabric.ap_prefix[ap].network() == self.hoa.network()

    # phase 1 (shuffling): re-aim the previous anchor at the new address
    def _shuffle_previous_anchor(self, report: HandoverReport) -> None:
        gen = self._generation
        prev = self.fabric.maps[self.prev_map_id]
        self.use_new_path = False
        self.prev_hold = set(self.extra_prev_holds)
        if self.config.route_optimization and self.correspondents:
            self.prev_hold.add("unicast")

        def done(at: int) -> None:
            report.local_restore_at = at
            report.disruption_us = at - report.l2_up_at
            self._notify_hooks(report, "local-restored")
            self._register_map(report)

        sent = self._request(prev.addr, BindingInfo(self.prev_rcoa, self.lcoa,
                                                    self.config.binding_lifetime_us),
                             lambda at: self._guard(gen, done, at))
        if not sent:
            report.fallback = "previous-map-unreachable"
            self.prev_map_id = None
            self.prev_rcoa = None
            self.use_new_path = True
            self._register_map(report)

    # phase 2: register with the serving anchor (regional address binding)
    def _register_map(self, report: HandoverReport) -> None:
        if self.map_id is None:
            self._bu_home(report)
            return
        gen = self._generation
        agent = self.fabric.maps[self.map_id]

        def done(at: int) -> None:
            report.map_registered_at = at
            self.last_established = (self.map_id, self.rcoa)
            if report.intra_domain:
                report.local_restore_at = at
                report.disruption_us = at - report.l2_up_at
                report.completed_at = at
                self._notify_hooks(report, "completed")
                return
            self._notify_hooks(report, "map-registered")
            self._bu_home(report)

        self._request(agent.addr, BindingInfo(self.rcoa, self.lcoa,
                                              self.config.binding_lifetime_us),
                      lambda at: self._guard(gen, done, at))

    # phase 3: home registration, then reachability exchange per correspondent
    def _bu_home(self, report: HandoverReport) -> None:
        gen = self._generation
        care_of = self.rcoa if self.rcoa is not None else self.lcoa

        def done(at: int) -> None:
            report.ha_updated_at = at
            self.ha_registered = True
            self._notify_hooks(report, "ha-updated")
            if self.config.route_optimization and self.correspondents:
                self._start_rr(report)
            else:
                self.use_new_path = True
                self.release_previous_hold("unicast")
                self._finish(report, at)

        self._request(self.home_agent.addr, BindingInfo(self.hoa, care_of,
                                                         self.config.binding_lifetime_us),
                      lambda at: self._guard(gen, done, at))

    def _start_rr(self, report: HandoverReport) -> None:
        gen = self._generation
        for peer in self.correspondents:
            self._rr_state[peer.value] = {"hot": False, "cot": False,
                                          "report": report, "tries": 0}
            self._send_rr_pair(peer, gen)
            self._arm_rr_retransmit(peer, gen, self.config.retransmit_initial_us)

    def _send_rr_pair(self, peer: Ipv6Addr, gen: int) -> None:
        token = next(self._token)
        self._rr_state[peer.value]["token"] = token
        care_of = self._rr_care_of()
        hoti = make_packet(self.hoa, peer, kind="hoti", meta=token)
        self.net.send_from(self.node_id,
                           encapsulate(hoti, self.lcoa, self.home_agent.addr))
        coti = make_packet(care_of, peer, kind="coti", meta=token)
        if self.rcoa is not None:
            self.net.send_via(self.node_id, self.map_id, coti)
        else:
            self.net.send_from(self.node_id, coti)

    def _rr_care_of(self) -> Ipv6Addr:
        return self.rcoa if self.rcoa is not None else self.lcoa

    def _arm_rr_retransmit(self, peer: Ipv6Addr, gen: int, backoff: int) -> None:
        state = self._rr_state[peer.value]

        def fire() -> None:
            if self._generation != gen:
                return
            st = self._rr_state.get(peer.value)
            if st is None or (st["hot"] and st["cot"]):
                return
            st["tries"] += 1
            if st["tries"] >= self.config.retransmit_tries:
                return
            self._send_rr_pair(peer, gen)
            self._arm_rr_retransmit(peer, gen, backoff * 2)

        state["timer"] = self.net.queue.schedule_in(backoff, fire)

    def _rr_progress(self, kind: str, token) -> None:
        for peer_value, state in self._rr_state.items():
            if state.get("token") == token:
                state[kind] = True
                if state["hot"] and state["cot"] and not state.get("done"):
                    state["done"] = True
                    timer = state.get("timer")
                    if timer is not None:
                        self.net.queue.cancel(timer)
                    self._bu_correspondent(peer_value, state["report"])
                return

    def _bu_correspondent(self, peer_value: int, report: HandoverReport) -> None:
        peer = next(p for p in self.correspondents if p.value == peer_value)
        care_of = self._rr_care_of()
        bu = make_packet(care_of, peer, hao=self.hoa, kind="bu",
                         meta=BindingInfo(self.hoa, care_of,
                                          self.config.binding_lifetime_us))
        if self.rcoa is not None:
            self.net.send_via(self.node_id, self.map_id, bu)
        else:
            self.net.send_from(self.node_id, bu)
        self.rr_done[peer_value] = True
        if all(self.rr_done.get(p.value) for p in self.correspondents):
            self._switch_to_new_path(report)

    def _switch_to_new_path(self, report: HandoverReport) -> None:
        self.use_new_path = True
        self.release_previous_hold("unicast")
        self._notify_hooks(report, "path-switched")

    def release_previous_hold(self, tag: str) -> None:
        """Drop one reason for keeping the previous anchor alive; send the
        zero-lifetime release once nobody needs it anymore."""
        self.prev_hold.discard(tag)
        if not self.prev_hold and self.prev_map_id is not None:
            self._release_previous(self.fabric.maps[self.prev_map_id])

    def _release_previous(self, prev: "MapAgent") -> None:
        off = make_packet(self.lcoa, prev.addr, kind="bu",
                          meta=BindingInfo(self.prev_rcoa, self.lcoa, 0))
        self.net.send_from(self.node_id, off)
        self.prev_map_id = None
        self.prev_rcoa = None

    def _on_cn_binding(self, agent: str, key: Ipv6Addr, coa: Ipv6Addr, at: int) -> None:
        if key != self.hoa or not self.reports:
            return
        report = self.reports[-1]
        if report.completed_at is None and coa == self._rr_care_of():
            report.cn_updated_at = at
            self._finish(report, at)

    def _finish(self, report: HandoverReport, at: int) -> None:
        report.completed_at = at
        if report.disruption_us is None:
            report.disruption_us = at - report.l2_up_at
        if report.local_restore_at is None:
            report.local_restore_at = at
        self._notify_hooks(report, "completed")

    # -- requests with acknowledgement and doubling backoff ----------------

    def _request(self, to_addr: Ipv6Addr, info: BindingInfo, on_done,
                 tries: int | None = None) -> bool:
        gen = self._generation
        token = next(self._token)
        info = replace(info, token=token)
        self._continuations[token] = on_done
        max_tries = self.config.retransmit_tries if tries is None else tries

        def send(attempt: int, backoff: int) -> bool:
            pkt = make_packet(self.lcoa or self.hoa, to_addr, kind="bu", meta=info)
            if not self.net.send_from(self.node_id, pkt):
                return False
            if attempt + 1 < max_tries:
                def fire() -> None:
                    if self._generation != gen or token not in self._continuations:
                        return
                    send(attempt + 1, backoff * 2)
                self._pending[token] = self.net.queue.schedule_in(backoff, fire)
            return True

        return send(0, self.config.retransmit_initial_us)

    def _cancel_all_timers(self) -> None:
        for timer in self._pending.values():
            self.net.queue.cancel(timer)
        self._pending.clear()
        self._continuations.clear()
        for state in self._rr_state.values():
            timer = state.get("timer")
            if timer is not None:
                self.net.queue.cancel(timer)
        self._rr_state.clear()

    def _guard(self, gen: int, fn, *args) -> None:
        if self._generation == gen:
            fn(*args)

    def _notify_hooks(self, report: HandoverReport, phase: str) -> None:
        for hook in self.handover_hooks:
            hook(self, report, phase)

    # -- receive path -------------------------------------------------------

    def receive(self, pkt: Packet) -> None:
        if pkt.tunnel is not None:
            pkt = replace(decapsulate(pkt), via_home=pkt.via_home)
        if pkt.kind == "ba":
            info: BindingInfo = pkt.meta
            timer = self._pending.pop(info.token, None)
            if timer is not None:
                self.net.queue.cancel(timer)
            cont = self._continuations.pop(info.token, None)
            if cont is not None:
                cont(self.net.now)
            return
        if pkt.kind == "hot":
            self._rr_progress("hot", pkt.meta)
            return
        if pkt.kind == "cot":
            self._rr_progress("cot", pkt.meta)
            return
        if not verify_checksum(pkt):
            self.checksum_failures += 1
            return
        app = self.apps.get(pkt.flow or "")
        if app is not None:
            app(self, pkt)

    # -- data path -----------------------------------------------------------

    def send_data(self, peer: Ipv6Addr, **fields) -> None:
        """Route application data according to the current mobility state."""
        if not self.link_ready:
            self.net.drop(make_packet(self.hoa, peer, **fields),
                          "mn-not-readdressed")
            return
        if self.at_home or self.lcoa is None:
            self.net.send_from(self.node_id,
                               make_packet(self.hoa, peer, **fields))
            return
        if self.config.variant is not Variant.MIPV6:
            self._send_data_hmip(peer, **fields)
            return
        if self.config.route_optimization and self.rr_done.get(peer.value):
            pkt = make_packet(self.lcoa, peer, hao=self.hoa, **fields)
            self.net.send_from(self.node_id, pkt)
            return
        self._reverse_tunnel(peer, **fields)

    def _send_data_hmip(self, peer: Ipv6Addr, **fields) -> None:
        if not self.use_new_path and self.prev_map_id is not None:
            pkt = make_packet(self.lcoa, peer, hao=self.hoa, **fields)
            self.net.send_via(self.node_id, self.prev_map_id, pkt)
            return
        if self.config.route_optimization and self.rr_done.get(peer.value) \
                and self.map_id is not None:
            pkt = make_packet(self.lcoa, peer, hao=self.hoa, **fields)
            self.net.send_via(self.node_id, self.map_id, pkt)
            return
        self._reverse_tunnel(peer, **fields)

    def _reverse_tunnel(self, peer: Ipv6Addr, **fields) -> None:
        if not self.ha_registered:
            self.net.drop(make_packet(self.hoa, peer, **fields), "mn-no-egress")
            return
        inner = make_packet(self.hoa, peer, **fields)
        self.net.send_from(self.node_id,
                           encapsulate(inner, self.lcoa, self.home_agent.addr))

    def install_probe_sink(self, flow: str, collector) -> None:
        def app(mn, pkt: Packet) -> None:
            collector.on_deliver(pkt.seq, self.net.now, via_home=pkt.via_home)
            if pkt.kind == "probe-echo" and isinstance(pkt.meta, EchoInfo):
                collector.on_rtt(pkt.seq, self.net.now - pkt.meta.orig_sent_at)
        self.apps[flow] = app

    def install_echo_app(self, flow: str, collector) -> None:
        def app(mn, pkt: Packet) -> None:
            collector.on_deliver(pkt.seq, self.net.now, via_home=pkt.via_home)
            if pkt.kind == "probe":
                mn.send_data(pkt.pseudo_src(), kind="probe-echo", flow=pkt.flow,
                             seq=pkt.seq, payload=pkt.payload,
                             meta=EchoInfo(pkt.sent_at))
        self.apps[flow] = app
