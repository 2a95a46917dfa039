"""Packet transport over the topology.

Each forwarding leg is a single scheduled delivery after the shortest-path
latency between anchors.  Route resolution is address-driven: on-link and
regional prefixes anchor at their access point or anchor agent, the home
prefix anchors at the home agent while the owner is away, and exact
addresses anchor at their fixed node.

Jitter: every packet journey draws one noise value in [-1, 1] at its origin
and keeps it across forwarding hops.  A leg adds round(noise * sum of
epsilon * latency) over its links, so jitter accumulates proportionally to
the traversed network length and vanishes exactly when all epsilon are 0.

Loss: a mobile node receives nothing while detached.  Packets that reach an
access point whose target has moved away are dropped there; packets a
detached mobile tries to send are dropped at the origin.  Send calls return
False when the packet could not leave the origin or had no path, which
models an immediate unreachability indication.
"""

from __future__ import annotations

import dataclasses
import random
from typing import Callable

from .engine import EventQueue
from .packet import AddressRole, Ipv6Addr, Packet
from .topology import NodeKind, Topology, UnknownNodeError, UnreachableError

Handler = Callable[[Packet], None]


class Network:
    def __init__(self, topology: Topology, seed: int | str = 0) -> None:
        self.topo = topology
        self.queue = EventQueue()
        self.rng = random.Random(seed)
        self.handlers: dict[str, Handler] = {}
        self.group_router: Callable[[str, Packet], bool] | None = None
        self.l2_up_listeners: dict[str, list[Callable[[str], None]]] = {}
        self.drops: list[tuple[int, str, str | None, int]] = []
        self.tracing = False
        self.trace: list[tuple] = []
        self._owners: dict[int, str] = {}
        self._exact_anchor: dict[int, str] = {}
        self._prefixes: list[tuple[int, int, str, tuple[str, ...]]] = []

    # -- wiring ---------------------------------------------------------

    @property
    def now(self) -> int:
        return self.queue.clock

    def register_handler(self, node_id: str, handler: Handler) -> None:
        self.handlers[node_id] = handler

    def on_l2_up(self, mn: str, callback: Callable[[str], None]) -> None:
        self.l2_up_listeners.setdefault(mn, []).append(callback)

    def claim_address(self, addr: Ipv6Addr, owner: str) -> None:
        """Record which node answers for an exact address."""
        self._owners[addr.value] = owner
        if not self.topo.is_mobile(owner):
            self._exact_anchor[addr.value] = owner

    def bind_prefix(self, prefix: Ipv6Addr, anchor: str,
                    home_aps: tuple[str, ...] = ()) -> None:
        """Route a prefix to an anchor node.

        `home_aps` marks access points on the anchor's own link: while the
        address owner is attached to one of them the anchor is bypassed and
        delivery is direct.
        """
        self._prefixes.append((prefix.network(), prefix.prefix_len, anchor, home_aps))
        self._prefixes.sort(key=lambda e: -e[1])

    # -- address resolution ----------------------------------------------

    def owner_of(self, addr: Ipv6Addr) -> str | None:
        return self._owners.get(addr.value)

    def resolve(self, addr: Ipv6Addr) -> str:
        """Anchor node a packet for `addr` is routed towards."""
        anchor = self._exact_anchor.get(addr.value)
        if anchor is not None:
            return anchor
        for network, plen, anchor, home_aps in self._prefixes:
            mask = ((1 << plen) - 1) << (128 - plen)
            if addr.value & mask == network:
                if home_aps:
                    owner = self._owners.get(addr.value)
                    if owner is not None and self.topo.attachment.get(owner) in home_aps:
                        return self.topo.attachment[owner]
                return anchor
        raise UnreachableError(f"no route for {addr}")

    # -- transport --------------------------------------------------------

    def send_from(self, origin: str, packet: Packet) -> bool:
        """Route by the outermost destination address."""
        packet = self._with_noise(packet)
        dst = packet.tunnel.outer_dst if packet.tunnel else packet.dst
        if dst.role is AddressRole.GROUP:
            return self._send_group(origin, packet)
        if self.topo.is_mobile(origin) and self.topo.attachment_of(origin) is None:
            self.drop(packet, "origin-detached")
            return False
        return self._leg(origin, self.resolve(dst), packet)

    def send_via(self, origin: str, relay: str, packet: Packet) -> bool:
        """Hand the packet to a forwarding anchor instead of routing by dst."""
        packet = self._with_noise(packet)
        if self.topo.is_mobile(origin) and self.topo.attachment_of(origin) is None:
            self.drop(packet, "origin-detached")
            return False
        return self._leg(origin, relay, packet)

    def deliver_leg(self, src: str, dst_node: str, packet: Packet) -> bool:
        """One explicit leg between anchors (used by the multicast layer)."""
        return self._leg(src, dst_node, self._with_noise(packet))

    def deliver_to(self, src: str, dst_node: str, packet: Packet, sink) -> bool:
        """Like deliver_leg, but arrival invokes `sink` instead of the
        destination's registered handler (tree fan-out bypasses routing)."""
        packet = self._with_noise(packet)
        try:
            base = self.topo.path_delay(src, dst_node)
            amp = self.topo.path_noise_amplitude(src, dst_node)
        except UnreachableError:
            self.drop(packet, "no-path")
            return False
        delay = base
        if amp:
            delay = max(0, base + round(packet.noise * amp))
        self.queue.schedule(self.now + delay, lambda: sink(packet))
        return True

    def _send_group(self, origin: str, packet: Packet) -> bool:
        if self.group_router is None:
            raise UnreachableError("no multicast routing configured")
        if self.topo.is_mobile(origin) and self.topo.attachment_of(origin) is None:
            self.drop(packet, "origin-detached")
            return False
        self.group_router(origin, packet)
        return True

    def _with_noise(self, packet: Packet) -> Packet:
        if packet.noise is None:
            packet = dataclasses.replace(packet, noise=self.rng.uniform(-1.0, 1.0))
        return packet

    def _leg(self, src: str, dst_node: str, packet: Packet) -> bool:
        try:
            base = self.topo.path_delay(src, dst_node)
            amp = self.topo.path_noise_amplitude(src, dst_node)
        except UnreachableError:
            self.drop(packet, "no-path")
            return False
        delay = base
        if amp:
            delay = max(0, base + round(packet.noise * amp))
        self.queue.schedule(self.now + delay, lambda: self._arrive(dst_node, packet))
        return True

    def _arrive(self, node: str, packet: Packet) -> None:
        if self.tracing:
            self.trace.append((self.now, node, packet.kind, packet.flow, packet.seq))
        if self.topo.kinds[node] is NodeKind.ACCESS_POINT:
            handler = self.handlers.get(node)
            dst = packet.tunnel.outer_dst if packet.tunnel else packet.dst
            if handler is not None and dst.role is AddressRole.GROUP:
                handler(packet)
                return
            self._wireless_delivery(node, packet)
            return
        handler = self.handlers.get(node)
        if handler is None:
            self.drop(packet, f"no-handler:{node}")
            return
        handler(packet)

    def _wireless_delivery(self, ap: str, packet: Packet) -> None:
        dst = packet.tunnel.outer_dst if packet.tunnel else packet.dst
        owner = self._owners.get(dst.value)
        if owner is None or self.topo.attachment.get(owner) != ap:
            self.drop(packet, "ap-drop")
            return
        handler = self.handlers.get(owner)
        if handler is None:
            self.drop(packet, f"no-handler:{owner}")
            return
        handler(packet)

    def drop(self, packet: Packet, reason: str) -> None:
        self.drops.append((self.now, reason, packet.flow, packet.seq))
        if self.tracing:
            self.trace.append((self.now, "drop:" + reason, packet.kind,
                               packet.flow, packet.seq))

    # -- mobility ----------------------------------------------------------

    def move_mobile(self, mn: str, new_ap: str, l2_delay_us: int) -> None:
        """Detach now, reattach after the layer-2 handoff, raise L2-up."""
        if not self.topo.node_exists(mn) or not self.topo.node_exists(new_ap):
            raise UnknownNodeError(mn if not self.topo.node_exists(mn) else new_ap)
        if self.topo.kinds[new_ap] is not NodeKind.ACCESS_POINT:
            raise ValueError(f"{new_ap} is not an access point")
        self.topo.detach(mn)

        def reattach() -> None:
            self.topo.attach(mn, new_ap)
            for callback in self.l2_up_listeners.get(mn, []):
                callback(new_ap)

        if l2_delay_us == 0:
            reattach()
        else:
            self.queue.schedule(self.now + l2_delay_us, reattach)

    def run_until(self, t_end: int) -> int:
        return self.queue.run_until(t_end)
