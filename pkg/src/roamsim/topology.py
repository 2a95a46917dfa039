"""Network topology: typed nodes, latency-weighted links, mobile attachment.

Routing is static shortest path by total one-way latency, computed once per
attachment state.  Mobile nodes have no links of their own; they are
reachable through their current access point, and the wireless hop itself
contributes no latency (the access network links carry it).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import networkx as nx


class UnknownNodeError(KeyError):
    pass


class UnreachableError(ValueError):
    """No usable path, e.g. towards a detached mobile node."""


class NodeKind(enum.Enum):
    ROUTER = "router"
    HOME_AGENT = "home-agent"
    MAP = "map"
    ACCESS_POINT = "access-point"
    MOBILE = "mobile-node"
    CORRESPONDENT = "correspondent-node"
    MULTICAST_ROUTER = "multicast-router"


@dataclass(frozen=True)
class Link:
    a: str
    b: str
    latency_us: int
    epsilon: float = 0.0


class Topology:
    def __init__(self) -> None:
        self.kinds: dict[str, NodeKind] = {}
        self.links: list[Link] = []
        self.attachment: dict[str, str | None] = {}
        self._graph = nx.Graph()
        self._paths: dict[str, tuple[dict, dict]] = {}

    def add_node(self, node_id: str, kind: NodeKind) -> None:
        if node_id in self.kinds:
            raise ValueError(f"duplicate node id {node_id!r}")
        self.kinds[node_id] = kind
        if kind is NodeKind.MOBILE:
            self.attachment[node_id] = None
        else:
            self._graph.add_node(node_id)

    def add_link(self, a: str, b: str, latency_us: int, epsilon: float = 0.0) -> None:
        for n in (a, b):
            if n not in self.kinds:
                raise UnknownNodeError(n)
            if self.kinds[n] is NodeKind.MOBILE:
                raise ValueError("mobile nodes attach to access points, not links")
        if latency_us <= 0:
            raise ValueError(f"link {a}-{b}: latency must be strictly positive")
        if epsilon < 0:
            raise ValueError(f"link {a}-{b}: epsilon must be >= 0")
        self.links.append(Link(a, b, latency_us, epsilon))
        self._graph.add_edge(a, b, latency_us=latency_us, epsilon=epsilon)
        self._paths.clear()

    def scale_links(self, factor: int, touching: set[str] | None = None) -> None:
        """Multiply latencies, optionally only on links touching given nodes."""
        rescaled = []
        for link in self.links:
            if touching is None or link.a in touching or link.b in touching:
                link = Link(link.a, link.b, link.latency_us * factor, link.epsilon)
                self._graph.edges[link.a, link.b]["latency_us"] = link.latency_us
            rescaled.append(link)
        self.links = rescaled
        self._paths.clear()

    def node_exists(self, node_id: str) -> bool:
        return node_id in self.kinds

    def is_mobile(self, node_id: str) -> bool:
        return self.kinds.get(node_id) is NodeKind.MOBILE

    def attach(self, mn: str, ap: str) -> None:
        if mn not in self.kinds or ap not in self.kinds:
            raise UnknownNodeError(mn if mn not in self.kinds else ap)
        if self.kinds[mn] is not NodeKind.MOBILE:
            raise ValueError(f"{mn} is not a mobile node")
        if self.kinds[ap] is not NodeKind.ACCESS_POINT:
            raise ValueError(f"{ap} is not an access point")
        self.attachment[mn] = ap

    def detach(self, mn: str) -> None:
        if mn not in self.attachment:
            raise UnknownNodeError(mn)
        self.attachment[mn] = None

    def attachment_of(self, mn: str) -> str | None:
        if mn not in self.attachment:
            raise UnknownNodeError(mn)
        return self.attachment[mn]

    def anchor_of(self, node_id: str) -> str:
        """Fixed-graph vertex a node is reachable through."""
        if node_id not in self.kinds:
            raise UnknownNodeError(node_id)
        if self.kinds[node_id] is NodeKind.MOBILE:
            ap = self.attachment[node_id]
            if ap is None:
                raise UnreachableError(f"{node_id} is detached")
            return ap
        return node_id

    def path_delay(self, src: str, dst: str) -> int:
        """One-way latency sum along the configured route, in microseconds."""
        a, b = self.anchor_of(src), self.anchor_of(dst)
        if a == b:
            return 0
        dist, _ = self._shortest_from(a)
        if b not in dist:
            raise UnreachableError(f"no path {src} -> {dst}")
        return dist[b]

    def roundtrip(self, src: str, dst: str) -> int:
        return 2 * self.path_delay(src, dst)

    def path_noise_amplitude(self, src: str, dst: str) -> float:
        """Sum of epsilon * latency along the route; 0 when all epsilon are 0."""
        a, b = self.anchor_of(src), self.anchor_of(dst)
        if a == b:
            return 0.0
        dist, paths = self._shortest_from(a)
        if b not in dist:
            raise UnreachableError(f"no path {src} -> {dst}")
        hops = paths[b]
        amp = 0.0
        for u, v in zip(hops, hops[1:]):
            edge = self._graph.edges[u, v]
            amp += edge["epsilon"] * edge["latency_us"]
        return amp

    def validate(self) -> list[str]:
        """Structural checks; returns a list of problems (empty when sound)."""
        problems = []
        fixed = [n for n, k in self.kinds.items() if k is not NodeKind.MOBILE]
        if len(fixed) > 1 and not nx.is_connected(self._graph.subgraph(fixed)):
            problems.append("fixed-node graph is not connected")
        for mn, ap in self.attachment.items():
            if ap is not None and self.kinds.get(ap) is not NodeKind.ACCESS_POINT:
                problems.append(f"{mn} attached to non access-point {ap}")
        return problems

    def _shortest_from(self, source: str) -> tuple[dict, dict]:
        cached = self._paths.get(source)
        if cached is None:
            dist, paths = nx.single_source_dijkstra(
                self._graph, source, weight="latency_us"
            )
            cached = (dist, paths)
            self._paths[source] = cached
        return cached
