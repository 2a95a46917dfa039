"""Protocol data model: addresses, packets with mobility extension headers,
and the checksum-neutral rewriting / tunnelling operations.

The upper-layer checksum is a real 16-bit ones'-complement sum over the
pseudo header and the payload, so neutrality of address rewriting is a
checkable property rather than an assumption.  The pseudo header uses the
mobility-independent addresses: the home-address option as source when
present, the type-2 routing header final destination when present.
"""

from __future__ import annotations

import dataclasses
import enum
import ipaddress
from dataclasses import dataclass


class AddressRole(enum.Enum):
    HOME = "hoa"
    ON_LINK = "lcoa"
    REGIONAL = "rcoa"
    PLAIN = "plain"
    GROUP = "multicast-group"


class NoRoutingHeaderError(ValueError):
    """Destination rewrite needs a type-2 routing header; tunnel instead."""


class NoHomeAddressOptionError(ValueError):
    """Source rewrite needs a home-address option; tunnel instead."""


class AlreadyTunnelledError(ValueError):
    """Tunnel nesting depth is limited to one."""


class NotTunnelledError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class Ipv6Addr:
    """128-bit address with prefix length and a mobility role tag."""

    value: int
    prefix_len: int = 64
    role: AddressRole = AddressRole.PLAIN

    def __post_init__(self) -> None:
        if not 0 <= self.value < 1 << 128:
            raise ValueError("address out of the 128-bit range")
        if not 0 <= self.prefix_len <= 128:
            raise ValueError(f"bad prefix length {self.prefix_len}")
        is_group = (self.value >> 120) == 0xFF
        if is_group != (self.role is AddressRole.GROUP):
            raise ValueError(
                f"{self}: role {self.role.value} inconsistent with high-order octet"
            )

    @classmethod
    def parse(cls, text: str, role: AddressRole | None = None,
              prefix_len: int = 64) -> "Ipv6Addr":
        if "/" in text:
            addr, plen = text.split("/", 1)
            prefix_len = int(plen)
        else:
            addr = text
        value = int(ipaddress.IPv6Address(addr))
        if role is None:
            role = AddressRole.GROUP if (value >> 120) == 0xFF else AddressRole.PLAIN
        return cls(value, prefix_len, role)

    def network(self) -> int:
        mask = ((1 << self.prefix_len) - 1) << (128 - self.prefix_len)
        return self.value & mask

    def with_role(self, role: AddressRole) -> "Ipv6Addr":
        return Ipv6Addr(self.value, self.prefix_len, role)

    def host_part(self) -> int:
        return self.value & ((1 << (128 - self.prefix_len)) - 1)

    def __str__(self) -> str:
        return str(ipaddress.IPv6Address(self.value))


def combine(prefix: Ipv6Addr, interface_id: int, role: AddressRole) -> Ipv6Addr:
    """Form an address from a network prefix and an interface identifier."""
    host_bits = 128 - prefix.prefix_len
    if interface_id >= 1 << host_bits:
        raise ValueError("interface id wider than the host part")
    return Ipv6Addr(prefix.network() | interface_id, prefix.prefix_len, role)


def ones_complement_sum(data: bytes) -> int:
    """Fold `data` into a 16-bit ones'-complement accumulator."""
    if len(data) % 2:
        data += b"\x00"
    total = 0
    for i in range(0, len(data), 2):
        total += (data[i] << 8) | data[i + 1]
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return total


def upper_layer_checksum(pseudo_src: Ipv6Addr, pseudo_dst: Ipv6Addr,
                         payload: bytes, next_header: int = 17) -> int:
    """16-bit checksum over the IPv6 pseudo header and the payload bytes."""
    pseudo = (
        pseudo_src.value.to_bytes(16, "big")
        + pseudo_dst.value.to_bytes(16, "big")
        + len(payload).to_bytes(4, "big")
        + b"\x00\x00\x00"
        + bytes([next_header])
    )
    return (~ones_complement_sum(pseudo + payload)) & 0xFFFF


@dataclass(frozen=True)
class Tunnel:
    outer_src: Ipv6Addr
    outer_dst: Ipv6Addr


@dataclass(frozen=True)
class Packet:
    """Simulated datagram with optional mobility headers.

    `rh2` carries the mobility-independent final destination, `hao` the
    mobility-independent source; both feed the pseudo header in place of
    the topological addresses.  `noise` is the per-journey jitter draw in
    [-1, 1], kept across forwarding hops (see network.py).
    """

    src: Ipv6Addr
    dst: Ipv6Addr
    rh2: Ipv6Addr | None = None
    hao: Ipv6Addr | None = None
    tunnel: Tunnel | None = None
    kind: str = "data"
    flow: str | None = None
    seq: int = 0
    sent_at: int = 0
    payload: bytes = b""
    upper_checksum: int = 0
    meta: object = None
    noise: float | None = None
    via_home: bool = False
    forwarder: str | None = None

    def pseudo_src(self) -> Ipv6Addr:
        return self.hao if self.hao is not None else self.src

    def pseudo_dst(self) -> Ipv6Addr:
        return self.rh2 if self.rh2 is not None else self.dst


def make_packet(src: Ipv6Addr, dst: Ipv6Addr, **fields) -> Packet:
    """Build a packet, computing the upper-layer checksum from the pseudo header."""
    p = Packet(src=src, dst=dst, **fields)
    checksum = upper_layer_checksum(p.pseudo_src(), p.pseudo_dst(), p.payload)
    return dataclasses.replace(p, upper_checksum=checksum)


def verify_checksum(p: Packet) -> bool:
    return p.upper_checksum == upper_layer_checksum(
        p.pseudo_src(), p.pseudo_dst(), p.payload
    )


def rewrite_dest(p: Packet, new_dst: Ipv6Addr) -> Packet:
    """Change the topological destination without touching the checksum.

    Valid only when a type-2 routing header pins the pseudo-header
    destination; packets without one must be tunnelled.
    """
    if p.rh2 is None:
        raise NoRoutingHeaderError("no type-2 routing header; tunnel this packet")
    return dataclasses.replace(p, dst=new_dst)


def rewrite_src(p: Packet, new_src: Ipv6Addr) -> Packet:
    """Change the topological source; requires a home-address option."""
    if p.hao is None:
        raise NoHomeAddressOptionError("no home-address option; tunnel this packet")
    return dataclasses.replace(p, src=new_src)


def encapsulate(p: Packet, outer_src: Ipv6Addr, outer_dst: Ipv6Addr) -> Packet:
    if p.tunnel is not None:
        raise AlreadyTunnelledError("tunnel nesting depth is limited to 1")
    return dataclasses.replace(p, tunnel=Tunnel(outer_src, outer_dst))


def decapsulate(p: Packet) -> Packet:
    if p.tunnel is None:
        raise NotTunnelledError("packet carries no tunnel header")
    return dataclasses.replace(p, tunnel=None)
