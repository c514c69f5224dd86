"""Logical cluster model: hosts, ranks, peer classes, and rank orderings.

Ranks are numbered 0..G-1 in contiguous blocks per host, so the host of a
rank is ``rank // ranks_per_host``. A *peer class* is the set of ranks that
share the same local index on their host; peer classes are what the
tower-transformed exchange communicates across hosts with.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

from .errors import DomainError

SELF = "self"
INTRA_HOST = "intra_host"
CROSS_HOST = "cross_host"


@dataclass(frozen=True)
class ClusterTopology:
    """Logical cluster: host count, ranks per host, and link parameters.

    Bandwidths are bytes/second, latencies seconds. The scale-up (intra-host)
    link is expected to be at least as fast as the scale-out link; a slower
    scale-up link is unusual but legal, so it only warns.
    """

    num_hosts: int
    ranks_per_host: int
    scaleup_bw: float = 450e9
    scaleout_bw: float = 50e9
    scaleup_latency: float = 2e-6
    scaleout_latency: float = 1e-5

    def __post_init__(self) -> None:
        if self.num_hosts < 1 or self.ranks_per_host < 1:
            raise DomainError(
                f"num_hosts and ranks_per_host must be >= 1, got "
                f"{self.num_hosts} and {self.ranks_per_host}"
            )
        if self.scaleup_bw < self.scaleout_bw:
            warnings.warn(
                "scale-up bandwidth below scale-out bandwidth; unusual cluster",
                stacklevel=2,
            )

    @property
    def world_size(self) -> int:
        return self.num_hosts * self.ranks_per_host

    def host_of(self, rank: int) -> int:
        self.check_rank(rank)
        return rank // self.ranks_per_host

    def check_rank(self, rank: int) -> None:
        if not 0 <= rank < self.world_size:
            raise DomainError(f"rank {rank} out of range 0..{self.world_size - 1}")


@dataclass(frozen=True)
class TowerLayout:
    """Tower count and how many hosts each tower spans.

    With ``hosts_per_tower`` h, a tower owns a contiguous block of h hosts
    (one "super-host" of ranks_per_host * h ranks). The world must tile
    exactly into towers.
    """

    num_towers: int
    hosts_per_tower: int = 1

    def __post_init__(self) -> None:
        if self.num_towers < 1 or self.hosts_per_tower < 1:
            raise DomainError("num_towers and hosts_per_tower must be >= 1")

    def validate_for(self, topo: ClusterTopology) -> None:
        group = topo.ranks_per_host * self.hosts_per_tower
        if topo.world_size % group != 0:
            raise DomainError(
                f"world size {topo.world_size} not divisible by "
                f"ranks_per_host*hosts_per_tower = {group}"
            )
        if topo.world_size // group != self.num_towers:
            raise DomainError(
                f"num_towers {self.num_towers} != world/{group} "
                f"= {topo.world_size // group}"
            )

    def group_width(self, topo: ClusterTopology) -> int:
        """Ranks per tower (the super-host width)."""
        return topo.ranks_per_host * self.hosts_per_tower

    def tower_of_rank(self, rank: int, topo: ClusterTopology) -> int:
        topo.check_rank(rank)
        return rank // self.group_width(topo)

    def tower_ranks(self, tower: int, topo: ClusterTopology) -> list[int]:
        if not 0 <= tower < self.num_towers:
            raise DomainError(f"tower {tower} out of range 0..{self.num_towers - 1}")
        width = self.group_width(topo)
        return list(range(tower * width, (tower + 1) * width))


def peers(rank: int, topo: ClusterTopology) -> set[int]:
    """Ranks sharing this rank's local index across hosts (includes rank)."""
    topo.check_rank(rank)
    local = rank % topo.ranks_per_host
    return {h * topo.ranks_per_host + local for h in range(topo.num_hosts)}


def peer_order(topo: ClusterTopology, layout: TowerLayout) -> tuple[int, ...]:
    """Total order of ranks keyed by (rank % num_towers, rank // ranks_per_host).

    Key collisions (possible when num_towers < ranks_per_host) break by
    ascending rank so the order is reproducible.
    """
    layout.validate_for(topo)
    ranks = range(topo.world_size)
    key = lambda g: (g % layout.num_towers, g // topo.ranks_per_host, g)
    return tuple(sorted(ranks, key=key))


def class_order(topo: ClusterTopology, layout: TowerLayout) -> tuple[int, ...]:
    """Ranks grouped by peer class: all ranks with local index 0, then 1, ...

    Local index is taken within the tower's super-host (so class c of width w
    is {c, c+w, c+2w, ...}). Consecutive chunks of num_towers entries are
    exactly the peer-class collective groups; the exchange permutes its
    destination blocks into this order before the intra-tower shuffle.
    Coincides with peer_order whenever num_towers equals the group width.
    """
    layout.validate_for(topo)
    width = layout.group_width(topo)
    key = lambda g: (g % width, g // width)
    return tuple(sorted(range(topo.world_size), key=key))


def class_members(cls: int, topo: ClusterTopology, layout: TowerLayout) -> list[int]:
    """Ranks at local index ``cls`` of every tower, ascending (= tower order)."""
    width = layout.group_width(topo)
    if not 0 <= cls < width:
        raise DomainError(f"class {cls} out of range 0..{width - 1}")
    return [t * width + cls for t in range(layout.num_towers)]


def link_class(src: int, dst: int, topo: ClusterTopology) -> str:
    """Classify a (src, dst) pair as self, intra_host, or cross_host."""
    topo.check_rank(src)
    topo.check_rank(dst)
    if src == dst:
        return SELF
    if src // topo.ranks_per_host == dst // topo.ranks_per_host:
        return INTRA_HOST
    return CROSS_HOST
