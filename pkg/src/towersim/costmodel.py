"""Alpha-beta latency model with a world-size efficiency table.

A collective over w ranks moving S bytes per rank costs
alpha + S * (w-1)/w / (beta * efficiency(w)); efficiency is a non-increasing
table keyed by world size (collective throughput degrades as groups grow).
Traces from the exchange pipelines are grouped by step label into their
collective groups; disjoint concurrent groups (the per-tower step-d and
per-class step-f collectives) cost their maximum, not their sum, because
they use disjoint links under full-bisection networks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .errors import DomainError, ReportError
from .simnet import CommTrace
from .topology import ClusterTopology, TowerLayout, class_members

ALLTOALL = "alltoall"
REDUCESCATTER = "reducescatter"

INTRA = "intra"
CROSS = "cross"


def default_efficiency(max_world: int = 4096, flat_until: int = 8, decay: float = 0.8) -> dict[int, float]:
    """1.0 up to ``flat_until`` ranks, then ``decay`` per world doubling."""
    table = {1: 1.0, flat_until: 1.0}
    world, eff = flat_until, 1.0
    while world < max_world:
        world *= 2
        eff *= decay
        table[world] = eff
    return table


@dataclass(frozen=True)
class CostParams:
    """Link and compute rates; bandwidth defaults follow current-generation
    accelerator hosts (450 GB/s scale-up, 400 Gbps scale-out)."""

    alpha_up: float = 2e-6
    alpha_out: float = 1e-5
    beta_up: float = 450e9
    beta_out: float = 50e9
    compute_rate: float = 989e12
    bytes_per_element: int = 4
    efficiency: dict[int, float] = field(default_factory=default_efficiency)

    def __post_init__(self) -> None:
        for name in ("alpha_up", "alpha_out", "beta_up", "beta_out", "compute_rate"):
            if getattr(self, name) <= 0:
                raise DomainError(f"{name} must be positive")
        worlds = sorted(self.efficiency)
        if not worlds:
            raise DomainError("efficiency table is empty")
        last = None
        for w in worlds:
            f = self.efficiency[w]
            if not 0 < f <= 1:
                raise DomainError(f"efficiency({w}) = {f} outside (0, 1]")
            if last is not None and f > last:
                raise DomainError("efficiency table must be non-increasing")
            last = f


def efficiency_at(table: dict[int, float], world: int) -> float:
    """Factor for a world size; absent sizes use the nearest smaller entry."""
    smaller = [w for w in table if w <= world]
    if not smaller:
        return table[min(table)]
    return table[max(smaller)]


def collective_latency(
    kind: str, world: int, per_rank_bytes: float, link: str, params: CostParams
) -> float:
    """Seconds for one collective; single-rank groups are free."""
    if kind not in (ALLTOALL, REDUCESCATTER):
        raise DomainError(f"unknown collective kind {kind!r}")
    if link not in (INTRA, CROSS):
        raise DomainError(f"unknown link {link!r}")
    if world < 1:
        raise DomainError("world must be >= 1")
    if per_rank_bytes < 0:
        raise DomainError("bytes must be >= 0")
    if world == 1:
        return 0.0
    alpha = params.alpha_up if link == INTRA else params.alpha_out
    beta = params.beta_up if link == INTRA else params.beta_out
    wire = per_rank_bytes * (world - 1) / world
    return alpha + wire / (beta * efficiency_at(params.efficiency, world))


@dataclass
class CostBreakdown:
    per_step: dict[str, float]
    exposed_comm: float
    compute: float

    @property
    def total(self) -> float:
        return self.exposed_comm + self.compute


_COMM_STEPS = ("a", "c", "d", "f")
_COMPUTE_STEPS = ("b", "e")


def _step_groups(
    label: str, topo: ClusterTopology, layout: Optional[TowerLayout]
) -> list[tuple[list[int], str]]:
    """The collective groups a step label runs over, with their link class."""
    world = list(range(topo.world_size))
    if label in ("a", "c"):
        return [(world, CROSS if topo.num_hosts > 1 else INTRA)]
    if layout is None:
        raise ReportError(f"step {label!r} needs a tower layout to group ranks")
    width = layout.group_width(topo)
    if label == "d":
        link = CROSS if layout.hosts_per_tower > 1 else INTRA
        return [(layout.tower_ranks(t, topo), link) for t in range(layout.num_towers)]
    if label == "f":
        link = CROSS if layout.num_towers > 1 and topo.num_hosts > 1 else INTRA
        return [
            (class_members(c, topo, layout), link) for c in range(width)
        ]
    raise ReportError(f"unknown step label {label!r}")


def pipeline_cost(
    trace: CommTrace,
    topo: ClusterTopology,
    params: CostParams,
    layout: Optional[TowerLayout] = None,
    flops: Optional[dict[str, float]] = None,
    step_kinds: Optional[dict[str, str]] = None,
) -> CostBreakdown:
    """Cost a traced exchange run.

    Per step label, traffic is grouped into that step's collective groups;
    each group is costed at its world size on its link class with the
    per-rank byte maximum, and concurrent groups of one step contribute their
    maximum. ``flops`` adds compute seconds for the local steps (lookup "b",
    tower modules "e").
    """
    per_step: dict[str, float] = {}
    exposed = 0.0
    kinds = step_kinds or {}
    for label in trace.labels():
        if label not in _COMM_STEPS:
            raise ReportError(f"unknown step label {label!r} in trace")
        sent = trace.sent_by_rank(label)
        kind = kinds.get(label, ALLTOALL)
        worst = 0.0
        for group, link in _step_groups(label, topo, layout):
            per_rank = max((sent.get(r, 0) for r in group), default=0)
            if per_rank == 0:
                continue
            worst = max(
                worst, collective_latency(kind, len(group), per_rank, link, params)
            )
        per_step[label] = worst
        exposed += worst
    compute = 0.0
    for label, work in (flops or {}).items():
        if label not in _COMPUTE_STEPS:
            raise ReportError(f"unknown compute step {label!r}")
        seconds = work / params.compute_rate
        per_step[label] = seconds
        compute += seconds
    per_step = {k: per_step[k] for k in sorted(per_step)}
    return CostBreakdown(per_step, exposed, compute)


def speedup_report(baseline: CostBreakdown, tower: CostBreakdown) -> dict[str, float]:
    """Total and per-component speedups of the tower pipeline over the baseline."""
    if baseline.total <= 0:
        raise DomainError("baseline total must be positive")
    report = {
        "baseline_s": baseline.total,
        "tower_s": tower.total,
        "speedup": baseline.total / tower.total if tower.total > 0 else float("inf"),
    }
    if tower.exposed_comm > 0:
        report["comm_speedup"] = baseline.exposed_comm / tower.exposed_comm
    if tower.compute > 0:
        report["compute_speedup"] = baseline.compute / tower.compute
    return report
