"""Geometry of the single-lane, three-entry triangular roundabout.

Traffic circulates counterclockwise. Entry road ``l_j`` runs from origin
``O_j`` to merging point ``M_j``; the triangle arcs are ``l4: M1->M2``,
``l5: M2->M3`` and ``l6: M3->M1``. Exit ``E_k`` leaves the triangle at the
vertex of ``M_k``, so a vehicle bound for ``E_k`` drives its arc up to that
vertex and is gone without merging there.

Positions along a route are measured from the origin, so the ``n``-th
merging point of any route sits at ``L + (n - 1) * L_a`` and a route with
``n`` merging points is ``L + n * L_a`` long.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

from .errors import ConfigurationError, DomainError

ORIGINS = ("O1", "O2", "O3")
EXITS = ("E1", "E2", "E3")
MERGING_POINTS = ("M1", "M2", "M3")
ENTRY_SEGMENTS = ("l1", "l2", "l3")
ARC_SEGMENTS = ("l4", "l5", "l6")

# arc leaving M_k (counterclockwise)
_ARC_AFTER = {"M1": "l4", "M2": "l5", "M3": "l6"}
_ARC_HEAD = {"l4": "M2", "l5": "M3", "l6": "M1"}
_ARC_TAIL = {"l4": "M1", "l5": "M2", "l6": "M3"}


def _k(name: str) -> int:
    return int(name[1:]) - 1


@dataclass(frozen=True)
class Segment:
    id: str
    length: float
    kind: str  # "entry" or "arc"
    head: str  # merging point at the downstream end
    tail: str  # origin (entry roads) or merging point (arcs) at the upstream end


@dataclass(frozen=True)
class MergingPoint:
    id: str
    inbound_segments: tuple[str, str]  # (entry road, arc)
    outbound_segment: str

    @property
    def cz_segments(self) -> tuple[str, str, str]:
        """Segments directly connected to the merging point."""
        return (*self.inbound_segments, self.outbound_segment)


@dataclass(frozen=True)
class Route:
    origin: str
    exit: str
    segment_sequence: tuple[str, ...]
    mp_sequence: tuple[str, ...]
    segment_lengths: tuple[float, ...]

    @cached_property
    def segment_starts(self) -> tuple[float, ...]:
        starts, acc = [], 0.0
        for length in self.segment_lengths:
            starts.append(acc)
            acc += length
        return tuple(starts)

    @property
    def total_length(self) -> float:
        return float(sum(self.segment_lengths))

    @property
    def n_mps(self) -> int:
        return len(self.mp_sequence)

    def mp_distance(self, mp: str) -> float:
        """Distance from the origin to ``mp`` along this route."""
        try:
            n = self.mp_sequence.index(mp)
        except ValueError:
            raise DomainError(f"{mp} is not on route {self.origin}->{self.exit}") from None
        return self.segment_starts[n + 1]

    def segment_start(self, n: int) -> float:
        return self.segment_starts[n]

    def vertex_distance(self, n: int) -> float:
        """Distance to the downstream end of the ``n``-th segment."""
        return self.segment_starts[n] + self.segment_lengths[n]


class RoundaboutTopology:
    """Immutable roundabout description with per-segment lengths."""

    def __init__(self, L: float, L_a: float):
        if not (L > 0 and L_a > 0):
            raise ConfigurationError(f"segment lengths must be positive, got L={L}, L_a={L_a}")
        self.L = float(L)
        self.L_a = float(L_a)
        self.segments: dict[str, Segment] = {}
        for origin, seg in zip(ORIGINS, ENTRY_SEGMENTS):
            self.segments[seg] = Segment(seg, self.L, "entry", "M" + origin[1], origin)
        for seg in ARC_SEGMENTS:
            self.segments[seg] = Segment(seg, self.L_a, "arc", _ARC_HEAD[seg], _ARC_TAIL[seg])
        self.merging_points: dict[str, MergingPoint] = {}
        for mp in MERGING_POINTS:
            inbound_arc = next(s for s, head in _ARC_HEAD.items() if head == mp)
            self.merging_points[mp] = MergingPoint(
                mp, (ENTRY_SEGMENTS[_k(mp)], inbound_arc), _ARC_AFTER[mp]
            )
        self._routes = {(o, e): self._build_route(o, e) for o in ORIGINS for e in EXITS}
        self.distance = {
            o: {mp: self._routes[(o, "E" + o[1])].mp_distance(mp) for mp in MERGING_POINTS}
            for o in ORIGINS
        }

    def __repr__(self) -> str:
        return f"RoundaboutTopology(L={self.L}, L_a={self.L_a})"

    def _build_route(self, origin: str, exit: str) -> Route:
        j, k = _k(origin), _k(exit)
        n = (k - j) % 3 or 3
        mps = tuple(MERGING_POINTS[(j + m) % 3] for m in range(n))
        segs = (ENTRY_SEGMENTS[j],) + tuple(_ARC_AFTER[mp] for mp in mps)
        return Route(origin, exit, segs, mps, tuple(self.segments[s].length for s in segs))

    def route_for(self, origin: str, exit: str) -> Route:
        try:
            return self._routes[(origin, exit)]
        except KeyError:
            raise DomainError(f"unknown origin/exit pair {origin!r}, {exit!r}") from None

    def routes(self) -> list[Route]:
        return list(self._routes.values())

    def relative_position(self, x: float, route: Route, mp: str) -> float:
        """Position relative to ``mp``: negative before it, zero on it."""
        return x - route.mp_distance(mp)

    def cz_segments(self, mp: str) -> tuple[str, str, str]:
        return self.merging_points[mp].cz_segments

    def downstream_mp(self, segment: str) -> str:
        return self.segments[segment].head

    def inbound_segment(self, route: Route, mp: str) -> str:
        """The segment a route uses to reach ``mp``."""
        n = route.mp_sequence.index(mp)
        return route.segment_sequence[n]

    def adjacency(self) -> dict[str, tuple[str, ...]]:
        """Segment successors: entry roads feed arcs, arcs feed the next arc."""
        adj: dict[str, tuple[str, ...]] = {}
        for seg in self.segments.values():
            adj[seg.id] = (_ARC_AFTER[seg.head],)
        return adj


def build_topology(L: float, L_a: float) -> RoundaboutTopology:
    return RoundaboutTopology(L, L_a)
