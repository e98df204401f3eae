"""Coordinator queue tables and conflict-partner resolution.

The coordinator keeps the extended queue table ``S(t)`` (all vehicles in the
control zone, in order of arrival) and one sub-table per merging point
holding every vehicle whose current segment touches that merging point.
After every event each vehicle is given two partners:

* ``ip`` -- the vehicle right ahead of it on its current segment
  (rear-end constraint),
* ``im`` -- the vehicle it has to merge behind at its next merging point
  (safe-merging constraint). When ``im`` would equal ``ip`` the merging
  constraint is redundant and ``im`` is dropped.

Partners are stored as stable vehicle ids (``uid``); table indices are
positional and shift when vehicles leave, so they are only produced when a
snapshot is exported.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Protocol, Sequence

from .errors import CoordinationError
from .topology import MERGING_POINTS, RoundaboutTopology, Route


@dataclass(eq=False)
class CavRecord:
    """One row of the coordinator table."""

    uid: int
    route: Route
    x: float = 0.0
    v: float = 0.0
    arrival_time: float = 0.0
    n_passed: int = 0
    ip: int | None = None
    im: int | None = None
    segment_entry_speed: float = 0.0

    @property
    def ori(self) -> str:
        return self.route.segment_sequence[0]

    @property
    def curr(self) -> str:
        return self.route.segment_sequence[min(self.n_passed, self.route.n_mps)]

    @property
    def next_mp(self) -> str | None:
        if self.n_passed < self.route.n_mps:
            return self.route.mp_sequence[self.n_passed]
        return None

    @property
    def last_passed(self) -> str | None:
        if self.n_passed > 0:
            return self.route.mp_sequence[self.n_passed - 1]
        return None

    @property
    def itinerary(self) -> list[tuple[str, bool]]:
        return [(mp, n < self.n_passed) for n, mp in enumerate(self.route.mp_sequence)]

    @property
    def segment_offset(self) -> float:
        """Distance travelled along the current segment."""
        return self.x - self.route.segment_start(self.n_passed)

    @property
    def to_vertex(self) -> float:
        """Signed position relative to the downstream end of the current segment."""
        return self.x - self.route.vertex_distance(self.n_passed)

    def relative_to(self, mp: str) -> float:
        return self.x - self.route.mp_distance(mp)


def matches(candidate: CavRecord, cav: CavRecord) -> bool:
    """``candidate`` last passed, or will next pass, ``cav``'s next merging point."""
    target = cav.next_mp
    if target is None:
        return False
    return candidate.last_passed == target or candidate.next_mp == target


def resolve_ip(rows: Sequence[CavRecord], pos: int) -> int | None:
    """Closest row above ``pos`` on the same segment."""
    curr = rows[pos].curr
    for j in range(pos - 1, -1, -1):
        if rows[j].curr == curr:
            return rows[j].uid
    return None


def resolve_im(rows: Sequence[CavRecord], pos: int) -> int | None:
    """Closest matching row above ``pos``; ``None`` when absent or equal to ``ip``."""
    cav = rows[pos]
    if cav.next_mp is None:
        return None
    for j in range(pos - 1, -1, -1):
        if matches(rows[j], cav):
            im = rows[j].uid
            return None if im == resolve_ip(rows, pos) else im
    return None


class SequencingPolicy(Protocol):
    name: str

    def order(
        self, rows: list[CavRecord], mp: str, topology: RoundaboutTopology, t: float
    ) -> list[CavRecord]:
        """Return the sub-table rows in passing order."""


class FifoPolicy:
    """Rows keep the order in which they joined the sub-table."""

    name = "FIFO"

    def order(self, rows, mp, topology, t):
        return list(rows)


@dataclass
class SdfPolicy:
    """Shortest Distance First.

    Rows still heading for ``mp`` (or driving towards its vertex) are sorted by
    ``y = -x_rel - phi * v``, smallest first, ties going to the older vehicle.
    Rows that already went through ``mp`` stay on top, leader first: their
    passing order is history and reshuffling it would hand merging vehicles
    the wrong partner.
    """

    phi: float = 1.8
    name: str = "SDF"

    def criterion(self, rec: CavRecord, mp: str) -> float:
        if rec.next_mp == mp:
            x_rel = rec.relative_to(mp)
        else:
            x_rel = rec.to_vertex
        return -x_rel - self.phi * rec.v

    def order(self, rows, mp, topology, t):
        passed = [r for r in rows if r.last_passed == mp]
        waiting = [r for r in rows if r.last_passed != mp]
        passed.sort(key=lambda r: (-r.relative_to(mp), r.uid))
        waiting.sort(key=lambda r: (self.criterion(r, mp), r.uid))
        return passed + waiting


def make_policy(name: str, phi: float = 1.8) -> SequencingPolicy:
    key = name.upper()
    if key == "FIFO":
        return FifoPolicy()
    if key == "SDF":
        return SdfPolicy(phi=phi)
    raise ValueError(f"unknown sequencing policy {name!r}")


@dataclass
class Coordinator:
    """Extended queue table plus the three per-merging-point sub-tables.

    With ``use_subtables`` (the default) each vehicle's partners come from the
    sub-table of the merging point at the downstream end of its segment; this
    is what lets a policy reorder traffic at every merging point. Without it
    partners are read off the global arrival-ordered table.
    """

    topology: RoundaboutTopology
    policy: SequencingPolicy = field(default_factory=FifoPolicy)
    use_subtables: bool = True
    rows: list[CavRecord] = field(default_factory=list)
    subtables: dict[str, list[CavRecord]] = field(
        default_factory=lambda: {mp: [] for mp in MERGING_POINTS}
    )

    def __post_init__(self):
        self._by_uid = {r.uid: r for r in self.rows}

    def __len__(self) -> int:
        return len(self.rows)

    def __contains__(self, uid: int) -> bool:
        return uid in self._by_uid

    def record(self, uid: int) -> CavRecord:
        try:
            return self._by_uid[uid]
        except KeyError:
            raise CoordinationError(f"vehicle {uid} is not in the control zone") from None

    def index_of(self, uid: int) -> int:
        rec = self.record(uid)
        return self.rows.index(rec)

    def _cz_tables(self, segment: str) -> set[str]:
        return {mp for mp in MERGING_POINTS if segment in self.topology.cz_segments(mp)}

    def _join(self, mp: str, rec: CavRecord, t: float) -> None:
        table = self.subtables[mp]
        table.append(rec)
        self.subtables[mp] = self.policy.order(table, mp, self.topology, t)

    # events ---------------------------------------------------------------

    def on_cav_enter(self, rec: CavRecord, t: float = 0.0, resolve: bool = True) -> int:
        if rec.uid in self._by_uid:
            raise CoordinationError(f"vehicle {rec.uid} entered twice")
        rec.n_passed = 0
        rec.segment_entry_speed = rec.v
        self.rows.append(rec)
        self._by_uid[rec.uid] = rec
        for mp in sorted(self._cz_tables(rec.curr)):
            self._join(mp, rec, t)
        if resolve:
            self.resolve()
        return len(self.rows) - 1

    def on_cav_exit(self, uid: int, resolve: bool = True) -> None:
        rec = self.record(uid)
        self.rows.remove(rec)
        del self._by_uid[uid]
        for mp in MERGING_POINTS:
            table = self.subtables[mp]
            if rec in table:
                table.remove(rec)
        if resolve:
            self.resolve()

    def on_mp_pass(self, uid: int, mp: str, t: float = 0.0, resolve: bool = True) -> None:
        rec = self.record(uid)
        if rec.next_mp != mp:
            raise CoordinationError(
                f"vehicle {uid} reported passing {mp} but its next merging point is {rec.next_mp}"
            )
        before = self._cz_tables(rec.curr)
        rec.n_passed += 1
        rec.segment_entry_speed = rec.v
        after = self._cz_tables(rec.curr)
        for gone in sorted(before - after):
            self.subtables[gone].remove(rec)
        for new in sorted(after - before):
            self._join(new, rec, t)
        if resolve:
            self.resolve()

    def yield_to(self, uid: int) -> bool:
        """Let ``uid`` pass its next merging point ahead of its merging partner.

        Moves the vehicle to just above its ``im`` in that sub-table. Only done
        when the partner is still upstream of the merging point; returns
        whether the order changed. Call :meth:`resolve` afterwards.
        """
        rec = self.record(uid)
        mp = rec.next_mp
        if mp is None or rec.im is None:
            return False
        other = self.record(rec.im)
        if other.next_mp != mp or other.relative_to(mp) >= rec.relative_to(mp):
            return False
        table = self.subtables[mp]
        table.remove(rec)
        table.insert(table.index(other), rec)
        return True

    # partner resolution ---------------------------------------------------

    def source_table(self, rec: CavRecord) -> list[CavRecord]:
        if not self.use_subtables:
            return self.rows
        return self.subtables[self.topology.downstream_mp(rec.curr)]

    def resolve(self) -> None:
        positions = {mp: {r.uid: n for n, r in enumerate(t)} for mp, t in self.subtables.items()}
        for n, rec in enumerate(self.rows):
            if self.use_subtables:
                mp = self.topology.downstream_mp(rec.curr)
                table, pos = self.subtables[mp], positions[mp].get(rec.uid)
                if pos is None:
                    raise CoordinationError(f"vehicle {rec.uid} missing from sub-table {mp}")
            else:
                table, pos = self.rows, n
            rec.ip = resolve_ip(table, pos)
            rec.im = resolve_im(table, pos)

    # export ---------------------------------------------------------------

    def _row_dict(self, rec: CavRecord, ip: int | None, im: int | None) -> dict:
        idx = {r.uid: n for n, r in enumerate(self.rows)}
        return {
            "idx": idx[rec.uid],
            "uid": rec.uid,
            "x": rec.x,
            "v": rec.v,
            "curr": rec.curr,
            "ori": rec.ori,
            "mps": [[mp, passed] for mp, passed in rec.itinerary],
            "ip": None if ip is None else idx[ip],
            "im": None if im is None else idx[im],
        }

    def snapshot(self) -> list[dict]:
        """The extended table as plain data, partners given as indices."""
        return [self._row_dict(r, r.ip, r.im) for r in self.rows]

    def subtable_snapshot(self, mp: str) -> list[dict]:
        """Sub-table ``mp`` with partners resolved inside that table only."""
        table = self.subtables[mp]
        return [
            self._row_dict(r, resolve_ip(table, n), resolve_im(table, n))
            for n, r in enumerate(table)
        ]

    def to_json(self) -> str:
        payload = {
            "policy": self.policy.name,
            "S": self.snapshot(),
            **{f"S_{mp}": self.subtable_snapshot(mp) for mp in MERGING_POINTS},
        }
        return json.dumps(payload, indent=2, sort_keys=True)
