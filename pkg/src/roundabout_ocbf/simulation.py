"""Discrete-time simulation loop, safety audit and metrics.

Each tick at ``t = k * dt``:

1. vehicles whose position crossed a merging point or their exit during the
   previous tick are moved in the coordinator (exits, then merging-point
   passes, then entries);
2. due arrivals are inserted at their origin when the entry road tail leaves
   room, otherwise they wait outside the control zone in arrival order;
   a vehicle stuck at a merging point behind an upstream partner for
   ``stall_release`` seconds is allowed to go first;
3. every vehicle gets its OCBF acceleration from the updated tables;
4. states advance with the acceleration held over the tick.

The trajectory log keeps one row per vehicle per tick; the safety audit is a
pure function of that log, so it can be re-run on a saved file.
"""
from __future__ import annotations

import bisect
import csv
import io
import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ScenarioConfig
from .coordination import CavRecord, Coordinator, make_policy
from .errors import CoordinationError, SimulationError, SolverError
from .ocbf import CbfConfig, control_step
from .topology import EXITS, ORIGINS, RoundaboutTopology, Route, build_topology
from .unconstrained import TrajectoryParams, solve_unconstrained

EVENT_RANK = {"exit": 0, "mp_pass": 1, "entry": 2}
LOG_FIELDS = ("t", "idx", "uid", "origin", "exit", "segment", "x", "x_rel",
              "v", "u", "ip", "im", "active", "e")
DEFAULT_TIME_CAP = 3600.0


# arrivals ----------------------------------------------------------------

@dataclass(frozen=True)
class Arrival:
    uid: int
    time: float
    origin: str
    exit: str
    v0: float


def _stream(seed: int, k: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k,)))


def generate_arrivals(config: ScenarioConfig) -> list[Arrival]:
    """Poisson arrivals per origin, merged in time order.

    Streams 0..2 give inter-arrival gaps, 3..5 the exit of each arrival (per
    origin, in arrival order) and 6 the entry speeds in global order.
    """
    drafts = []
    for j, origin in enumerate(ORIGINS):
        rate = config.rates[origin] / 3600.0
        if rate <= 0:
            continue
        gaps = _stream(config.seed, j)
        exits = _stream(config.seed, 3 + j)
        weights = np.array([config.exit_weights[origin][e] for e in EXITS], dtype=float)
        weights /= weights.sum()
        t = 0.0
        count = 0
        while True:
            t += gaps.exponential(1.0 / rate)
            if config.n_cavs is not None and count >= config.n_cavs:
                break
            if config.n_cavs is None and t > config.horizon:
                break
            exit = EXITS[int(exits.choice(len(EXITS), p=weights))]
            drafts.append((t, j, origin, exit))
            count += 1
    drafts.sort(key=lambda d: (d[0], d[1]))
    if config.n_cavs is not None:
        drafts = drafts[: config.n_cavs]
    speeds = _stream(config.seed, 6)
    out = []
    for uid, (t, _, origin, exit) in enumerate(drafts):
        if config.entry_speed_max is None:
            v0 = config.entry_speed
        else:
            v0 = float(speeds.uniform(config.entry_speed, config.entry_speed_max))
        out.append(Arrival(uid, float(t), origin, exit, v0))
    return out


# events ------------------------------------------------------------------

@dataclass(frozen=True)
class Event:
    kind: str  # "entry", "mp_pass" or "exit"
    uid: int
    idx: int
    offset: float  # time into the tick at which it happened
    where: str | None = None  # merging point for passes, exit for exits


def crossing_offset(x0: float, v: float, u: float, target: float, dt: float) -> float:
    """Time into the tick at which ``x0 + v s + u s^2 / 2`` reaches ``target``."""
    gap = target - x0
    if gap <= 0:
        return 0.0
    if abs(u) < 1e-12:
        s = gap / v if v > 0 else dt
    else:
        disc = v * v + 2.0 * u * gap
        s = (-v + math.sqrt(max(disc, 0.0))) / u if disc >= 0 else dt
        if s < 0:
            s = dt
    return min(max(s, 0.0), dt)


def detect_events(
    prev: dict[int, tuple[float, float, float]],
    coordinator: Coordinator,
    dt: float,
) -> list[Event]:
    """Merging-point passes and exits implied by the last tick's motion.

    ``prev`` maps uid to the ``(x, v, u)`` the vehicle started the tick with.
    Events come back ordered by kind (exits first), then time within the
    tick, then table index.
    """
    events = []
    for idx, rec in enumerate(coordinator.rows):
        if rec.uid not in prev:
            continue
        x0, v, u = prev[rec.uid]
        route = rec.route
        if rec.x >= route.total_length:
            s = crossing_offset(x0, v, u, route.total_length, dt)
            events.append(Event("exit", rec.uid, idx, s, route.exit))
            continue
        for n in range(rec.n_passed, route.n_mps):
            d = route.segment_start(n + 1)
            if rec.x >= d:
                events.append(Event("mp_pass", rec.uid, idx, crossing_offset(x0, v, u, d, dt),
                                    route.mp_sequence[n]))
    events.sort(key=lambda e: (EVENT_RANK[e.kind], e.offset, e.idx))
    return events


# audit -------------------------------------------------------------------

@dataclass(frozen=True)
class ViolationRecord:
    kind: str  # "rear_end" or "merge"
    t: float
    uid: int
    partner: int
    value: float  # z - phi v - delta, negative means violated


@dataclass
class AuditResult:
    min_rear_end: float = math.inf
    min_merge: float = math.inf
    n_rear_end: int = 0
    n_merge: int = 0
    worst: list[ViolationRecord] = field(default_factory=list)

    def max_violation(self, kind: str) -> float:
        value = self.min_rear_end if kind == "rear_end" else self.min_merge
        return 0.0 if value == math.inf else max(0.0, -value)

    def violations(self, tol: float = 0.0) -> list[ViolationRecord]:
        return [r for r in self.worst if r.value < -tol]


def _segment_index(route: Route, x: float) -> int:
    return max(0, min(bisect.bisect_right(route.segment_starts, x) - 1, route.n_mps))


def audit_safety(
    log: list[dict],
    topology: RoundaboutTopology,
    phi: float,
    delta: float,
    dt: float,
    keep: int = 20,
) -> AuditResult:
    """Re-check the rear-end and merging constraints on a trajectory log.

    Rear-end: at every logged tick, consecutive vehicles on the same segment.
    Merging: at the interpolated instant each vehicle crosses a merging point,
    against the vehicle that crossed that point just before it.
    """
    res = AuditResult()
    records: list[ViolationRecord] = []
    routes = {}
    by_tick: dict[float, list[dict]] = {}
    by_uid: dict[int, list[dict]] = {}
    for row in log:
        by_tick.setdefault(row["t"], []).append(row)
        by_uid.setdefault(row["uid"], []).append(row)
        if row["uid"] not in routes:
            routes[row["uid"]] = topology.route_for(row["origin"], row["exit"])

    for t, rows in by_tick.items():
        lanes: dict[str, list[tuple[float, dict]]] = {}
        for row in rows:
            route = routes[row["uid"]]
            n = _segment_index(route, row["x"])
            lanes.setdefault(route.segment_sequence[n], []).append(
                (row["x"] - route.segment_start(n), row))
        for lane in lanes.values():
            lane.sort(key=lambda p: -p[0])
            for (x_lead, lead), (x_fol, fol) in zip(lane, lane[1:]):
                value = x_lead - x_fol - phi * fol["v"] - delta
                res.n_rear_end += 1
                res.min_rear_end = min(res.min_rear_end, value)
                records.append(ViolationRecord("rear_end", t, fol["uid"], lead["uid"], value))

    crossings: dict[str, list[tuple[float, int, float]]] = {}
    for uid, rows in by_uid.items():
        route = routes[uid]
        for row in rows:
            x0, v, u = row["x"], row["v"], row["u"]
            x1 = x0 + v * dt + 0.5 * u * dt * dt
            for n, mp in enumerate(route.mp_sequence):
                d = route.segment_start(n + 1)
                if x0 < d <= x1:
                    s = crossing_offset(x0, v, u, d, dt)
                    crossings.setdefault(mp, []).append((row["t"] + s, uid, v + u * s))
    for mp, events in crossings.items():
        events.sort()
        for (t_prev, uid_prev, _), (t_cur, uid_cur, v_cur) in zip(events, events[1:]):
            rows = by_uid[uid_prev]
            k = bisect.bisect_right([r["t"] for r in rows], t_cur + 1e-12) - 1
            if k < 0:
                continue
            row = rows[k]
            s = t_cur - row["t"]
            if s > dt + 1e-9:
                continue  # the earlier vehicle has left the control zone
            x_prev = row["x"] + row["v"] * s + 0.5 * row["u"] * s * s
            z = x_prev - routes[uid_prev].mp_distance(mp)
            value = z - phi * v_cur - delta
            res.n_merge += 1
            res.min_merge = min(res.min_merge, value)
            records.append(ViolationRecord("merge", t_cur, uid_cur, uid_prev, value))
    records.sort(key=lambda r: (r.value, r.t, r.uid))
    res.worst = records[:keep]
    return res


# metrics -----------------------------------------------------------------

@dataclass
class CavMetrics:
    uid: int
    origin: str
    exit: str
    arrival_time: float
    t0: float
    tf: float
    travel_time: float
    energy: float
    objective: float
    planned_time: float
    planned_energy: float


def _mean(values) -> float:
    values = list(values)
    return float(sum(values) / len(values)) if values else 0.0


@dataclass
class MetricsReport:
    name: str
    policy: str
    alpha: float
    beta: float
    seed: int
    dt: float
    cavs: list[CavMetrics] = field(default_factory=list)
    infeasible_steps: int = 0
    guarded_steps: int = 0
    control_steps: int = 0
    stall_releases: int = 0
    audit: AuditResult = field(default_factory=AuditResult)

    @property
    def n_cavs(self) -> int:
        return len(self.cavs)

    def _aggregate(self, cavs: list[CavMetrics]) -> dict:
        time = _mean(c.travel_time for c in cavs)
        energy = _mean(c.energy for c in cavs)
        return {
            "n": len(cavs),
            "travel_time": time,
            "energy": energy,
            "objective": self.beta * time + energy,
            "hold_time": _mean(c.t0 - c.arrival_time for c in cavs),
        }

    @property
    def overall(self) -> dict:
        return self._aggregate(self.cavs)

    @property
    def per_origin(self) -> dict[str, dict]:
        return {o: self._aggregate([c for c in self.cavs if c.origin == o]) for o in ORIGINS}

    @property
    def safety(self) -> dict:
        a = self.audit
        return {
            "max_rear_end_violation": a.max_violation("rear_end"),
            "max_merge_violation": a.max_violation("merge"),
            "min_rear_end_value": None if a.min_rear_end == math.inf else a.min_rear_end,
            "min_merge_value": None if a.min_merge == math.inf else a.min_merge,
            "rear_end_checks": a.n_rear_end,
            "merge_checks": a.n_merge,
            "infeasible_steps": self.infeasible_steps,
            "guarded_steps": self.guarded_steps,
            "control_steps": self.control_steps,
            "stall_releases": self.stall_releases,
        }

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "policy": self.policy,
            "alpha": self.alpha,
            "beta": self.beta,
            "seed": self.seed,
            "dt": self.dt,
            "n_cavs": self.n_cavs,
            "overall": self.overall,
            "per_origin": self.per_origin,
            "safety": self.safety,
            "cavs": [vars(c) for c in self.cavs],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        lines = [f"{self.name}: {self.policy}, alpha={self.alpha:g}, beta={self.beta:.4f}, "
                 f"seed={self.seed}, {self.n_cavs} CAVs",
                 f"{'':12}{'n':>6}{'time (s)':>12}{'energy':>12}{'objective':>12}"]
        rows = [("overall", self.overall)] + [(f"from {o}", m) for o, m in self.per_origin.items()]
        for label, m in rows:
            lines.append(f"{label:12}{m['n']:>6}{m['travel_time']:>12.4f}"
                         f"{m['energy']:>12.4f}{m['objective']:>12.4f}")
        s = self.safety
        lines.append(f"max rear-end violation {s['max_rear_end_violation']:.4f} m, "
                     f"max merge violation {s['max_merge_violation']:.4f} m, "
                     f"infeasible steps {s['infeasible_steps']}/{s['control_steps']}")
        return "\n".join(lines) + "\n"


# simulation --------------------------------------------------------------

@dataclass
class _Active:
    rec: CavRecord
    arrival: Arrival
    plan: TrajectoryParams
    t0: float
    energy: float = 0.0


@dataclass
class SimulationResult:
    report: MetricsReport
    log: list[dict]
    events: list[tuple]


def _entry_is_safe(v0: float, tail: CavRecord | None, cbf: CbfConfig) -> bool:
    """Room for a newcomer at offset 0 behind ``tail`` on the entry road.

    Besides ``b = z - phi v0 - delta >= 0`` the rear-end row must admit some
    acceleration above ``u_min``, otherwise the newcomer starts infeasible.
    """
    if tail is None:
        return True
    b = tail.segment_offset - cbf.phi * v0 - cbf.delta
    return b >= 0 and tail.v - v0 + cbf.class_k_gain * b - cbf.phi * cbf.u_min >= 0


STALL_SPEED = 0.1


def _release_stalls(coordinator: Coordinator, stalled: dict[int, float], t: float,
                    config: ScenarioConfig, events_log: list[tuple]) -> int:
    """Break circular waits at the merging points.

    A vehicle standing within one standstill gap of its merging point for
    ``stall_release`` seconds while its merging partner is still upstream is
    moved ahead of that partner. Without this a packed ring can lock up: every
    arc's front vehicle waits for an entering vehicle that has no room to enter.
    """
    released = 0
    for rec in coordinator.rows:
        mp = rec.next_mp
        waiting = (mp is not None and rec.im is not None and rec.v < STALL_SPEED
                   and -rec.relative_to(mp) <= config.delta)
        if not waiting:
            stalled.pop(rec.uid, None)
            continue
        since = stalled.setdefault(rec.uid, t)
        if t - since >= config.stall_release - 1e-9 and coordinator.yield_to(rec.uid):
            events_log.append((round(t, 9), "yield", rec.uid, mp))
            stalled.pop(rec.uid)
            coordinator.resolve()
            released += 1
    for uid in [u for u in stalled if u not in coordinator]:
        del stalled[uid]
    return released


def write_log_csv(log: list[dict], path: str | Path | None = None) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=LOG_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in log:
        writer.writerow({k: ("" if row[k] is None else row[k]) for k in LOG_FIELDS})
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def read_log_csv(path: str | Path) -> list[dict]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append({
                "t": float(row["t"]), "idx": int(row["idx"]), "uid": int(row["uid"]),
                "origin": row["origin"], "exit": row["exit"], "segment": row["segment"],
                "x": float(row["x"]), "x_rel": float(row["x_rel"]),
                "v": float(row["v"]), "u": float(row["u"]),
                "ip": int(row["ip"]) if row["ip"] else None,
                "im": int(row["im"]) if row["im"] else None,
                "active": row["active"], "e": float(row["e"]),
            })
    return out


def run(config: ScenarioConfig, name: str = "custom", arrivals: list[Arrival] | None = None,
        keep_log: bool = True) -> SimulationResult:
    topology = build_topology(config.L, config.L_a)
    cbf = config.cbf()
    coordinator = Coordinator(topology, make_policy(config.policy, config.phi))
    beta = config.beta
    dt = config.dt
    if arrivals is None:
        arrivals = generate_arrivals(config)
    report = MetricsReport(name, config.policy.upper(), config.alpha, beta, config.seed, dt)
    log: list[dict] = []
    events_log: list[tuple] = []

    pending = deque(arrivals)
    queues: dict[str, deque[Arrival]] = {o: deque() for o in ORIGINS}
    active: dict[int, _Active] = {}
    prev: dict[int, tuple[float, float, float]] = {}
    last_arrival = arrivals[-1].time if arrivals else 0.0
    cap = config.max_time if config.max_time is not None else last_arrival + DEFAULT_TIME_CAP
    n_exited = 0
    stalled: dict[int, float] = {}

    def fail(msg: str) -> SimulationError:
        return SimulationError(msg, events_log)

    k = 0
    while pending or any(queues.values()) or active:
        t = k * dt
        if t > cap:
            raise fail(f"time cap {cap:.1f} s reached with {len(active)} vehicles still active")

        # (1) coordination events from the previous tick's motion
        try:
            for ev in detect_events(prev, coordinator, dt):
                events_log.append((round(t, 9), ev.kind, ev.uid, ev.where))
                if ev.kind == "exit":
                    cav = active.pop(ev.uid)
                    coordinator.on_cav_exit(ev.uid, resolve=False)
                    tf = t - dt + ev.offset
                    travel = tf - cav.t0
                    report.cavs.append(CavMetrics(
                        ev.uid, cav.arrival.origin, cav.arrival.exit, cav.arrival.time,
                        cav.t0, tf, travel, cav.energy, beta * travel + cav.energy,
                        cav.plan.duration, cav.plan.energy))
                    n_exited += 1
                else:
                    coordinator.on_mp_pass(ev.uid, ev.where, t, resolve=False)
        except (CoordinationError, KeyError) as err:
            raise fail(f"t={t:.2f}: {err}") from err

        # (2) arrivals and held vehicles
        while pending and pending[0].time <= t + 1e-9:
            arr = pending.popleft()
            queues[arr.origin].append(arr)
        for origin in ORIGINS:
            queue = queues[origin]
            if not queue:
                continue
            arr = queue[0]
            seg = topology.route_for(origin, arr.exit).segment_sequence[0]
            on_road = [r for r in coordinator.rows if r.curr == seg]
            tail = min(on_road, key=lambda r: r.segment_offset) if on_road else None
            if not _entry_is_safe(arr.v0, tail, cbf):
                continue
            queue.popleft()
            route = topology.route_for(origin, arr.exit)
            try:
                plan = solve_unconstrained(t, arr.v0, route.total_length, beta)
            except SolverError as err:
                raise fail(f"t={t:.2f}: planning vehicle {arr.uid}: {err}") from err
            rec = CavRecord(arr.uid, route, 0.0, arr.v0, arr.time)
            coordinator.on_cav_enter(rec, t, resolve=False)
            active[arr.uid] = _Active(rec, arr, plan, t)
            events_log.append((round(t, 9), "entry", arr.uid, origin))
        coordinator.resolve()
        if config.stall_release is not None:
            report.stall_releases += _release_stalls(coordinator, stalled, t, config, events_log)

        spawned = len(arrivals) - len(pending) - sum(len(q) for q in queues.values())
        if spawned != len(active) + n_exited or len(coordinator) != len(active):
            raise fail(f"t={t:.2f}: vehicle bookkeeping out of balance")

        # (3) control from the updated tables
        controls = {}
        for idx, rec in enumerate(coordinator.rows):
            cav = active[rec.uid]
            res = control_step(rec, coordinator, cav.plan, cbf, t)
            controls[rec.uid] = res
            report.control_steps += 1
            report.infeasible_steps += res.fallback
            report.guarded_steps += res.guarded
            if keep_log:
                nxt = rec.next_mp
                log.append({
                    "t": round(t, 9), "idx": idx, "uid": rec.uid,
                    "origin": cav.arrival.origin, "exit": cav.arrival.exit,
                    "segment": rec.curr, "x": rec.x,
                    "x_rel": rec.relative_to(nxt) if nxt else rec.to_vertex,
                    "v": rec.v, "u": res.u, "ip": rec.ip, "im": rec.im,
                    "active": ";".join(res.constraint_labels) + ("!" if res.fallback else "")
                              + ("^" if res.guarded else ""),
                    "e": res.e,
                })

        # (4) move with the acceleration held over the tick
        prev = {}
        for rec in coordinator.rows:
            u = controls[rec.uid].u
            prev[rec.uid] = (rec.x, rec.v, u)
            rec.x += rec.v * dt + 0.5 * u * dt * dt
            rec.v += u * dt
            active[rec.uid].energy += 0.5 * u * u * dt
        k += 1

    report.cavs.sort(key=lambda c: c.uid)
    report.audit = audit_safety(log, topology, config.phi, config.delta, dt) if keep_log \
        else AuditResult()
    return SimulationResult(report, log, events_log)
