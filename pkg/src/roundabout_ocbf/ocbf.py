"""Optimal tracking of the unconstrained plan under control barrier functions.

Every safety constraint ``b(x) >= 0`` becomes the affine condition
``L_f b + L_g b * u + gain * b >= 0`` on the acceleration, and the speed
tracking goal becomes a relaxed control Lyapunov row. All rows are returned
in the solver's ``a_u * u + a_e * e <= rhs`` form.

Two additions keep the sampled-data loop safe where the continuous-time
conditions alone do not:

* ``tick_margin`` (m/s) is taken off the right-hand side of the rear-end and
  merging rows. It absorbs what the conditions cannot see inside a tick: the
  partner braking harder than assumed, and the jump in ``Phi'`` when a
  vehicle crosses a merging point and its merging row becomes a rear-end row.
* a braking guard caps ``u`` so that, after the tick, braking as hard as the
  limit rows allow would still either never reach the merging point or
  reach it with the merging gap intact while the partner brakes just as hard.
  The linear ``Phi`` can leave the merging row satisfied while the state is
  already beyond what ``u_min`` can repair; the guard catches that early.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .coordination import CavRecord, Coordinator
from .errors import ConfigurationError
from .qp import QpProblem, QpSolution, Row, solve_step_qp
from .unconstrained import TrajectoryParams, eval_reference

MIN_ENTRY_SPEED = 0.1


@dataclass(frozen=True)
class CbfConfig:
    class_k_gain: float = 1.0
    clf_epsilon: float = 1.0
    relax_weight: float = 1.0
    phi: float = 1.8
    delta: float = 10.0
    v_min: float = 0.0
    v_max: float = 17.0
    u_min: float = -5.0
    u_max: float = 5.0
    dt: float = 0.1
    tick_margin: float = 0.5
    braking_guard: bool = True

    def __post_init__(self):
        problems = []
        if self.tick_margin < 0:
            problems.append("tick_margin must be non-negative")
        for name in ("class_k_gain", "clf_epsilon", "relax_weight", "phi", "dt"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be positive")
        if self.delta < 0:
            problems.append("delta must be non-negative")
        if not self.v_min < self.v_max:
            problems.append("need v_min < v_max")
        if not self.u_min < 0 < self.u_max:
            problems.append("need u_min < 0 < u_max")
        if problems:
            raise ConfigurationError("; ".join(problems))


@dataclass(frozen=True)
class MergingPhi:
    """Linear headway profile along the segment feeding a merging point.

    Starts at the value that makes the merging barrier zero-slack for the
    worst-case gap at segment entry and reaches ``phi`` at the merging point.
    """

    L_i: float
    L_im: float
    v_entry: float
    phi: float
    delta: float

    @property
    def offset(self) -> float:
        return (self.L_im - self.L_i + self.delta) / max(self.v_entry, MIN_ENTRY_SPEED)

    @property
    def slope(self) -> float:
        return (self.phi + self.offset) / self.L_i

    def __call__(self, x: float) -> float:
        return self.slope * x - self.offset


def cbf_rear_end(x_i: float, v_i: float, x_ip: float, v_ip: float, config: CbfConfig) -> Row:
    """``b = z - phi v - delta`` with ``z = x_ip - x_i`` in a shared frame."""
    b = x_ip - x_i - config.phi * v_i - config.delta
    # L_f b = v_ip - v_i, L_g b = -phi
    rhs = v_ip - v_i + config.class_k_gain * b - config.tick_margin
    return Row(config.phi, 0.0, rhs, "rear_end")


def cbf_safe_merge(
    x_rel: float, v_i: float, z: float, v_im: float, phi_fn: MergingPhi, config: CbfConfig
) -> Row:
    """``b = z - Phi(x) v - delta`` with ``x`` the offset along the current segment."""
    Phi = phi_fn(x_rel)
    b = z - Phi * v_i - config.delta
    lf = v_im - v_i - phi_fn.slope * v_i * v_i
    return Row(Phi, 0.0, lf + config.class_k_gain * b - config.tick_margin, "merge")


def cbf_limits(v: float, config: CbfConfig) -> list[Row]:
    g = config.class_k_gain
    return [
        Row(1.0, 0.0, config.u_max, "u_max"),
        Row(-1.0, 0.0, -config.u_min, "u_min"),
        Row(1.0, 0.0, g * (config.v_max - v), "v_max"),
        Row(-1.0, 0.0, g * (v - config.v_min), "v_min"),
    ]


def clf_row(v: float, v_ref: float, config: CbfConfig) -> Row:
    """``2 (v - v_ref) u + eps (v - v_ref)^2 <= e``."""
    err = v - v_ref
    return Row(2.0 * err, -1.0, -config.clf_epsilon * err * err, "clf", hard=False)


@dataclass
class ControlResult:
    u: float
    e: float
    u_ref: float
    v_ref: float
    rows: list[Row] = field(default_factory=list)
    solution: QpSolution | None = None
    fallback: bool = False
    guarded: bool = False

    @property
    def feasible(self) -> bool:
        return not self.fallback

    @property
    def constraint_labels(self) -> tuple[str, ...]:
        return tuple(r.label for r in self.rows if r.hard and r.label not in
                     ("u_max", "u_min", "v_max", "v_min"))


def merging_phi_for(rec: CavRecord, partner: CavRecord, coordinator: Coordinator,
                    config: CbfConfig) -> MergingPhi:
    topo = coordinator.topology
    mp = rec.next_mp
    L_i = topo.segments[rec.curr].length
    L_im = topo.segments[topo.inbound_segment(partner.route, mp)].length
    return MergingPhi(L_i, L_im, rec.segment_entry_speed, config.phi, config.delta)


def safety_rows(rec: CavRecord, coordinator: Coordinator, config: CbfConfig) -> list[Row]:
    """Rear-end row when ``ip`` exists, merging row when ``im`` exists."""
    rows = []
    if rec.ip is not None:
        lead = coordinator.record(rec.ip)
        rows.append(cbf_rear_end(rec.segment_offset, rec.v, lead.segment_offset, lead.v, config))
    if rec.im is not None and rec.im != rec.ip and rec.next_mp is not None:
        other = coordinator.record(rec.im)
        mp = rec.next_mp
        z = other.relative_to(mp) - rec.relative_to(mp)
        phi_fn = merging_phi_for(rec, other, coordinator, config)
        rows.append(cbf_safe_merge(rec.segment_offset, rec.v, z, other.v, phi_fn, config))
    return rows


def fallback_control(rows: list[Row], v: float, config: CbfConfig) -> float:
    """Acceleration used when the hard rows admit no common value.

    Normally the tightest safety upper bound, kept within the limits. A
    merging row with ``Phi <= 0`` bounds ``u`` from below (it asks the
    follower to speed up); when that is what cannot be met, the follower
    brakes instead, since falling back is what restores the merging gap.
    """
    floor = max(config.u_min, -config.class_k_gain * (v - config.v_min))
    if any(r.label == "merge" and r.a_u <= 0 for r in rows):
        return floor
    upper = [r.rhs / r.a_u for r in rows
             if r.hard and r.a_e == 0.0 and r.a_u > 0 and r.label not in ("u_max", "v_max")]
    u = min([config.u_max, config.class_k_gain * (config.v_max - v)] + upper)
    return max(u, floor)


# braking guard -------------------------------------------------------------

def braking_profile(v: float, config: CbfConfig):
    """Hardest braking the limit rows allow from speed ``v``.

    ``u = u_min`` until the ``v_min`` row takes over, then ``u = -gain (v - v_min)``,
    under which the speed only decays exponentially. Returns ``(distance(s),
    reach(r))``: distance covered after time ``s``, and the ``(time, speed)``
    at which distance ``r`` is covered (``None`` if it never is).
    """
    b, g, v_lo = -config.u_min, config.class_k_gain, config.v_min
    w = max(v - v_lo, 0.0)
    ws = min(w, b / g)  # excess speed when the exponential phase starts
    t1 = (w - ws) / b
    d1 = v_lo * t1 + (w * w - ws * ws) / (2.0 * b)

    def distance(s: float) -> float:
        if s <= t1:
            return v * s - 0.5 * b * s * s
        s2 = s - t1
        return d1 + v_lo * s2 + ws * (1.0 - math.exp(-g * s2)) / g

    def reach(r: float):
        if r <= d1:
            disc = max(v * v - 2.0 * b * r, 0.0)
            return (v - math.sqrt(disc)) / b, math.sqrt(disc)
        if v_lo > 0:
            # v_lo s + ws (1 - exp(-g s)) / g = r - d1; monotone, bisect
            lo, hi = 0.0, (r - d1) / v_lo
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if v_lo * mid + ws * (1.0 - math.exp(-g * mid)) / g < r - d1:
                    lo = mid
                else:
                    hi = mid
            return t1 + hi, v_lo + ws * math.exp(-g * hi)
        rem = r - d1
        if ws <= 0.0 or g * rem >= ws:
            return None
        return t1 - math.log(1.0 - g * rem / ws) / g, ws - g * rem

    return distance, reach


def _tick_crossing(d: float, v: float, u: float, dt: float) -> float:
    """Time into the tick at which ``v s + u s^2 / 2`` reaches ``d``."""
    if abs(u) < 1e-12:
        return min(d / v, dt) if v > 0 else dt
    disc = v * v + 2.0 * u * d
    if disc < 0:
        return dt
    s = (-v + math.sqrt(disc)) / u
    return min(max(s, 0.0), dt)


def merge_backup_safe(d: float, v: float, z_m: float, v_m: float, u: float,
                      config: CbfConfig) -> bool:
    """Apply ``u`` for one tick, then brake: is the merge still safe?

    ``d`` is the follower's distance to the merging point, ``z_m`` the
    partner's position relative to it. The partner is assumed to brake as
    hard as it can from now on.
    """
    dt = config.dt
    partner, _ = braking_profile(v_m, config)
    travelled = v * dt + 0.5 * u * dt * dt
    if travelled >= d:
        s = _tick_crossing(d, v, u, dt)
        return z_m + partner(s) - config.phi * (v + u * s) - config.delta >= 0.0
    _, reach = braking_profile(max(v + u * dt, 0.0), config)
    hit = reach(d - travelled)
    if hit is None:
        return True
    tau, v_cross = hit
    return z_m + partner(dt + tau) - config.phi * v_cross - config.delta >= 0.0


def braking_guard(rec: CavRecord, coordinator: Coordinator, config: CbfConfig,
                  u: float) -> tuple[float, bool]:
    """Largest acceleration not above ``u`` that keeps the braking backup safe."""
    if rec.im is None or rec.next_mp is None:
        return u, False
    partner = coordinator.record(rec.im)
    mp = rec.next_mp
    d, z_m = -rec.relative_to(mp), partner.relative_to(mp)

    def ok(a: float) -> bool:
        return merge_backup_safe(d, rec.v, z_m, partner.v, a, config)

    if ok(u):
        return u, False
    floor = max(config.u_min, -config.class_k_gain * (rec.v - config.v_min))
    if floor >= u or not ok(floor):
        return min(floor, u), True
    lo, hi = floor, u
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo, True


def control_step(
    rec: CavRecord,
    coordinator: Coordinator,
    plan: TrajectoryParams,
    config: CbfConfig,
    t: float,
) -> ControlResult:
    """Acceleration for ``rec`` over ``[t, t + dt)``."""
    u_ref, v_ref, _ = eval_reference(plan, t)
    rows = cbf_limits(rec.v, config) + safety_rows(rec, coordinator, config)
    rows.append(clf_row(rec.v, v_ref, config))
    sol = solve_step_qp(QpProblem(u_ref, rows, config.relax_weight))
    if sol.feasible:
        result = ControlResult(sol.u, sol.e, u_ref, v_ref, rows, sol)
    else:
        u = fallback_control(rows, rec.v, config)
        result = ControlResult(u, 0.0, u_ref, v_ref, rows, sol, fallback=True)
    if config.braking_guard:
        result.u, result.guarded = braking_guard(rec, coordinator, config, result.u)
    return result
