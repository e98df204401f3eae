"""Unconstrained joint time/energy optimum for a double integrator.

With every constraint inactive the optimal control is linear in time,

    u(t) = a t + b,  v(t) = a t^2 / 2 + b t + c,  x(t) = a t^3 / 6 + b t^2 / 2 + c t + d,

and ``(a, b, c, d, tf)`` solve five algebraic conditions: initial speed and
position, terminal position, ``u(tf) = 0`` and the free-end-time condition
``beta + a^2 tf^2 / 2 + a b tf + a c = 0``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SolverError


@dataclass(frozen=True)
class TrajectoryParams:
    a: float
    b: float
    c: float
    d: float
    t0: float
    tf: float
    v0: float
    xf: float
    beta: float

    @property
    def duration(self) -> float:
        return self.tf - self.t0

    @property
    def exit_speed(self) -> float:
        return self.v0 - 0.5 * self.a * self.duration**2

    @property
    def energy(self) -> float:
        """Integral of u^2 / 2 over [t0, tf]."""
        return self.a**2 * self.duration**3 / 6.0

    @property
    def objective(self) -> float:
        return self.beta * self.duration + self.energy

    def residuals(self) -> np.ndarray:
        """The five optimality conditions evaluated in absolute time."""
        a, b, c, d, t0, tf = self.a, self.b, self.c, self.d, self.t0, self.tf
        return np.array([
            0.5 * a * t0**2 + b * t0 + c - self.v0,
            a * t0**3 / 6.0 + 0.5 * b * t0**2 + c * t0 + d,
            a * tf**3 / 6.0 + 0.5 * b * tf**2 + c * tf + d - self.xf,
            a * tf + b,
            self.beta + 0.5 * a**2 * tf**2 + a * b * tf + a * c,
        ])


def eval_reference(params: TrajectoryParams, t: float) -> tuple[float, float, float]:
    """Reference ``(u, v, x)`` at time ``t``.

    Evaluated on the elapsed clock ``t - t0`` (the absolute-time cubic loses
    digits late in a long simulation). Past ``tf`` the reference coasts at the
    exit speed.
    """
    a, T = params.a, params.duration
    tau = t - params.t0
    if tau > T:
        v_end = params.exit_speed
        return 0.0, v_end, params.xf + v_end * (tau - T)
    u = a * (tau - T)
    v = params.v0 + a * (0.5 * tau**2 - T * tau)
    x = params.v0 * tau + a * (tau**3 / 6.0 - 0.5 * T * tau**2)
    return u, v, x


def _system(z: np.ndarray, v0: float, xf: float, beta: float) -> tuple[np.ndarray, np.ndarray]:
    # unknowns (a, b, c, d, T) on the elapsed clock, so t0 = 0
    a, b, c, d, T = z
    F = np.array([
        c - v0,
        d,
        a * T**3 / 6.0 + 0.5 * b * T**2 + c * T + d - xf,
        a * T + b,
        beta + 0.5 * a**2 * T**2 + a * b * T + a * c,
    ])
    J = np.array([
        [0.0, 0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0, 0.0],
        [T**3 / 6.0, 0.5 * T**2, T, 1.0, 0.5 * a * T**2 + b * T + c],
        [T, 1.0, 0.0, 0.0, a],
        [a * T**2 + b * T + c, a * T, a, 0.0, a**2 * T + a * b],
    ])
    return F, J


def _newton(z, v0, xf, beta, tol, max_iter, max_halvings):
    F, J = _system(z, v0, xf, beta)
    norm = np.linalg.norm(F)
    for it in range(max_iter):
        if norm <= tol:
            return z, norm, it
        try:
            step = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            break
        lam = 1.0
        for _ in range(max_halvings + 1):
            trial = z + lam * step
            if trial[4] > 0:
                F_new, J_new = _system(trial, v0, xf, beta)
                norm_new = np.linalg.norm(F_new)
                if np.isfinite(norm_new) and norm_new < norm:
                    break
            lam *= 0.5
        else:
            break
        z, F, J, norm = trial, F_new, J_new, norm_new
    return z, norm, max_iter


def solve_unconstrained(
    t0: float,
    v0: float,
    xf: float,
    beta: float,
    *,
    tol: float = 1e-10,
    max_iter: int = 100,
    max_halvings: int = 20,
) -> TrajectoryParams:
    """Damped Newton on the five optimality conditions with an analytic Jacobian.

    The iteration runs on the elapsed clock in units where ``xf = beta = 1``
    (length ``xf``, time ``(xf^2 / beta)^(1/4)``) so the residual norm used by
    the line search weighs all five conditions alike; a few full Newton steps
    in physical units then polish the result.
    """
    if v0 < 0 or xf <= 0 or beta <= 0:
        raise ValueError(f"need v0 >= 0, xf > 0, beta > 0 (got {v0}, {xf}, {beta})")
    t_unit = (xf**2 / beta) ** 0.25
    w0 = v0 * t_unit / xf
    starts = [np.array([0.0, 0.0, w0, 0.0, 1.0 / max(w0, t_unit / xf)])]
    # fallbacks: exit times around the standing-start optimum, with (a, b)
    # taken from the linear conditions so only the free-end-time one is off
    for scale in (1.0, 0.7, 1.4, 0.5, 2.0):
        T = min(scale * 4.5**0.25, 1.0 / max(w0, 1e-12))
        a = 3.0 * (w0 * T - 1.0) / T**3
        starts.append(np.array([a, -a * T, w0, 0.0, T]))
    attempts = []
    for z0 in starts:
        z, norm, iters = _newton(z0, w0, 1.0, 1.0, 1e-13, max_iter, max_halvings)
        attempts.append({"T_guess": float(z0[4]) * t_unit, "residual": float(norm), "iterations": iters})
        if norm <= 1e-11 and z[4] > 0:
            break
    else:
        raise SolverError(
            f"Newton failed for v0={v0}, xf={xf}, beta={beta}", {"attempts": attempts}
        )
    z = z * np.array([xf / t_unit**3, xf / t_unit**2, xf / t_unit, xf, t_unit])
    for _ in range(3):
        F, J = _system(z, v0, xf, beta)
        if np.linalg.norm(F) <= tol:
            break
        z = z + np.linalg.solve(J, -F)
    F, _ = _system(z, v0, xf, beta)
    if not np.linalg.norm(F) <= tol:
        raise SolverError(
            f"residual {np.linalg.norm(F):.3e} above tolerance for v0={v0}, xf={xf}, beta={beta}",
            {"attempts": attempts},
        )
    a, b_loc, c_loc, d_loc, T = (float(w) for w in z)
    # shift the elapsed-clock polynomials back to absolute time
    b = b_loc - a * t0
    c = 0.5 * a * t0**2 - b_loc * t0 + c_loc
    d = -a * t0**3 / 6.0 + 0.5 * b_loc * t0**2 - c_loc * t0 + d_loc
    return TrajectoryParams(a, b, c, d, float(t0), float(t0 + T), float(v0), float(xf), float(beta))


def beta_from_alpha(alpha: float, u_max: float, u_min: float) -> float:
    """Weight on travel time implied by the normalised convex combination."""
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
    return alpha * max(u_max**2, u_min**2) / (2.0 * (1.0 - alpha))
