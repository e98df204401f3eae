"""Scenario configuration and its flat ``section.key = value`` file format.

One assignment per line, ``#`` starts a comment, values are JSON literals
(numbers, ``true``/``false``, ``null``, quoted strings) or bare words such as
``FIFO``. Recognised keys::

    topology.L                  entry road length (m)                  60
    topology.L_a                triangle side length (m)               60
    traffic.rate.O1 .. O3       Poisson arrival rate (veh/h)           360
    traffic.exit.Oj.Ek          relative weight of exit Ek from Oj     uniform
    traffic.entry_speed         entry speed, or lower bound (m/s)      10
    traffic.entry_speed_max     upper bound for uniform entry speeds   null
    objective.alpha             time/energy weight in [0, 1)           0.2
    control.policy              FIFO or SDF                            FIFO
    control.dt                  control and integration step (s)       0.1
    control.phi                 reaction time (s)                      1.8
    control.delta               standstill gap (m)                     10
    control.v_min / v_max       speed limits (m/s)                     0 / 17
    control.u_min / u_max       acceleration limits (m/s^2)            -5 / 5
    control.class_k_gain        linear class-K gain (1/s)              1
    control.clf_epsilon         CLF decay rate (1/s)                   1
    control.relax_weight        weight on the CLF relaxation           1
    control.tick_margin         m/s taken off the safety rows          0.5
    control.braking_guard       cap u by the braking backup check      true
    control.stall_release       s stopped at a merging point before    5
                                passing ahead of an upstream partner
                                (null disables)
    run.seed                    base random seed                       0
    run.n_cavs                  vehicles to release (null = use horizon) 200
    run.horizon                 arrival window (s), used when n_cavs is null
    run.max_time                hard stop for the clock (s)            null

Randomness: stream ``k`` is drawn from
``numpy.random.default_rng(SeedSequence(seed, spawn_key=(k,)))`` with
``k = 0, 1, 2`` the arrival processes of O1..O3, ``k = 3, 4, 5`` their exit
draws and ``k = 6`` the entry speeds.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigurationError
from .ocbf import CbfConfig
from .topology import EXITS, ORIGINS
from .unconstrained import beta_from_alpha

def _uniform_exits() -> dict[str, dict[str, float]]:
    return {o: {e: 1.0 for e in EXITS} for o in ORIGINS}


@dataclass
class ScenarioConfig:
    L: float = 60.0
    L_a: float = 60.0
    rates: dict[str, float] = field(default_factory=lambda: {o: 360.0 for o in ORIGINS})
    exit_weights: dict[str, dict[str, float]] = field(default_factory=_uniform_exits)
    entry_speed: float = 10.0
    entry_speed_max: float | None = None
    alpha: float = 0.2
    policy: str = "FIFO"
    dt: float = 0.1
    phi: float = 1.8
    delta: float = 10.0
    v_min: float = 0.0
    v_max: float = 17.0
    u_min: float = -5.0
    u_max: float = 5.0
    class_k_gain: float = 1.0
    clf_epsilon: float = 1.0
    relax_weight: float = 1.0
    tick_margin: float = 0.5
    braking_guard: bool = True
    stall_release: float | None = 5.0
    seed: int = 0
    n_cavs: int | None = 200
    horizon: float | None = None
    max_time: float | None = None

    def __post_init__(self):
        self.validate()

    @property
    def beta(self) -> float:
        return beta_from_alpha(self.alpha, self.u_max, self.u_min)

    def cbf(self) -> CbfConfig:
        return CbfConfig(
            class_k_gain=self.class_k_gain, clf_epsilon=self.clf_epsilon,
            relax_weight=self.relax_weight, phi=self.phi, delta=self.delta,
            v_min=self.v_min, v_max=self.v_max, u_min=self.u_min, u_max=self.u_max, dt=self.dt,
            tick_margin=self.tick_margin, braking_guard=self.braking_guard,
        )

    def validate(self) -> None:
        problems = []
        if not (self.L > 0 and self.L_a > 0):
            problems.append("segment lengths must be positive")
        if set(self.rates) != set(ORIGINS) or any(r < 0 for r in self.rates.values()):
            problems.append("traffic.rate needs a non-negative rate for each of O1, O2, O3")
        for o, weights in self.exit_weights.items():
            if o not in ORIGINS or set(weights) - set(EXITS):
                problems.append(f"bad exit table for {o}")
            elif any(w < 0 for w in weights.values()) or sum(weights.values()) <= 0:
                problems.append(f"exit weights for {o} must be non-negative with a positive sum")
        if not 0.0 <= self.alpha < 1.0:
            problems.append(f"objective.alpha must lie in [0, 1), got {self.alpha}")
        if self.alpha == 0.0:
            problems.append("objective.alpha = 0 leaves the exit time free (beta = 0)")
        if self.policy.upper() not in ("FIFO", "SDF"):
            problems.append(f"control.policy must be FIFO or SDF, got {self.policy!r}")
        if not self.dt > 0:
            problems.append("control.dt must be positive")
        if self.entry_speed < self.v_min or self.entry_speed > self.v_max:
            problems.append("traffic.entry_speed must lie within the speed limits")
        if self.entry_speed_max is not None and not (
            self.entry_speed <= self.entry_speed_max <= self.v_max
        ):
            problems.append("traffic.entry_speed_max must lie in [entry_speed, v_max]")
        if self.stall_release is not None and not self.stall_release > 0:
            problems.append("control.stall_release must be positive or null")
        if self.n_cavs is None and self.horizon is None:
            problems.append("set run.n_cavs or run.horizon")
        if self.n_cavs is not None and self.n_cavs < 0:
            problems.append("run.n_cavs must be non-negative")
        if problems:
            raise ConfigurationError("; ".join(problems))
        self.cbf()

    def with_overrides(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)


# flat key <-> dataclass field mapping ---------------------------------------

_SCALAR_KEYS = {
    "topology.L": "L",
    "topology.L_a": "L_a",
    "traffic.entry_speed": "entry_speed",
    "traffic.entry_speed_max": "entry_speed_max",
    "objective.alpha": "alpha",
    "control.policy": "policy",
    "control.dt": "dt",
    "control.phi": "phi",
    "control.delta": "delta",
    "control.v_min": "v_min",
    "control.v_max": "v_max",
    "control.u_min": "u_min",
    "control.u_max": "u_max",
    "control.class_k_gain": "class_k_gain",
    "control.clf_epsilon": "clf_epsilon",
    "control.relax_weight": "relax_weight",
    "control.tick_margin": "tick_margin",
    "control.braking_guard": "braking_guard",
    "control.stall_release": "stall_release",
    "run.seed": "seed",
    "run.n_cavs": "n_cavs",
    "run.horizon": "horizon",
    "run.max_time": "max_time",
}
_INT_FIELDS = {"seed", "n_cavs"}
_STR_FIELDS = {"policy"}
_BOOL_FIELDS = {"braking_guard"}


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_scenario_text(text: str, source: str = "<string>") -> ScenarioConfig:
    values: dict = {}
    rates = {o: 360.0 for o in ORIGINS}
    exits: dict[str, dict[str, float]] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if "=" not in line:
            raise ConfigurationError(f"{where}: expected 'key = value', got {raw.strip()!r}")
        key, _, rhs = (p.strip() for p in line.partition("="))
        value = _parse_value(rhs)
        parts = key.split(".")
        if key in _SCALAR_KEYS:
            name = _SCALAR_KEYS[key]
            if value is not None:
                if name in _STR_FIELDS:
                    value = str(value)
                elif name in _BOOL_FIELDS:
                    if not isinstance(value, bool):
                        raise ConfigurationError(f"{where}: {key} needs true or false, got {rhs!r}")
                elif isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ConfigurationError(f"{where}: {key} needs a number, got {rhs!r}")
                elif name in _INT_FIELDS:
                    if float(value) != int(value):
                        raise ConfigurationError(f"{where}: {key} needs an integer")
                    value = int(value)
                else:
                    value = float(value)
            values[name] = value
        elif len(parts) == 3 and parts[:2] == ["traffic", "rate"] and parts[2] in ORIGINS:
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ConfigurationError(f"{where}: {key} needs a number")
            rates[parts[2]] = float(value)
        elif (len(parts) == 4 and parts[:2] == ["traffic", "exit"]
              and parts[2] in ORIGINS and parts[3] in EXITS):
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ConfigurationError(f"{where}: {key} needs a number")
            exits.setdefault(parts[2], {})[parts[3]] = float(value)
        else:
            raise ConfigurationError(f"{where}: unknown key {key!r}")
    exit_weights = _uniform_exits()
    for o, w in exits.items():
        exit_weights[o] = {e: w.get(e, 0.0) for e in EXITS}
    try:
        return ScenarioConfig(rates=rates, exit_weights=exit_weights, **values)
    except ConfigurationError as err:
        raise ConfigurationError(f"{source}: {err}") from None


def parse_scenario(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    return parse_scenario_text(path.read_text(encoding="utf-8"), str(path))


def serialize_scenario(config: ScenarioConfig) -> str:
    """Every key written out, so the file also documents resolved defaults."""
    lines = []
    data = asdict(config)
    for key, name in _SCALAR_KEYS.items():
        lines.append(f"{key} = {json.dumps(data[name])}")
        if key == "topology.L_a":
            for o in ORIGINS:
                lines.append(f"traffic.rate.{o} = {json.dumps(config.rates[o])}")
            for o in ORIGINS:
                for e in EXITS:
                    lines.append(f"traffic.exit.{o}.{e} = {json.dumps(config.exit_weights[o][e])}")
    return "\n".join(lines) + "\n"


def config_fields() -> list[str]:
    return [f.name for f in fields(ScenarioConfig)]
