"""Experiment presets, sweeps over their variants, and plot-data export.

A preset is a base configuration plus a list of named variants, each a dict
of field overrides. ``run_experiment`` runs every variant, writes one report
per variant (``<variant>.json`` and ``<variant>.txt``) and a comparison table
(``comparison.csv`` and ``comparison.txt``) with one row per variant, or one
row per variant and origin when the preset asks for it.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, fields
from pathlib import Path

from .config import ScenarioConfig
from .errors import ConfigurationError, SimulationError
from .simulation import MetricsReport, SimulationResult, run, write_log_csv
from .topology import ORIGINS

PLOT_FIELDS = ("uid", "t", "x", "v", "u")
COMPARISON_FIELDS = ("variant", "origin", "n", "travel_time", "energy", "objective",
                     "max_rear_end_violation", "max_merge_violation")


class ExperimentError(RuntimeError):
    """A variant failed; names the variant and keeps the simulation error."""

    def __init__(self, variant: str, cause: Exception):
        super().__init__(f"variant {variant!r} failed: {cause}")
        self.variant = variant
        self.cause = cause
        self.events = getattr(cause, "events", [])


@dataclass
class ExperimentPreset:
    name: str
    base: dict = field(default_factory=dict)
    variants: list[tuple[str, dict]] = field(default_factory=list)
    per_origin: bool = False

    def configs(self, seed: int | None = None, dt: float | None = None,
                base_config: ScenarioConfig | None = None) -> list[tuple[str, ScenarioConfig]]:
        """Expand every variant into a validated config.

        ``seed`` and ``dt`` override whatever the preset and variant say.
        """
        if not self.variants:
            raise ConfigurationError(f"preset {self.name!r} has no variants")
        known = {f.name for f in fields(ScenarioConfig)}
        start = base_config or ScenarioConfig()
        out = []
        for label, delta in self.variants:
            changes = {**self.base, **delta}
            unknown = set(changes) - known
            if unknown:
                raise ConfigurationError(f"variant {label!r}: unknown fields {sorted(unknown)}")
            if seed is not None:
                changes["seed"] = seed
            if dt is not None:
                changes["dt"] = dt
            try:
                out.append((label, start.with_overrides(**changes)))
            except ConfigurationError as err:
                raise ConfigurationError(f"variant {label!r}: {err}") from None
        return out


BALANCED = {"O1": 360.0, "O2": 360.0, "O3": 360.0}
IMBALANCED = {"O1": 540.0, "O2": 270.0, "O3": 270.0}

PRESETS: dict[str, ExperimentPreset] = {
    "sim1_symmetric": ExperimentPreset(
        "sim1_symmetric",
        base={"L": 60.0, "L_a": 60.0, "policy": "FIFO", "n_cavs": 200},
        variants=[("alpha_0.1", {"alpha": 0.1}), ("alpha_0.2", {"alpha": 0.2})],
    ),
    "sim2_asymmetric_policies": ExperimentPreset(
        "sim2_asymmetric_policies",
        base={"L": 100.0, "L_a": 60.0, "alpha": 0.2, "n_cavs": 200},
        variants=[("FIFO", {"policy": "FIFO"}), ("SDF", {"policy": "SDF"})],
    ),
    "sim3_traffic_volume": ExperimentPreset(
        "sim3_traffic_volume",
        base={"L": 100.0, "L_a": 60.0, "alpha": 0.2, "policy": "SDF", "n_cavs": 500},
        variants=[("balanced", {"rates": BALANCED}), ("imbalanced", {"rates": IMBALANCED})],
        per_origin=True,
    ),
}


def get_preset(name: str) -> ExperimentPreset:
    """Built-in preset by name; ``custom`` is a single run of the base config."""
    if name == "custom":
        return ExperimentPreset("custom", variants=[("custom", {})])
    try:
        return PRESETS[name]
    except KeyError:
        choices = ", ".join(sorted(PRESETS) + ["custom"])
        raise ConfigurationError(f"unknown preset {name!r} (choose from {choices})") from None


def comparison_rows(reports: list[tuple[str, MetricsReport]], per_origin: bool) -> list[dict]:
    rows = []
    for label, rep in reports:
        safety = rep.safety
        groups = [("All", rep.overall)]
        if per_origin:
            groups += [(f"From {o}", rep.per_origin[o]) for o in ORIGINS]
        for origin, m in groups:
            rows.append({
                "variant": label, "origin": origin, "n": m["n"],
                "travel_time": m["travel_time"], "energy": m["energy"],
                "objective": m["objective"],
                "max_rear_end_violation": safety["max_rear_end_violation"],
                "max_merge_violation": safety["max_merge_violation"],
            })
    return rows


def format_comparison(rows: list[dict]) -> str:
    head = f"{'variant':<14}{'origin':<10}{'n':>6}{'time (s)':>12}{'energy':>12}{'objective':>12}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r['variant']:<14}{r['origin']:<10}{r['n']:>6}{r['travel_time']:>12.4f}"
                     f"{r['energy']:>12.4f}{r['objective']:>12.4f}")
    return "\n".join(lines) + "\n"


def _comparison_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=COMPARISON_FIELDS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


@dataclass
class ExperimentSummary:
    preset: str
    reports: list[tuple[str, MetricsReport]]
    rows: list[dict]
    files: list[Path]

    def report(self, variant: str) -> MetricsReport:
        return dict(self.reports)[variant]


def run_experiment(
    preset: ExperimentPreset | str,
    out_dir: str | Path,
    *,
    seed: int | None = None,
    dt: float | None = None,
    base_config: ScenarioConfig | None = None,
    write_logs: bool = False,
) -> ExperimentSummary:
    """Run every variant of ``preset`` and write its reports into ``out_dir``.

    All variants are expanded (and so validated) before anything runs, and
    nothing is written until every variant has finished.
    """
    if isinstance(preset, str):
        preset = get_preset(preset)
    configs = preset.configs(seed=seed, dt=dt, base_config=base_config)
    results: list[tuple[str, SimulationResult]] = []
    for label, config in configs:
        try:
            results.append((label, run(config, name=label, keep_log=True)))
        except SimulationError as err:
            raise ExperimentError(label, err) from err

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    reports = [(label, res.report) for label, res in results]
    for label, res in results:
        for suffix, text in ((".json", res.report.to_json()), (".txt", res.report.to_text())):
            path = out / f"{label}{suffix}"
            path.write_text(text, encoding="utf-8")
            files.append(path)
        if write_logs:
            path = out / f"{label}_log.csv"
            write_log_csv(res.log, path)
            files.append(path)
    rows = comparison_rows(reports, preset.per_origin)
    for name, text in (("comparison.csv", _comparison_csv(rows)),
                       ("comparison.txt", format_comparison(rows))):
        path = out / name
        path.write_text(text, encoding="utf-8")
        files.append(path)
    return ExperimentSummary(preset.name, reports, rows, files)


def export_plot_data(log: list[dict], path: str | Path) -> Path:
    """Per-vehicle ``t, x, v, u`` series, sorted by vehicle then time."""
    path = Path(path)
    rows = sorted(log, key=lambda r: (r["uid"], r["t"]))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PLOT_FIELDS)
        for r in rows:
            writer.writerow([r["uid"], repr(float(r["t"])), repr(float(r["x"])),
                             repr(float(r["v"])), repr(float(r["u"]))])
    return path


def read_plot_data(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [{"uid": int(r["uid"]), "t": float(r["t"]), "x": float(r["x"]),
                 "v": float(r["v"]), "u": float(r["u"])} for r in csv.DictReader(fh)]
