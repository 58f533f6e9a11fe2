"""Scenario documents and the end-to-end pipeline.

A scenario is a JSON object::

    {
      "schema_version": 1,
      "name": "ds2-100km",
      "seed": 7,
      "decoy":   {"intensities": [...], "send_probabilities": [...],
                  "clock_rate": 2.5e6, "duration": 828, "epsilon": 1e-7},
      "channel": {"fiber_length": 100, "attenuation": 0.21, ...},
      "simulation": "aggregate",
      "stages": {"reconcile": true, "amplify": true},
      "f_ec": 1.1,
      "sweeps": {"distances": [...], "base_distance": 100, "time_factors": [...]}
    }

Everything except ``decoy`` and ``channel`` has a default. Outputs are
assembled in memory and written only once every requested stage succeeded.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import presets
from .analysis import (
    DEFAULT_F_EC,
    DEFAULT_N_MAX,
    AnalysisReport,
    InconsistentObservations,
    analyze,
    beamsplitter_reference,
    sweep_distance,
    sweep_time,
)
from .cascade import cascade_reconcile
from .channel import ChannelModel
from .protocol import DecoyConfig, SessionTallies, simulate_session
from .toeplitz import ToeplitzSpec, toeplitz_hash

__all__ = [
    "SCHEMA_VERSION",
    "OUT_ENV",
    "ConfigError",
    "ReconciliationFailure",
    "ScenarioConfig",
    "PipelineResult",
    "load_scenario",
    "run_pipeline",
    "emit_figure_data",
    "figure_rows",
    "key_file_text",
    "default_out_dir",
]

SCHEMA_VERSION = 1
OUT_ENV = "DECOYQKD_OUT"
SIMULATION_MODES = ("aggregate", "pulse")
_TOP_KEYS = {"schema_version", "name", "seed", "decoy", "channel", "simulation", "stages", "f_ec", "n_max", "sweeps", "out_dir"}


class ConfigError(ValueError):
    """The scenario document is unreadable or violates the schema."""


class ReconciliationFailure(RuntimeError):
    """Error correction finished but the keys could not be verified equal."""


def default_out_dir() -> Path:
    return Path(os.environ.get(OUT_ENV) or "decoyqkd-out")


@dataclass(frozen=True)
class ScenarioConfig:
    decoy: DecoyConfig
    channel: ChannelModel
    seed: int | None = None
    name: str = "scenario"
    simulation: str = "aggregate"
    reconcile: bool = True
    amplify: bool = True
    f_ec: float = DEFAULT_F_EC
    n_max: int = DEFAULT_N_MAX
    distances: tuple[float, ...] = ()
    base_distance: float | None = None
    time_factors: tuple[float, ...] = ()
    out_dir: str | None = None

    def __post_init__(self):
        if self.simulation not in SIMULATION_MODES:
            raise ConfigError(f"simulation must be one of {SIMULATION_MODES}, got {self.simulation!r}")
        if self.seed is not None and (not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0):
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        if self.amplify and not self.reconcile:
            raise ConfigError("amplification needs reconciled keys; enable stages.reconcile")
        if not 1.0 <= self.f_ec < 10.0:
            raise ConfigError(f"f_ec must lie in [1, 10), got {self.f_ec}")
        if self.n_max < 2:
            raise ConfigError("n_max must be at least 2")
        if any(d < 0 for d in self.distances):
            raise ConfigError("sweep distances must be non-negative")
        if any(f <= 0 for f in self.time_factors):
            raise ConfigError("time factors must be positive")

    @property
    def sweep_base_distance(self) -> float:
        return self.channel.fiber_length if self.base_distance is None else self.base_distance

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigError("a seed is required for simulation (set \"seed\" or pass --seed)")
        return self.seed

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "seed": self.seed,
            "decoy": self.decoy.to_dict(),
            "channel": self.channel.to_dict(),
            "simulation": self.simulation,
            "stages": {"reconcile": self.reconcile, "amplify": self.amplify},
            "f_ec": self.f_ec,
            "n_max": self.n_max,
            "sweeps": {
                "distances": list(self.distances),
                "base_distance": self.base_distance,
                "time_factors": list(self.time_factors),
            },
            "out_dir": self.out_dir,
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        if not isinstance(d, dict):
            raise ConfigError("scenario must be a JSON object")
        version = d.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
        unknown = set(d) - _TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown keys: {', '.join(sorted(unknown))}")
        for part in ("decoy", "channel"):
            if not isinstance(d.get(part), dict):
                raise ConfigError(f"missing or malformed {part!r} section")
        stages = d.get("stages", {})
        sweeps = d.get("sweeps", {})
        if not isinstance(stages, dict) or not isinstance(sweeps, dict):
            raise ConfigError("stages and sweeps must be objects")
        try:
            return cls(
                decoy=DecoyConfig.from_dict(d["decoy"]),
                channel=ChannelModel.from_dict(d["channel"]),
                seed=d.get("seed"),
                name=str(d.get("name", "scenario")),
                simulation=d.get("simulation", "aggregate"),
                reconcile=bool(stages.get("reconcile", True)),
                amplify=bool(stages.get("amplify", True)),
                f_ec=float(d.get("f_ec", DEFAULT_F_EC)),
                n_max=int(d.get("n_max", DEFAULT_N_MAX)),
                distances=tuple(float(x) for x in sweeps.get("distances") or ()),
                base_distance=None if sweeps.get("base_distance") is None else float(sweeps["base_distance"]),
                time_factors=tuple(float(x) for x in sweeps.get("time_factors") or ()),
                out_dir=d.get("out_dir"),
            )
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError, OverflowError) as exc:
            raise ConfigError(f"invalid scenario: {exc}") from exc

    @classmethod
    def from_preset(cls, name: str, seed: int | None = None) -> "ScenarioConfig":
        try:
            ds = presets.get(name)
        except KeyError as exc:
            raise ConfigError(str(exc.args[0])) from None
        return cls(
            decoy=ds.config,
            channel=ds.channel,
            seed=seed,
            name=ds.name,
            distances=ds.distances,
            time_factors=ds.time_factors,
        )


def load_scenario(path) -> ScenarioConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return ScenarioConfig.from_dict(data)


# --------------------------------------------------------------------------


@dataclass
class PipelineResult:
    tallies: SessionTallies
    report: AnalysisReport
    leaked_bits: int | None = None
    verified: bool | None = None
    alice_key: np.ndarray | None = None
    bob_key: np.ndarray | None = None
    extras: dict = field(default_factory=dict)

    def summary(self) -> dict:
        out = self.report.to_flat_dict()
        out["leaked_bits"] = self.leaked_bits
        out["reconciliation_verified"] = self.verified
        out["final_key_length"] = None if self.alice_key is None else int(len(self.alice_key))
        out.update(self.extras)
        return out


def simulate(scenario: ScenarioConfig):
    return simulate_session(scenario.decoy, scenario.channel, scenario.require_seed(), mode=scenario.simulation)


def analyze_tallies(scenario: ScenarioConfig, tallies: SessionTallies, leaked_bits: int | None = None) -> AnalysisReport:
    return analyze(tallies, scenario.decoy, f_ec=scenario.f_ec, leaked_bits=leaked_bits, n_max=scenario.n_max)


def run_pipeline(scenario: ScenarioConfig) -> PipelineResult:
    """simulate -> sift -> reconcile -> analyze -> amplify.

    Raises :class:`InconsistentObservations` when the yield program has no
    solution and :class:`ReconciliationFailure` when verification fails.
    """
    seed = scenario.require_seed()
    tallies, frame = simulate(scenario)
    key_frame = frame.level(0)
    alice = key_frame.alice_bits
    bob = key_frame.bob_bits
    qber = tallies.qber(0)

    leaked = verified = None
    if scenario.reconcile and len(alice):
        # block sizes are planned from the realised error rate; the floor keeps
        # the first block finite for an error-free key
        rec = cascade_reconcile(alice, bob, max(qber, 1e-3), seed)
        leaked, verified = rec.leaked_bits, rec.verified
        if not verified:
            raise ReconciliationFailure(f"verification parities disagree after {rec.passes} passes")
        bob = rec.corrected_bob_bits

    report = analyze_tallies(scenario, tallies, leaked_bits=leaked)
    extras = {}
    mu0 = scenario.decoy.intensities[0]
    extras["beamsplitter_fraction"], extras["beamsplitter_key_bits"] = beamsplitter_reference(
        tallies, scenario.channel, mu0, scenario.f_ec
    )
    extras["config_digest"] = scenario.digest()
    extras["seed"] = seed

    result = PipelineResult(tallies, report, leaked, verified, extras=extras)
    if scenario.amplify and scenario.reconcile:
        m = report.key.n_sec
        spec = ToeplitzSpec.random(len(alice), m, seed) if len(alice) else None
        if spec is None:
            result.alice_key = result.bob_key = np.zeros(0, dtype=np.uint8)
        else:
            result.alice_key = toeplitz_hash(alice, spec)
            result.bob_key = toeplitz_hash(bob, spec)
        if not np.array_equal(result.alice_key, result.bob_key):
            raise ReconciliationFailure("amplified keys differ despite verified reconciliation")
    return result


def key_file_text(bits: np.ndarray, report: AnalysisReport, digest: str) -> str:
    """Header line plus lowercase hex, MSB first, zero-padded to whole bytes."""
    bits = np.asarray(bits, dtype=np.uint8)
    body = np.packbits(bits).tobytes().hex() if len(bits) else ""
    header = (
        f"# n_sec={report.key.n_sec} epsilon_budget={report.bounds.epsilon_budget:.3g} "
        f"config_sha256={digest}"
    )
    lines = [header] + [body[i : i + 64] for i in range(0, len(body), 64)]
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# figure data

FIGURE_COLUMNS = {
    "fig2": ("distance_km", "rate_bps"),
    "fig3": ("time_s", "y1_lower", "b1_upper", "rate_bps"),
}
SWEEP_COLUMNS = ("x", "y1_lower", "b1_upper", "n_sec", "rate_bps")


def distance_rows(scenario: ScenarioConfig, tallies: SessionTallies) -> list[dict]:
    if not scenario.distances:
        raise ConfigError("no sweeps.distances configured")
    return sweep_distance(
        tallies, scenario.decoy, scenario.channel.attenuation, scenario.sweep_base_distance,
        scenario.distances, f_ec=scenario.f_ec, n_max=scenario.n_max,
    )


def time_rows(scenario: ScenarioConfig, tallies: SessionTallies) -> list[dict]:
    if not scenario.time_factors:
        raise ConfigError("no sweeps.time_factors configured")
    return sweep_time(tallies, scenario.decoy, scenario.time_factors, f_ec=scenario.f_ec, n_max=scenario.n_max)


def figure_rows(scenario: ScenarioConfig, figure: str, tallies: SessionTallies | None = None) -> list[dict]:
    """Rows for one figure, keyed by that figure's CSV columns."""
    if figure not in FIGURE_COLUMNS:
        raise ValueError(f"unknown figure {figure!r}; expected one of {sorted(FIGURE_COLUMNS)}")
    if tallies is None:
        tallies, _ = simulate(scenario)
    if figure == "fig2":
        return [{"distance_km": r["x"], "rate_bps": r["rate_bps"]} for r in distance_rows(scenario, tallies)]
    return [
        {"time_s": r["x"], "y1_lower": r["y1_lower"], "b1_upper": r["b1_upper"], "rate_bps": r["rate_bps"]}
        for r in time_rows(scenario, tallies)
    ]


def csv_text(rows: list[dict], columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return str(v)


def emit_figure_data(scenario: ScenarioConfig, figure: str, out_dir, tallies: SessionTallies | None = None) -> Path:
    rows = figure_rows(scenario, figure, tallies)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{figure}.csv"
    path.write_text(csv_text(rows, FIGURE_COLUMNS[figure]))
    return path


def with_seed(scenario: ScenarioConfig, seed: int | None) -> ScenarioConfig:
    return scenario if seed is None else replace(scenario, seed=seed)
