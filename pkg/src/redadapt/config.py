"""Run configuration.

One JSON document drives a whole run: IO budgets, reliability targets,
planner knobs, estimator settings, the candidate scheme grid, cluster
layout constants, and optional synthetic-trace generator entries.
Unknown keys are rejected so typos fail loudly instead of silently
falling back to defaults.
"""

from __future__ import annotations

import dataclasses
import datetime
import json
from typing import Any, Callable, Mapping, Optional

from redadapt.afr import KernelConfig
from redadapt.orchestrator import IoPolicy, TransitionPolicy
from redadapt.reliability import ReliabilityConfig, Scheme, scheme_grid
from redadapt.trace import GeneratorSpec, SyntheticAfrProfile


class ConfigError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class ClusterConfig:
    fill_fraction: float = 0.60
    max_fill: float = 0.95
    step_min_disks: int = 1000
    step_window_days: int = 7

    def __post_init__(self) -> None:
        if not (0.0 < self.fill_fraction < self.max_fill <= 1.0):
            raise ValueError("need 0 < fill_fraction < max_fill <= 1")
        if self.step_min_disks < 1 or self.step_window_days < 1:
            raise ValueError("step_min_disks and step_window_days must be >= 1")


@dataclasses.dataclass(frozen=True)
class EstimatorConfig:
    bandwidth_days: int = 30
    min_at_risk: int = 1000

    def __post_init__(self) -> None:
        if self.bandwidth_days < 1 or self.min_at_risk < 0:
            raise ValueError("bandwidth_days must be >= 1, min_at_risk >= 0")

    @property
    def kernel(self) -> KernelConfig:
        return KernelConfig(bandwidth=self.bandwidth_days)


@dataclasses.dataclass(frozen=True)
class GridConfig:
    k_min: int = 3
    k_max: int = 50
    f_min: int = 2
    f_max: int = 4

    def __post_init__(self) -> None:
        if not (1 <= self.k_min <= self.k_max):
            raise ValueError("need 1 <= k_min <= k_max")
        if not (1 <= self.f_min <= self.f_max):
            raise ValueError("need 1 <= f_min <= f_max")

    def schemes(self) -> tuple[Scheme, ...]:
        return scheme_grid(self.k_min, self.k_max, self.f_min, self.f_max)


@dataclasses.dataclass(frozen=True)
class RunConfig:
    io: IoPolicy = IoPolicy()
    reliability: ReliabilityConfig = ReliabilityConfig()
    transition: TransitionPolicy = TransitionPolicy()
    estimator: EstimatorConfig = EstimatorConfig()
    grid: GridConfig = GridConfig()
    cluster: ClusterConfig = ClusterConfig()
    generator: tuple[GeneratorSpec, ...] = ()
    seed: int = 0
    start: Optional[datetime.date] = None
    days: Optional[int] = None


def _date(value: Any) -> datetime.date:
    return datetime.date.fromisoformat(str(value))


def _section(
    raw: Any, path: str, fields: Mapping[str, Callable[[Any], Any]]
) -> dict[str, Any]:
    """Pull known keys out of one config section, converting values and
    rejecting anything unrecognized."""
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected an object, got {type(raw).__name__}")
    unknown = sorted(set(raw) - set(fields))
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}")
    out: dict[str, Any] = {}
    for key, conv in fields.items():
        if key in raw and raw[key] is not None:
            try:
                out[key] = conv(raw[key])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{path}.{key}: {exc}") from exc
    return out


def _build(cls: type, kwargs: dict[str, Any], path: str) -> Any:
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _profile_from_dict(raw: Any, path: str) -> SyntheticAfrProfile:
    kwargs = _section(
        raw,
        path,
        {
            "infancy_days": int,
            "infancy_afr": float,
            "phases": lambda v: tuple((int(d), float(a)) for d, a in v),
            "wearout_slope": float,
        },
    )
    if "phases" in kwargs:
        kwargs["phase_afrs"] = kwargs.pop("phases")
    return _build(SyntheticAfrProfile, kwargs, path)


def _generator_entry(raw: Any, path: str) -> GeneratorSpec:
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected an object")
    kwargs = _section(
        raw,
        path,
        {
            "dgroup": str,
            "pattern": str,
            "count": int,
            "start": _date,
            "end": _date,
            "capacity": int,
            "batch_tag": str,
            "profile": lambda v: v,  # handled below for the error path
        },
    )
    for required in ("dgroup", "pattern", "count", "start", "end", "capacity", "profile"):
        if required not in kwargs:
            raise ConfigError(f"{path}: missing key {required!r}")
    kwargs["profile"] = _profile_from_dict(raw["profile"], f"{path}.profile")
    return _build(GeneratorSpec, kwargs, path)


_TOP_LEVEL = (
    "io",
    "reliability",
    "transition",
    "estimator",
    "grid",
    "cluster",
    "generator",
    "seed",
    "start",
    "days",
)


def config_from_dict(raw: Mapping[str, Any]) -> RunConfig:
    if not isinstance(raw, Mapping):
        raise ConfigError("config root must be an object")
    unknown = sorted(set(raw) - set(_TOP_LEVEL))
    if unknown:
        raise ConfigError(f"unknown top-level keys {unknown}")

    io = _build(
        IoPolicy,
        _section(
            raw.get("io"),
            "io",
            {"peak_io_cap": float, "avg_io": float, "per_disk_bandwidth": float},
        ),
        "io",
    )
    rel_kwargs = _section(
        raw.get("reliability"),
        "reliability",
        {
            "mttr_days": float,
            "afr0_pct": float,
            "scheme0": Scheme.parse,
            "max_k": int,
            "min_f": int,
            "max_repair_days": float,
        },
    )
    reliability = _build(ReliabilityConfig, rel_kwargs, "reliability")
    transition = _build(
        TransitionPolicy,
        _section(
            raw.get("transition"),
            "transition",
            {
                "canary_count": int,
                "threshold_fraction": float,
                "phase_tolerance": float,
                "min_rgroup_size": int,
                "min_new_rgroup_savings": float,
                "infancy_stability_days": int,
                "projection_window_days": int,
                "headroom_factor": float,
            },
        ),
        "transition",
    )
    estimator = _build(
        EstimatorConfig,
        _section(
            raw.get("estimator"),
            "estimator",
            {"bandwidth_days": int, "min_at_risk": int},
        ),
        "estimator",
    )
    grid = _build(
        GridConfig,
        _section(
            raw.get("grid"),
            "grid",
            {"k_min": int, "k_max": int, "f_min": int, "f_max": int},
        ),
        "grid",
    )
    cluster = _build(
        ClusterConfig,
        _section(
            raw.get("cluster"),
            "cluster",
            {
                "fill_fraction": float,
                "max_fill": float,
                "step_min_disks": int,
                "step_window_days": int,
            },
        ),
        "cluster",
    )
    gen_raw = raw.get("generator") or []
    if not isinstance(gen_raw, (list, tuple)):
        raise ConfigError("generator: expected a list")
    generator = tuple(
        _generator_entry(entry, f"generator[{i}]") for i, entry in enumerate(gen_raw)
    )
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed: expected an integer")
    start = _date(raw["start"]) if raw.get("start") is not None else None
    days = raw.get("days")
    if days is not None and (not isinstance(days, int) or days < 1):
        raise ConfigError("days: expected a positive integer")
    return RunConfig(
        io=io,
        reliability=reliability,
        transition=transition,
        estimator=estimator,
        grid=grid,
        cluster=cluster,
        generator=generator,
        seed=seed,
        start=start,
        days=days,
    )


def load_config(path: str) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(raw)


def config_to_dict(cfg: RunConfig) -> dict[str, Any]:
    """Inverse of config_from_dict, for writing resolved settings back out."""

    def profile_dict(p: SyntheticAfrProfile) -> dict[str, Any]:
        return {
            "infancy_days": p.infancy_days,
            "infancy_afr": p.infancy_afr,
            "phases": [list(phase) for phase in p.phase_afrs],
            "wearout_slope": p.wearout_slope,
        }

    return {
        "io": dataclasses.asdict(cfg.io),
        "reliability": {
            "mttr_days": cfg.reliability.mttr_days,
            "afr0_pct": cfg.reliability.afr0_pct,
            "scheme0": str(cfg.reliability.scheme0),
            "max_k": cfg.reliability.max_k,
            "min_f": cfg.reliability.min_f,
            "max_repair_days": cfg.reliability.max_repair_days,
        },
        "transition": dataclasses.asdict(cfg.transition),
        "estimator": dataclasses.asdict(cfg.estimator),
        "grid": dataclasses.asdict(cfg.grid),
        "cluster": dataclasses.asdict(cfg.cluster),
        "generator": [
            {
                "dgroup": g.dgroup,
                "pattern": g.pattern,
                "count": g.count,
                "start": g.start.isoformat(),
                "end": g.end.isoformat(),
                "capacity": g.capacity,
                "batch_tag": g.batch_tag,
                "profile": profile_dict(g.profile),
            }
            for g in cfg.generator
        ],
        "seed": cfg.seed,
        "start": cfg.start.isoformat() if cfg.start else None,
        "days": cfg.days,
    }


def default_suite() -> dict[str, Any]:
    """Six-year two-unit reference cluster: one 20k-disk step batch that
    wears out mid-run and one 20k-disk trickle unit deployed over two
    years. Unit populations are kept in the tens of thousands because
    that is the scale where a pooled failure curve has enough exposure
    per age to drive scheme choices; far below it, single failure
    clusters dominate the curve for months."""
    return {
        "seed": 1,
        "start": "2020-01-01",
        "days": 2192,
        "generator": [
            {
                "dgroup": "S-20K",
                "pattern": "step",
                "count": 20000,
                "start": "2020-01-15",
                "end": "2020-01-17",
                "capacity": 4_000_000_000_000,
                "batch_tag": "B2020-01",
                "profile": {
                    "infancy_days": 25,
                    "infancy_afr": 5.0,
                    "phases": [[500, 1.0]],
                    "wearout_slope": 0.004,
                },
            },
            {
                "dgroup": "T-20K",
                "pattern": "trickle",
                "count": 20000,
                "start": "2020-01-01",
                "end": "2021-12-31",
                "capacity": 4_000_000_000_000,
                "profile": {
                    "infancy_days": 25,
                    "infancy_afr": 4.0,
                    "phases": [[600, 1.1]],
                    "wearout_slope": 0.004,
                },
            },
        ],
    }


def steep_step_suite() -> dict[str, Any]:
    """Single fast-wearing step batch for peak-cap sweeps: the ramp is
    steep enough that tight caps cannot finish a transition before the
    protection deadline."""
    return {
        "seed": 7,
        "start": "2020-01-01",
        "days": 420,
        "generator": [
            {
                "dgroup": "S-STEEP",
                "pattern": "step",
                "count": 20000,
                "start": "2020-01-10",
                "end": "2020-01-12",
                "capacity": 4_000_000_000_000,
                "batch_tag": "B-STEEP",
                "profile": {
                    "infancy_days": 20,
                    "infancy_afr": 4.0,
                    "phases": [[200, 1.0]],
                    "wearout_slope": 0.02,
                },
            }
        ],
    }
