"""Disk event traces: canonical CSV format, a converter for daily-status
snapshot dumps, and a synthetic trace generator with known failure curves.

A trace is a flat list of dated events, one per line: DEPLOY, FAIL, or
DECOMMISSION. Every simulation input goes through `ClusterTrace`, which
validates per-disk lifecycle ordering and keeps events in a canonical sort.
"""

from __future__ import annotations

import csv
import datetime
import enum
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

TRACE_HEADER = ["date", "kind", "disk_id", "dgroup", "capacity", "batch_tag"]
SNAPSHOT_COLUMNS = ["date", "serial_number", "model", "capacity_bytes", "failure"]

DAYS_PER_YEAR = 365.25


class TraceError(ValueError):
    """Raised for malformed trace files or inconsistent event sequences."""


class EventKind(enum.IntEnum):
    # Numeric order doubles as the within-day sort order: a disk may be
    # deployed and fail on the same calendar day.
    DEPLOY = 0
    FAIL = 1
    DECOMMISSION = 2


@dataclass(frozen=True, order=True)
class DiskEvent:
    date: datetime.date
    kind: EventKind
    disk_id: str
    dgroup: str
    capacity: Optional[int] = field(default=None, compare=False)
    batch_tag: Optional[str] = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if self.kind is EventKind.DEPLOY:
            if self.capacity is None or self.capacity <= 0:
                raise TraceError(
                    f"DEPLOY for {self.disk_id!r} needs capacity > 0, "
                    f"got {self.capacity!r}"
                )
        elif self.capacity is not None:
            raise TraceError(
                f"{self.kind.name} for {self.disk_id!r} must not carry capacity"
            )


class ClusterTrace:
    """A validated, canonically ordered sequence of disk events.

    `truth` optionally maps dgroup name to the generator profile that
    produced it; it is carried in memory only (never serialized) so
    synthetic runs can score against the exact failure curve.
    """

    def __init__(
        self,
        events: Iterable[DiskEvent],
        start_date: Optional[datetime.date] = None,
        end_date: Optional[datetime.date] = None,
        truth: Optional[dict[str, "SyntheticAfrProfile"]] = None,
    ) -> None:
        evs = sorted(events, key=lambda e: (e.date, e.kind, e.disk_id))
        self._validate(evs)
        if evs:
            self.start_date = start_date if start_date is not None else evs[0].date
            self.end_date = end_date if end_date is not None else evs[-1].date
            if evs[0].date < self.start_date or evs[-1].date > self.end_date:
                raise TraceError("events outside [start_date, end_date]")
        else:
            self.start_date = start_date
            self.end_date = end_date
        if (
            self.start_date is not None
            and self.end_date is not None
            and self.end_date < self.start_date
        ):
            raise TraceError("end_date before start_date")
        self.events: tuple[DiskEvent, ...] = tuple(evs)
        self.truth = truth

    @staticmethod
    def _validate(events: Sequence[DiskEvent]) -> None:
        deployed: dict[str, datetime.date] = {}
        closed: set[str] = set()
        for ev in events:
            if ev.kind is EventKind.DEPLOY:
                if ev.disk_id in deployed:
                    raise TraceError(f"duplicate DEPLOY for disk {ev.disk_id!r}")
                deployed[ev.disk_id] = ev.date
            else:
                if ev.disk_id not in deployed:
                    raise TraceError(
                        f"{ev.kind.name} before DEPLOY for disk {ev.disk_id!r}"
                    )
                if ev.disk_id in closed:
                    raise TraceError(
                        f"multiple terminal events for disk {ev.disk_id!r}"
                    )
                closed.add(ev.disk_id)

    def dgroups(self) -> list[str]:
        seen = dict.fromkeys(ev.dgroup for ev in self.events)
        return list(seen)

    def __len__(self) -> int:
        return len(self.events)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ClusterTrace):
            return NotImplemented
        return (
            self.events == other.events
            and self.start_date == other.start_date
            and self.end_date == other.end_date
        )


def parse_trace(path: str | Path) -> ClusterTrace:
    """Read a trace CSV, re-sorting rows into canonical order.

    Readers tolerate arbitrary row order; `write_trace` emits canonical
    order, so write(parse(f)) is byte-identical for canonical files.
    """
    path = Path(path)
    events: list[DiskEvent] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TraceError(f"{path}: empty file, expected header") from None
        if header != TRACE_HEADER:
            raise TraceError(f"{path}: bad header {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(TRACE_HEADER):
                raise TraceError(f"{path}:{lineno}: expected 6 fields, got {len(row)}")
            date_s, kind_s, disk_id, dgroup, cap_s, tag = row
            try:
                date = datetime.date.fromisoformat(date_s)
            except ValueError:
                raise TraceError(f"{path}:{lineno}: bad date {date_s!r}") from None
            try:
                kind = EventKind[kind_s]
            except KeyError:
                raise TraceError(f"{path}:{lineno}: bad kind {kind_s!r}") from None
            capacity: Optional[int] = None
            if cap_s:
                try:
                    capacity = int(cap_s)
                except ValueError:
                    raise TraceError(
                        f"{path}:{lineno}: bad capacity {cap_s!r}"
                    ) from None
            if not disk_id or not dgroup:
                raise TraceError(f"{path}:{lineno}: empty disk_id or dgroup")
            try:
                events.append(
                    DiskEvent(date, kind, disk_id, dgroup, capacity, tag or None)
                )
            except TraceError as exc:
                raise TraceError(f"{path}:{lineno}: {exc}") from None
    return ClusterTrace(events)


def write_trace(trace: ClusterTrace, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_HEADER)
        for ev in trace.events:
            writer.writerow(
                [
                    ev.date.isoformat(),
                    ev.kind.name,
                    ev.disk_id,
                    ev.dgroup,
                    "" if ev.capacity is None else str(ev.capacity),
                    ev.batch_tag or "",
                ]
            )


def convert_daily_status(directory: str | Path) -> ClusterTrace:
    """Convert a directory of daily per-disk snapshot CSVs into a trace.

    Each file is named YYYY-MM-DD.csv and lists every live disk that day
    with columns date, serial_number, model, capacity_bytes, failure.
    A serial's first appearance becomes DEPLOY; a failure=1 row becomes
    FAIL; a serial that stops appearing without failing is taken as
    decommissioned on the first missing day.
    """
    directory = Path(directory)
    files = sorted(directory.glob("*.csv"))
    if not files:
        raise TraceError(f"{directory}: no snapshot files")

    first_seen: dict[str, tuple[datetime.date, str, int]] = {}
    last_seen: dict[str, datetime.date] = {}
    failed_on: dict[str, datetime.date] = {}
    snap_dates: list[datetime.date] = []

    for path in files:
        try:
            snap_date = datetime.date.fromisoformat(path.stem)
        except ValueError:
            raise TraceError(f"{path}: file name is not a YYYY-MM-DD date") from None
        snap_dates.append(snap_date)
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            missing = [c for c in SNAPSHOT_COLUMNS if c not in (reader.fieldnames or [])]
            if missing:
                raise TraceError(f"{path}: missing columns {missing}")
            for row in reader:
                serial = row["serial_number"]
                model = row["model"]
                capacity = int(row["capacity_bytes"])
                if serial not in first_seen:
                    first_seen[serial] = (snap_date, model, capacity)
                elif first_seen[serial][2] != capacity:
                    warnings.warn(
                        f"{path}: capacity change for {serial!r}, keeping first",
                        stacklevel=2,
                    )
                last_seen[serial] = snap_date
                if row["failure"].strip() == "1" and serial not in failed_on:
                    failed_on[serial] = snap_date

    final_date = max(snap_dates)
    events: list[DiskEvent] = []
    for serial, (deploy_date, model, capacity) in first_seen.items():
        events.append(
            DiskEvent(deploy_date, EventKind.DEPLOY, serial, model, capacity)
        )
        if serial in failed_on:
            events.append(DiskEvent(failed_on[serial], EventKind.FAIL, serial, model))
        elif last_seen[serial] < final_date:
            events.append(
                DiskEvent(
                    last_seen[serial] + datetime.timedelta(days=1),
                    EventKind.DECOMMISSION,
                    serial,
                    model,
                )
            )
    return ClusterTrace(events, start_date=min(snap_dates), end_date=final_date)


@dataclass(frozen=True)
class SyntheticAfrProfile:
    """Piecewise-constant failure-rate curve used as generator ground truth.

    Ages run through an infancy block, then the listed useful-life phases,
    then a linear wearout ramp starting from the last phase's level.
    All rates are %/yr; the daily hazard at age a is afr_at(a)/100/365.25.
    """

    infancy_days: int
    infancy_afr: float
    phase_afrs: tuple[tuple[int, float], ...]
    wearout_slope: float = 0.0

    def __post_init__(self) -> None:
        if self.infancy_days < 0 or self.infancy_afr < 0:
            raise ValueError("infancy parameters must be non-negative")
        if not self.phase_afrs:
            raise ValueError("at least one useful-life phase required")
        for duration, afr in self.phase_afrs:
            if duration <= 0 or afr < 0:
                raise ValueError("phase durations must be > 0 and AFRs >= 0")
        if self.wearout_slope < 0:
            raise ValueError("wearout_slope must be >= 0")
        object.__setattr__(self, "phase_afrs", tuple(map(tuple, self.phase_afrs)))

    def afr_at(self, age_days: int) -> float:
        """True AFR in %/yr for a disk on its age_days-th day (0-based)."""
        if age_days < self.infancy_days:
            return self.infancy_afr
        offset = age_days - self.infancy_days
        for duration, afr in self.phase_afrs:
            if offset < duration:
                return afr
            offset -= duration
        return self.phase_afrs[-1][1] + self.wearout_slope * offset

    def afr_curve(self, max_age_days: int) -> np.ndarray:
        ages = np.arange(max_age_days)
        out = np.empty(max_age_days, dtype=float)
        start = 0
        for duration, afr in ((self.infancy_days, self.infancy_afr), *self.phase_afrs):
            end = min(start + duration, max_age_days)
            out[start:end] = afr
            start = end
            if start >= max_age_days:
                return out
        last = self.phase_afrs[-1][1]
        out[start:] = last + self.wearout_slope * (ages[start:] - start)
        return out

    def daily_hazard(self, max_age_days: int) -> np.ndarray:
        return self.afr_curve(max_age_days) / 100.0 / DAYS_PER_YEAR

    def tolerated_crossing_age(self, level_pct: float, start_age: int = 0) -> Optional[int]:
        """First age >= start_age where the true AFR exceeds level_pct, or None."""
        age = 0
        for duration, afr in ((self.infancy_days, self.infancy_afr), *self.phase_afrs):
            if age + duration > start_age and afr > level_pct:
                return max(age, start_age)
            age += duration
        last = self.phase_afrs[-1][1]
        if last > level_pct:
            return max(age, start_age)
        if self.wearout_slope <= 0.0:
            return None
        crossing = age + math.floor((level_pct - last) / self.wearout_slope) + 1
        return max(crossing, start_age)

    def total_phase_days(self) -> int:
        return self.infancy_days + sum(d for d, _ in self.phase_afrs)


@dataclass(frozen=True)
class GeneratorSpec:
    """One deployment entry: a cohort of `count` identical-capacity disks."""

    dgroup: str
    profile: SyntheticAfrProfile
    pattern: str  # "trickle" or "step"
    count: int
    start: datetime.date
    end: datetime.date
    capacity: int
    batch_tag: Optional[str] = None

    def __post_init__(self) -> None:
        if self.pattern not in ("trickle", "step"):
            raise ValueError(f"unknown deployment pattern {self.pattern!r}")
        if self.count <= 0:
            raise ValueError("count must be > 0")
        if self.end < self.start:
            raise ValueError("deployment window end before start")
        if self.pattern == "step" and (self.end - self.start).days > 6:
            raise ValueError("step deployments must fit within 7 consecutive days")
        if self.capacity <= 0:
            raise ValueError("capacity must be > 0")


def generate_trace(
    specs: Sequence[GeneratorSpec],
    seed: int,
    end_date: datetime.date,
) -> ClusterTrace:
    """Generate a synthetic trace; deterministic for a fixed (specs, seed).

    Deploy dates are spread evenly over each entry's window. Lifetimes are
    piecewise exponential: each disk draws a unit-exponential threshold and
    fails on the first age-day where its cumulative daily hazard reaches it.
    Failures past end_date are censored (the disk simply stays alive).
    """
    if not specs:
        raise TraceError("empty generator spec")
    seen_groups: dict[tuple[str, Optional[str]], None] = {}
    events: list[DiskEvent] = []
    truth: dict[str, SyntheticAfrProfile] = {}

    for index, spec in enumerate(specs):
        key = (spec.dgroup, spec.batch_tag)
        if key in seen_groups:
            raise TraceError(f"duplicate generator entry for {key}")
        seen_groups[key] = None
        if spec.dgroup in truth and truth[spec.dgroup] != spec.profile:
            raise TraceError(f"conflicting profiles for dgroup {spec.dgroup!r}")
        truth[spec.dgroup] = spec.profile

        window_days = (spec.end - spec.start).days + 1
        offsets = (np.arange(spec.count) * window_days) // spec.count
        max_age = (end_date - spec.start).days + 1
        if max_age <= 0:
            raise TraceError(f"entry {index}: deployment starts after end_date")
        cum_hazard = np.cumsum(spec.profile.daily_hazard(max_age))

        rng = np.random.default_rng([seed, index])
        thresholds = rng.exponential(1.0, spec.count)
        fail_ages = np.searchsorted(cum_hazard, thresholds, side="left")

        width = len(str(spec.count - 1))
        for i in range(spec.count):
            disk_id = f"{spec.dgroup}.{index}.{i:0{width}d}"
            deploy = spec.start + datetime.timedelta(days=int(offsets[i]))
            events.append(
                DiskEvent(
                    deploy,
                    EventKind.DEPLOY,
                    disk_id,
                    spec.dgroup,
                    spec.capacity,
                    spec.batch_tag,
                )
            )
            age = int(fail_ages[i])
            if age < len(cum_hazard):
                fail_date = deploy + datetime.timedelta(days=age)
                if fail_date <= end_date:
                    events.append(
                        DiskEvent(fail_date, EventKind.FAIL, disk_id, spec.dgroup)
                    )

    start = min(spec.start for spec in specs)
    return ClusterTrace(events, start_date=start, end_date=end_date, truth=truth)
