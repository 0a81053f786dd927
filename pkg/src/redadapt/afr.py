"""Failure-rate estimation from event traces.

Pipeline: group events by disk make/model, tabulate per-age-day exposure
(at-risk and failure counts), take Nelson-Aalen cumulative-hazard
increments, smooth them with an Epanechnikov kernel into a daily hazard,
and annualize. On top of the curve sit a forward projection, a useful-life
phase decomposition, and an end-of-infancy detector.
"""

from __future__ import annotations

import csv
import datetime
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from redadapt.trace import ClusterTrace, EventKind, DAYS_PER_YEAR

AFR_SCALE = 100.0 * DAYS_PER_YEAR  # daily hazard -> %/yr


def afr_point(failures: float, exposure_disk_years: float) -> float:
    """Annualized failure rate in %/yr from a failure count and exposure."""
    if exposure_disk_years <= 0:
        raise ValueError("exposure must be > 0 disk-years")
    if failures < 0:
        raise ValueError("failure count must be >= 0")
    return failures / exposure_disk_years * 100.0


@dataclass(frozen=True)
class ExposureTable:
    """Per age-day counts: at_risk[i] disks began their i-th day in
    operation, failures[i] of them failed during it."""

    at_risk: np.ndarray
    failures: np.ndarray

    def __post_init__(self) -> None:
        a = np.asarray(self.at_risk, dtype=np.int64)
        d = np.asarray(self.failures, dtype=np.int64)
        if a.shape != d.shape or a.ndim != 1:
            raise ValueError("at_risk and failures must be 1-d arrays of equal length")
        if (d < 0).any() or (d > a).any():
            raise ValueError("need 0 <= failures[i] <= at_risk[i]")
        object.__setattr__(self, "at_risk", a)
        object.__setattr__(self, "failures", d)

    def __len__(self) -> int:
        return len(self.at_risk)

    def increments(self) -> np.ndarray:
        """Raw hazard increments d_i/a_i, zero where nothing was at risk."""
        out = np.zeros(len(self), dtype=float)
        np.divide(self.failures, self.at_risk, out=out, where=self.at_risk > 0)
        return out


def exposure_spans(
    deploy: np.ndarray,
    fail: np.ndarray,
    decommission: np.ndarray,
    boundary: int,
) -> ExposureTable:
    """Build an ExposureTable from per-disk day ordinals.

    `boundary` is exclusive: only days completed strictly before it count.
    fail/decommission use -1 for "never". A disk deployed on day p
    contributes ages 0..boundary-p-2 while alive; a failure on day f < boundary
    truncates that to 0..f-p and adds one failure at age f-p; a
    decommission on day dd <= boundary truncates to 0..dd-p-2.
    """
    deploy = np.asarray(deploy, dtype=np.int64)
    fail = np.asarray(fail, dtype=np.int64)
    decommission = np.asarray(decommission, dtype=np.int64)

    span = np.full(deploy.shape, boundary - 1, dtype=np.int64) - deploy
    failed = (fail >= 0) & (fail < boundary)
    span[failed] = fail[failed] - deploy[failed]
    gone = (decommission >= 0) & (decommission <= boundary) & ~failed
    span[gone] = decommission[gone] - deploy[gone] - 1

    keep = span >= 0
    if not keep.any():
        return ExposureTable(np.zeros(0, np.int64), np.zeros(0, np.int64))
    length = int(span[keep].max()) + 1
    counts = np.bincount(span[keep], minlength=length)
    at_risk = counts[::-1].cumsum()[::-1]
    fail_ages = (fail - deploy)[failed & keep]
    failures = np.bincount(fail_ages, minlength=length)
    return ExposureTable(at_risk, failures)


def exposure_table(
    trace: ClusterTrace, dgroup: str, as_of: datetime.date
) -> ExposureTable:
    """Tabulate one dgroup's exposure for all complete days before as_of."""
    deploy: dict[str, int] = {}
    fail: dict[str, int] = {}
    decommission: dict[str, int] = {}
    for ev in trace.events:
        if ev.dgroup != dgroup:
            continue
        if ev.kind is EventKind.DEPLOY:
            deploy[ev.disk_id] = ev.date.toordinal()
        elif ev.kind is EventKind.FAIL:
            fail[ev.disk_id] = ev.date.toordinal()
        else:
            decommission[ev.disk_id] = ev.date.toordinal()
    if not deploy:
        raise ValueError(f"unknown dgroup {dgroup!r}")
    disks = list(deploy)
    return exposure_spans(
        np.array([deploy[d] for d in disks]),
        np.array([fail.get(d, -1) for d in disks]),
        np.array([decommission.get(d, -1) for d in disks]),
        as_of.toordinal(),
    )


def nelson_aalen(table: ExposureTable) -> np.ndarray:
    """Cumulative hazard: running sum of d_i/a_i."""
    return np.cumsum(table.increments())


@dataclass(frozen=True)
class KernelConfig:
    bandwidth: int = 30

    def __post_init__(self) -> None:
        if self.bandwidth < 1:
            raise ValueError("bandwidth must be >= 1 day")


def epanechnikov_weights(bandwidth: int) -> np.ndarray:
    """Unit-integral Epanechnikov kernel sampled at integer offsets."""
    u = np.arange(-bandwidth, bandwidth + 1, dtype=float) / bandwidth
    return 0.75 * (1.0 - u * u) / bandwidth


@dataclass(frozen=True)
class HazardCurve:
    """Smoothed per-age-day hazard for one dgroup.

    afr (%/yr) is meaningful on ages [0, support_end): the prefix where
    at least min_at_risk disks were observed. Arrays cover the whole
    table so exports and diagnostics can see the gated tail.
    """

    at_risk: np.ndarray
    failures: np.ndarray
    hazard: np.ndarray
    cum_hazard: np.ndarray
    afr: np.ndarray
    support_end: int
    bandwidth: int
    min_at_risk: int

    def __len__(self) -> int:
        return len(self.hazard)

    def afr_at(self, age: int) -> float:
        if not 0 <= age < self.support_end:
            raise ValueError(f"age {age} outside curve support")
        return float(self.afr[age])

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["age_day", "at_risk", "failures", "cum_hazard", "afr_pct"])
            for i in range(len(self)):
                writer.writerow(
                    [
                        i,
                        int(self.at_risk[i]),
                        int(self.failures[i]),
                        f"{self.cum_hazard[i]:.9g}",
                        f"{self.afr[i]:.6g}" if i < self.support_end else "",
                    ]
                )


def smoothed_hazard(
    table: ExposureTable,
    kernel: KernelConfig = KernelConfig(),
    min_at_risk: int = 1000,
) -> HazardCurve:
    """Kernel-smooth Nelson-Aalen increments into a daily hazard curve.

    The kernel is truncated at the table edges, so raw estimates there
    carry only part of the kernel mass; each age is rescaled by the mass
    actually covered. Without that, ages within one bandwidth of zero
    read at roughly half the true burn-in hazard, which is exactly where
    infancy decisions look.
    """
    b = kernel.bandwidth
    increments = table.increments()
    m = len(increments)
    weights = epanechnikov_weights(b)
    full = np.convolve(increments, weights)
    hazard = full[b : b + m] if m else np.zeros(0)
    if m:
        covered = np.convolve(np.ones(m), weights)[b : b + m]
        hazard = hazard / covered
    below = np.nonzero(table.at_risk < min_at_risk)[0]
    support_end = int(below[0]) if below.size else m
    return HazardCurve(
        at_risk=table.at_risk,
        failures=table.failures,
        hazard=hazard,
        cum_hazard=nelson_aalen(table),
        afr=hazard * AFR_SCALE,
        support_end=support_end,
        bandwidth=b,
        min_at_risk=min_at_risk,
    )


def curve_from_afr(
    afr_series: np.ndarray,
    bandwidth: int = 0,
    at_risk: int = 10**6,
) -> HazardCurve:
    """Wrap a known AFR series (truth or fixture) as a fully-supported curve.

    bandwidth 0: every age is interior, so readers apply no edge correction.
    """
    afr_arr = np.asarray(afr_series, dtype=float)
    hazard = afr_arr / AFR_SCALE
    m = len(afr_arr)
    return HazardCurve(
        at_risk=np.full(m, at_risk, dtype=np.int64),
        failures=np.zeros(m, dtype=np.int64),
        hazard=hazard,
        cum_hazard=np.cumsum(hazard),
        afr=afr_arr,
        support_end=m,
        bandwidth=bandwidth,
        min_at_risk=0,
    )


def local_afr(curve: HazardCurve, age: int) -> float:
    """Renormalized kernel estimate of the AFR at one age.

    The stored curve truncates the kernel at the table edges without
    renormalizing, so values within one bandwidth of the live edge are
    biased low. This read rescales by the kernel mass actually covered
    (restricted to supported ages), which keeps near-edge estimates
    unbiased on a flat hazard. Dense interior ages match the stored
    curve exactly.
    """
    s = curve.support_end
    if s <= 0:
        raise ValueError("empty curve support")
    a = min(max(age, 0), s - 1)
    b = curve.bandwidth
    if b == 0:
        return float(curve.afr[a])
    inc = ExposureTable(curve.at_risk, curve.failures).increments()
    weights = epanechnikov_weights(b)
    lo = max(a - b, 0)
    hi = min(a + b, s - 1)
    covered = weights[(lo - a + b) : (hi - a + b) + 1]
    return float(inc[lo : hi + 1] @ covered / covered.sum()) * AFR_SCALE


def trend_slope(curve: HazardCurve, window: int, min_t: float = 2.0) -> float:
    """AFR trend (%/yr per day) over the trailing window of the support,
    zeroed when statistically indistinguishable from flat.

    Smoothed values are serially correlated, so the fit and its t-test
    run on the raw Nelson-Aalen increments, which are independent across
    ages. Synthetic curves (bandwidth 0) carry no failure record and are
    fitted on the AFR series itself; they are noise-free, so the gate
    passes whenever a real trend exists.
    """
    s = curve.support_end
    n = min(window, s)
    if n < 8:
        return 0.0
    if curve.bandwidth == 0:
        y = np.asarray(curve.afr[s - n : s], dtype=float)
    else:
        inc = ExposureTable(curve.at_risk, curve.failures).increments()
        y = inc[s - n : s] * AFR_SCALE
    x = np.arange(n, dtype=float)
    dx = x - x.mean()
    denom = float(dx @ dx)
    slope = float(dx @ (y - y.mean()) / denom)
    resid = y - y.mean() - slope * dx
    s2 = float(resid @ resid) / (n - 2)
    if s2 <= 0.0:
        return slope
    t = slope / math.sqrt(s2 / denom)
    return slope if abs(t) >= min_t else 0.0


def trend_fit(
    curve: HazardCurve, window: int, min_t: float = 2.0
) -> Optional[tuple[float, float]]:
    """Least-squares AFR line over the trailing window: (value at the
    newest supported age, slope in %/yr per day).

    Same raw-increment fit and flatness gate as trend_slope, but the
    line's endpoint comes back too. That endpoint is the right anchor
    for projections: it carries no kernel lag, and a failure cluster
    that would swing a local read by half its size moves a fitted line
    over hundreds of ages only marginally. None when the support is too
    short for a stable fit.
    """
    s = curve.support_end
    n = min(window, s)
    if n < 45:
        return None
    if curve.bandwidth == 0:
        y = np.asarray(curve.afr[s - n : s], dtype=float)
    else:
        inc = ExposureTable(curve.at_risk, curve.failures).increments()
        y = inc[s - n : s] * AFR_SCALE
    x = np.arange(n, dtype=float)
    dx = x - x.mean()
    denom = float(dx @ dx)
    slope = float(dx @ (y - y.mean()) / denom)
    resid = y - y.mean() - slope * dx
    s2 = float(resid @ resid) / (n - 2)
    if s2 > 0.0 and abs(slope / math.sqrt(s2 / denom)) < min_t:
        slope = 0.0
    value = float(y.mean()) + slope * (n - 1 - float(x.mean()))
    return max(value, 0.0), slope


@dataclass(frozen=True)
class UsefulLifePhases:
    """Contiguous post-infancy phases, each flat to within the tolerance."""

    phases: tuple[tuple[int, int, float], ...]  # (start_age, end_age, rep afr)
    tolerance: float

    @property
    def start_age(self) -> int:
        return self.phases[0][0]

    @property
    def end_age(self) -> int:
        return self.phases[-1][1]


def infancy_end(curve: HazardCurve, stability_days: int = 30) -> int:
    """First age where the AFR stays within 10% of the running window
    minimum for stability_days; support_end when never stable."""
    s = curve.support_end
    if s < stability_days:
        return s
    afr = curve.afr[:s]
    windows = np.lib.stride_tricks.sliding_window_view(afr, stability_days)
    stable = windows.max(axis=1) <= 1.1 * windows.min(axis=1)
    idx = np.nonzero(stable)[0]
    return int(idx[0]) if idx.size else s


def decompose_useful_life(
    curve: HazardCurve,
    tolerance: float,
    max_phases: int,
    stability_days: int = 30,
    start_age: Optional[int] = None,
) -> UsefulLifePhases:
    """Greedy longest-prefix split of post-infancy support into at most
    max_phases contiguous blocks with max/min AFR <= tolerance each.

    Greedily extending each phase as far as the tolerance allows is
    optimal here: any feasible decomposition's phase ends can only move
    left of the greedy ones, never past them.
    """
    if tolerance <= 1.0:
        raise ValueError("tolerance must be > 1")
    if max_phases < 1:
        raise ValueError("max_phases must be >= 1")
    start = infancy_end(curve, stability_days) if start_age is None else start_age
    s = curve.support_end
    if start >= s:
        raise ValueError("no post-infancy support to decompose")
    afr = curve.afr
    phases: list[tuple[int, int, float]] = []
    i = start
    while i < s and len(phases) < max_phases:
        lo = float("inf")
        hi = 0.0
        j = i
        while j < s:
            v = float(afr[j])
            cand_lo, cand_hi = min(lo, v), max(hi, v)
            if cand_hi > tolerance * cand_lo:
                break
            lo, hi = cand_lo, cand_hi
            j += 1
        phases.append((i, j, hi))
        i = j
    return UsefulLifePhases(tuple(phases), tolerance)
