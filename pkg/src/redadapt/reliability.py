"""Reliability arithmetic for k-of-n erasure schemes.

MTTDL uses the standard Markov birth-death approximation over a stripe
group of n disks: independent exponential failures at rate 1/MTTF per
disk, sequential repairs of MTTR each, data loss after f+1 = n-k+1
overlapping failures. tolerated_afr back-solves the failure rate at which
a scheme exactly meets the configured MTTDL target.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Optional

DAYS_PER_YEAR = 365.25

_SCHEME_RE = re.compile(r"^(\d+)-of-(\d+)$")


@dataclass(frozen=True, order=True)
class Scheme:
    k: int
    n: int

    def __post_init__(self) -> None:
        if not (1 <= self.k < self.n):
            raise ValueError(f"scheme needs 1 <= k < n, got {self.k}-of-{self.n}")

    @property
    def overhead(self) -> float:
        return self.n / self.k

    @property
    def fault_tolerance(self) -> int:
        return self.n - self.k

    @classmethod
    def parse(cls, text: str) -> "Scheme":
        m = _SCHEME_RE.match(text.strip())
        if not m:
            raise ValueError(f"bad scheme {text!r}, expected '<k>-of-<n>'")
        return cls(int(m.group(1)), int(m.group(2)))

    def __str__(self) -> str:
        return f"{self.k}-of-{self.n}"


def mttdl(scheme: Scheme, afr_pct: float, mttr_days: float) -> float:
    """Mean time to data loss of one stripe group, in years."""
    if afr_pct <= 0:
        raise ValueError("afr_pct must be > 0")
    if mttr_days <= 0:
        raise ValueError("mttr_days must be > 0")
    mttf_years = 1.0 / (afr_pct / 100.0)
    mttr_years = mttr_days / DAYS_PER_YEAR
    f = scheme.fault_tolerance
    # n * (n-1) * ... * k: one factor per Markov state on the path to loss.
    path = math.prod(range(scheme.k, scheme.n + 1))
    return mttf_years ** (f + 1) / (path * mttr_years**f)


@dataclass(frozen=True)
class ReliabilityConfig:
    """Anchors the MTTDL target to scheme0 at afr0 and bounds the search.

    max_repair_days limits criterion (4) of viable_schemes (repair time
    grows linearly in k, normalized so scheme0 repairs in exactly
    mttr_days). None means the bound tracks max_k, leaving stripe width
    as the only practical width limit; operators can tighten it.
    """

    mttr_days: float = 0.2
    afr0_pct: float = 16.0
    scheme0: Scheme = Scheme(6, 9)
    max_k: int = 50
    min_f: int = 2
    max_repair_days: Optional[float] = None

    def __post_init__(self) -> None:
        if self.mttr_days <= 0 or self.afr0_pct <= 0:
            raise ValueError("mttr_days and afr0_pct must be > 0")
        if self.max_k < self.scheme0.k or self.min_f < 1:
            raise ValueError("max_k must cover scheme0 and min_f >= 1")

    @property
    def target_mttdl_years(self) -> float:
        return mttdl(self.scheme0, self.afr0_pct, self.mttr_days)

    @property
    def effective_max_repair_days(self) -> float:
        if self.max_repair_days is not None:
            return self.max_repair_days
        return self.mttr_days * self.max_k / self.scheme0.k


def estimated_repair_days(scheme: Scheme, rc: ReliabilityConfig) -> float:
    return rc.mttr_days * scheme.k / rc.scheme0.k


@lru_cache(maxsize=None)
def tolerated_afr(scheme: Scheme, rc: ReliabilityConfig) -> float:
    """Largest AFR (%/yr) at which the scheme still meets the MTTDL target.

    Bisection on the strictly decreasing mttdl(afr), bracket [1e-4, 1e4],
    to 1e-9 relative tolerance so boundary viability checks (the anchor
    scheme at exactly afr0) cannot flip on numerical error.
    """
    target = rc.target_mttdl_years
    lo, hi = 1e-4, 1e4
    if mttdl(scheme, lo, rc.mttr_days) < target:
        raise ValueError(f"{scheme} cannot reach the MTTDL target at any AFR >= {lo}")
    if mttdl(scheme, hi, rc.mttr_days) > target:
        raise ValueError(f"{scheme} tolerated AFR exceeds the {hi} bracket")
    while hi / lo > 1.0 + 1e-9:
        mid = math.sqrt(lo * hi)
        if mttdl(scheme, mid, rc.mttr_days) >= target:
            lo = mid
        else:
            hi = mid
    return math.sqrt(lo * hi)


def viable_schemes(
    afr_pct: float,
    rc: ReliabilityConfig,
    candidates: Iterable[Scheme],
) -> set[Scheme]:
    """Filter candidates by fault-tolerance floor, stripe-width cap,
    reconstruction-read load, repair time, and the MTTDL constraint."""
    cands = set(candidates)
    if not cands:
        raise ValueError("empty candidate set")
    if afr_pct <= 0:
        raise ValueError("afr_pct must be > 0")
    # Reconstruction load scales with afr * k * capacity; capacity cancels
    # against the anchor, leaving afr * k <= afr0 * k0.
    read_budget = rc.afr0_pct * rc.scheme0.k
    out = set()
    for s in cands:
        if s.fault_tolerance < rc.min_f:
            continue
        if s.k > rc.max_k:
            continue
        if afr_pct * s.k > read_budget:
            continue
        if estimated_repair_days(s, rc) > rc.effective_max_repair_days:
            continue
        # Hair of slack so exact-boundary cases (anchor scheme at afr0)
        # survive bisection rounding.
        if tolerated_afr(s, rc) < afr_pct * (1.0 - 1e-7):
            continue
        out.add(s)
    return out


def scheme_grid(
    k_min: int = 3, k_max: int = 50, f_min: int = 2, f_max: int = 4
) -> tuple[Scheme, ...]:
    return tuple(
        Scheme(k, k + f)
        for k in range(k_min, k_max + 1)
        for f in range(f_min, f_max + 1)
    )
