"""Redundancy transition machinery.

Decides when a group of disks changes its erasure scheme (proactive
triggers), where the disks go (viability + worth + savings planner), how
the move is executed (three mechanisms with exact byte costs), and how
fast it may run (per-group IO pacing with an emergency valve).
"""

from __future__ import annotations

import datetime
import enum
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from redadapt.afr import AFR_SCALE, HazardCurve, local_afr, trend_fit, trend_slope
from redadapt.reliability import ReliabilityConfig, Scheme, tolerated_afr, viable_schemes

BYTE_EPS = 1.0  # plans are complete when less than one byte remains


class RgroupKind(enum.Enum):
    DEFAULT = "default"
    TRICKLE_SHARED = "trickle_shared"
    STEP_DEDICATED = "step_dedicated"


class Mechanism(enum.Enum):
    EMPTY = "empty"
    BULK_PARITY = "bulk_parity"
    REENCODE = "reencode"


class Urgency(enum.Enum):
    PROACTIVE = "proactive"
    PURGE = "purge"
    EMERGENCY = "emergency"


@dataclass(frozen=True)
class IoPolicy:
    peak_io_cap: float = 0.05
    avg_io: float = 0.01
    per_disk_bandwidth: float = 100e6  # bytes/sec

    def __post_init__(self) -> None:
        if not (0.0 < self.avg_io <= self.peak_io_cap <= 1.0):
            raise ValueError("need 0 < avg_io <= peak_io_cap <= 1")
        if self.per_disk_bandwidth <= 0:
            raise ValueError("per_disk_bandwidth must be > 0")

    @property
    def daily_disk_bytes(self) -> float:
        return self.per_disk_bandwidth * 86400.0


@dataclass(frozen=True)
class TransitionPolicy:
    canary_count: int = 3000
    threshold_fraction: float = 0.75
    phase_tolerance: float = 2.0
    min_rgroup_size: int = 1000
    min_new_rgroup_savings: float = 0.02
    infancy_stability_days: int = 30
    projection_window_days: int = 60
    headroom_factor: float = 1.05

    def __post_init__(self) -> None:
        if not 0.0 < self.threshold_fraction <= 1.0:
            raise ValueError("threshold_fraction must be in (0, 1]")
        if self.canary_count <= 0 or self.min_rgroup_size < 0:
            raise ValueError("canary_count must be > 0, min_rgroup_size >= 0")
        if self.phase_tolerance <= 1.0:
            raise ValueError("phase_tolerance must be > 1")
        if self.headroom_factor < 1.0:
            raise ValueError("headroom_factor must be >= 1")


CohortKey = tuple[str, int, bool]  # (unit_id, deploy ordinal, canary)


@dataclass
class Cohort:
    """Disks of one unit deployed the same day with the same canary status.

    Cohorts move between Rgroups atomically, so per-disk lifecycle audits
    (single RDn, canary pinning, lifetime transition bytes) reduce to
    per-cohort counters. Failures decrement count in place.
    """

    unit_id: str
    dgroup: str
    deploy_ord: int
    canary: bool
    capacity: int
    count: int
    rdn_moves: int = 0
    transition_bytes_per_disk: float = 0.0
    in_flight: bool = False

    @property
    def key(self) -> CohortKey:
        return (self.unit_id, self.deploy_ord, self.canary)


class Rgroup:
    """A set of disks sharing one erasure scheme and one IO budget."""

    def __init__(
        self,
        rid: str,
        scheme: Scheme,
        kind: RgroupKind,
        origin_batch: Optional[str] = None,
    ) -> None:
        self.id = rid
        self.scheme = scheme
        self.kind = kind
        self.origin_batch = origin_batch
        self.cohorts: dict[CohortKey, Cohort] = {}
        self.io_ledger: dict[int, float] = {}
        self.emergency_ledger: dict[int, float] = {}
        self.retired = False

    def member_count(self) -> int:
        return sum(c.count for c in self.cohorts.values())

    def raw_bytes(self) -> int:
        return sum(c.count * c.capacity for c in self.cohorts.values())

    def add_cohort(self, cohort: Cohort) -> None:
        if cohort.key in self.cohorts:
            raise ValueError(f"cohort {cohort.key} already in rgroup {self.id}")
        self.cohorts[cohort.key] = cohort

    def pop_cohort(self, key: CohortKey) -> Cohort:
        return self.cohorts.pop(key)

    def __repr__(self) -> str:
        return (
            f"Rgroup({self.id!r}, {self.scheme}, {self.kind.value},"
            f" disks={self.member_count()})"
        )


@dataclass(frozen=True)
class PlanPart:
    key: CohortKey
    count: int
    capacity: int


@dataclass
class TransitionPlan:
    plan_id: int
    parts: tuple[PlanPart, ...]
    from_rgroup: str
    to_rgroup: str
    from_scheme: Scheme
    to_scheme: Scheme
    mechanism: Mechanism
    total_read_bytes: float
    total_write_bytes: float
    urgency: Urgency
    created: int  # day ordinal
    earliest_start: int
    deadline: Optional[int]
    remaining_bytes: float = field(init=False)
    completed_on: Optional[int] = None
    escalated: bool = False

    def __post_init__(self) -> None:
        if self.deadline is not None and self.deadline < self.earliest_start:
            raise ValueError("deadline before earliest_start")
        self.remaining_bytes = self.total_bytes

    @property
    def total_bytes(self) -> float:
        return self.total_read_bytes + self.total_write_bytes

    @property
    def disk_count(self) -> int:
        return sum(p.count for p in self.parts)

    @property
    def in_place(self) -> bool:
        return self.from_rgroup == self.to_rgroup

    @property
    def active(self) -> bool:
        return self.completed_on is None


def empty_move_fits(
    disk_count: int,
    rgroup_size: int,
    fill_fraction: float = 0.60,
    max_fill: float = 0.95,
) -> bool:
    """Whether the group's remaining disks can absorb the movers' bytes.

    Conservatively budgets the movers' whole capacity against the free
    space (max_fill - fill) on the disks staying behind.
    """
    remaining = rgroup_size - disk_count
    if remaining <= 0:
        return False
    return disk_count <= (max_fill - fill_fraction) * remaining


def transition_cost(
    mechanism: Mechanism,
    s_cur: Scheme,
    s_new: Scheme,
    disk_count: int,
    capacity: int,
    rgroup_size: Optional[int] = None,
    *,
    fill_fraction: float = 0.60,
    max_fill: float = 0.95,
) -> tuple[float, float]:
    """Exact (read_bytes, write_bytes) for moving disk_count disks.

    EMPTY drains each disk onto its old group's peers: read + write one
    capacity each. BULK_PARITY changes a whole group's scheme in place,
    reading only the data fraction and writing the new parities. REENCODE
    reads every data byte through the old code and writes it through the
    new one.
    """
    if disk_count <= 0 or capacity <= 0:
        raise ValueError("disk_count and capacity must be > 0")
    if mechanism is Mechanism.EMPTY:
        if rgroup_size is not None and not empty_move_fits(
            disk_count, rgroup_size, fill_fraction, max_fill
        ):
            raise ValueError("EMPTY: not enough free space in the source group")
        per = float(capacity)
        return per * disk_count, per * disk_count
    if mechanism is Mechanism.BULK_PARITY:
        if rgroup_size is not None and disk_count != rgroup_size:
            raise ValueError("BULK_PARITY requires the entire group to move")
        data = s_cur.k / s_cur.n * capacity
        read = data * disk_count
        write = (s_new.n - s_new.k) / s_new.k * data * disk_count
        return read, write
    # REENCODE
    read = float(s_cur.k) * capacity * disk_count
    write = float(s_cur.k) * capacity * s_new.n / s_new.k * disk_count
    return read, write


_MECHANISM_PREFERENCE = {Mechanism.EMPTY: 0, Mechanism.BULK_PARITY: 1, Mechanism.REENCODE: 2}


def pick_mechanism(
    s_cur: Scheme,
    s_new: Scheme,
    disk_count: int,
    capacity: int,
    rgroup_size: int,
    *,
    whole_group: bool,
    fill_fraction: float = 0.60,
    max_fill: float = 0.95,
) -> tuple[Mechanism, float, float]:
    """Cheapest viable mechanism by total bytes; ties prefer EMPTY, then
    BULK_PARITY (fewer moving parts)."""
    options: list[tuple[float, int, Mechanism, float, float]] = []
    if not whole_group and empty_move_fits(disk_count, rgroup_size, fill_fraction, max_fill):
        r, w = transition_cost(Mechanism.EMPTY, s_cur, s_new, disk_count, capacity)
        options.append((r + w, _MECHANISM_PREFERENCE[Mechanism.EMPTY], Mechanism.EMPTY, r, w))
    if whole_group:
        r, w = transition_cost(Mechanism.BULK_PARITY, s_cur, s_new, disk_count, capacity)
        options.append(
            (r + w, _MECHANISM_PREFERENCE[Mechanism.BULK_PARITY], Mechanism.BULK_PARITY, r, w)
        )
    r, w = transition_cost(Mechanism.REENCODE, s_cur, s_new, disk_count, capacity)
    options.append((r + w, _MECHANISM_PREFERENCE[Mechanism.REENCODE], Mechanism.REENCODE, r, w))
    total, _, mech, read, write = min(options)
    return mech, read, write


def transition_duration_days(
    total_bytes: float,
    member_count: int,
    io: IoPolicy,
    *,
    emergency: bool = False,
) -> int:
    """Days the plan takes when paced alone in its group's lane."""
    if total_bytes <= 0:
        return 0
    daily = member_count * io.daily_disk_bytes
    if not emergency:
        daily *= io.peak_io_cap
    return max(1, math.ceil(total_bytes / daily))


TREND_WINDOW_DAYS = 150  # raw increments are thin; slope tests need months


CROSSING_CONFIRM_DAYS = 30  # dense-end window that ratifies a crossing


def sustained_crossing_age(
    curve: HazardCurve,
    level: float,
    start_age: int = 0,
) -> Optional[int]:
    """First observed age >= start_age where the AFR exceeds the level,
    ratified by the median of the trailing dense window sitting above
    the level too.

    The ratification rejects isolated noise bumps without demanding
    every later age stay above the level, which on a noisy curve would
    postpone detection until the dips age out. A median over four kernel
    widths is what that takes: a single failure cluster smears across
    two kernel widths of the curve, so it can never make up half of the
    window, while a real ramp eventually does. Only ages clear of the
    truncated edge are read. None: not observed (yet)."""
    interior = curve.support_end - curve.bandwidth
    if interior <= 0:
        return None
    scan_from = max(start_age, 0)
    if scan_from >= interior:
        return None
    window = max(4 * curve.bandwidth, CROSSING_CONFIRM_DAYS)
    tail_from = max(interior - window, scan_from)
    if float(np.median(curve.afr[tail_from:interior])) <= level:
        return None
    above = (curve.afr[scan_from:interior] > level).nonzero()[0]
    return scan_from + int(above[0]) if above.size else None


CROSSING_MIN_EVIDENCE = 12.0  # expected failures a readable window must hold


def confirmed_crossing_age(
    curve: HazardCurve,
    level: float,
    start_age: int = 0,
) -> Optional[int]:
    """Like sustained_crossing_age, but counting only ages whose kernel
    window holds enough expected failures at the level to rule out a
    single-cluster artifact.

    A smoothed point backed by three or four expected failures doubles on
    one unlucky batch, and on a staggered fleet such bumps persist for
    months. Protection triggers still use the permissive reader, where a
    false positive merely buys protection early; this reader backs the
    savings side, where a fabricated exit would veto the thin scheme the
    fleet has earned."""
    interior = curve.support_end - curve.bandwidth
    if interior <= 0:
        return None
    scan_from = max(start_age, 0)
    if scan_from >= interior:
        return None
    if curve.bandwidth == 0:
        return sustained_crossing_age(curve, level, start_age)
    bw = curve.bandwidth
    at_risk = np.asarray(curve.at_risk[:interior + bw], dtype=float)
    csum = np.concatenate(([0.0], np.cumsum(at_risk)))
    ages = np.arange(interior)
    lo = np.clip(ages - bw, 0, len(at_risk))
    hi = np.clip(ages + bw + 1, 0, len(at_risk))
    expected = (level / AFR_SCALE) * (csum[hi] - csum[lo])
    readable = expected >= CROSSING_MIN_EVIDENCE
    readable[:scan_from] = False
    idx = readable.nonzero()[0]
    if idx.size == 0:
        return None
    tail = idx[-CROSSING_CONFIRM_DAYS:]
    if float(curve.afr[tail].mean()) <= level:
        return None
    above = idx[curve.afr[idx] > level]
    return int(above[0]) if above.size else None


EDGE_MIN_EVIDENCE = 25.0  # expected failures a trigger read must rest on

PROJECTION_FIT_DAYS = 300  # deadline projections fit over this much history


def robust_edge_estimate(
    curve: HazardCurve,
    level: float,
    start_age: int = 0,
) -> Optional[tuple[float, int]]:
    """Median AFR over a trailing dense window, sized so the window holds
    at least EDGE_MIN_EVIDENCE expected failures at the level and spans
    at least two kernel widths: (estimate, window days).

    Protection triggers compare this read against the level. The median
    shrugs off a single failure cluster, which smears across two kernel
    widths and so never owns half of the window, while a fleet that has
    genuinely reached the level lifts the whole window with it. None
    when the dense span past start_age cannot supply the evidence; a
    read that cannot tell a cluster from a level shift is not acted on.
    Callers hand in learned curves; on a synthetic curve the notion of a
    live edge has no meaning.
    """
    interior = curve.support_end - curve.bandwidth
    if interior <= 0 or level <= 0.0:
        return None
    scan_from = max(start_age, 0)
    if scan_from >= interior:
        return None
    exposure_needed = EDGE_MIN_EVIDENCE * AFR_SCALE / level
    trailing = np.cumsum(np.asarray(curve.at_risk[:interior], dtype=float)[::-1])
    if trailing[-1] < exposure_needed:
        return None
    need = int(np.searchsorted(trailing, exposure_needed)) + 1
    window = max(need, 2 * curve.bandwidth)
    if window > interior - scan_from:
        return None
    return float(np.median(curve.afr[interior - window : interior])), window


def level_crossing_age(
    curve: HazardCurve,
    level: float,
    start_age: int = 0,
    window: int = 60,
) -> Optional[int]:
    """Age where the AFR reaches the level: the observed sustained
    crossing when there is one, else the fitted trend line extended
    from the newest supported age, but only if the trend is
    statistically real. None means no crossing in sight, which callers
    treat as "never". `window` is the observation floor for the fit.
    """
    observed = sustained_crossing_age(curve, level, start_age)
    if observed is not None:
        return observed
    fit = trend_fit(curve, max(window, PROJECTION_FIT_DAYS))
    if fit is None:
        return None
    value, slope = fit
    scan_from = max(start_age, 0)
    anchor = curve.support_end - 1
    if value > level:
        return max(anchor, scan_from)
    if slope <= 0.0:
        return None
    crossing = anchor + math.floor((level - value) / slope) + 1
    return max(crossing, scan_from)


def fire_level(scheme: Scheme, rc: ReliabilityConfig, policy: TransitionPolicy) -> float:
    return policy.threshold_fraction * tolerated_afr(scheme, rc)


def rup_check_step(
    curve: HazardCurve,
    scheme: Scheme,
    rc: ReliabilityConfig,
    policy: TransitionPolicy,
) -> Optional[tuple[float, float]]:
    """Live threshold check for a step group: (estimate, slope) when the
    current AFR estimate reaches the scheme's firing level, else None."""
    est = local_afr(curve, curve.support_end - 1)
    if est >= fire_level(scheme, rc, policy):
        return est, max(trend_slope(curve, TREND_WINDOW_DAYS), 0.0)
    return None


def empty_duration_days(capacity: int, io: IoPolicy) -> int:
    """Paced duration of a Type-1 move, per disk at its own peak share."""
    return max(1, math.ceil(2.0 * capacity / (io.peak_io_cap * io.daily_disk_bytes)))


def rup_date_trickle(
    deploy_date: datetime.date,
    curve: HazardCurve,
    scheme: Scheme,
    rc: ReliabilityConfig,
    policy: TransitionPolicy,
    io: IoPolicy,
    *,
    capacity: int,
    level: Optional[float] = None,
    start_age: int = 0,
) -> Optional[datetime.date]:
    """Advance-known RUp start date for one trickle disk: the age where
    the learned curve crosses the scheme's firing level, minus the paced
    transition duration so the move completes in time. None = no RUp
    in sight."""
    lvl = level if level is not None else fire_level(scheme, rc, policy)
    crossing = level_crossing_age(curve, lvl, start_age, policy.projection_window_days)
    if crossing is None:
        return None
    lead = empty_duration_days(capacity, io)
    return deploy_date + datetime.timedelta(days=max(crossing - lead, 0))


@dataclass(frozen=True)
class PlannerEnv:
    rc: ReliabilityConfig
    policy: TransitionPolicy
    io: IoPolicy
    candidates: tuple[Scheme, ...]
    fill_fraction: float = 0.60
    max_fill: float = 0.95


@dataclass(frozen=True)
class TargetChoice:
    scheme: Scheme
    rgroup_id: Optional[str]  # None: create a new group
    mechanism: Mechanism
    read_bytes: float
    write_bytes: float


def _overhead_key(s: Scheme) -> tuple[float, int, int]:
    return (s.overhead, s.k, s.n)


def plan_target(
    *,
    direction: str,
    current_scheme: Scheme,
    est_afr: float,
    slope: float,
    env: PlannerEnv,
    capacity: int,
    disk_count: int,
    source_size: int,
    whole_group: bool,
    curve: Optional[HazardCurve] = None,
    age_now: int = 0,
    existing: Optional[Mapping[Scheme, str]] = None,
    allow_new_group: bool = True,
    headroom: bool = True,
    require_worth: bool = True,
    enforce_group_floor: bool = True,
) -> Optional[TargetChoice]:
    """Choose the destination scheme (and group) for a transition.

    Keeps schemes that are viable at the current AFR estimate, move in
    the requested direction, won't re-fire immediately (headroom), stay
    within the repair read budget through their own residence (the AFR
    can reach the scheme's firing level before the next move, so
    level * k must fit the budget too, not just estimate * k), and pass
    the worth test: projected days until the group leaves the new scheme
    must cover the transition's IO spend at the lifetime-average budget.
    Of those it picks the highest space savings. `existing` maps joinable
    groups by scheme; a new group is only created when no existing
    scheme comes within min_new_rgroup_savings of the winner's overhead
    and the batch meets the placement floor. Whole-group parity rewrites
    are exempt from the floor: they change the scheme in place without
    creating a group. Urgent callers drop the floor entirely rather than
    leave data at risk over placement."""
    if direction not in ("rup", "rdn"):
        raise ValueError(f"bad direction {direction!r}")
    if est_afr <= 0.0:
        est_afr = 1e-6
    rc, policy, io = env.rc, env.policy, env.io
    tol_cur = tolerated_afr(current_scheme, rc)
    viable = viable_schemes(est_afr, rc, set(env.candidates))

    passing: dict[Scheme, tuple[Mechanism, float, float]] = {}
    for s in viable:
        tol_s = tolerated_afr(s, rc)
        if direction == "rup" and tol_s <= tol_cur:
            continue
        if direction == "rdn" and tol_s >= tol_cur:
            continue
        level = policy.threshold_fraction * tol_s
        if headroom:
            if level < est_afr * policy.headroom_factor:
                continue
            if level * s.k > rc.afr0_pct * rc.scheme0.k + 1e-9:
                continue
        mech, read, write = pick_mechanism(
            current_scheme,
            s,
            disk_count,
            capacity,
            source_size,
            whole_group=whole_group,
            fill_fraction=env.fill_fraction,
            max_fill=env.max_fill,
        )
        if require_worth:
            v_bwd = (read + write) / disk_count / io.daily_disk_bytes
            if curve is not None:
                # veto only on a well-evidenced observed exit; projected
                # trends and thinly backed bumps are too noisy to forfeit
                # savings over
                crossing = confirmed_crossing_age(curve, level, age_now)
                exit_days = None if crossing is None else crossing - age_now
            elif slope > 0.0:
                exit_days = max((level - est_afr) / slope, 0.0)
            else:
                exit_days = None
            if exit_days is not None and exit_days < v_bwd / io.avg_io:
                continue
        passing[s] = (mech, read, write)

    if not passing:
        return None
    best = min(passing, key=_overhead_key)
    existing = existing or {}
    if best in existing:
        mech, read, write = passing[best]
        return TargetChoice(best, existing[best], mech, read, write)
    creatable = not enforce_group_floor or disk_count >= policy.min_rgroup_size or (
        whole_group and passing[best][0] is Mechanism.BULK_PARITY
    )
    joinable = [s for s in passing if s in existing]
    if joinable:
        alt = min(joinable, key=_overhead_key)
        if (
            not allow_new_group
            or not creatable
            or alt.overhead - best.overhead < policy.min_new_rgroup_savings
        ):
            mech, read, write = passing[alt]
            return TargetChoice(alt, existing[alt], mech, read, write)
    if not allow_new_group or not creatable:
        return None
    mech, read, write = passing[best]
    return TargetChoice(best, None, mech, read, write)


def build_plan(
    *,
    plan_id: int,
    cohorts: Sequence[Cohort],
    from_rgroup: str,
    to_rgroup: str,
    from_scheme: Scheme,
    to_scheme: Scheme,
    mechanism: Mechanism,
    urgency: Urgency,
    created: int,
    earliest_start: Optional[int] = None,
    deadline: Optional[int] = None,
) -> TransitionPlan:
    """Assemble a plan whose byte totals follow the cost formulas exactly,
    summed part-wise so mixed-capacity cohorts stay exact."""
    parts = tuple(PlanPart(c.key, c.count, c.capacity) for c in cohorts)
    if not parts or any(p.count <= 0 for p in parts):
        raise ValueError("plans need at least one non-empty cohort")
    read = write = 0.0
    for p in parts:
        r, w = transition_cost(mechanism, from_scheme, to_scheme, p.count, p.capacity)
        read += r
        write += w
    return TransitionPlan(
        plan_id=plan_id,
        parts=parts,
        from_rgroup=from_rgroup,
        to_rgroup=to_rgroup,
        from_scheme=from_scheme,
        to_scheme=to_scheme,
        mechanism=mechanism,
        total_read_bytes=read,
        total_write_bytes=write,
        urgency=urgency,
        created=created,
        earliest_start=created if earliest_start is None else earliest_start,
        deadline=deadline,
    )


def schedule_rdn(
    *,
    rgroup: Rgroup,
    cohorts: Sequence[Cohort],
    est_afr: float,
    slope: float,
    env: PlannerEnv,
    existing: Mapping[Scheme, str],
    today: int,
    plan_id: int,
    new_rgroup_id: str,
    curve: Optional[HazardCurve] = None,
    age_now: int = 0,
    headroom: bool = True,
    require_worth: bool = True,
) -> Optional[TransitionPlan]:
    """Plan the once-per-lifetime RDn for post-infancy, non-canary cohorts
    still under the default scheme. Relaxed pacing, no deadline."""
    movers = [
        c
        for c in cohorts
        if not c.canary and c.rdn_moves == 0 and not c.in_flight and c.count > 0
    ]
    if not movers:
        return None
    count = sum(c.count for c in movers)
    capacity = max(c.capacity for c in movers)
    whole = count == rgroup.member_count()
    choice = plan_target(
        direction="rdn",
        current_scheme=rgroup.scheme,
        est_afr=est_afr,
        slope=slope,
        env=env,
        capacity=capacity,
        disk_count=count,
        source_size=rgroup.member_count(),
        whole_group=whole,
        curve=curve,
        age_now=age_now,
        existing=existing,
        headroom=headroom,
        require_worth=require_worth,
    )
    if choice is None:
        return None
    target_id = choice.rgroup_id if choice.rgroup_id is not None else new_rgroup_id
    if whole and choice.mechanism is Mechanism.BULK_PARITY:
        target_id = rgroup.id  # in-place scheme change
    return build_plan(
        plan_id=plan_id,
        cohorts=movers,
        from_rgroup=rgroup.id,
        to_rgroup=target_id,
        from_scheme=rgroup.scheme,
        to_scheme=choice.scheme,
        mechanism=choice.mechanism,
        urgency=Urgency.PROACTIVE,
        created=today,
    )


def purge_needed(rgroup: Rgroup, policy: TransitionPolicy) -> bool:
    if rgroup.kind is RgroupKind.DEFAULT or rgroup.retired:
        return False
    count = rgroup.member_count()
    return 0 < count < policy.min_rgroup_size


def purge_target(
    rgroup: Rgroup,
    env: PlannerEnv,
    safer_groups: Mapping[Scheme, str],
    default_rgroup_id: str,
) -> tuple[Scheme, str]:
    """Where a below-floor group's disks go: step groups fall back to the
    default group; trickle groups join the highest-savings existing group
    that is strictly safer, falling back to the default group."""
    if rgroup.kind is RgroupKind.STEP_DEDICATED:
        return env.rc.scheme0, default_rgroup_id
    tol_cur = tolerated_afr(rgroup.scheme, env.rc)
    options = [
        s for s in safer_groups if tolerated_afr(s, env.rc) > tol_cur
    ]
    if options:
        best = min(options, key=_overhead_key)
        return best, safer_groups[best]
    return env.rc.scheme0, default_rgroup_id


def rate_limit(
    plan: TransitionPlan,
    rgroup_bandwidth_per_day: float,
    io: IoPolicy,
    today: int,
    ledger: Optional[Mapping[int, float]] = None,
) -> dict[int, float]:
    """Greedy earliest-fit daily schedule for one plan.

    Normal-lane plans take whatever the peak cap leaves after bytes
    already in the group's ledger; EMERGENCY plans use the full group
    bandwidth and ignore the cap.
    """
    ledger = ledger or {}
    cap = rgroup_bandwidth_per_day * (
        1.0 if plan.urgency is Urgency.EMERGENCY else io.peak_io_cap
    )
    remaining = plan.total_bytes
    day = max(today, plan.earliest_start)
    schedule: dict[int, float] = {}
    while remaining > BYTE_EPS:
        free = cap - ledger.get(day, 0.0)
        if free > 0.0:
            take = min(free, remaining)
            schedule[day] = take
            remaining -= take
        day += 1
    return schedule
