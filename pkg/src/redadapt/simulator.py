"""Trace-driven cluster replay.

Walks a ClusterTrace one day at a time, learns per-dgroup failure curves
from the exposure seen so far, lets the active policy schedule scheme
transitions, pumps the scheduled bytes through per-group IO ledgers, and
accounts reconstruction IO, space savings, and protection violations.

Policies: PACED is the full proactive machinery; REACTIVE up-protects
only once the estimate crosses the tolerated AFR and then re-encodes at
full group bandwidth; IDEAL gets instant zero-IO transitions timed from
the generator's true curves; STATIC never transitions.
"""

from __future__ import annotations

import datetime
import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from redadapt.afr import (
    HazardCurve,
    curve_from_afr,
    exposure_spans,
    local_afr,
    smoothed_hazard,
    trend_fit,
    trend_slope,
)
from redadapt.config import RunConfig
from redadapt.orchestrator import (
    BYTE_EPS,
    PROJECTION_FIT_DAYS,
    TREND_WINDOW_DAYS,
    Cohort,
    CohortKey,
    Mechanism,
    PlannerEnv,
    Rgroup,
    RgroupKind,
    TransitionPlan,
    Urgency,
    build_plan,
    empty_duration_days,
    empty_move_fits,
    fire_level,
    level_crossing_age,
    plan_target,
    purge_needed,
    purge_target,
    robust_edge_estimate,
    schedule_rdn,
    sustained_crossing_age,
    transition_cost,
    transition_duration_days,
)
from redadapt.reliability import Scheme, tolerated_afr
from redadapt.trace import ClusterTrace, DiskEvent, EventKind

RGROUP0_ID = "rg0"
PURGE_INFLOW_GRACE_DAYS = 30
MATURE_DISK_DAYS = 365
FORCED_RUP_FRACTION = 0.95  # of tolerated AFR: last-resort trigger


class PolicyKind(enum.Enum):
    PACED = "paced"
    REACTIVE = "reactive"
    IDEAL = "ideal"
    STATIC = "static"

    @classmethod
    def parse(cls, name: str) -> "PolicyKind":
        try:
            return cls(name.lower())
        except ValueError:
            raise ValueError(f"unknown policy {name!r}") from None


@dataclass(frozen=True)
class RgroupDay:
    rgroup: str
    scheme: str
    disks: int
    transition_bytes: float
    emergency_bytes: float


@dataclass(frozen=True)
class DailyReport:
    date: datetime.date
    disks: int
    transition_frac: float
    reconstruction_frac: float
    savings: float
    underprotected: int
    emergency: int  # plans on the emergency lane today
    rgroups: tuple[RgroupDay, ...] = ()


@dataclass(frozen=True)
class TransitionRecord:
    date: datetime.date
    plan_id: int
    urgency: str
    mechanism: str
    from_scheme: str
    to_scheme: str
    disks: int
    read_bytes: float
    write_bytes: float
    duration_days: int


@dataclass
class AuditResult:
    single_rdn_violations: int = 0
    canary_violations: int = 0
    partition_violations: int = 0
    cap_violations: int = 0
    avg_io_violations: int = 0
    notes: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (
            self.single_rdn_violations
            or self.canary_violations
            or self.partition_violations
            or self.cap_violations
            or self.avg_io_violations
        )

    def note(self, counter: str, message: str) -> None:
        setattr(self, counter, getattr(self, counter) + 1)
        if len(self.notes) < 20:
            self.notes.append(message)


@dataclass
class RunResult:
    policy: PolicyKind
    reports: list[DailyReport]
    transitions: list[TransitionRecord]
    audit: AuditResult
    summary: dict

    @property
    def ok(self) -> bool:
        return self.audit.ok and not self.summary.get("invariant_violation", False)


class _DgroupState:
    """Per-dgroup replay arrays and the curves learned from them."""

    def __init__(self, dgroup: str) -> None:
        self.dgroup = dgroup
        self.deploy: list[int] = []
        self.fail: list[int] = []
        self.decomm: list[int] = []
        self.deploy_arr = np.empty(0, dtype=np.int64)
        self.fail_arr = np.empty(0, dtype=np.int64)
        self.decomm_arr = np.empty(0, dtype=np.int64)
        self.dirty = False
        self.curve: Optional[HazardCurve] = None
        self.truth: Optional[HazardCurve] = None
        self.truth_afr: Optional[list[float]] = None

    def freeze(self) -> None:
        if self.dirty:
            self.deploy_arr = np.asarray(self.deploy, dtype=np.int64)
            self.fail_arr = np.asarray(self.fail, dtype=np.int64)
            self.decomm_arr = np.asarray(self.decomm, dtype=np.int64)
            self.dirty = False

    def refresh_curve(self, boundary: int, kernel, min_at_risk: int) -> None:
        if len(self.deploy_arr) == 0:
            return
        table = exposure_spans(self.deploy_arr, self.fail_arr, self.decomm_arr, boundary)
        self.curve = smoothed_hazard(table, kernel, min_at_risk=min_at_risk)

    def true_afr_at(self, age: int) -> Optional[float]:
        if self.truth_afr is None:
            return None
        return self.truth_afr[min(max(age, 0), len(self.truth_afr) - 1)]


def _classify_units(
    trace: ClusterTrace, step_min_disks: int, step_window_days: int
) -> set[str]:
    """Unit ids of deploy batches big and tight enough to count as step
    deployments; all other deploys fold into their dgroup's trickle unit."""
    batches: dict[tuple[str, str], list[int]] = {}
    for ev in trace.events:
        if ev.kind is EventKind.DEPLOY and ev.batch_tag is not None:
            batches.setdefault((ev.dgroup, ev.batch_tag), []).append(
                ev.date.toordinal()
            )
    units = set()
    for (dgroup, tag), days in batches.items():
        if len(days) >= step_min_disks and max(days) - min(days) < step_window_days:
            units.add(f"{dgroup}/{tag}")
    return units


class _Simulation:
    def __init__(self, trace: ClusterTrace, policy: PolicyKind, cfg: RunConfig) -> None:
        self.trace = trace
        self.policy = policy
        self.cfg = cfg
        self.io = cfg.io
        self.rc = cfg.reliability
        self.tp = cfg.transition
        self.env = PlannerEnv(
            rc=self.rc,
            policy=self.tp,
            io=self.io,
            candidates=cfg.grid.schemes(),
            fill_fraction=cfg.cluster.fill_fraction,
            max_fill=cfg.cluster.max_fill,
        )
        self.audit = AuditResult()
        self.rgroups: dict[str, Rgroup] = {
            RGROUP0_ID: Rgroup(RGROUP0_ID, self.rc.scheme0, RgroupKind.DEFAULT)
        }
        self.location: dict[CohortKey, str] = {}
        self.plans: list[TransitionPlan] = []
        self.transitions: list[TransitionRecord] = []
        self.reports: list[DailyReport] = []
        self.dgroups: dict[str, _DgroupState] = {}
        self.events_by_day: dict[int, list[DiskEvent]] = {}
        self.disk_cohort: dict[str, CohortKey] = {}
        self.disk_index: dict[str, tuple[str, int]] = {}
        self.cohort_meta: dict[CohortKey, tuple[str, int]] = {}
        self.step_unit_group: dict[str, str] = {}
        self.next_plan_id = 1
        self.next_rgroup_id = 1
        self.recon_ledger: dict[int, float] = {}
        self.group_last_inflow: dict[str, int] = {}
        self.plan_first_io: dict[int, int] = {}
        self.cohort_emergency: set[CohortKey] = set()
        self.emergency_plan_ids: set[int] = set()
        # (rgroup, scheme, dgroup) -> underprotected disk-days, for audits
        self.underprotection_log: dict[tuple[str, str, str], int] = {}
        self.live_disks = 0
        self.total_disk_days = 0
        self.total_normal_bytes = 0.0
        self.total_emergency_bytes = 0.0
        self.total_read_bytes = 0.0
        self.total_write_bytes = 0.0
        self.reencode_equivalent_bytes = 0.0
        self.underprotected_total = 0
        self.max_transition_frac = 0.0
        self._prepare()

    # ------------------------------------------------------------- setup

    def _prepare(self) -> None:
        self.step_units = _classify_units(
            self.trace, self.cfg.cluster.step_min_disks, self.cfg.cluster.step_window_days
        )
        canary_quota: dict[str, int] = {}
        deploys: list[DiskEvent] = []
        for ev in self.trace.events:
            self.events_by_day.setdefault(ev.date.toordinal(), []).append(ev)
            if ev.kind is EventKind.DEPLOY:
                deploys.append(ev)
        deploys.sort(key=lambda e: (e.date, e.disk_id))
        for ev in deploys:
            unit = ev.dgroup
            if ev.batch_tag is not None and f"{ev.dgroup}/{ev.batch_tag}" in self.step_units:
                unit = f"{ev.dgroup}/{ev.batch_tag}"
            canary = False
            if unit == ev.dgroup:  # canaries only come from trickle deployments
                used = canary_quota.get(ev.dgroup, 0)
                if used < self.tp.canary_count:
                    canary_quota[ev.dgroup] = used + 1
                    canary = True
            key: CohortKey = (unit, ev.date.toordinal(), canary)
            self.disk_cohort[ev.disk_id] = key
            self.cohort_meta[key] = (ev.dgroup, ev.capacity)
        for dg in self.trace.dgroups():
            self.dgroups[dg] = _DgroupState(dg)
        if self.trace.truth and self.trace.start_date and self.trace.end_date:
            horizon = (self.trace.end_date - self.trace.start_date).days + 2
            if self.cfg.days is not None:
                horizon = max(horizon, self.cfg.days + 1)
            for dg, profile in self.trace.truth.items():
                if dg in self.dgroups:
                    curve = curve_from_afr(profile.afr_curve(horizon))
                    self.dgroups[dg].truth = curve
                    self.dgroups[dg].truth_afr = curve.afr.tolist()

    def _new_rgroup_id(self) -> str:
        rid = f"rg{self.next_rgroup_id}"
        self.next_rgroup_id += 1
        return rid

    def _new_plan_id(self) -> int:
        pid = self.next_plan_id
        self.next_plan_id += 1
        return pid

    # ------------------------------------------------------------ events

    def _apply_events(self, today: int) -> None:
        for ev in self.events_by_day.get(today, ()):
            if ev.kind is EventKind.DEPLOY:
                self.live_disks += 1
                self._deploy(ev, today)
            else:
                self.live_disks -= 1
                self._remove_disk(ev)
        for dgs in self.dgroups.values():
            dgs.freeze()

    def _deploy(self, ev: DiskEvent, today: int) -> None:
        key = self.disk_cohort[ev.disk_id]
        unit, deploy_ord, canary = key
        dgs = self.dgroups[ev.dgroup]
        dgs.deploy.append(deploy_ord)
        dgs.fail.append(-1)
        dgs.decomm.append(-1)
        dgs.dirty = True
        self.disk_index[ev.disk_id] = (ev.dgroup, len(dgs.deploy) - 1)
        if key in self.location:
            self.rgroups[self.location[key]].cohorts[key].count += 1
            return
        if unit in self.step_units:
            gid = self.step_unit_group.get(unit)
            if gid is None:
                gid = self._new_rgroup_id()
                self.rgroups[gid] = Rgroup(
                    gid, self.rc.scheme0, RgroupKind.STEP_DEDICATED, origin_batch=unit
                )
                self.step_unit_group[unit] = gid
        else:
            gid = RGROUP0_ID
        self.rgroups[gid].add_cohort(
            Cohort(
                unit_id=unit,
                dgroup=ev.dgroup,
                deploy_ord=deploy_ord,
                canary=canary,
                capacity=ev.capacity,
                count=1,
            )
        )
        self.location[key] = gid
        self.group_last_inflow[gid] = today

    def _remove_disk(self, ev: DiskEvent) -> None:
        key = self.disk_cohort[ev.disk_id]
        dg, idx = self.disk_index[ev.disk_id]
        dgs = self.dgroups[dg]
        ord_ = ev.date.toordinal()
        if ev.kind is EventKind.FAIL:
            dgs.fail[idx] = ord_
        else:
            dgs.decomm[idx] = ord_
        dgs.dirty = True
        gid = self.location.get(key)
        if gid is None:
            return
        cohort = self.rgroups[gid].cohorts.get(key)
        if cohort is None or cohort.count <= 0:
            return
        cohort.count -= 1
        if ev.kind is EventKind.FAIL:
            # k reads + 1 write per lost disk, spread over the repair window
            total = (self.rgroups[gid].scheme.k + 1) * float(cohort.capacity)
            days = max(1, math.ceil(self.rc.mttr_days))
            for offset in range(days):
                self.recon_ledger[ord_ + offset] = (
                    self.recon_ledger.get(ord_ + offset, 0.0) + total / days
                )

    # ------------------------------------------------------------ curves

    def _refresh_curves(self, today: int) -> None:
        kernel = self.cfg.estimator.kernel
        min_at_risk = self.cfg.estimator.min_at_risk
        for dgs in self.dgroups.values():
            dgs.refresh_curve(today + 1, kernel, min_at_risk)

    def _decision_curve(self, dgs: _DgroupState) -> Optional[HazardCurve]:
        if self.policy is PolicyKind.IDEAL and dgs.truth is not None:
            return dgs.truth
        return dgs.curve

    def _group_estimate(
        self, dgs: _DgroupState, curve: HazardCurve, age_now: int
    ) -> tuple[float, float]:
        """(AFR estimate, trend) at the given cohort age.

        Learned curves are read with edge renormalization; ages past the
        supported edge clamp to it. Truth curves are exact pointwise."""
        if curve is dgs.truth and dgs.truth_afr is not None:
            a = min(max(age_now, 0), len(dgs.truth_afr) - 1)
            est = dgs.truth_afr[a]
            return est, est - dgs.truth_afr[max(a - 1, 0)]
        est = local_afr(curve, min(age_now, curve.support_end - 1))
        return est, max(trend_slope(curve, TREND_WINDOW_DAYS), 0.0)

    def _stale_estimate(
        self, dgs: _DgroupState, curve: HazardCurve, age_now: int
    ) -> tuple[float, float]:
        """Like _group_estimate but read no closer than the dense end.

        The fully smoothed interior lags the live edge by the kernel
        width yet carries far less variance, which matters when a single
        read triggers drastic action."""
        if curve is dgs.truth and dgs.truth_afr is not None:
            return self._group_estimate(dgs, curve, age_now)
        dense_last = curve.support_end - curve.bandwidth - 1
        est = local_afr(curve, max(min(age_now, dense_last), 0))
        return est, max(trend_slope(curve, TREND_WINDOW_DAYS), 0.0)

    def _plateau_estimate(
        self, dgs: _DgroupState, curve: HazardCurve, inf_end: int, age_now: int
    ) -> tuple[float, float]:
        """Post-infancy useful-life AFR for down-protection decisions.

        Reads the median of the dense smoothed curve over up to six
        months past the infancy end. Single-age reads near the live edge
        are too noisy to pick a scheme by, and the mean is no better: a
        failure cluster leaves a bump in the pooled curve that outlives
        the cluster by months largely undiluted on a slow-growing fleet,
        and a handful of such bumps drag a mean far above the level most
        of the window sits at. Cohorts entering useful life care about
        that central plateau level, not wearout ages they are nowhere
        near."""
        if curve is dgs.truth and dgs.truth_afr is not None:
            a = min(max(age_now, 0), len(dgs.truth_afr) - 1)
            return dgs.truth_afr[a], 0.0
        dense_end = curve.support_end - curve.bandwidth
        # skip one kernel width past the settle age: the kernel drags
        # burn-in mass into it, inflating the plateau read
        lo = inf_end + curve.bandwidth
        hi = min(dense_end, lo + 180)
        if hi <= lo:
            return local_afr(curve, min(lo, curve.support_end - 1)), 0.0
        return float(np.median(curve.afr[lo:hi])), 0.0

    # --------------------------------------------------------- decisions

    def _decide(self, today: int) -> None:
        if self.policy is PolicyKind.STATIC:
            return
        self._decide_rdn(today)
        if self.policy is PolicyKind.REACTIVE:
            self._decide_reactive_rup(today)
        else:
            self._decide_step_rup(today)
            self._decide_trickle_rup(today)
        self._decide_purges(today)

    def _learned_infancy(self, curve: HazardCurve) -> Optional[int]:
        """Age where the observed burn-in decline has settled.

        Settle is the first age whose trailing week of curve values has
        median no more than 25% above the median of the bounded window
        after it. Medians on both sides keep one-day noise valleys from
        opening the gate while disks still carry burn-in hazard, and the
        trailing window means the age itself has already come down, not
        merely the ages after it. Bounding the forward window keeps a
        wear-out ramp far to the right from inflating the comparison
        level on old fleets. None until the dense support shows both the
        decline and the settle."""
        stability = self.tp.infancy_stability_days
        dense_end = curve.support_end - curve.bandwidth
        if curve.bandwidth == 0:
            # noiseless known curve: settle is simply where decline ends
            afr = curve.afr[:dense_end]
            for age in range(1, dense_end):
                tail = afr[age : age + 6 * stability]
                if afr[age] <= 1.25 * max(float(tail.min()), 1e-12):
                    return age
            return None
        if dense_end <= 2 * stability:
            return None
        afr = curve.afr[:dense_end]
        # a burn-in this long reads as a curve that has not settled at all
        horizon = min(dense_end - stability, 8 * stability)
        for age in range(1, horizon + 1):
            local = float(np.median(afr[max(age - 7, 0) : age + 1]))
            tail = afr[age : age + 6 * stability]
            if local <= 1.25 * max(float(np.median(tail)), 1e-12):
                return age
        return None

    def _decide_rdn(self, today: int) -> None:
        for gid in list(self.rgroups):
            rg = self.rgroups[gid]
            if rg.retired or rg.scheme != self.rc.scheme0:
                continue
            if rg.kind is RgroupKind.STEP_DEDICATED:
                self._rdn_step(rg, today)
            elif rg.kind is RgroupKind.DEFAULT:
                self._rdn_trickle(rg, today)

    def _rdn_step(self, rg: Rgroup, today: int) -> None:
        cohorts = [c for c in rg.cohorts.values() if c.count > 0]
        if not cohorts or any(c.in_flight or c.rdn_moves for c in cohorts):
            return
        dgs = self.dgroups[cohorts[0].dgroup]
        curve = self._decision_curve(dgs)
        if curve is None:
            return
        inf_end = self._learned_infancy(curve)
        if inf_end is None:
            return
        # the whole unit moves at once, so wait for the youngest cohort
        # to exit infancy or the move itself would under-protect it
        if today - max(c.deploy_ord for c in cohorts) < inf_end:
            return
        oldest_age = today - min(c.deploy_ord for c in cohorts)
        est, slope = self._plateau_estimate(dgs, curve, inf_end, oldest_age)
        relaxed = self.policy is PolicyKind.IDEAL
        plan = schedule_rdn(
            rgroup=rg,
            cohorts=cohorts,
            est_afr=est,
            slope=slope,
            env=self.env,
            existing={},
            today=today,
            plan_id=self._new_plan_id(),
            new_rgroup_id=self._new_rgroup_id(),
            curve=curve,
            age_now=oldest_age,
            headroom=not relaxed,
            require_worth=not relaxed,
        )
        if plan is not None:
            self._admit_plan(plan, today)

    def _rdn_trickle(self, rg: Rgroup, today: int) -> None:
        by_dgroup: dict[str, list[Cohort]] = {}
        for c in rg.cohorts.values():
            if c.canary or c.count <= 0 or c.in_flight or c.rdn_moves:
                continue
            by_dgroup.setdefault(c.dgroup, []).append(c)
        for dgroup, cohorts in by_dgroup.items():
            dgs = self.dgroups[dgroup]
            curve = self._decision_curve(dgs)
            if curve is None:
                continue
            inf_end = self._learned_infancy(curve)
            if inf_end is None:
                continue
            ready = [c for c in cohorts if today - c.deploy_ord >= inf_end]
            if not ready:
                continue
            oldest_age = max(today - c.deploy_ord for c in ready)
            est, slope = self._plateau_estimate(dgs, curve, inf_end, oldest_age)
            relaxed = self.policy is PolicyKind.IDEAL
            plan = schedule_rdn(
                rgroup=rg,
                cohorts=ready,
                est_afr=est,
                slope=slope,
                env=self.env,
                existing=self._joinable_trickle_groups(),
                today=today,
                plan_id=self._new_plan_id(),
                new_rgroup_id=self._new_rgroup_id(),
                curve=curve,
                age_now=oldest_age,
                headroom=not relaxed,
                require_worth=not relaxed,
            )
            if plan is not None:
                self._admit_plan(plan, today)

    def _pending_inflow_groups(self) -> set[str]:
        """Group ids some active plan is moving cohorts into."""
        return {p.to_rgroup for p in self.plans if p.active and not p.in_place}

    def _pending_inplace_groups(self) -> set[str]:
        """Group ids whose scheme an active plan is about to rewrite."""
        return {p.from_rgroup for p in self.plans if p.active and p.in_place}

    def _joinable_trickle_groups(self) -> dict[Scheme, str]:
        inplace = self._pending_inplace_groups()
        existing: dict[Scheme, str] = {}
        for rg in self.rgroups.values():
            if (
                rg.kind is RgroupKind.TRICKLE_SHARED
                and not rg.retired
                and rg.id not in inplace
            ):
                existing.setdefault(rg.scheme, rg.id)
        for plan in self.plans:
            if plan.active and not plan.in_place:
                target = self.rgroups.get(plan.to_rgroup)
                if target is None or (
                    target.kind is RgroupKind.TRICKLE_SHARED and target.id not in inplace
                ):
                    existing.setdefault(plan.to_scheme, plan.to_rgroup)
        return existing

    def _protection_deadline(
        self, curve: HazardCurve, scheme: Scheme, deploy_ord: int, today: int
    ) -> Optional[int]:
        # scan past the burn-in bump or it reads as an early crossing
        inf_end = self._learned_infancy(curve)
        crossing = level_crossing_age(
            curve,
            tolerated_afr(scheme, self.rc),
            inf_end if inf_end is not None else self.tp.infancy_stability_days,
            self.tp.projection_window_days,
        )
        if crossing is None:
            return None
        # an already-passed crossing still needs a valid plan window
        return max(deploy_ord + crossing, today)

    def _decide_step_rup(self, today: int) -> None:
        for rg in list(self.rgroups.values()):
            if rg.kind is not RgroupKind.STEP_DEDICATED or rg.retired:
                continue
            cohorts = [c for c in rg.cohorts.values() if c.count > 0]
            if not cohorts or any(c.in_flight for c in cohorts):
                continue
            dgs = self.dgroups[cohorts[0].dgroup]
            curve = self._decision_curve(dgs)
            if curve is None:
                continue
            deploy_ord = min(c.deploy_ord for c in cohorts)
            oldest_age = today - deploy_ord
            level = fire_level(rg.scheme, self.rc, self.tp)
            projected = False
            if self.policy is PolicyKind.IDEAL:
                est, slope = self._group_estimate(dgs, curve, oldest_age)
                if est < level:
                    continue
            else:
                inf_end = self._learned_infancy(curve)
                if inf_end is None:
                    continue
                read = robust_edge_estimate(curve, level, inf_end)
                if read is None or read[0] < level:
                    continue
                robust, window = read
                fit = trend_fit(curve, PROJECTION_FIT_DAYS)
                slope = max(fit[1], 0.0) if fit is not None else 0.0
                # the median trails the newest disks by half its window
                # plus a kernel width; project the estimate to them so
                # the rung is chosen for the fleet it will actually hold
                est = robust + slope * (window // 2 + curve.bandwidth)
                projected = True
            self._plan_rup_group(
                rg,
                cohorts,
                est,
                slope,
                curve,
                deploy_ord,
                today,
                project_worth=projected,
            )

    def _plan_rup_group(
        self,
        rg: Rgroup,
        cohorts: list[Cohort],
        est: float,
        slope: float,
        curve: HazardCurve,
        deploy_ord: int,
        today: int,
        project_worth: bool = False,
    ) -> None:
        """Shared RUp planning: the normal attempt first, then a forced
        fallback with the comfort filters off once protection is nearly
        exhausted.

        With project_worth the keep-it-worthwhile check projects the exit
        date from the measured slope instead of reading it off the curve,
        which is the right form for a fleet still climbing: the curve has
        not yet drawn the exit the slope predicts."""
        relaxed = self.policy is PolicyKind.IDEAL
        age_now = today - deploy_ord
        count = sum(c.count for c in cohorts)
        whole = count == rg.member_count()
        common = dict(
            direction="rup",
            current_scheme=rg.scheme,
            est_afr=est,
            slope=max(slope, 0.0),
            env=self.env,
            capacity=max(c.capacity for c in cohorts),
            disk_count=count,
            source_size=rg.member_count(),
            whole_group=whole,
            curve=None if project_worth else curve,
            age_now=age_now,
        )
        choice = plan_target(
            existing=None if whole else self._joinable_trickle_groups(),
            headroom=not relaxed,
            require_worth=not relaxed,
            **common,
        )
        if choice is None:
            if est < FORCED_RUP_FRACTION * tolerated_afr(rg.scheme, self.rc):
                return
            choice = plan_target(
                existing=None,
                headroom=False,
                require_worth=False,
                enforce_group_floor=False,
                **common,
            )
            if choice is None:
                return
        if choice.rgroup_id is not None:
            target_id = choice.rgroup_id
        elif (
            whole
            and choice.mechanism is Mechanism.BULK_PARITY
            and rg.id not in self._pending_inflow_groups()
        ):
            # rewriting the scheme in place is only safe when nothing is
            # concurrently joining the group under its current scheme
            target_id = rg.id
        else:
            target_id = self._new_rgroup_id()
        plan = build_plan(
            plan_id=self._new_plan_id(),
            cohorts=cohorts,
            from_rgroup=rg.id,
            to_rgroup=target_id,
            from_scheme=rg.scheme,
            to_scheme=choice.scheme,
            mechanism=choice.mechanism,
            urgency=Urgency.PROACTIVE,
            created=today,
            deadline=self._protection_deadline(curve, rg.scheme, deploy_ord, today),
        )
        # idealized runs complete instantly, so pacing pressure is moot.
        # forced picks the rung, but only deadline pressure breaks the
        # cap: a forced move with runway left still paces like any other
        rushed = self.policy is not PolicyKind.IDEAL and self._must_escalate(
            plan, rg, today
        )
        if rushed:
            plan.urgency = Urgency.EMERGENCY
            plan.escalated = True
        self._admit_plan(plan, today)

    def _must_escalate(self, plan: TransitionPlan, rg: Rgroup, today: int) -> bool:
        if plan.deadline is None:
            return False
        duration = transition_duration_days(
            plan.remaining_bytes, max(rg.member_count(), 1), self.io
        )
        return today + duration > plan.deadline

    def _decide_trickle_rup(self, today: int) -> None:
        for rg in list(self.rgroups.values()):
            if rg.retired or rg.kind is not RgroupKind.TRICKLE_SHARED:
                continue
            by_dgroup: dict[str, list[Cohort]] = {}
            for c in rg.cohorts.values():
                if c.count > 0 and not c.in_flight and not c.canary:
                    by_dgroup.setdefault(c.dgroup, []).append(c)
            for dgroup, cohorts in by_dgroup.items():
                self._trickle_rup_dgroup(rg, dgroup, cohorts, today)

    def _trickle_rup_dgroup(
        self, rg: Rgroup, dgroup: str, cohorts: list[Cohort], today: int
    ) -> None:
        dgs = self.dgroups[dgroup]
        curve = self._decision_curve(dgs)
        if curve is None:
            return
        if (
            self.policy is not PolicyKind.IDEAL
            and curve.support_end < self.tp.infancy_stability_days
        ):
            return
        level = fire_level(rg.scheme, self.rc, self.tp)
        # scanning from the settle age keeps the burn-in bump, which can
        # top the fire level, from making fresh cohorts look due
        inf_end = self._learned_infancy(curve)
        if inf_end is None:
            return
        projected = False
        if self.policy is PolicyKind.IDEAL:
            # the known curve holds the exact crossing; each cohort moves
            # the day its own age reaches it
            crossing = sustained_crossing_age(curve, level, inf_end)
            if crossing is None:
                return
            est, slope, due_age, lead = max(level, 1e-6), 0.0, crossing, 0
        else:
            read = robust_edge_estimate(curve, level, inf_end)
            if read is None or read[0] < level:
                return
            robust, window = read
            fit = trend_fit(curve, PROJECTION_FIT_DAYS)
            slope = max(fit[1], 0.0) if fit is not None else 0.0
            est = robust + slope * (window // 2 + curve.bandwidth)
            projected = True
            # the crossing sits somewhere inside the trigger window, so
            # treat every cohort old enough to overlap it as due
            interior = curve.support_end - curve.bandwidth
            due_age = max(interior - window, inf_end)
            lead = empty_duration_days(max(c.capacity for c in cohorts), self.io)
        due = [c for c in cohorts if today - c.deploy_ord >= due_age - lead]
        if not due:
            return
        due.sort(key=lambda c: c.deploy_ord)
        total = sum(c.count for c in due)
        if total < rg.member_count():
            # a detection backlog can make months of cohorts due at once;
            # moving them all in one plan forces a re-encode, so take the
            # oldest prefix that still drains as empty-disk moves and let
            # the rest stay due for the following days
            batch: list[Cohort] = []
            acc = 0
            for c in due:
                if batch and not empty_move_fits(
                    acc + c.count, rg.member_count(), self.env.fill_fraction, self.env.max_fill
                ):
                    break
                batch.append(c)
                acc += c.count
            due = batch
        deploy_ord = min(c.deploy_ord for c in due)
        self._plan_rup_group(
            rg, due, est, slope, curve, deploy_ord, today, project_worth=projected
        )

    def _decide_reactive_rup(self, today: int) -> None:
        """Up-protect only after the observed curve crosses the tolerated
        AFR, then re-encode everything at full group bandwidth.

        No lead time and no projection: the breach must be visible in the
        confirmed part of the curve, which trails the oldest disks by a
        kernel width, so the response starts after those disks are already
        past the line the scheme tolerates."""
        for rg in list(self.rgroups.values()):
            if rg.retired:
                continue
            by_dgroup: dict[str, list[Cohort]] = {}
            for c in rg.cohorts.values():
                if c.count > 0 and not c.in_flight and not c.canary:
                    by_dgroup.setdefault(c.dgroup, []).append(c)
            for dgroup, cohorts in by_dgroup.items():
                dgs = self.dgroups[dgroup]
                curve = dgs.curve
                if curve is None or curve.support_end < self.tp.infancy_stability_days:
                    continue
                inf_end = self._learned_infancy(curve)
                if inf_end is None:
                    continue
                level = tolerated_afr(rg.scheme, self.rc)
                crossing = sustained_crossing_age(curve, level, inf_end)
                oldest_age = max(today - c.deploy_ord for c in cohorts)
                if crossing is None or oldest_age < crossing:
                    continue
                est, slope = self._stale_estimate(dgs, curve, oldest_age)
                # the crossing itself is the evidence; the stale read only
                # sizes the jump, so never let it argue the risk back down
                est = max(est, level)
                choice = plan_target(
                    direction="rup",
                    current_scheme=rg.scheme,
                    est_afr=est,
                    slope=max(slope, 0.0),
                    env=self.env,
                    capacity=max(c.capacity for c in cohorts),
                    disk_count=sum(c.count for c in cohorts),
                    source_size=rg.member_count(),
                    whole_group=False,
                    headroom=True,
                    require_worth=False,
                    enforce_group_floor=False,
                )
                if choice is None:
                    continue
                plan = build_plan(
                    plan_id=self._new_plan_id(),
                    cohorts=cohorts,
                    from_rgroup=rg.id,
                    to_rgroup=self._new_rgroup_id(),
                    from_scheme=rg.scheme,
                    to_scheme=choice.scheme,
                    mechanism=Mechanism.REENCODE,
                    urgency=Urgency.EMERGENCY,
                    created=today,
                )
                self._admit_plan(plan, today)

    def _decide_purges(self, today: int) -> None:
        for rg in list(self.rgroups.values()):
            if not purge_needed(rg, self.tp):
                continue
            if today - self.group_last_inflow.get(rg.id, today) <= PURGE_INFLOW_GRACE_DAYS:
                continue
            cohorts = [c for c in rg.cohorts.values() if c.count > 0]
            if not cohorts or any(c.in_flight for c in cohorts):
                continue
            safer: dict[Scheme, str] = {}
            tol_cur = tolerated_afr(rg.scheme, self.rc)
            inplace = self._pending_inplace_groups()
            for other in self.rgroups.values():
                if (
                    other.id != rg.id
                    and not other.retired
                    and other.id not in inplace
                    and other.kind is RgroupKind.TRICKLE_SHARED
                    and other.member_count() > 0
                    and tolerated_afr(other.scheme, self.rc) > tol_cur
                ):
                    # any safer live group will do; receiving members is
                    # what pushes small groups back over the floor
                    safer.setdefault(other.scheme, other.id)
            scheme, target_id = purge_target(rg, self.env, safer, RGROUP0_ID)
            plan = build_plan(
                plan_id=self._new_plan_id(),
                cohorts=cohorts,
                from_rgroup=rg.id,
                to_rgroup=target_id,
                from_scheme=rg.scheme,
                to_scheme=scheme,
                mechanism=Mechanism.BULK_PARITY if scheme != rg.scheme else Mechanism.EMPTY,
                urgency=Urgency.PURGE,
                created=today,
            )
            if scheme == rg.scheme:
                # same scheme: pure membership merge, no bytes move
                plan.total_read_bytes = 0.0
                plan.total_write_bytes = 0.0
                plan.remaining_bytes = 0.0
            self._admit_plan(plan, today)

    def _admit_plan(self, plan: TransitionPlan, today: int) -> None:
        src = self.rgroups[plan.from_rgroup]
        for part in plan.parts:
            src.cohorts[part.key].in_flight = True
        if self.policy is PolicyKind.IDEAL:
            plan.total_read_bytes = 0.0
            plan.total_write_bytes = 0.0
            plan.remaining_bytes = 0.0
        if plan.urgency is Urgency.EMERGENCY:
            self.emergency_plan_ids.add(plan.plan_id)
        self.plans.append(plan)
        if plan.remaining_bytes <= BYTE_EPS:
            self._complete_plan(plan, today)

    # --------------------------------------------------------- execution

    def _execute(self, today: int) -> tuple[float, float, int]:
        """Pump today's IO: emergency lane first at full group bandwidth,
        then normal plans fair-sharing whatever the peak cap leaves."""
        for plan in self.plans:
            if plan.active and plan.urgency is Urgency.PROACTIVE and not plan.escalated:
                rg = self.rgroups[plan.from_rgroup]
                if self._must_escalate(plan, rg, today):
                    plan.urgency = Urgency.EMERGENCY
                    plan.escalated = True
                    self.emergency_plan_ids.add(plan.plan_id)
        by_group: dict[str, list[TransitionPlan]] = {}
        for plan in self.plans:
            if plan.active and plan.earliest_start <= today:
                by_group.setdefault(plan.from_rgroup, []).append(plan)
        normal_total = 0.0
        emergency_total = 0.0
        emergency_plans = 0
        for gid, plans in by_group.items():
            rg = self.rgroups[gid]
            bandwidth = rg.member_count() * self.io.daily_disk_bytes
            if bandwidth <= 0:
                bandwidth = self.io.daily_disk_bytes  # drained group: one disk's worth
            emergencies = [p for p in plans if p.urgency is Urgency.EMERGENCY]
            normals = [p for p in plans if p.urgency is not Urgency.EMERGENCY]
            emergency_plans += len(emergencies)
            spent_emergency = self._fair_share(emergencies, bandwidth, today)
            emergency_total += spent_emergency
            if spent_emergency:
                rg.emergency_ledger[today] = spent_emergency
            normal_cap = min(self.io.peak_io_cap * bandwidth, bandwidth - spent_emergency)
            spent_normal = self._fair_share(normals, max(normal_cap, 0.0), today)
            if spent_normal > self.io.peak_io_cap * bandwidth * (1 + 1e-9) + BYTE_EPS:
                self.audit.note(
                    "cap_violations",
                    f"{rg.id} day {today}: normal lane {spent_normal:.3e} over cap",
                )
            normal_total += spent_normal
            if spent_normal:
                rg.io_ledger[today] = spent_normal
        for plan in self.plans:
            if plan.active and plan.remaining_bytes <= BYTE_EPS:
                self._complete_plan(plan, today)
        self.plans = [p for p in self.plans if p.active]
        self.total_normal_bytes += normal_total
        self.total_emergency_bytes += emergency_total
        return normal_total, emergency_total, emergency_plans

    def _fair_share(self, plans: list[TransitionPlan], budget: float, today: int) -> float:
        live = [p for p in plans if p.remaining_bytes > BYTE_EPS]
        spent = 0.0
        remaining_budget = budget
        # water-fill: plans needing less than an equal share release the rest
        for i, plan in enumerate(sorted(live, key=lambda p: p.remaining_bytes)):
            share = remaining_budget / (len(live) - i)
            take = min(plan.remaining_bytes, share)
            plan.remaining_bytes -= take
            remaining_budget -= take
            spent += take
            if take > 0 and plan.plan_id not in self.plan_first_io:
                self.plan_first_io[plan.plan_id] = today
        return spent

    def _complete_plan(self, plan: TransitionPlan, today: int) -> None:
        plan.completed_on = today
        src = self.rgroups[plan.from_rgroup]
        is_rdn = tolerated_afr(plan.to_scheme, self.rc) < tolerated_afr(
            plan.from_scheme, self.rc
        )
        if plan.in_place:
            src.scheme = plan.to_scheme
            target = src
        else:
            target = self.rgroups.get(plan.to_rgroup)
            if target is None:
                target = Rgroup(plan.to_rgroup, plan.to_scheme, RgroupKind.TRICKLE_SHARED)
                self.rgroups[plan.to_rgroup] = target
            if target.scheme != plan.to_scheme:
                self.audit.note(
                    "partition_violations",
                    f"plan {plan.plan_id}: target {target.id} scheme drifted",
                )
        per_disk = plan.total_bytes / plan.disk_count if plan.disk_count else 0.0
        moved = 0
        for part in plan.parts:
            cohort = src.cohorts.get(part.key)
            if cohort is None:
                continue
            cohort.in_flight = False
            cohort.transition_bytes_per_disk += per_disk
            if plan.urgency is Urgency.EMERGENCY:
                self.cohort_emergency.add(cohort.key)
            if is_rdn:
                if cohort.rdn_moves >= 1:
                    self.audit.note(
                        "single_rdn_violations",
                        f"cohort {cohort.key} down-protected twice",
                    )
                cohort.rdn_moves += 1
            if not plan.in_place:
                src.pop_cohort(part.key)
                if cohort.count > 0:
                    target.add_cohort(cohort)
                    self.location[cohort.key] = target.id
                else:
                    del self.location[cohort.key]
            moved += cohort.count
        if not plan.in_place:
            self.group_last_inflow[plan.to_rgroup] = today
            if target.cohorts and target.retired:
                target.retired = False  # revived by late-arriving inflow
            if not src.cohorts and src.kind is not RgroupKind.DEFAULT:
                src.retired = True
        if plan.from_scheme != plan.to_scheme:
            for part in plan.parts:
                r, w = transition_cost(
                    Mechanism.REENCODE,
                    plan.from_scheme,
                    plan.to_scheme,
                    part.count,
                    part.capacity,
                )
                self.reencode_equivalent_bytes += r + w
        start = self.plan_first_io.get(plan.plan_id, today)
        self.total_read_bytes += plan.total_read_bytes
        self.total_write_bytes += plan.total_write_bytes
        self.transitions.append(
            TransitionRecord(
                date=datetime.date.fromordinal(today),
                plan_id=plan.plan_id,
                urgency=plan.urgency.value,
                mechanism=plan.mechanism.value,
                from_scheme=str(plan.from_scheme),
                to_scheme=str(plan.to_scheme),
                disks=moved,
                read_bytes=plan.total_read_bytes,
                write_bytes=plan.total_write_bytes,
                duration_days=(today - start + 1) if plan.total_bytes > 0 else 0,
            )
        )

    # --------------------------------------------------------- reporting

    def _count_underprotected(self, today: int) -> int:
        count = 0
        for rg in self.rgroups.values():
            if rg.retired or not rg.cohorts:
                continue
            tol = tolerated_afr(rg.scheme, self.rc) * (1 + 1e-9)
            for c in rg.cohorts.values():
                if c.count <= 0:
                    continue
                dgs = self.dgroups[c.dgroup]
                afr = dgs.true_afr_at(today - c.deploy_ord)
                if afr is None:
                    curve = dgs.curve
                    if curve is None or curve.support_end == 0:
                        continue
                    afr = curve.afr_at(min(today - c.deploy_ord, curve.support_end - 1))
                if afr > tol:
                    count += c.count
                    key = (rg.id, str(rg.scheme), c.dgroup)
                    self.underprotection_log[key] = (
                        self.underprotection_log.get(key, 0) + c.count
                    )
        return count

    def _emit_report(
        self, today: int, normal: float, emergency: float, emergency_plans: int
    ) -> None:
        disks = 0
        logical_adaptive = 0.0
        logical_static = 0.0
        rows = []
        s0 = self.rc.scheme0
        for rg in self.rgroups.values():
            n = rg.member_count()
            moved_today = rg.io_ledger.get(today, 0.0) + rg.emergency_ledger.get(today, 0.0)
            if n == 0 and moved_today == 0.0:
                continue
            raw = rg.raw_bytes()
            disks += n
            logical_adaptive += raw * rg.scheme.k / rg.scheme.n
            logical_static += raw * s0.k / s0.n
            rows.append(
                RgroupDay(
                    rgroup=rg.id,
                    scheme=str(rg.scheme),
                    disks=n,
                    transition_bytes=rg.io_ledger.get(today, 0.0),
                    emergency_bytes=rg.emergency_ledger.get(today, 0.0),
                )
            )
        bandwidth = disks * self.io.daily_disk_bytes
        transition_frac = (normal + emergency) / bandwidth if bandwidth else 0.0
        recon = self.recon_ledger.pop(today, 0.0)
        under = self._count_underprotected(today)
        self.underprotected_total += under
        self.total_disk_days += disks
        self.max_transition_frac = max(self.max_transition_frac, transition_frac)
        self.reports.append(
            DailyReport(
                date=datetime.date.fromordinal(today),
                disks=disks,
                transition_frac=transition_frac,
                reconstruction_frac=recon / bandwidth if bandwidth else 0.0,
                savings=1.0 - logical_static / logical_adaptive if logical_adaptive else 0.0,
                underprotected=under,
                emergency=emergency_plans,
                rgroups=tuple(rows),
            )
        )

    def _check_partition(self, today: int) -> None:
        located = sum(rg.member_count() for rg in self.rgroups.values() if not rg.retired)
        if located != self.live_disks:
            self.audit.note(
                "partition_violations",
                f"day {today}: {located} disks in rgroups vs {self.live_disks} live",
            )

    def _final_audits(self) -> None:
        for key, gid in self.location.items():
            if not key[2]:  # canary flag
                continue
            if gid != RGROUP0_ID or self.rgroups[gid].scheme != self.rc.scheme0:
                self.audit.note(
                    "canary_violations", f"canary cohort {key} left the default group"
                )
        if self.policy in (PolicyKind.PACED, PolicyKind.IDEAL):
            daily = self.io.daily_disk_bytes
            budget = self.io.avg_io * self.total_disk_days * daily
            if self.total_normal_bytes > budget * (1 + 1e-9):
                self.audit.note(
                    "avg_io_violations",
                    f"cluster normal-lane bytes {self.total_normal_bytes:.3e}"
                    f" over lifetime budget {budget:.3e}",
                )
            end_ord = self.reports[-1].date.toordinal() if self.reports else 0
            for rg in self.rgroups.values():
                for c in rg.cohorts.values():
                    lifetime = end_ord - c.deploy_ord + 1
                    if (
                        c.count <= 0
                        or lifetime < MATURE_DISK_DAYS
                        or c.key in self.cohort_emergency
                    ):
                        continue
                    frac = c.transition_bytes_per_disk / (lifetime * daily)
                    if frac > self.io.avg_io * (1 + 1e-9):
                        self.audit.note(
                            "avg_io_violations",
                            f"cohort {c.key}: lifetime transition IO {frac:.4f}"
                            f" over avg_io {self.io.avg_io}",
                        )

    # --------------------------------------------------------------- run

    def run(self) -> RunResult:
        if not self.trace.events:
            return RunResult(self.policy, [], [], self.audit, self._summary(None, None))
        start = self.trace.start_date.toordinal()
        if self.cfg.start is not None:
            start = min(start, self.cfg.start.toordinal())
        end = start + self.cfg.days - 1 if self.cfg.days else self.trace.end_date.toordinal()
        for today in range(start, end + 1):
            self._apply_events(today)
            self._refresh_curves(today)
            self._decide(today)
            normal, emergency, emergency_plans = self._execute(today)
            self._emit_report(today, normal, emergency, emergency_plans)
            self._check_partition(today)
        self._final_audits()
        return RunResult(
            self.policy, self.reports, self.transitions, self.audit, self._summary(start, end)
        )

    def _summary(self, start: Optional[int], end: Optional[int]) -> dict:
        savings_mean = 0.0
        if self.reports:
            weight = sum(r.disks for r in self.reports)
            if weight:
                savings_mean = sum(r.savings * r.disks for r in self.reports) / weight
        invariant_violation = not self.audit.ok
        if self.policy in (PolicyKind.PACED, PolicyKind.IDEAL):
            invariant_violation = invariant_violation or self.underprotected_total > 0
        return {
            "policy": self.policy.value,
            "start": datetime.date.fromordinal(start).isoformat() if start else None,
            "end": datetime.date.fromordinal(end).isoformat() if end else None,
            "days": len(self.reports),
            "final_disks": self.reports[-1].disks if self.reports else 0,
            "savings_mean": savings_mean,
            "savings_final": self.reports[-1].savings if self.reports else 0.0,
            "underprotected_disk_days": self.underprotected_total,
            "emergency_plans": len(self.emergency_plan_ids),
            "max_transition_frac": self.max_transition_frac,
            "transition_read_bytes": self.total_read_bytes,
            "transition_write_bytes": self.total_write_bytes,
            "normal_lane_bytes": self.total_normal_bytes,
            "emergency_lane_bytes": self.total_emergency_bytes,
            "reencode_equivalent_bytes": self.reencode_equivalent_bytes,
            "transition_count": len(self.transitions),
            "invariant_violation": invariant_violation,
            "audit_ok": self.audit.ok,
            "underprotection": [
                {"rgroup": rid, "scheme": sch, "dgroup": dg, "disk_days": dd}
                for (rid, sch, dg), dd in sorted(self.underprotection_log.items())
            ],
        }


def run(trace: ClusterTrace, policy: PolicyKind, cfg: RunConfig) -> RunResult:
    """Replay the trace under one policy. Deterministic for fixed inputs."""
    return _Simulation(trace, policy, cfg).run()
