"""Synthetic lab-event cohort generator with planted structure.

Three kinds of ground truth are planted so downstream evaluations have known
answers at desk scale:

* co-occurrence: codes are partitioned into panels, a visit orders a panel as
  a unit, so codes of one panel share contexts;
* ordinality: a per-visit severity score shifts a latent gaussian lab value
  through fixed cut points, so single-grade abnormality tokens (L/H/A) occur
  at less extreme latent values than double-grade ones (LL/HH/AA);
* outcome: the probability of death is logistic in mean severity, with the
  intercept calibrated so the 90-day positive rate of the labeled cohort hits
  a configured target.

Also hosts the Kaplan-Meier estimator used for survival reporting.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta

import numpy as np
from scipy.special import ndtri

from .corpus import Abnormality, LabEvent
from .util import derive_seed

CLASS_LABELS = [
    "hematology",
    "basic chemistry",
    "liver function",
    "renal function",
    "coagulation",
    "cardiac markers",
    "lipid panel",
    "endocrine",
    "immunology",
    "blood gas",
    "urinalysis",
    "inflammation",
    "nutrition",
    "toxicology",
]

NUMERIC_GRADES = [Abnormality.LL, Abnormality.L, Abnormality.N, Abnormality.H, Abnormality.HH]


class InfeasibleConfig(ValueError):
    pass


class EmptyInput(ValueError):
    pass


@dataclass(frozen=True)
class CodeProfile:
    """Latent response model of one lab code.

    Numeric codes report a graded value: z = direction*gain*severity + noise,
    discretized through the numeric cut points into LL/L/N/H/HH. Categorical
    codes report N/A/AA from a one-sided latent z = gain*severity + noise,
    with an independent chance of U (result unknown).
    """

    code: str
    kind: str  # 'numeric' or 'categorical'
    direction: int  # +1 or -1 for numeric, 0 for categorical
    gain: float


@dataclass
class PanelSpec:
    """A group of codes ordered together, with a display class for plots."""

    panel_id: str
    codes: list[str]
    class_label: str
    order_rate: float


@dataclass
class SynthPatient:
    patient_id: str
    severity_trajectory: np.ndarray
    death_date: date | None
    encounter_dates: list[date]


@dataclass
class CohortRecord:
    """One labeled example: predict death within the horizon from the window's labs."""

    patient_id: str
    prediction_date: date
    label_dead_90d: bool
    observation_events: list[LabEvent] = field(default_factory=list)


@dataclass
class SurvivalCurve:
    times: np.ndarray
    survival: np.ndarray


@dataclass
class GeneratorConfig:
    n_patients: int = 2000
    n_panels: int = 24
    codes_per_panel: tuple[int, int] = (5, 9)
    # visits per patient: visits_min + Poisson(visits_poisson_mean)
    visits_min: int = 2
    visits_poisson_mean: float = 3.0
    visit_gap_mean_days: float = 100.0
    study_start: date = date(2015, 1, 1)
    first_visit_spread_days: int = 365
    order_rate_range: tuple[float, float] = (0.06, 0.28)
    p_categorical: float = 0.25
    gain: float = 3.2
    gain_jitter: tuple[float, float] = (0.85, 1.2)
    # cut points on the latent standard-normal scale, strictly increasing:
    # (LL|L, L|N, N|H, H|HH). Wide outer cuts keep the off-direction double
    # grade of a code too rare to clear the vocabulary min count.
    numeric_cutpoints: tuple[float, float, float, float] = (-3.2, -1.1, 1.1, 3.2)
    p_A: float = 0.08
    p_AA: float = 0.02
    p_U: float = 0.03
    severity_init_alpha: float = 1.3
    severity_init_beta: float = 4.5
    severity_step_sd: float = 0.12
    severity_scale: float = 1.0
    # terminal decline: deceased patients' emitted severity ramps up linearly
    # over the last terminal_ramp_days before death, by up to terminal_ramp_gain
    terminal_ramp_days: float = 120.0
    terminal_ramp_gain: float = 0.6
    mortality_slope: float = 6.0
    target_positive_rate: float = 0.03
    calibration_tolerance: float = 0.01
    death_offset_days: tuple[int, int] = (1, 30)
    interval_support: tuple[int, int] = (1, 540)
    horizon_days: int = 90
    followup_days: int = 365

    def validate(self) -> None:
        if self.n_patients < 1 or self.n_panels < 2:
            raise ValueError("need n_patients >= 1 and n_panels >= 2")
        lo, hi = self.codes_per_panel
        if not (3 <= lo <= hi <= 10):
            raise ValueError("codes_per_panel must sit within [3, 10]")
        c = self.numeric_cutpoints
        if not all(a < b for a, b in zip(c, c[1:])):
            raise ValueError("numeric cut points must be strictly increasing")
        if not 0.0 < self.target_positive_rate < 1.0:
            raise ValueError("target positive rate must be in (0, 1)")
        r0, r1 = self.order_rate_range
        if not (0.0 < r0 <= r1 <= 1.0):
            raise ValueError("order_rate_range must sit within (0, 1]")
        if self.p_A + self.p_AA >= 1.0 or self.p_U >= 1.0:
            raise ValueError("categorical probabilities out of range")
        if min(self.p_A, self.p_AA, self.p_U) < 0.0:
            raise ValueError("categorical probabilities must be >= 0")
        if self.visits_min < 1:
            raise ValueError("visits_min must be >= 1")
        if self.gain <= 0 or self.severity_scale < 0:
            raise ValueError("gain must be > 0 and severity_scale >= 0")
        if self.terminal_ramp_days <= 0 or self.terminal_ramp_gain < 0:
            raise ValueError("terminal ramp needs days > 0 and gain >= 0")
        if self.death_offset_days[0] < 1 or self.death_offset_days[0] > self.death_offset_days[1]:
            raise ValueError("death offset range must satisfy 1 <= lo <= hi")
        if self.interval_support[0] < 1 or self.interval_support[0] > self.interval_support[1]:
            raise ValueError("interval support must satisfy 1 <= lo <= hi")
        if self.horizon_days < 1 or self.followup_days < 1:
            raise ValueError("horizon and followup must be >= 1 days")


def generate_panels(config: GeneratorConfig, seed: int) -> tuple[list[PanelSpec], dict[str, CodeProfile]]:
    """Draw the panel layout and per-code response profiles.

    Deterministic in (config, seed) and independent of patient generation, so
    callers can recover the exact panel structure used by generate_cohort.
    """
    config.validate()
    rng = np.random.default_rng(derive_seed(seed, "panels"))
    panels: list[PanelSpec] = []
    profiles: dict[str, CodeProfile] = {}
    code_serial = 0
    lo, hi = config.codes_per_panel
    r0, r1 = config.order_rate_range
    for p in range(config.n_panels):
        n_codes = int(rng.integers(lo, hi + 1))
        codes = []
        for _ in range(n_codes):
            code = f"{1000 + code_serial}-{(3 * code_serial + 7) % 10}"
            code_serial += 1
            codes.append(code)
            gain = config.gain * float(rng.uniform(*config.gain_jitter))
            if rng.random() < config.p_categorical:
                profiles[code] = CodeProfile(code=code, kind="categorical", direction=0, gain=gain)
            else:
                direction = 1 if rng.random() < 0.5 else -1
                profiles[code] = CodeProfile(code=code, kind="numeric", direction=direction, gain=gain)
        panels.append(
            PanelSpec(
                panel_id=f"panel{p:02d}",
                codes=codes,
                class_label=CLASS_LABELS[p % len(CLASS_LABELS)],
                order_rate=float(rng.uniform(r0, r1)),
            )
        )
    return panels, profiles


def expected_positive_fraction(
    encounter_days: np.ndarray,
    death_day: int,
    interval_support: tuple[int, int] = (1, 540),
    horizon_days: int = 90,
) -> float:
    """Probability that a uniform interval-to-death draw yields a positive label.

    The draw picks interval u uniformly on the integer support, forms the
    candidate day death - u, and snaps it to the nearest encounter strictly
    before death (ties to the earlier one). The label is positive when the
    snapped encounter lies within horizon_days of death. Computed exactly by
    measuring each qualifying encounter's snapping cell.
    """
    enc = np.asarray(sorted(int(d) for d in encounter_days if int(d) < death_day), dtype=np.int64)
    if enc.size == 0:
        raise EmptyInput("no encounter strictly before death")
    lo_c = death_day - interval_support[1]
    hi_c = death_day - interval_support[0]
    count = 0
    for j in range(enc.size):
        if death_day - enc[j] > horizon_days:
            continue
        left = -(10**12) if j == 0 else (enc[j - 1] + enc[j]) // 2 + 1
        right = 10**12 if j == enc.size - 1 else (enc[j] + enc[j + 1]) // 2
        a = max(left, lo_c)
        b = min(right, hi_c)
        if a <= b:
            count += b - a + 1
    return count / (interval_support[1] - interval_support[0] + 1)


def _alive_eligible(encounter_days: np.ndarray, followup_days: int) -> bool:
    # an alive patient is labelable when some encounter has a later encounter
    # at least followup_days after it (evidence of survival past the horizon)
    return encounter_days.size >= 2 and (encounter_days[-1] - encounter_days[0]) >= followup_days


def _calibrate_intercept(
    thresholds: np.ndarray,
    pos_fraction: np.ndarray,
    alive_ok: np.ndarray,
    target: float,
    tol: float,
) -> tuple[float, float, int]:
    """Choose the logistic intercept hitting the target expected positive rate.

    Patient i dies iff intercept > thresholds[i], so sweeping the count of
    deaths k over the sorted thresholds enumerates every achievable cohort and
    its expected positive rate in closed form.
    """
    order = np.argsort(thresholds, kind="stable")
    c = thresholds[order]
    pi_sorted = pos_fraction[order]
    a_sorted = alive_ok[order].astype(np.float64)
    n = c.size
    prefix_pi = np.concatenate([[0.0], np.cumsum(pi_sorted)])
    suffix_a = np.concatenate([np.cumsum(a_sorted[::-1])[::-1], [0.0]])
    ks = np.arange(n + 1)
    denom = ks + suffix_a
    with np.errstate(invalid="ignore", divide="ignore"):
        rates = np.where(denom > 0, prefix_pi / np.maximum(denom, 1e-300), np.nan)
    dev = np.abs(rates - target)
    dev = np.where(np.isnan(dev), np.inf, dev)
    # an intercept strictly between c[k-1] and c[k] must exist for the cut to
    # be realizable; equal adjacent thresholds make that k unreachable
    for k in range(1, n):
        if c[k - 1] == c[k]:
            dev[k] = np.inf
    best_k = int(np.argmin(dev))
    if not np.isfinite(dev[best_k]) or dev[best_k] > tol:
        achieved = rates[best_k] if np.isfinite(dev[best_k]) else float("nan")
        raise InfeasibleConfig(
            f"cannot reach positive rate {target:.4f} within {tol:.4f}; "
            f"closest achievable {achieved:.4f}"
        )
    if best_k == 0:
        b0 = float(c[0] - 1.0) if n else 0.0
    elif best_k == n:
        b0 = float(c[-1] + 1.0)
    else:
        b0 = float(0.5 * (c[best_k - 1] + c[best_k]))
    return b0, float(rates[best_k]), best_k


def _severity_path(rng: np.random.Generator, n_visits: int, config: GeneratorConfig) -> np.ndarray:
    s = np.empty(n_visits)
    s[0] = rng.beta(config.severity_init_alpha, config.severity_init_beta)
    if n_visits > 1:
        steps = rng.normal(0.0, config.severity_step_sd, n_visits - 1)
        for v in range(1, n_visits):
            s[v] = min(1.0, max(0.0, s[v - 1] + steps[v - 1]))
    return s * config.severity_scale


def _patient_skeleton(rng: np.random.Generator, config: GeneratorConfig):
    """First block of per-patient draws: everything needed for calibration."""
    n_visits = config.visits_min + int(rng.poisson(config.visits_poisson_mean))
    start = config.study_start.toordinal() + int(rng.integers(0, config.first_visit_spread_days))
    gaps = 1 + np.floor(rng.exponential(config.visit_gap_mean_days, n_visits - 1)).astype(np.int64)
    days = start + np.concatenate([[0], np.cumsum(gaps)]).astype(np.int64)
    severity = _severity_path(rng, n_visits, config)
    u_death = min(max(float(rng.random()), 1e-12), 1.0 - 1e-12)
    off_lo, off_hi = config.death_offset_days
    death_offset = int(rng.integers(off_lo, off_hi + 1))
    return days, severity, u_death, death_offset


def _emit_patient_events(
    rng: np.random.Generator,
    patient_id: str,
    days: np.ndarray,
    severity: np.ndarray,
    panels: list[PanelSpec],
    panel_codes: list[tuple[list, list]],
    config: GeneratorConfig,
    cat_cut_hi: float,
    cat_cut_lo: float,
    events: list[LabEvent],
) -> None:
    cuts = np.asarray(config.numeric_cutpoints)
    order_rates = np.array([p.order_rate for p in panels])
    order_draws = rng.random((len(days), len(panels)))
    for v in range(len(days)):
        visit_id = f"{patient_id}-v{v:02d}"
        stamp = datetime.combine(date.fromordinal(int(days[v])), datetime.min.time())
        s = severity[v]
        for p_idx, panel in enumerate(panels):
            if order_draws[v, p_idx] >= order_rates[p_idx]:
                continue
            order_id = f"{visit_id}-{panel.panel_id}"
            numeric, categorical = panel_codes[p_idx]
            if numeric:
                codes_n, dirs, gains = numeric
                z = dirs * gains * s + rng.normal(size=len(codes_n))
                grades = np.searchsorted(cuts, z)
                for code, g in zip(codes_n, grades):
                    events.append(
                        LabEvent(patient_id, visit_id, order_id, stamp, code, NUMERIC_GRADES[int(g)])
                    )
            if categorical:
                codes_c, gains_c = categorical
                u = rng.random(len(codes_c))
                z = gains_c * s + rng.normal(size=len(codes_c))
                for code, ui, zi in zip(codes_c, u, z):
                    if ui < config.p_U:
                        abn = Abnormality.U
                    elif zi > cat_cut_hi:
                        abn = Abnormality.AA
                    elif zi > cat_cut_lo:
                        abn = Abnormality.A
                    else:
                        abn = Abnormality.N
                    events.append(LabEvent(patient_id, visit_id, order_id, stamp, code, abn))


def generate_cohort(
    config: GeneratorConfig,
    seed: int,
    diagnostics: dict | None = None,
) -> tuple[list[LabEvent], list[SynthPatient]]:
    """Generate the full event stream and patient roster.

    Two passes over a per-patient random substream: the first draws visit
    skeletons (dates, severities, mortality uniforms), after which the
    mortality intercept is calibrated against the target positive rate; the
    second continues each substream to emit lab events. Deterministic in
    (config, seed) and independent of patient evaluation order.
    """
    config.validate()
    panels, profiles = generate_panels(config, seed)
    patient_seed = derive_seed(seed, "patients")

    # per-panel code arrays, split by kind, in panel order
    panel_codes = []
    for panel in panels:
        nums = [c for c in panel.codes if profiles[c].kind == "numeric"]
        cats = [c for c in panel.codes if profiles[c].kind == "categorical"]
        numeric = None
        if nums:
            numeric = (
                nums,
                np.array([profiles[c].direction for c in nums], dtype=float),
                np.array([profiles[c].gain for c in nums]),
            )
        categorical = None
        if cats:
            categorical = (cats, np.array([profiles[c].gain for c in cats]))
        panel_codes.append((numeric, categorical))

    cat_cut_hi = float(ndtri(1.0 - config.p_AA))
    cat_cut_lo = float(ndtri(1.0 - config.p_A - config.p_AA))

    rngs = [np.random.default_rng((patient_seed, i)) for i in range(config.n_patients)]
    skeletons = [_patient_skeleton(rngs[i], config) for i in range(config.n_patients)]

    thresholds = np.empty(config.n_patients)
    pos_fraction = np.empty(config.n_patients)
    alive_ok = np.empty(config.n_patients, dtype=bool)
    for i, (days, severity, u_death, death_offset) in enumerate(skeletons):
        mean_sev = float(np.mean(severity))
        thresholds[i] = np.log(u_death / (1.0 - u_death)) - config.mortality_slope * mean_sev
        death_day = int(days[-1]) + death_offset
        pos_fraction[i] = expected_positive_fraction(
            days, death_day, config.interval_support, config.horizon_days
        )
        alive_ok[i] = _alive_eligible(days, config.followup_days)

    b0, expected_rate, n_dead = _calibrate_intercept(
        thresholds, pos_fraction, alive_ok, config.target_positive_rate, config.calibration_tolerance
    )
    if diagnostics is not None:
        diagnostics.update(
            intercept=b0,
            expected_positive_rate=expected_rate,
            n_deceased=n_dead,
            n_alive_eligible=int(alive_ok[thresholds >= b0].sum()),
            n_patients=config.n_patients,
        )

    events: list[LabEvent] = []
    patients: list[SynthPatient] = []
    for i, (days, severity, u_death, death_offset) in enumerate(skeletons):
        patient_id = f"p{i:05d}"
        dies = b0 > thresholds[i]
        death_date = date.fromordinal(int(days[-1]) + death_offset) if dies else None
        if dies:
            # terminal decline: emitted severity ramps toward death
            death_day = int(days[-1]) + death_offset
            closeness = np.maximum(0.0, 1.0 - (death_day - days) / config.terminal_ramp_days)
            severity = np.minimum(1.0, severity + config.terminal_ramp_gain * closeness)
        patients.append(
            SynthPatient(
                patient_id=patient_id,
                severity_trajectory=severity,
                death_date=death_date,
                encounter_dates=[date.fromordinal(int(d)) for d in days],
            )
        )
        _emit_patient_events(
            rngs[i], patient_id, days, severity, panels, panel_codes, config, cat_cut_hi, cat_cut_lo, events
        )
    return events, patients


def _snap_to_encounter(enc_days: np.ndarray, candidate: int) -> int:
    """Index of the encounter nearest to candidate; ties go to the earlier one."""
    return int(np.argmin(np.abs(enc_days - candidate)))


def assign_prediction_dates(
    patients: list[SynthPatient],
    window_days: int = 30,
    horizon_days: int = 90,
    seed: int = 0,
    interval_support: tuple[int, int] = (1, 540),
    followup_days: int = 365,
    events: list[LabEvent] | None = None,
    exclusions: dict | None = None,
) -> list[CohortRecord]:
    """Pick one prediction date per labelable patient and attach the label.

    Deceased: draw an interval-to-death uniformly on the integer support and
    snap death - interval to the nearest encounter strictly before death.
    Alive: draw uniformly among encounters followed by another encounter at
    least followup_days later. Patients with no eligible date are skipped and
    counted in `exclusions` rather than raised.
    """
    if window_days < 1 or horizon_days < 1:
        raise ValueError("window_days and horizon_days must be >= 1")
    rng = np.random.default_rng(seed)
    events_by_patient: dict[str, list[LabEvent]] = {}
    if events is not None:
        for e in events:
            events_by_patient.setdefault(e.patient_id, []).append(e)

    records: list[CohortRecord] = []
    for patient in patients:
        enc_days = np.array(sorted(d.toordinal() for d in patient.encounter_dates), dtype=np.int64)
        if patient.death_date is not None:
            death_day = patient.death_date.toordinal()
            prior = enc_days[enc_days < death_day]
            if prior.size == 0:
                if exclusions is not None:
                    exclusions["deceased_no_prior_encounter"] = exclusions.get("deceased_no_prior_encounter", 0) + 1
                continue
            interval = int(rng.integers(interval_support[0], interval_support[1] + 1))
            pred_day = int(prior[_snap_to_encounter(prior, death_day - interval)])
            label = (death_day - pred_day) <= horizon_days
        else:
            last = enc_days[-1]
            eligible = enc_days[(last - enc_days) >= followup_days]
            if eligible.size == 0:
                if exclusions is not None:
                    exclusions["alive_no_followup"] = exclusions.get("alive_no_followup", 0) + 1
                continue
            pred_day = int(eligible[int(rng.integers(0, eligible.size))])
            label = False
        pred_date = date.fromordinal(pred_day)
        window: list[LabEvent] = []
        if events is not None:
            lo = pred_day - window_days
            for e in events_by_patient.get(patient.patient_id, ()):
                d = e.timestamp.date().toordinal()
                if lo <= d <= pred_day:
                    window.append(e)
        records.append(
            CohortRecord(
                patient_id=patient.patient_id,
                prediction_date=pred_date,
                label_dead_90d=bool(label),
                observation_events=window,
            )
        )
    return records


def kaplan_meier(durations, event_observed) -> SurvivalCurve:
    """Product-limit survival estimate over distinct observed-event times."""
    durations = np.asarray(durations, dtype=float)
    observed = np.asarray(event_observed, dtype=bool)
    if durations.size == 0:
        raise EmptyInput("no durations")
    if durations.shape != observed.shape:
        raise ValueError("durations and event_observed must have equal length")
    if np.any(durations < 0):
        raise ValueError("durations must be >= 0")
    event_times = np.unique(durations[observed])
    times = []
    survival = []
    s = 1.0
    for t in event_times:
        at_risk = int(np.sum(durations >= t))
        deaths = int(np.sum(observed & (durations == t)))
        s *= 1.0 - deaths / at_risk
        times.append(float(t))
        survival.append(s)
    return SurvivalCurve(times=np.asarray(times), survival=np.asarray(survival))


def survival_by_group(records: list[CohortRecord], patients: list[SynthPatient]) -> dict[str, SurvivalCurve]:
    """Survival from the prediction date, separately for deceased and alive patients.

    Deceased patients contribute an observed death at death - prediction date;
    alive patients are censored at their last encounter.
    """
    by_id = {p.patient_id: p for p in patients}
    dur_dead, dur_alive = [], []
    for r in records:
        p = by_id[r.patient_id]
        pred = r.prediction_date.toordinal()
        if p.death_date is not None:
            dur_dead.append(p.death_date.toordinal() - pred)
        else:
            dur_alive.append(max(d.toordinal() for d in p.encounter_dates) - pred)
    curves: dict[str, SurvivalCurve] = {}
    if dur_dead:
        curves["deceased"] = kaplan_meier(dur_dead, [True] * len(dur_dead))
    if dur_alive:
        curves["alive"] = kaplan_meier(dur_alive, [False] * len(dur_alive))
    return curves


def write_cohort_csv(records: list[CohortRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["patient_id", "prediction_date", "label"])
        for r in records:
            writer.writerow([r.patient_id, r.prediction_date.isoformat(), int(r.label_dead_90d)])


def read_cohort_csv(path) -> list[CohortRecord]:
    records = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != ["patient_id", "prediction_date", "label"]:
            raise ValueError(f"bad cohort header: {header!r}")
        for row in reader:
            records.append(
                CohortRecord(
                    patient_id=row[0],
                    prediction_date=date.fromisoformat(row[1]),
                    label_dead_90d=bool(int(row[2])),
                )
            )
    return records


def write_class_table(panels: list[PanelSpec], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["loinc", "class_label"])
        for panel in panels:
            for code in panel.codes:
                writer.writerow([code, panel.class_label])


def write_survival_csv(curves: dict[str, SurvivalCurve], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["t", "survival", "group"])
        for group in sorted(curves):
            curve = curves[group]
            if curve.times.size == 0 or curve.times[0] > 0:
                writer.writerow(["0", "1", group])
            for t, s in zip(curve.times, curve.survival):
                writer.writerow(["%g" % t, "%.6g" % s, group])
