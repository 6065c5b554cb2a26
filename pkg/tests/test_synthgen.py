import csv
import dataclasses
from datetime import date

import numpy as np
import pytest

from labembed.corpus import Abnormality
from labembed.synthgen import (
    CLASS_LABELS,
    NUMERIC_GRADES,
    CohortRecord,
    EmptyInput,
    GeneratorConfig,
    InfeasibleConfig,
    SurvivalCurve,
    SynthPatient,
    _calibrate_intercept,
    _snap_to_encounter,
    assign_prediction_dates,
    expected_positive_fraction,
    generate_cohort,
    generate_panels,
    kaplan_meier,
    read_cohort_csv,
    survival_by_group,
    write_class_table,
    write_cohort_csv,
    write_survival_csv,
)

CATEGORICAL_GRADES = {Abnormality.N, Abnormality.A, Abnormality.AA, Abnormality.U}


class TestConfigValidation:
    @pytest.mark.parametrize(
        "overrides",
        [
            {"n_patients": 0},
            {"n_panels": 1},
            {"codes_per_panel": (2, 9)},
            {"codes_per_panel": (5, 11)},
            {"codes_per_panel": (8, 5)},
            {"numeric_cutpoints": (-1.0, -1.0, 1.0, 2.0)},
            {"target_positive_rate": 0.0},
            {"target_positive_rate": 1.0},
            {"order_rate_range": (0.0, 0.5)},
            {"order_rate_range": (0.5, 0.2)},
            {"p_A": 0.6, "p_AA": 0.5},
            {"p_U": -0.1},
            {"visits_min": 0},
            {"gain": 0.0},
            {"terminal_ramp_days": 0.0},
            {"terminal_ramp_gain": -0.1},
            {"death_offset_days": (0, 10)},
            {"death_offset_days": (10, 5)},
            {"interval_support": (0, 540)},
            {"horizon_days": 0},
            {"followup_days": 0},
        ],
    )
    def test_rejects_bad_values(self, overrides):
        with pytest.raises(ValueError):
            GeneratorConfig(**overrides).validate()

    def test_default_is_valid(self):
        GeneratorConfig().validate()


class TestPanels:
    def test_deterministic(self):
        cfg = GeneratorConfig(n_patients=10, n_panels=6)
        a = generate_panels(cfg, seed=42)
        b = generate_panels(cfg, seed=42)
        assert a == b
        c = generate_panels(cfg, seed=43)
        assert c != a

    def test_structure(self):
        cfg = GeneratorConfig(n_patients=10, n_panels=20)
        panels, profiles = generate_panels(cfg, seed=0)
        assert len(panels) == 20
        lo, hi = cfg.codes_per_panel
        all_codes = [c for p in panels for c in p.codes]
        assert len(all_codes) == len(set(all_codes))
        r0, r1 = cfg.order_rate_range
        for i, p in enumerate(panels):
            assert lo <= len(p.codes) <= hi
            assert r0 <= p.order_rate <= r1
            assert p.class_label == CLASS_LABELS[i % len(CLASS_LABELS)]
        assert set(profiles) == set(all_codes)
        for prof in profiles.values():
            assert prof.gain > 0
            if prof.kind == "numeric":
                assert prof.direction in (-1, 1)
            else:
                assert prof.kind == "categorical"
                assert prof.direction == 0


class TestCohortGeneration:
    def test_deterministic(self, small_cohort):
        events2, patients2 = generate_cohort(small_cohort["config"], seed=7)
        assert events2 == small_cohort["events"]
        for p, q in zip(small_cohort["patients"], patients2):
            assert p.patient_id == q.patient_id
            assert p.death_date == q.death_date
            assert p.encounter_dates == q.encounter_dates
            assert np.array_equal(p.severity_trajectory, q.severity_trajectory)

    def test_panels_ordered_as_units(self, small_cohort):
        panels, _ = generate_panels(small_cohort["config"], seed=7)
        by_pid = {p.panel_id: set(p.codes) for p in panels}
        orders = {}
        for e in small_cohort["events"]:
            orders.setdefault(e.order_id, []).append(e.loinc)
        for order_id, codes in orders.items():
            panel_id = order_id.rsplit("-", 1)[1]
            assert sorted(codes) == sorted(by_pid[panel_id])

    def test_grade_kind_invariants(self, small_cohort):
        _, profiles = generate_panels(small_cohort["config"], seed=7)
        for e in small_cohort["events"]:
            if profiles[e.loinc].kind == "numeric":
                assert e.abnormality in NUMERIC_GRADES
            else:
                assert e.abnormality in CATEGORICAL_GRADES

    def test_high_grades_come_from_sicker_visits(self, small_cohort):
        # direction +1 numeric codes: z rises with severity, so the severity of
        # visits emitting HH must exceed that of visits emitting N on average
        _, profiles = generate_panels(small_cohort["config"], seed=7)
        sev = {}
        for p in small_cohort["patients"]:
            for v, s in enumerate(p.severity_trajectory):
                sev[f"{p.patient_id}-v{v:02d}"] = s
        hh, nn = [], []
        for e in small_cohort["events"]:
            prof = profiles[e.loinc]
            if prof.kind != "numeric" or prof.direction != 1:
                continue
            if e.abnormality is Abnormality.HH:
                hh.append(sev[e.visit_id])
            elif e.abnormality is Abnormality.N:
                nn.append(sev[e.visit_id])
        assert len(hh) > 10
        assert np.mean(hh) > np.mean(nn)

    def test_diagnostics_and_death_roster(self, small_cohort):
        diag = small_cohort["diagnostics"]
        cfg = small_cohort["config"]
        assert diag["n_patients"] == cfg.n_patients
        n_dead = sum(p.death_date is not None for p in small_cohort["patients"])
        assert diag["n_deceased"] == n_dead
        assert abs(diag["expected_positive_rate"] - cfg.target_positive_rate) <= cfg.calibration_tolerance
        for p in small_cohort["patients"]:
            if p.death_date is None:
                continue
            gap = p.death_date.toordinal() - max(d.toordinal() for d in p.encounter_dates)
            assert cfg.death_offset_days[0] <= gap <= cfg.death_offset_days[1]

    def test_terminal_ramp_raises_deceased_severity(self):
        cfg_ramp = GeneratorConfig(n_patients=120, n_panels=8)
        cfg_flat = dataclasses.replace(cfg_ramp, terminal_ramp_gain=0.0)
        _, ramped = generate_cohort(cfg_ramp, seed=5)
        _, flat = generate_cohort(cfg_flat, seed=5)
        # calibration ignores the ramp, so the death roster is unchanged
        assert [p.death_date for p in ramped] == [p.death_date for p in flat]
        bumped = 0
        for r, f in zip(ramped, flat):
            if r.death_date is None:
                assert np.array_equal(r.severity_trajectory, f.severity_trajectory)
            else:
                assert np.all(r.severity_trajectory >= f.severity_trajectory - 1e-12)
                death_day = r.death_date.toordinal()
                last = max(d.toordinal() for d in r.encounter_dates)
                if death_day - last < cfg_ramp.terminal_ramp_days and f.severity_trajectory[-1] < 1.0:
                    assert r.severity_trajectory[-1] > f.severity_trajectory[-1]
                    bumped += 1
        assert bumped > 0


class TestExpectedPositiveFraction:
    @staticmethod
    def _brute(enc_days, death_day, support, horizon):
        enc = np.asarray(sorted(d for d in enc_days if d < death_day), dtype=np.int64)
        hits = 0
        for u in range(support[0], support[1] + 1):
            j = int(np.argmin(np.abs(enc - (death_day - u))))
            if death_day - enc[j] <= horizon:
                hits += 1
        return hits / (support[1] - support[0] + 1)

    @pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
    def test_matches_enumeration(self, seed):
        rng = np.random.default_rng(seed)
        n_enc = int(rng.integers(1, 9))
        enc = np.unique(rng.integers(0, 700, n_enc))
        death = int(enc.max()) + int(rng.integers(1, 31))
        support = (1, int(rng.integers(60, 600)))
        horizon = int(rng.integers(10, 200))
        got = expected_positive_fraction(enc, death, support, horizon)
        assert got == pytest.approx(self._brute(enc, death, support, horizon), abs=1e-12)

    def test_single_close_encounter_is_certain(self):
        assert expected_positive_fraction(np.array([100]), 110, (1, 540), 90) == 1.0

    def test_single_far_encounter_is_never_positive(self):
        assert expected_positive_fraction(np.array([100]), 300, (1, 540), 90) == 0.0

    def test_requires_prior_encounter(self):
        with pytest.raises(EmptyInput):
            expected_positive_fraction(np.array([200, 300]), 150, (1, 540), 90)


class TestInterceptCalibration:
    def test_exact_small_case(self):
        thresholds = np.array([0.0, 1.0, 2.0])
        pos = np.array([0.2, 0.2, 0.2])
        ok = np.array([True, True, True])
        # k deaths -> rate sum(pi[:k]) / (k + alive among survivors) = 0.2k/3
        b0, rate, k = _calibrate_intercept(thresholds, pos, ok, target=0.2 / 3, tol=1e-9)
        assert k == 1
        assert rate == pytest.approx(0.2 / 3, abs=1e-12)
        assert 0.0 < b0 < 1.0
        assert int(np.sum(b0 > thresholds)) == k

    def test_all_dead_solution(self):
        thresholds = np.array([1.0, 1.0])
        pos = np.array([1.0, 0.0])
        ok = np.array([False, False])
        b0, rate, k = _calibrate_intercept(thresholds, pos, ok, target=0.5, tol=1e-9)
        assert k == 2 and rate == 0.5 and b0 > 1.0

    def test_tied_thresholds_block_the_cut(self):
        # k=1 would hit the target exactly but needs an intercept strictly
        # between two equal thresholds, which cannot exist
        thresholds = np.array([1.0, 1.0])
        pos = np.array([1.0, 0.0])
        ok = np.array([False, False])
        with pytest.raises(InfeasibleConfig):
            _calibrate_intercept(thresholds, pos, ok, target=1.0, tol=0.1)

    def test_unreachable_target(self):
        thresholds = np.array([0.0, 1.0, 2.0])
        pos = np.array([0.2, 0.2, 0.2])
        ok = np.array([True, True, True])
        with pytest.raises(InfeasibleConfig):
            _calibrate_intercept(thresholds, pos, ok, target=0.5, tol=0.01)


def _patient(pid, enc_days, death_day=None):
    return SynthPatient(
        patient_id=pid,
        severity_trajectory=np.zeros(len(enc_days)),
        death_date=date.fromordinal(death_day) if death_day else None,
        encounter_dates=[date.fromordinal(d) for d in enc_days],
    )


class TestPredictionDates:
    def test_snap_prefers_earlier_on_tie(self):
        assert _snap_to_encounter(np.array([10, 20]), 15) == 0
        assert _snap_to_encounter(np.array([10, 20]), 16) == 1

    def test_deceased_single_prior_encounter(self):
        p = _patient("a", [700100], death_day=700150)
        recs = assign_prediction_dates([p], seed=0)
        assert len(recs) == 1
        assert recs[0].prediction_date.toordinal() == 700100
        assert recs[0].label_dead_90d is True

    def test_deceased_far_encounter_is_negative(self):
        p = _patient("a", [700100], death_day=700400)
        recs = assign_prediction_dates([p], seed=0)
        assert recs[0].label_dead_90d is False

    def test_deceased_without_prior_encounter_excluded(self):
        p = _patient("a", [700100], death_day=700050)
        excl = {}
        recs = assign_prediction_dates([p], seed=0, exclusions=excl)
        assert recs == []
        assert excl["deceased_no_prior_encounter"] == 1

    def test_alive_needs_followup(self):
        short = _patient("s", [700000, 700100])
        excl = {}
        recs = assign_prediction_dates([short], seed=0, exclusions=excl)
        assert recs == []
        assert excl["alive_no_followup"] == 1

    def test_alive_prediction_has_followup_after_it(self):
        p = _patient("a", [700000, 700200, 700500])
        for seed in range(5):
            recs = assign_prediction_dates([p], seed=seed)
            assert len(recs) == 1
            r = recs[0]
            assert r.label_dead_90d is False
            # only encounters with >= 365 later followup are eligible
            assert 700500 - r.prediction_date.toordinal() >= 365

    def test_validates_window(self):
        with pytest.raises(ValueError):
            assign_prediction_dates([], window_days=0)

    def test_window_contains_only_in_range_events(self, small_cohort):
        by_patient_dates = {
            p.patient_id: {d.toordinal() for d in p.encounter_dates}
            for p in small_cohort["patients"]
        }
        assert any(r.observation_events for r in small_cohort["records"])
        for r in small_cohort["records"]:
            pred = r.prediction_date.toordinal()
            assert pred in by_patient_dates[r.patient_id]
            for e in r.observation_events:
                assert e.patient_id == r.patient_id
                d = e.timestamp.date().toordinal()
                assert pred - 30 <= d <= pred

    def test_deterministic(self, small_cohort):
        again = assign_prediction_dates(
            small_cohort["patients"], seed=3, events=small_cohort["events"]
        )
        assert [(r.patient_id, r.prediction_date, r.label_dead_90d) for r in again] == [
            (r.patient_id, r.prediction_date, r.label_dead_90d) for r in small_cohort["records"]
        ]


class TestKaplanMeier:
    def test_worked_example(self):
        curve = kaplan_meier([5.0, 7.0, 10.0], [True, False, True])
        assert curve.times.tolist() == [5.0, 10.0]
        assert curve.survival == pytest.approx([2.0 / 3.0, 0.0])

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_product_limit_recomputation(self, seed):
        rng = np.random.default_rng(seed)
        durs = rng.integers(1, 15, 40).astype(float)
        obs = rng.random(40) < 0.6
        curve = kaplan_meier(durs, obs)
        s = 1.0
        expect = []
        for t in sorted({d for d, o in zip(durs, obs) if o}):
            at_risk = sum(1 for d in durs if d >= t)
            deaths = sum(1 for d, o in zip(durs, obs) if o and d == t)
            s *= 1.0 - deaths / at_risk
            expect.append((t, s))
        assert curve.times.tolist() == [t for t, _ in expect]
        assert curve.survival == pytest.approx([s for _, s in expect])
        assert np.all(np.diff(curve.survival) <= 1e-12)

    def test_all_censored_gives_empty_curve(self):
        curve = kaplan_meier([3.0, 9.0], [False, False])
        assert curve.times.size == 0 and curve.survival.size == 0

    def test_input_validation(self):
        with pytest.raises(EmptyInput):
            kaplan_meier([], [])
        with pytest.raises(ValueError):
            kaplan_meier([1.0, 2.0], [True])
        with pytest.raises(ValueError):
            kaplan_meier([-1.0], [True])


class TestSurvivalOutputs:
    def test_groups_and_monotonicity(self, small_cohort):
        curves = survival_by_group(small_cohort["records"], small_cohort["patients"])
        assert "deceased" in curves and "alive" in curves
        dec = curves["deceased"]
        assert dec.times.size > 0
        assert np.all(np.diff(dec.survival) <= 1e-12)
        assert np.all(dec.times >= 0)
        # every alive record is censored, so its curve has no event times
        assert curves["alive"].times.size == 0

    def test_csv_gets_anchor_row(self, tmp_path):
        curves = {
            "deceased": SurvivalCurve(np.array([5.0]), np.array([0.5])),
            "alive": SurvivalCurve(np.array([]), np.array([])),
        }
        path = tmp_path / "surv.csv"
        write_survival_csv(curves, path)
        rows = list(csv.reader(path.open()))
        assert rows[0] == ["t", "survival", "group"]
        assert rows[1] == ["0", "1", "alive"]
        assert rows[2] == ["0", "1", "deceased"]
        assert rows[3] == ["5", "0.5", "deceased"]


class TestCohortCsv:
    def test_roundtrip(self, tmp_path, small_cohort):
        path = tmp_path / "cohort.csv"
        write_cohort_csv(small_cohort["records"], path)
        back = read_cohort_csv(path)
        assert len(back) == len(small_cohort["records"])
        for a, b in zip(back, small_cohort["records"]):
            assert a.patient_id == b.patient_id
            assert a.prediction_date == b.prediction_date
            assert a.label_dead_90d == b.label_dead_90d

    def test_rejects_bad_header(self, tmp_path):
        path = tmp_path / "cohort.csv"
        path.write_text("who,when,dead\n")
        with pytest.raises(ValueError):
            read_cohort_csv(path)

    def test_class_table(self, tmp_path, small_cohort):
        panels, _ = generate_panels(small_cohort["config"], seed=7)
        path = tmp_path / "classes.csv"
        write_class_table(panels, path)
        rows = list(csv.reader(path.open()))
        assert rows[0] == ["loinc", "class_label"]
        want = {c: p.class_label for p in panels for c in p.codes}
        assert {r[0]: r[1] for r in rows[1:]} == want
        assert len(rows) - 1 == len(want)
