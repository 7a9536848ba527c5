import numpy as np
import pytest

from pennma.data_model import CovariateSpec, DataError, PatientRecord, build_dataset
from pennma.risk import PeriodGrid, choose_boundaries, collapse, expand, save_risk_table

from conftest import two_trial_records


def single_patient_dataset(time, event, covariates=None, schema=None):
    records = [
        PatientRecord("T1", "A", time, event, covariates or {}),
        PatientRecord("T1", "B", 50.0, 0, covariates or {}),
    ]
    return build_dataset(records, schema or {}, "A")


class TestChooseBoundaries:
    def test_one_period_no_cuts(self):
        ds = two_trial_records()
        grid = choose_boundaries(ds, 1)
        assert grid.cut_points == ()
        assert grid.n_periods == 1

    def test_median_of_four_event_times(self):
        records = []
        for i, t in enumerate((1.0, 2.0, 3.0, 4.0)):
            records.append(PatientRecord("T1", "A" if i % 2 else "B", t, 1, {}))
        ds = build_dataset(records, {}, "A")
        grid = choose_boundaries(ds, 2)
        assert grid.cut_points == (2.5,)

    def test_too_few_distinct_event_times(self):
        records = [
            PatientRecord("T1", "A", 1.0, 1, {}),
            PatientRecord("T1", "B", 1.0, 1, {}),
            PatientRecord("T1", "A", 9.0, 0, {}),
        ]
        ds = build_dataset(records, {}, "A")
        with pytest.raises(DataError, match="distinct event times"):
            choose_boundaries(ds, 4)

    def test_explicit_cut_points(self):
        ds = two_trial_records()
        grid = choose_boundaries(ds, 3, [10.0, 20.0])
        assert grid.cut_points == (10.0, 20.0)
        with pytest.raises(DataError, match="cut points"):
            choose_boundaries(ds, 3, [10.0])

    def test_invalid_grids(self):
        with pytest.raises(DataError):
            PeriodGrid((-1.0,))
        with pytest.raises(DataError):
            PeriodGrid((2.0, 2.0))


class TestExpand:
    def test_event_in_third_period(self):
        ds = single_patient_dataset(2.5, 1)
        table = expand(ds, PeriodGrid((1.0, 2.0, 3.0)))
        rows = [r for r in table.rows if r.arm_treatment == "A"]
        assert [(r.period, r.xi, r.d) for r in rows] == [
            (1, 1.0, 0),
            (2, 1.0, 0),
            (3, 0.5, 1),
        ]

    def test_censored_in_first_period(self):
        ds = single_patient_dataset(0.4, 0)
        table = expand(ds, PeriodGrid((1.0, 2.0, 3.0)))
        rows = [r for r in table.rows if r.arm_treatment == "A"]
        assert [(r.period, r.xi, r.d) for r in rows] == [(1, 0.4, 0)]

    def test_event_exactly_on_cut_goes_to_earlier_period(self):
        ds = single_patient_dataset(2.0, 1)
        table = expand(ds, PeriodGrid((1.0, 2.0, 3.0)))
        rows = [r for r in table.rows if r.arm_treatment == "A"]
        assert [(r.period, r.xi, r.d) for r in rows] == [(1, 1.0, 0), (2, 1.0, 1)]

    def test_exposure_and_event_conservation(self):
        ds = two_trial_records(n_per_arm=25)
        grid = choose_boundaries(ds, 4)
        table = expand(ds, grid)
        total_time = sum(r.followup_time for r in ds.records)
        assert table.total_exposure == pytest.approx(total_time, rel=1e-12)
        assert table.total_events == sum(r.event for r in ds.records)

    def test_expansion_is_per_patient_local(self):
        ds = two_trial_records(n_per_arm=10)
        grid = PeriodGrid((30.0, 90.0))
        whole = expand(ds, grid)
        # expanding each trial's records separately and concatenating matches
        parts = []
        for tid in ("T1", "T2"):
            sub = build_dataset(
                [r for r in ds.records if r.trial_id == tid],
                ds.covariate_schema,
                "A",
            )
            parts.extend(expand(sub, grid).rows)
        assert sorted(parts, key=repr) == sorted(whole.rows, key=repr)


class TestCollapse:
    def test_identical_rows_sum(self):
        records = [
            PatientRecord("T1", "A", 1.0, 0, {"sex": 1.0}) for _ in range(10)
        ] + [PatientRecord("T1", "B", 1.0, 0, {"sex": 1.0})]
        ds = build_dataset(records, {"sex": CovariateSpec("binary")}, "A")
        table = expand(ds, PeriodGrid(()))
        collapsed = collapse(table, ds)
        a_rows = [r for r in collapsed.rows if r.arm_treatment == "A"]
        assert len(a_rows) == 1
        assert a_rows[0].d == 0
        assert a_rows[0].xi == pytest.approx(10.0)

    def test_conservation_and_group_bound(self):
        ds = two_trial_records(n_per_arm=30)
        grid = choose_boundaries(ds, 3)
        table = expand(ds, grid)
        collapsed = collapse(table, ds)
        assert collapsed.total_events == table.total_events
        assert collapsed.total_exposure == pytest.approx(table.total_exposure, rel=1e-12)
        # trials x arms x periods x patterns
        assert len(collapsed.rows) <= 2 * 2 * 3 * 2
        assert collapsed.collapsed

    def test_refuses_continuous_covariates(self):
        records = [
            PatientRecord("T1", "A", 1.0, 1, {"age": 60.0}),
            PatientRecord("T1", "B", 2.0, 0, {"age": 50.0}),
        ]
        ds = build_dataset(records, {"age": CovariateSpec("continuous")}, "A")
        table = expand(ds, PeriodGrid(()))
        with pytest.raises(DataError, match="continuous"):
            collapse(table, ds)

    def test_export_csv(self, tmp_path):
        ds = two_trial_records(n_per_arm=5)
        table = collapse(expand(ds, PeriodGrid((50.0,))), ds)
        out = tmp_path / "risk.csv"
        save_risk_table(out, table)
        header = out.read_text().splitlines()[0]
        assert header == "trial,period,treatment_arm,sex,d,xi"


class TestCollapseFitEquivalence:
    def test_coefficients_match_to_1e8(self):
        from pennma.design import ModelConfig, build_problem
        from pennma.selection import build_penalty
        from pennma.solver import fit

        ds = two_trial_records(n_per_arm=40)
        grid = choose_boundaries(ds, 3)
        expanded = expand(ds, grid)
        collapsed = collapse(expanded, ds)
        config = ModelConfig(heterogeneity="none", include_inconsistency=False)
        p1 = build_problem(expanded, ds.network, ds.trials, config)
        p2 = build_problem(collapsed, ds.network, ds.trials, config)
        assert p1.names == p2.names
        pen = build_penalty(p1, {}, 0.0, {})
        r1 = fit(p1, pen, tol_kkt=1e-10)
        r2 = fit(p2, pen, tol_kkt=1e-10)
        assert np.abs(r1.theta_hat - r2.theta_hat).max() < 1e-8
