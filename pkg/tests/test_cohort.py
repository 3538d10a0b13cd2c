import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from regimetest import (CohortValidationError, EmptyGrid, counting_views, event_grid,
                        load_cohort, truncation_time, write_cohort)
from regimetest.cohort import cohort_to_csv, read_cohort_csv

from builders import cohort_from_subjects, random_two_stage_subjects, single_stage_design, \
    two_stage_design
from oracle import Subj

HEADER = "subject_id,kappa,u,delta,a1,a2,t2,x1,x2\n"


def _read(text, design=None):
    return read_cohort_csv(io.StringIO(text), design or two_stage_design())


class TestLoad:
    def test_three_rows(self, tmp_path):
        path = tmp_path / "c.csv"
        path.write_text(HEADER + "p1,1,3.5,1,0,,,0.2,\np2,2,4,0,1,1,1.5,-1,1\np3,1,2,1,1,,,0.0,\n")
        c = load_cohort(path, two_stage_design())
        assert c.n == 3
        assert list(c.kappa) == [1, 2, 1]
        assert c.treatments[1, 1] == 1 and c.treatments[1, 0] == -1
        assert c.times[1, 1] == 1.5 and math.isinf(c.times[1, 0])
        assert math.isnan(c.covariates["x2"][0])

    def test_decision_time_after_u(self):
        with pytest.raises(CohortValidationError) as info:
            _read(HEADER + "p1,1,3.5,1,0,,,0.2,\np2,2,4,0,1,1,4.5,-1,1\n")
        assert info.value.row == 2
        assert "t_kappa <= u" in str(info.value)
        assert "row 2" in str(info.value)

    @pytest.mark.parametrize("row, needle", [
        ("p1,1,3.5,1,0,,,0.2,\np1,1,2,1,1,,,0.1,\n", "duplicate"),
        ("p1,3,3.5,1,0,,,0.2,\n", "kappa"),
        ("p1,1,3.5,2,0,,,0.2,\n", "delta"),
        ("p1,1,-1,1,0,,,0.2,\n", "u must"),
        ("p1,1,3.5,1,5,,,0.2,\n", "not an option"),
        ("p1,1,3.5,1,0,1,,0.2,\n", "must be empty"),
        ("p1,2,3.5,1,0,1,,0.2,1\n", "t2 is empty"),
        ("p1,1,3.5,1,0,,,,\n", "covariate x1 is missing"),
        ("p1,2,3.5,1,0,1,1,0.3,\n", "covariate x2 is missing"),
        ("p1,1,abc,1,0,,,0.2,\n", "not a finite number"),
        ("p1,1,3.5,1\n", "fields"),
    ])
    def test_rejections(self, row, needle):
        with pytest.raises(CohortValidationError, match=needle):
            _read(HEADER + row)

    def test_missing_column(self):
        with pytest.raises(CohortValidationError, match="missing column"):
            _read("subject_id,kappa,u,delta,a1\np1,1,2,1,0\n")

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        c = cohort_from_subjects(two_stage_design(), random_two_stage_subjects(rng, 40))
        path = tmp_path / "c.csv"
        write_cohort(c, path)
        again = load_cohort(path, c.design)
        assert again == c
        write_cohort(again, tmp_path / "d.csv")
        assert (tmp_path / "d.csv").read_bytes() == path.read_bytes()

    def test_plain_decimal_output(self):
        design = single_stage_design()
        c = cohort_from_subjects(design, [Subj(1e-7, 1, [0]), Subj(2.5e12, 0, [1])])
        text = cohort_to_csv(c)
        assert "e" not in text.split("\n", 1)[1].lower()


class TestGrid:
    def test_dedup_and_truncation(self):
        design = single_stage_design()
        subjects = [Subj(t, d, [0]) for t, d in [(2, 1), (2, 1), (5, 1), (9, 1), (3, 0)]]
        c = cohort_from_subjects(design, subjects)
        assert list(event_grid(c, 6)) == [2.0, 5.0]

    def test_no_events(self):
        c = cohort_from_subjects(single_stage_design(), [Subj(1, 0, [0]), Subj(2, 0, [1])])
        with pytest.raises(EmptyGrid):
            event_grid(c, 10)

    def test_truncation_rule(self):
        design = single_stage_design()
        c = cohort_from_subjects(design, [Subj(t, 1, [t % 2]) for t in range(1, 101)])
        # ceil(0.02 * 100) = 2 subjects at risk at the earliest: u = 99
        assert truncation_time(c, 0.02) == 99.0
        assert truncation_time(c, 0.10) == 91.0

    def test_counting_views(self):
        assert counting_views(Subj(5, 1, [0]), 5) == (1, 1)
        assert counting_views(Subj(3, 0, [0]), 5) == (0, 0)
        assert counting_views(Subj(9, 1, [0]), 5) == (0, 1)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 30), st.booleans()), min_size=1, max_size=40),
       st.floats(0.5, 31), st.floats(0.5, 31))
def test_grid_and_counting_properties(rows, L1, L2):
    design = single_stage_design()
    subjects = [Subj(float(t), int(d), [0]) for t, d in rows]
    c = cohort_from_subjects(design, subjects)
    lo, hi = sorted((L1, L2))
    try:
        g_hi = list(event_grid(c, hi))
    except EmptyGrid:
        return
    try:
        g_lo = list(event_grid(c, lo))
    except EmptyGrid:
        g_lo = []
    assert g_hi[:len(g_lo)] == g_lo
    assert all(a < b for a, b in zip(g_hi, g_hi[1:]))
    for s in subjects:
        views = [counting_views(s, u) for u in g_hi]
        assert sum(v[0] for v in views) in (0, 1)
        ys = [v[1] for v in views]
        assert all(a >= b for a, b in zip(ys, ys[1:]))
