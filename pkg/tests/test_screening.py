"""Subject screening, cohort metrics, and the partition summary."""

from __future__ import annotations

import io
import json
from dataclasses import replace

import numpy as np
import pytest

from conftest import random_store
from lcscreen.core_types import Dataset, ModelConfig, SubjectRecord
from lcscreen.predictive import GridSpec
from lcscreen.sampler import DrawStore
from lcscreen.screening import (dahl_best_configuration, evaluate_cohort,
                                metrics_to_json, screen_subject,
                                write_report_csv)

SCHEDULE = (2.0, 4.0, 6.0, 8.0)
GRID = GridSpec.from_widths(-40.0, 40.0, 2.0, -40.0, 40.0, 2.0)


def _store(seed: int = 0) -> DrawStore:
    return random_store(np.random.default_rng(seed), n_draws=10, n_classes=3)


def _subject(series, sid="S1", site=1):
    return SubjectRecord(sid, site, 1.0, -1.0, tuple(series), tuple(series))


def test_screen_full_history_predicts_next_scheduled_visit():
    store = _store()
    subject = _subject([(2.0, 0.5), (4.0, -0.5)])
    r = screen_subject(subject, store, GRID, 0.8, "hdr", SCHEDULE)
    assert r.future_time == 6.0
    assert r.verdict == "not_yet_observed"
    assert r.observed is None
    assert r.region.p_sum > 0.8


def test_screen_observed_subject_gets_verdict():
    store = _store()
    subject = _subject([(2.0, 0.5), (4.0, -0.5), (6.0, 0.1)])
    r = screen_subject(subject, store, GRID, 0.8, "branch", SCHEDULE,
                       history_k=2)
    assert r.future_time == 6.0
    assert r.observed == (0.1, 0.1)
    assert r.verdict in ("inside", "outside")
    assert r.region_mass_at_observed > 0.0


def test_screen_baseline_only():
    store = _store()
    subject = _subject([(2.0, 0.5)])
    r = screen_subject(subject, store, GRID, 0.8, "hdr", SCHEDULE,
                       history_k=0)
    assert r.future_time == 2.0
    assert r.observed == (0.5, 0.5)


def test_screen_far_outlier_is_flagged():
    store = _store()
    outlier = SubjectRecord("S9", 1, 1.0, -1.0,
                            ((2.0, 0.1), (4.0, 39.0)),
                            ((2.0, 0.1), (4.0, 39.0)))
    r = screen_subject(outlier, store, GRID, 0.8, "hdr", SCHEDULE,
                       history_k=1)
    assert r.future_time == 4.0
    assert r.verdict == "outside"


def test_off_grid_observation():
    store = _store()
    subject = SubjectRecord("S2", 1, 1.0, -1.0,
                            ((2.0, 0.0), (4.0, 90.0)), ((2.0, 0.0), (4.0, 1.0)))
    r = screen_subject(subject, store, GRID, 0.8, "hdr", SCHEDULE,
                       history_k=1)
    assert r.verdict == "off_grid"
    assert r.region_mass_at_observed == 0.0


def _cohort(n=8):
    rng = np.random.default_rng(4)
    subjects = []
    for i in range(n):
        series = tuple((t, float(rng.normal(0, 1))) for t in (2.0, 4.0, 6.0))
        subjects.append(SubjectRecord(f"C{i}", i % 2 + 1, 1.0, -1.0,
                                      series, series))
    return Dataset(subjects=tuple(subjects), n_sites=2)


def test_evaluate_cohort_first_k():
    store = _store()
    summary, results = evaluate_cohort(_cohort(), store, GRID, 0.8, "hdr",
                                       ("first_k", 2), SCHEDULE)
    assert summary.n_subjects == len(results) == 8
    assert summary.n_observed == 8
    assert 0.0 <= summary.coverage_proportion <= 1.0
    assert summary.bias == pytest.approx(
        np.mean([r.region.p_sum - 0.8 for r in results]))
    assert summary.rmse >= abs(summary.bias) - 1e-12


def test_evaluate_cohort_thread_invariance():
    store = _store()
    s1, r1 = evaluate_cohort(_cohort(), store, GRID, 0.8, "branch",
                             ("first_k", 1), SCHEDULE, threads=1)
    s4, r4 = evaluate_cohort(_cohort(), store, GRID, 0.8, "branch",
                             ("first_k", 1), SCHEDULE, threads=4)
    assert s1 == s4
    assert [r.subject_id for r in r1] == [r.subject_id for r in r4]
    assert [r.region.cells for r in r1] == [r.region.cells for r in r4]


def test_evaluate_cohort_baseline_eligibility():
    store = _store()
    short = SubjectRecord("X", 1, 0.0, 0.0, ((4.0, 1.0),), ((4.0, 1.0),))
    ds = Dataset(subjects=_cohort().subjects + (short,), n_sites=2)
    summary, _ = evaluate_cohort(ds, store, GRID, 0.8, "hdr",
                                 ("baseline",), SCHEDULE)
    assert summary.n_subjects == 8  # the schedule[0]-less subject is skipped


def _partition_store(zs: list[list[int]]) -> DrawStore:
    base = _store().draws[0]
    draws = tuple(replace(base, z=np.asarray(z, dtype=np.intp)) for z in zs)
    return DrawStore(config=ModelConfig(n_classes=3), draws=draws)


def test_dahl_hand_example():
    # co-clustering matrix of these draws: p12 = 2/3, p13 = p23 = 1/3.
    # losses: draw1 ({1,2}{3}): (1-2/3)^2*2 + (0-1/3)^2*2*2 all off-diagonal
    zs = [[1, 1, 2], [1, 1, 3], [1, 2, 1]]
    store = _partition_store(zs)
    z = dahl_best_configuration(store)
    # draws 0 and 1 encode the same partition {1,2}{3}; the earliest wins
    np.testing.assert_array_equal(z, [1, 1, 2])


def test_dahl_relabel_invariance():
    zs = [[1, 1, 2], [2, 2, 1], [1, 2, 2]]
    permuted = [[3, 3, 1], [1, 1, 2], [2, 3, 3]]
    a = dahl_best_configuration(_partition_store(zs))
    b = dahl_best_configuration(_partition_store(permuted))
    # same partition up to labels: co-membership patterns agree
    assert [(x == y) for x, y in zip(a, a)] == [(x == y) for x, y in zip(b, b)]
    assert (a[0] == a[1]) == (b[0] == b[1])
    assert (a[0] == a[2]) == (b[0] == b[2])


def test_dahl_unanimous_draws():
    zs = [[2, 2, 1]] * 5
    z = dahl_best_configuration(_partition_store(zs))
    np.testing.assert_array_equal(z, [2, 2, 1])


def test_report_csv_and_metrics_json():
    store = _store()
    summary, results = evaluate_cohort(_cohort(4), store, GRID, 0.8, "hdr",
                                       ("first_k", 2), SCHEDULE)
    buf = io.StringIO()
    write_report_csv(results, buf)
    lines = buf.getvalue().strip().split("\n")
    assert lines[0] == ("subject_id,site,future_time,algorithm,target,"
                        "p_sum,observed_x,observed_y,verdict,cell_mass")
    assert len(lines) == 5
    # the report allows exact recomputation of the summary statistics
    p_sums = [float(line.split(",")[5]) for line in lines[1:]]
    assert np.mean([p - 0.8 for p in p_sums]) == pytest.approx(summary.bias)

    payload = json.loads(metrics_to_json([summary]))
    assert payload[0]["algorithm"] == "hdr"
    assert payload[0]["coverage_proportion"] == summary.coverage_proportion


def test_unknown_algorithm_and_scenario_rejected():
    store = _store()
    with pytest.raises(ValueError, match="algorithm"):
        screen_subject(_subject([(2.0, 0.0)]), store, GRID, 0.8, "best",
                       SCHEDULE)
    with pytest.raises(ValueError, match="scenario"):
        evaluate_cohort(_cohort(), store, GRID, 0.8, "hdr", ("bogus",),
                        SCHEDULE)
