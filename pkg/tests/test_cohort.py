import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ehrcnn.cohort import (CohortDataset, CohortError, CohortSpec, LabeledSequence, apply_holdoff,
                           build_cohort, load_cohort, match_controls, rebalance_controls,
                           save_cohort, split_dataset)
from ehrcnn.data import EventCode, EventKind, MedicalEvent, PatientRecord, Vocabulary

from conftest import record

N_CODES = 20
TARGET = N_CODES  # index of the target code


def vocab():
    codes = [EventCode(f"C{i}", EventKind.DIAGNOSIS) for i in range(N_CODES)]
    codes.append(EventCode("T", EventKind.DIAGNOSIS))
    return Vocabulary(tuple(codes), (1,) * len(codes))


def spec(**kw):
    base = dict(target_codes=("T",), min_len=5, max_len=12, seed=0)
    base.update(kw)
    return CohortSpec(**base)


def case(pid, n_before, d0=None, sex="F", year=1960, step=1):
    days = [i * step for i in range(n_before)]
    d0 = days[-1] + 1 if d0 is None else d0
    idx = [i % N_CODES for i in range(n_before)] + [TARGET]
    return record(pid, idx, days + [d0], sex=sex, birth_year=year)


def control(pid, n, sex="F", year=1960):
    return record(pid, [i % N_CODES for i in range(n)], sex=sex, birth_year=year)


def corpus(n_cases, n_controls, rng, min_events=3, max_events=20):
    recs = []
    for i in range(n_cases):
        n = int(rng.integers(min_events, max_events))
        recs.append(case(f"c{i:04d}", n, step=int(rng.integers(1, 30)), sex="FM"[i % 2],
                         year=int(rng.integers(1940, 1990))))
    for i in range(n_controls):
        recs.append(control(f"n{i:04d}", int(rng.integers(min_events, max_events)), sex="FM"[i % 2],
                            year=int(rng.integers(1940, 1990))))
    return recs


# --- worked examples ------------------------------------------------------------------

def test_short_case_excluded():
    filler = [case(f"f{i}", 70) for i in range(10)]
    recs = [case("a", 49), case("b", 50)] + filler + [control(f"n{i}", 60) for i in range(40)]
    ds = build_cohort(recs, vocab(), CohortSpec(target_codes=("T",), seed=0))
    ids = {s.patient_id for s in ds.all() if s.label == 1}
    assert ids == {"b"} | {r.patient_id for r in filler}


def test_case_truncated_to_first_250():
    recs = [case("a", 300)] + [control(f"n{i:02d}", 260) for i in range(30)]
    recs += [case(f"b{i}", 60) for i in range(10)]
    ds = build_cohort(recs, vocab(), CohortSpec(target_codes=("T",), seed=0))
    a = next(s for s in ds.all() if s.patient_id == "a")
    assert len(a) == 250
    assert list(a.days) == list(range(250))
    assert all(len(s) <= 250 for s in ds.all())


def test_holdoff_cutoff_is_strict():
    # one event per day from day 0; first target on day 400
    r = case("a", 400, d0=400)
    recs = [r] + [case(f"b{i}", 200) for i in range(10)] + [control(f"n{i}", 400) for i in range(30)]
    ds = build_cohort(recs, vocab(), CohortSpec(target_codes=("T",), holdoff_days=90, max_len=500, seed=0))
    a = next(s for s in ds.all() if s.patient_id == "a")
    assert max(a.days) == 309 and len(a) == 310


def test_match_two_exact_matches():
    pool = [control("x", 10), control("y", 10)]
    assert match_controls(control("q", 10), pool, spec()) == ["x", "y"]


def test_match_smallest_deltas():
    pool = [control("d3", 13), control("d10", 20), control("d1", 11)]
    assert match_controls(control("q", 10), pool, spec()) == ["d1", "d3"]


def test_match_tie_lower_id():
    pool = [control("p2", 12), control("p1", 12), control("p0", 8)]
    assert match_controls(control("q", 10), pool, spec(controls_per_case=1)) == ["p0"]
    assert match_controls(control("q", 10), pool[:2], spec(controls_per_case=1)) == ["p1"]


def test_match_relaxes_age_then_sex():
    pool = [control("old", 10, year=1950), control("male", 10, sex="M", year=1960),
            control("near", 10, year=1964)]
    s = spec(controls_per_case=2)
    # near is inside +-5; old needs the window widened to 10; male only after dropping sex
    assert match_controls(control("q", 10, year=1960), pool, s) == ["near", "old"]
    s3 = spec(controls_per_case=3)
    assert match_controls(control("q", 10, year=1960), pool, s3) == ["near", "old", "male"]
    with pytest.raises(CohortError):
        match_controls(control("q", 10), pool, spec(controls_per_case=4))


def test_split_sizes():
    assert [len(p) for p in split_dataset(list(range(100)))] == [70, 10, 20]
    assert [len(p) for p in split_dataset(list(range(101)))] == [71, 10, 20]
    assert split_dataset(list(range(50)), seed=3) == split_dataset(list(range(50)), seed=3)
    with pytest.raises(CohortError):
        split_dataset(list(range(9)))


def _ds(cases, controls):
    mk = lambda pid, y: LabeledSequence(pid, y, (0, 1, 2), (0, 1, 2))
    return CohortDataset(train=[mk(f"c{i}", 1) for i in range(cases)] +
                         [mk(f"n{i}", 0) for i in range(controls)])


def test_rebalance_examples():
    out = rebalance_controls(_ds(2105, 4500), spec(), seed=1)
    assert (out.case_count, out.control_count) == (2105, 4210)
    same = _ds(5, 10)
    assert rebalance_controls(same, spec()).train == same.train
    out = rebalance_controls(_ds(3, 7), spec(), seed=4)
    assert out.control_count == 6
    kept = {s.patient_id for s in out.train}
    assert len({f"n{i}" for i in range(7)} - kept) == 1
    assert rebalance_controls(_ds(3, 7), spec(), seed=4).train == out.train
    with pytest.raises(CohortError):
        rebalance_controls(_ds(4, 7), spec())


def test_errors():
    rng = np.random.default_rng(0)
    with pytest.raises(CohortError):
        build_cohort([control("a", 10)] * 12, vocab(), spec())  # no cases
    with pytest.raises(CohortError):
        build_cohort(corpus(10, 5, rng, 6, 8), vocab(), spec())  # too few controls
    with pytest.raises(CohortError):
        build_cohort([], vocab(), spec())
    with pytest.raises(CohortError):
        spec(min_len=10, max_len=5).validate()
    with pytest.raises(CohortError):
        build_cohort(corpus(10, 30, rng), vocab(), spec(target_codes=("NOPE",)))


def test_kind_filter_applies_to_cases_and_controls():
    def mixed(pid, n, target):
        ev = []
        for i in range(n):
            ev.append(MedicalEvent(i % N_CODES, 2 * i, EventKind.DIAGNOSIS))
            ev.append(MedicalEvent(i % N_CODES, 2 * i + 1, EventKind.MEDICATION))
        if target:
            ev.append(MedicalEvent(TARGET, 2 * n + 5, EventKind.DIAGNOSIS))
        return PatientRecord(pid, "F", 1960, tuple(ev))
    recs = [mixed(f"c{i}", 6, True) for i in range(10)] + [mixed(f"n{i}", 6, False) for i in range(20)]
    ds = build_cohort(recs, vocab(), spec(allowed_kinds=("diagnosis",)))
    assert all(len(s) == 6 and all(d % 2 == 0 for d in s.days) for s in ds.all())


def test_save_load(tmp_path):
    ds = build_cohort(corpus(20, 60, np.random.default_rng(1)), vocab(), spec())
    side = save_cohort(ds, spec(), tmp_path / "c.jsonl")
    assert load_cohort(tmp_path / "c.jsonl") == ds
    summary = json.loads(side.read_text())
    assert summary["control_count"] == 2 * summary["case_count"]
    assert summary["spec"]["target_codes"] == ["T"]


# --- properties -------------------------------------------------------------------------

@given(st.integers(0, 2**32 - 1), st.integers(10, 40))
def test_protocol_properties(seed, n_cases):
    rng = np.random.default_rng(seed)
    recs = corpus(n_cases, 3 * n_cases + 10, rng)
    by_id = {r.patient_id: r for r in recs}
    counts = []
    for h in (0, 5, 20):
        s = spec(holdoff_days=h, seed=seed)
        try:
            ds = build_cohort(recs, vocab(), s)
        except CohortError:
            counts.append(0)
            continue
        counts.append(ds.case_count)
        ids = [x.patient_id for x in ds.all()]
        assert len(ids) == len(set(ids))
        assert ds.control_count == 2 * ds.case_count
        for name in ("train", "val", "test"):
            c = ds.counts()[name]
            assert c["controls"] == 2 * c["cases"]
        g = ds.case_count
        assert ds.counts()["val"]["cases"] == g * 1 // 10
        assert ds.counts()["test"]["cases"] == g * 2 // 10
        for x in ds.all():
            assert s.min_len <= len(x) <= s.max_len
            assert TARGET not in x.indices
            if x.label == 1:
                d0 = next(e.day for e in by_id[x.patient_id].events if e.code_index == TARGET)
                assert max(x.days) < d0 - h
    assert counts[0] >= counts[1] >= counts[2]


def test_apply_holdoff_then_rebalance_matches_protocol():
    rng = np.random.default_rng(5)
    recs = corpus(60, 200, rng, 5, 25)
    base = build_cohort(recs, vocab(), spec())
    late = apply_holdoff(base, recs, vocab(), spec(holdoff_days=15))
    assert late.case_count <= base.case_count
    out = rebalance_controls(late, spec(), seed=2)
    assert out.control_count == 2 * out.case_count
    for name in ("train", "val", "test"):
        c = out.counts()[name]
        assert c["controls"] == 2 * c["cases"]
