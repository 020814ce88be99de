"""Case/control cohorts for one prediction target.

The pipeline in :func:`build_cohort` runs in a fixed order:

1. keep only the allowed event kinds;
2. for patients with a target event, keep events strictly before
   ``first_target_day - holdoff_days``;
3. drop cases left with fewer than ``min_len`` events;
4. truncate to the first ``max_len`` events;
5. match ``controls_per_case`` controls per case from target-free patients
   (same kind filter and length rules);
6. split case groups (a case plus its controls) by the split ratios.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data import EventCode, EventKind, PatientRecord, Vocabulary, filter_kinds

SPLITS = ("train", "val", "test")


class CohortError(ValueError):
    pass


@dataclass
class CohortSpec:
    target_codes: tuple = ()
    allowed_kinds: tuple = ("diagnosis", "medication")
    min_len: int = 50
    max_len: int = 250
    controls_per_case: int = 2
    holdoff_days: int = 0
    split_ratios: tuple[int, int, int] = (7, 1, 2)
    match_age_tolerance_years: int = 5
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.target_codes, (str, EventCode)):
            self.target_codes = (self.target_codes,)
        self.target_codes = tuple(
            EventCode(t[0], EventKind(t[1])) if isinstance(t, (list, tuple)) else t
            for t in self.target_codes)
        self.allowed_kinds = tuple(EventKind(k).value for k in self.allowed_kinds)
        self.split_ratios = tuple(self.split_ratios)

    def validate(self) -> None:
        if not self.target_codes:
            raise CohortError("target_codes must be non-empty")
        if not self.allowed_kinds:
            raise CohortError("allowed_kinds must be non-empty")
        if self.min_len < 1 or self.min_len > self.max_len:
            raise CohortError(f"need 1 <= min_len <= max_len, got {self.min_len}, {self.max_len}")
        if self.controls_per_case < 1:
            raise CohortError("controls_per_case must be >= 1")
        if self.holdoff_days < 0:
            raise CohortError("holdoff_days must be >= 0")
        if len(self.split_ratios) != 3 or any(int(r) != r or r <= 0 for r in self.split_ratios):
            raise CohortError("split_ratios must be three positive integers")
        if self.match_age_tolerance_years < 0:
            raise CohortError("match_age_tolerance_years must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["target_codes"] = [t if isinstance(t, str) else [t.code, t.kind.value]
                             for t in self.target_codes]
        d["allowed_kinds"] = list(self.allowed_kinds)
        d["split_ratios"] = list(self.split_ratios)
        return d


@dataclass(frozen=True)
class LabeledSequence:
    patient_id: str
    label: int
    indices: tuple[int, ...]
    days: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.indices)


@dataclass
class CohortDataset:
    train: list[LabeledSequence] = field(default_factory=list)
    val: list[LabeledSequence] = field(default_factory=list)
    test: list[LabeledSequence] = field(default_factory=list)

    def split(self, name: str) -> list[LabeledSequence]:
        if name not in SPLITS:
            raise KeyError(name)
        return getattr(self, name)

    def counts(self) -> dict:
        out = {}
        for name in SPLITS:
            seqs = self.split(name)
            cases = sum(s.label for s in seqs)
            out[name] = {"cases": cases, "controls": len(seqs) - cases}
        return out

    @property
    def case_count(self) -> int:
        return sum(c["cases"] for c in self.counts().values())

    @property
    def control_count(self) -> int:
        return sum(c["controls"] for c in self.counts().values())

    def all(self) -> list[LabeledSequence]:
        return self.train + self.val + self.test


def _resolve_targets(spec: CohortSpec, vocab: Vocabulary) -> set[int]:
    out = set()
    for t in spec.target_codes:
        try:
            out.add(vocab.lookup(t) if isinstance(t, str) else vocab.index(t))
        except KeyError:
            raise CohortError(f"target code {t!r} is not in the vocabulary") from None
    return out


def _first_target_day(record: PatientRecord, targets: set[int]):
    for e in record.events:
        if e.code_index in targets:
            return e.day
    return None


def _to_sequence(record: PatientRecord, label: int, max_len: int) -> LabeledSequence:
    events = record.events[:max_len]
    return LabeledSequence(record.patient_id, label,
                           tuple(e.code_index for e in events), tuple(e.day for e in events))


def case_sequences(records: Iterable[PatientRecord], targets: set[int], spec: CohortSpec):
    """Steps 1-4 for the case group; returns (cases, target-free records)."""
    cases, negatives = [], []
    for rec in records:
        d0 = _first_target_day(rec, targets)
        if d0 is None:
            negatives.append(rec)
            continue
        rec = filter_kinds(rec, spec.allowed_kinds)
        cutoff = d0 - spec.holdoff_days
        kept = tuple(e for e in rec.events if e.day < cutoff)
        if len(kept) < spec.min_len:
            continue
        cases.append(PatientRecord(rec.patient_id, rec.sex, rec.birth_year, kept))
    return cases, negatives


class ControlPool:
    """Candidate controls as parallel arrays, sorted by patient id."""

    def __init__(self, candidates: Sequence):
        cands = sorted(candidates, key=lambda c: c.patient_id)
        self.ids = [c.patient_id for c in cands]
        self.items = cands
        self.sex = np.array([c.sex for c in cands], dtype=object)
        self.year = np.array([c.birth_year for c in cands], dtype=np.int64)
        self.length = np.array([len(c) for c in cands], dtype=np.int64)
        self.used = np.zeros(len(cands), dtype=bool)

    def __len__(self) -> int:
        return len(self.ids)

    def select(self, sex: str, birth_year: int, length: int, spec: CohortSpec) -> list[int]:
        """Greedy staged matching; marks and returns pool positions."""
        need = spec.controls_per_case
        free = ~self.used
        if free.sum() < need:
            raise CohortError(
                f"need {need} controls but only {int(free.sum())} unused candidates remain")
        age_gap = np.abs(self.year - birth_year)
        same_sex = self.sex == sex
        delta = np.abs(self.length - length)
        widest = int(age_gap[free].max()) if free.any() else 0
        chosen: list[int] = []
        taken = np.zeros(len(self), dtype=bool)
        for sex_rule in (True, False):
            tol = spec.match_age_tolerance_years
            while True:
                ok = free & ~taken & (age_gap <= tol)
                if sex_rule:
                    ok &= same_sex
                pos = np.flatnonzero(ok)
                # ties on length delta fall back to pool order (ascending patient id)
                pos = pos[np.argsort(delta[pos], kind="stable")][: need - len(chosen)]
                chosen.extend(int(p) for p in pos)
                taken[pos] = True
                if len(chosen) == need or tol >= widest:
                    break
                tol += 5
            if len(chosen) == need:
                break
        if len(chosen) < need:
            raise CohortError(f"only {len(chosen)} of {need} controls found after relaxation")
        self.used[chosen] = True
        return chosen


def match_controls(case, pool: Sequence, spec: CohortSpec) -> list[str]:
    """Pick ``controls_per_case`` control ids for ``case`` from ``pool``.

    ``case`` and pool entries need ``patient_id``, ``sex``, ``birth_year`` and
    a length. Candidates are restricted to the same sex and a birth year
    within the tolerance, then ordered by record-length difference and patient
    id. Too few candidates widens the age window by 5 years at a time, then
    drops the sex requirement; stricter matches are always used first.
    """
    cp = ControlPool(pool)
    picked = cp.select(case.sex, case.birth_year, len(case), spec)
    return [cp.ids[p] for p in picked]


def split_dataset(items: Sequence, ratios=(7, 1, 2), seed: int = 0):
    """Seeded shuffle, then floor-sized val/test splits with the rest in train."""
    n = len(items)
    if n < 10:
        raise CohortError(f"need at least 10 items to split, got {n}")
    ratios = tuple(int(r) for r in ratios)
    total = sum(ratios)
    n_val = n * ratios[1] // total
    n_test = n * ratios[2] // total
    n_train = n - n_val - n_test
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [items[i] for i in order]
    return (shuffled[:n_train], shuffled[n_train:n_train + n_val], shuffled[n_train + n_val:])


def _groups_to_dataset(groups_by_split) -> CohortDataset:
    return CohortDataset(*([s for g in groups for s in g] for groups in groups_by_split))


def build_cohort(records: Sequence[PatientRecord], vocab: Vocabulary, spec: CohortSpec) -> CohortDataset:
    spec.validate()
    if not records:
        raise CohortError("no records")
    targets = _resolve_targets(spec, vocab)
    cases, negatives = case_sequences(records, targets, spec)
    if not cases:
        raise CohortError("case group is empty")
    pool_records = []
    for rec in negatives:
        rec = filter_kinds(rec, spec.allowed_kinds)
        if len(rec) >= spec.min_len:
            pool_records.append(PatientRecord(rec.patient_id, rec.sex, rec.birth_year,
                                              rec.events[:spec.max_len]))
    need = spec.controls_per_case * len(cases)
    if len(pool_records) < need:
        raise CohortError(f"{len(cases)} cases need {need} controls but only "
                          f"{len(pool_records)} eligible (short by {need - len(pool_records)})")
    pool = ControlPool(pool_records)
    groups = []
    for case in sorted(cases, key=lambda r: r.patient_id):
        case_seq = _to_sequence(case, 1, spec.max_len)
        picked = pool.select(case.sex, case.birth_year, len(case_seq), spec)
        groups.append([case_seq] + [_to_sequence(pool.items[p], 0, spec.max_len) for p in picked])
    return _groups_to_dataset(split_dataset(groups, spec.split_ratios, spec.seed))


def apply_holdoff(dataset: CohortDataset, records: Sequence[PatientRecord], vocab: Vocabulary,
                  spec: CohortSpec) -> CohortDataset:
    """Re-cut the cases of an existing cohort with ``spec.holdoff_days``.

    Cases that fall below ``min_len`` are removed; controls are kept as they
    are, so the result usually needs :func:`rebalance_controls`.
    """
    spec.validate()
    targets = _resolve_targets(spec, vocab)
    by_id = {r.patient_id: r for r in records}
    cut = {c.patient_id: c for c in case_sequences(
        (by_id[s.patient_id] for s in dataset.all() if s.label == 1), targets, spec)[0]}
    out = CohortDataset()
    for name in SPLITS:
        kept = []
        for s in dataset.split(name):
            if s.label == 0:
                kept.append(s)
            elif s.patient_id in cut:
                kept.append(_to_sequence(cut[s.patient_id], 1, spec.max_len))
        setattr(out, name, kept)
    return out


def rebalance_controls(dataset: CohortDataset, spec: CohortSpec, seed: int | None = None) -> CohortDataset:
    """Drop surplus controls uniformly at random so each split is exactly k:1."""
    k = spec.controls_per_case
    if dataset.control_count < k * dataset.case_count:
        raise CohortError(f"{dataset.control_count} controls cannot cover "
                          f"{k} x {dataset.case_count} cases")
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    out = CohortDataset()
    for name in SPLITS:
        seqs = dataset.split(name)
        ctrl = [i for i, s in enumerate(seqs) if s.label == 0]
        n_cases = len(seqs) - len(ctrl)
        keep_n = k * n_cases
        if len(ctrl) < keep_n:
            raise CohortError(f"{name} split has {len(ctrl)} controls for {n_cases} cases")
        drop = set(rng.choice(ctrl, size=len(ctrl) - keep_n, replace=False).tolist()) if len(ctrl) > keep_n else set()
        setattr(out, name, [s for i, s in enumerate(seqs) if i not in drop])
    return out


def save_cohort(dataset: CohortDataset, spec: CohortSpec, path) -> Path:
    """Write the cohort JSON-lines file and its ``.summary.json`` sidecar."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for name in SPLITS:
            for s in dataset.split(name):
                fh.write(json.dumps({"patient_id": s.patient_id, "label": s.label,
                                     "indices": list(s.indices), "days": list(s.days),
                                     "split": name}) + "\n")
    summary = {"counts": dataset.counts(), "case_count": dataset.case_count,
               "control_count": dataset.control_count, "spec": spec.to_dict()}
    side = path.with_name(path.name + ".summary.json")
    side.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return side


def load_cohort(path) -> CohortDataset:
    out = CohortDataset()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                seq = LabeledSequence(str(obj["patient_id"]), int(obj["label"]),
                                      tuple(int(i) for i in obj["indices"]),
                                      tuple(int(d) for d in obj["days"]))
                split = obj["split"]
                if split not in SPLITS or seq.label not in (0, 1):
                    raise ValueError("bad split or label")
                if len(seq.indices) != len(seq.days):
                    raise ValueError("indices and days differ in length")
            except (ValueError, KeyError, TypeError) as exc:
                raise CohortError(f"{path}:{lineno}: {exc}") from None
            out.split(split).append(seq)
    return out
