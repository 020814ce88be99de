"""Patients, events and vocabularies, plus the JSON-lines ingestion format.

Records come in two flavours. :class:`RawPatientRecord` holds events keyed by
their code strings, exactly as read from disk. :meth:`Vocabulary.encode`
turns it into a :class:`PatientRecord` whose events carry dense vocabulary
indices and are ordered by ``(day, code_index)``, so that same-day events are
listed in ascending index order.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence


class ParseError(ValueError):
    """A malformed line in one of the input files."""

    def __init__(self, path, lineno: int, message: str):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {message}")


class EmptyVocabularyError(ValueError):
    pass


class EventKind(str, Enum):
    DIAGNOSIS = "diagnosis"
    MEDICATION = "medication"


ALL_KINDS = frozenset(EventKind)


class EventCode(NamedTuple):
    code: str
    kind: EventKind

    @classmethod
    def make(cls, code: str, kind) -> "EventCode":
        if not isinstance(code, str) or not code:
            raise ValueError("event code must be a non-empty string")
        return cls(code, EventKind(kind))


class RawEvent(NamedTuple):
    code: EventCode
    day: int


class MedicalEvent(NamedTuple):
    code_index: int
    day: int
    kind: EventKind


@dataclass(frozen=True)
class RawPatientRecord:
    patient_id: str
    sex: str
    birth_year: int
    events: tuple[RawEvent, ...] = ()


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    sex: str
    birth_year: int
    events: tuple[MedicalEvent, ...] = ()

    @property
    def indices(self) -> list[int]:
        return [e.code_index for e in self.events]

    @property
    def days(self) -> list[int]:
        return [e.day for e in self.events]

    def __len__(self) -> int:
        return len(self.events)


@dataclass(frozen=True)
class Vocabulary:
    """Dense index space over retained event codes.

    ``codes[i]`` is the code at index ``i``; ``counts[i]`` its corpus count.
    """

    codes: tuple[EventCode, ...]
    counts: tuple[int, ...]
    min_count: int = 1
    code_to_index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.codes) != len(self.counts):
            raise ValueError("codes and counts differ in length")
        mapping = {c: i for i, c in enumerate(self.codes)}
        if len(mapping) != len(self.codes):
            raise ValueError("duplicate code in vocabulary")
        object.__setattr__(self, "code_to_index", mapping)

    def __len__(self) -> int:
        return len(self.codes)

    def index(self, code: EventCode) -> int:
        return self.code_to_index[code]

    def lookup(self, code: str, kind=None) -> int:
        """Index of ``code``; ``kind`` may be omitted when the string is unambiguous."""
        if kind is not None:
            return self.code_to_index[EventCode.make(code, kind)]
        hits = [i for c, i in self.code_to_index.items() if c.code == code]
        if not hits:
            raise KeyError(code)
        if len(hits) > 1:
            raise KeyError(f"{code!r} is ambiguous across kinds; pass kind")
        return hits[0]

    def index_to_code(self, index: int) -> EventCode:
        return self.codes[index]

    def encode(self, record: RawPatientRecord) -> PatientRecord:
        """Map codes to indices, drop unknown codes, order by (day, index)."""
        events = []
        for ev in record.events:
            idx = self.code_to_index.get(ev.code)
            if idx is not None:
                events.append(MedicalEvent(idx, ev.day, ev.code.kind))
        events.sort(key=lambda e: (e.day, e.code_index))
        return PatientRecord(record.patient_id, record.sex, record.birth_year, tuple(events))

    def encode_all(self, records: Iterable[RawPatientRecord]) -> list[PatientRecord]:
        return [self.encode(r) for r in records]

    def decode(self, record: PatientRecord) -> RawPatientRecord:
        events = tuple(RawEvent(self.codes[e.code_index], e.day) for e in record.events)
        return RawPatientRecord(record.patient_id, record.sex, record.birth_year, events)


def build_vocabulary(records: Iterable[RawPatientRecord], min_count: int = 5) -> Vocabulary:
    """Keep codes seen at least ``min_count`` times.

    Indices follow descending count; equal counts are ordered by code string
    and then kind.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counter: Counter = Counter()
    for rec in records:
        counter.update(ev.code for ev in rec.events)
    kept = [(c, n) for c, n in counter.items() if n >= min_count]
    if not kept:
        raise EmptyVocabularyError(f"no event code occurs at least {min_count} times")
    kept.sort(key=lambda cn: (-cn[1], cn[0].code, cn[0].kind.value))
    return Vocabulary(tuple(c for c, _ in kept), tuple(n for _, n in kept), min_count)


def filter_kinds(record: PatientRecord, allowed_kinds) -> PatientRecord:
    allowed = {EventKind(k) for k in allowed_kinds}
    if not allowed:
        raise ValueError("allowed_kinds must be non-empty")
    if allowed >= ALL_KINDS:
        return record
    events = tuple(e for e in record.events if e.kind in allowed)
    return PatientRecord(record.patient_id, record.sex, record.birth_year, events)


# --- JSON-lines I/O -------------------------------------------------------

def _json_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(path, lineno, f"invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise ParseError(path, lineno, "expected a JSON object")
            yield lineno, obj


def _field(obj, name, typ, path, lineno):
    if name not in obj:
        raise ParseError(path, lineno, f"missing field {name!r}")
    value = obj[name]
    if typ is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ParseError(path, lineno, f"field {name!r} must be an integer")
    if typ is str and not isinstance(value, str):
        raise ParseError(path, lineno, f"field {name!r} must be a string")
    return value


def load_patients(patients_path, events_path) -> list[RawPatientRecord]:
    """Read the patients and events files into raw records.

    Records keep patients-file order. Events are stably sorted by day; the
    final same-day order is fixed once a vocabulary assigns indices.
    Duplicate event rows are kept.
    """
    demo: dict[str, tuple[str, int]] = {}
    for lineno, obj in _json_lines(patients_path):
        pid = _field(obj, "patient_id", str, patients_path, lineno)
        sex = _field(obj, "sex", str, patients_path, lineno)
        if sex not in ("F", "M"):
            raise ParseError(patients_path, lineno, f"sex must be 'F' or 'M', got {sex!r}")
        year = _field(obj, "birth_year", int, patients_path, lineno)
        if pid in demo:
            raise ParseError(patients_path, lineno, f"duplicate patient_id {pid!r}")
        demo[pid] = (sex, year)

    events: dict[str, list[RawEvent]] = {pid: [] for pid in demo}
    for lineno, obj in _json_lines(events_path):
        pid = _field(obj, "patient_id", str, events_path, lineno)
        code = _field(obj, "code", str, events_path, lineno)
        kind = _field(obj, "kind", str, events_path, lineno)
        day = _field(obj, "day", int, events_path, lineno)
        if not code:
            raise ParseError(events_path, lineno, "empty event code")
        try:
            kind = EventKind(kind)
        except ValueError:
            raise ParseError(events_path, lineno, f"unknown event kind {kind!r}") from None
        if day < 0:
            raise ParseError(events_path, lineno, "day must be >= 0")
        if pid not in events:
            raise ParseError(events_path, lineno, f"unknown patient_id {pid!r}")
        events[pid].append(RawEvent(EventCode(code, kind), day))

    out = []
    for pid, (sex, year) in demo.items():
        evs = sorted(events[pid], key=lambda e: e.day)
        out.append(RawPatientRecord(pid, sex, year, tuple(evs)))
    return out


def load_dataset(patients_path, events_path, min_count: int = 5):
    """Load both files, build the vocabulary and encode every record."""
    raw = load_patients(patients_path, events_path)
    vocab = build_vocabulary(raw, min_count)
    return vocab.encode_all(raw), vocab


def write_patients(records: Sequence, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps({"patient_id": r.patient_id, "sex": r.sex,
                                 "birth_year": r.birth_year}) + "\n")


def write_events(records: Sequence[PatientRecord], vocab: Vocabulary, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            for e in r.events:
                c = vocab.codes[e.code_index]
                fh.write(json.dumps({"patient_id": r.patient_id, "code": c.code,
                                     "kind": c.kind.value, "day": e.day}) + "\n")


def save_vocabulary(vocab: Vocabulary, path) -> None:
    lines = [f"{len(vocab)} {vocab.min_count}"]
    for i, (c, n) in enumerate(zip(vocab.codes, vocab.counts)):
        if any(ch.isspace() for ch in c.code):
            raise ValueError(f"code {c.code!r} contains whitespace")
        lines.append(f"{i} {c.code} {c.kind.value} {n}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_vocabulary(path) -> Vocabulary:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ParseError(path, 1, "empty vocabulary file")
    try:
        size, min_count = (int(x) for x in lines[0].split())
    except ValueError:
        raise ParseError(path, 1, "header must be 'V min_count'") from None
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != size:
        raise ParseError(path, 1, f"header declares {size} entries, found {len(body)}")
    codes, counts = [], []
    for lineno, ln in enumerate(body, 2):
        parts = ln.split()
        if len(parts) != 4 or parts[0] != str(len(codes)):
            raise ParseError(path, lineno, "expected 'index code kind count' with dense indices")
        try:
            codes.append(EventCode.make(parts[1], parts[2]))
            counts.append(int(parts[3]))
        except ValueError as exc:
            raise ParseError(path, lineno, str(exc)) from None
    return Vocabulary(tuple(codes), tuple(counts), min_count)
