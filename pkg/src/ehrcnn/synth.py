"""Deterministic synthetic EHR corpora.

Background streams are built from concept segments: a latent concept is drawn
for each segment and every event in the segment comes from that concept's
contiguous block of ``vocab_size // concept_count`` codes. Codes of one
concept therefore co-occur within a context window far more often than codes
of different concepts.

Cohort corpora add a class signal on top:

``signal="motif"``
    Each stream gets code ``motif[0]`` followed by ``motif[1]`` at most
    ``max_gap`` positions later. Case streams keep their order and end with
    the target code; control streams are the same kind of stream with all
    positions shuffled before days are assigned. Event counts match between
    classes in distribution, only order differs.
``signal="concept"``
    Cases draw segments of ``risk_concept`` with extra weight
    ``risk_weight``; order carries no class information.

All randomness comes from :class:`~ehrcnn._rng.SplitMix64`.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

from ._rng import SplitMix64
from .data import (EventCode, EventKind, MedicalEvent, PatientRecord, Vocabulary,
                   write_events, write_patients)


class SynthConfigError(ValueError):
    pass


@dataclass
class SynthConfig:
    vocab_size: int = 200
    concept_count: int = 10
    patients: int = 2000
    seq_len_range: tuple[int, int] = (60, 200)
    segment_len_range: tuple[int, int] = (10, 30)
    motif: tuple[int, int] | None = None
    max_gap: int = 3
    target_code: str | None = None
    case_fraction: float = 1 / 3
    signal: str = "motif"
    risk_concept: int = 0
    risk_weight: float = 3.0
    medication_share: float = 0.0
    day_step_range: tuple[int, int] = (1, 14)
    birth_year_range: tuple[int, int] = (1930, 2000)
    seed: int = 0

    def __post_init__(self):
        for name in ("seq_len_range", "segment_len_range", "day_step_range", "birth_year_range"):
            setattr(self, name, tuple(getattr(self, name)))
        if self.motif is not None:
            self.motif = tuple(self.motif)

    def validate(self, cohort: bool = False) -> None:
        if self.vocab_size < 1 or self.concept_count < 1:
            raise SynthConfigError("vocab_size and concept_count must be positive")
        if self.vocab_size % self.concept_count:
            raise SynthConfigError("concept_count must divide vocab_size")
        if self.patients < 0:
            raise SynthConfigError("patients must be >= 0")
        lo, hi = self.seq_len_range
        if lo < 1 or hi < lo:
            raise SynthConfigError("seq_len_range must satisfy 1 <= min <= max")
        s_lo, s_hi = self.segment_len_range
        if s_lo < 1 or s_hi < s_lo:
            raise SynthConfigError("segment_len_range must satisfy 1 <= min <= max")
        d_lo, d_hi = self.day_step_range
        if d_lo < 0 or d_hi < d_lo:
            raise SynthConfigError("day_step_range must satisfy 0 <= min <= max")
        if not 0.0 <= self.medication_share <= 1.0:
            raise SynthConfigError("medication_share must lie in [0, 1]")
        if not cohort:
            return
        if not 0.0 < self.case_fraction < 1.0:
            raise SynthConfigError("case_fraction must lie in (0, 1)")
        if not self.target_code:
            raise SynthConfigError("cohort corpora need a target_code")
        if self.signal == "motif":
            if self.motif is None or len(self.motif) != 2:
                raise SynthConfigError("motif signal needs a motif pair")
            if not all(0 <= m < self.vocab_size for m in self.motif):
                raise SynthConfigError("motif codes must be background code indices")
            if self.max_gap < 1:
                raise SynthConfigError("max_gap must be >= 1")
            if hi < 2:
                raise SynthConfigError("seq_len_range max is shorter than the motif")
            if d_lo < 1:
                # same-day events are re-ordered by index, which could invert the motif
                raise SynthConfigError("motif signal needs day_step_range min >= 1")
        elif self.signal == "concept":
            if not 0 <= self.risk_concept < self.concept_count:
                raise SynthConfigError("risk_concept out of range")
            if self.risk_weight <= 0:
                raise SynthConfigError("risk_weight must be positive")
        else:
            raise SynthConfigError(f"unknown signal {self.signal!r}")

    @property
    def block_size(self) -> int:
        return self.vocab_size // self.concept_count

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = cls.__dataclass_fields__
        unknown = set(d) - set(known)
        if unknown:
            raise SynthConfigError(f"unknown synth option(s): {sorted(unknown)}")
        return cls(**d)


def code_name(index: int) -> str:
    return f"E{index:04d}"


def concept_of(config: SynthConfig, index: int) -> int:
    return index // config.block_size


def code_kind(config: SynthConfig, index: int) -> EventKind:
    n_med = round(config.medication_share * config.block_size)
    within = index % config.block_size
    return EventKind.MEDICATION if within >= config.block_size - n_med else EventKind.DIAGNOSIS


def synth_codes(config: SynthConfig) -> tuple[EventCode, ...]:
    """Index -> code table for generated records (target code last, if any)."""
    codes = [EventCode(code_name(i), code_kind(config, i)) for i in range(config.vocab_size)]
    if config.target_code:
        codes.append(EventCode(config.target_code, EventKind.DIAGNOSIS))
    return tuple(codes)


def synth_vocabulary(config: SynthConfig, records) -> Vocabulary:
    codes = synth_codes(config)
    counts = [0] * len(codes)
    for r in records:
        for e in r.events:
            counts[e.code_index] += 1
    return Vocabulary(codes, tuple(counts), min_count=0)


def _draw_concept(rng: SplitMix64, weights) -> int:
    u = rng.random() * weights[-1]
    for c, cum in enumerate(weights):
        if u < cum:
            return c
    return len(weights) - 1


def _background(rng: SplitMix64, config: SynthConfig, n: int, weights=None) -> list[int]:
    block = config.block_size
    out: list[int] = []
    s_lo, s_hi = config.segment_len_range
    while len(out) < n:
        c = rng.below(config.concept_count) if weights is None else _draw_concept(rng, weights)
        seg = min(rng.between(s_lo, s_hi), n - len(out))
        base = c * block
        out.extend(base + rng.below(block) for _ in range(seg))
    return out


def _assign_days(rng: SplitMix64, config: SynthConfig, codes: list[int]) -> list[tuple[int, int]]:
    day = rng.between(0, 3650)
    d_lo, d_hi = config.day_step_range
    stamped = []
    for i, c in enumerate(codes):
        if i:
            day += rng.between(d_lo, d_hi)
        stamped.append((day, c))
    return stamped


def _record(config, pid: str, sex: str, year: int, stamped) -> PatientRecord:
    kinds = synth_codes(config)
    events = sorted(stamped)
    return PatientRecord(pid, sex, year,
                         tuple(MedicalEvent(c, d, kinds[c].kind) for d, c in events))


def _demographics(rng: SplitMix64, config: SynthConfig) -> tuple[str, int]:
    sex = "F" if rng.below(2) == 0 else "M"
    return sex, rng.between(*config.birth_year_range)


def generate_corpus(config: SynthConfig) -> list[PatientRecord]:
    """Background-only corpus for embedding experiments."""
    config.validate()
    rng = SplitMix64(config.seed)
    out = []
    for i in range(config.patients):
        prng = rng.spawn()
        sex, year = _demographics(prng, config)
        n = prng.between(*config.seq_len_range)
        codes = _background(prng, config, n)
        out.append(_record(config, f"P{i:06d}", sex, year, _assign_days(prng, config, codes)))
    return out


def generate_cohort_corpus(config: SynthConfig) -> list[PatientRecord]:
    """Corpus with a planted case/control signal; see the module docstring."""
    config.validate(cohort=True)
    rng = SplitMix64(config.seed)
    target = config.vocab_size
    n_cases = round(config.case_fraction * config.patients)
    # case slots are spread over the id range by a seeded shuffle
    is_case = [True] * n_cases + [False] * (config.patients - n_cases)
    rng.shuffle(is_case)

    risk_weights = None
    if config.signal == "concept":
        acc, risk_weights = 0.0, []
        for c in range(config.concept_count):
            acc += config.risk_weight if c == config.risk_concept else 1.0
            risk_weights.append(acc)

    out = []
    for i, case in enumerate(is_case):
        prng = rng.spawn()
        sex, year = _demographics(prng, config)
        n = prng.between(*config.seq_len_range)
        if config.signal == "motif":
            codes = _background(prng, config, n)
            if n >= 2:
                gap = prng.between(1, min(config.max_gap, n - 1))
                pos = prng.below(n - gap)
                codes[pos], codes[pos + gap] = config.motif
            if not case:
                prng.shuffle(codes)
        else:
            codes = _background(prng, config, n, risk_weights if case else None)
        stamped = _assign_days(prng, config, codes)
        if case:
            last = stamped[-1][0] if stamped else prng.between(0, 3650)
            stamped.append((last + prng.between(1, 30), target))
        out.append(_record(config, f"P{i:06d}", sex, year, stamped))
    return out


def load_synth_config(path) -> SynthConfig:
    return SynthConfig.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def write_corpus(records, config: SynthConfig, out_dir) -> tuple[Path, Path]:
    """Write ``patients.jsonl`` and ``events.jsonl`` into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vocab = synth_vocabulary(config, records)
    p_path, e_path = out_dir / "patients.jsonl", out_dir / "events.jsonl"
    write_patients(records, p_path)
    write_events(records, vocab, e_path)
    return p_path, e_path
