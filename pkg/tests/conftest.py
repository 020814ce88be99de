import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ehrcnn.data import EventCode, EventKind, MedicalEvent, PatientRecord, RawEvent, RawPatientRecord

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

DX = EventKind.DIAGNOSIS
RX = EventKind.MEDICATION


def raw_record(pid, codes_days, sex="F", birth_year=1960):
    """``codes_days`` is a list of (code, kind, day)."""
    events = tuple(RawEvent(EventCode(c, EventKind(k)), d) for c, k, d in codes_days)
    return RawPatientRecord(pid, sex, birth_year, events)


def record(pid, indices, days=None, sex="F", birth_year=1960, kind=DX):
    days = list(range(len(indices))) if days is None else days
    events = tuple(MedicalEvent(int(i), int(d), kind) for i, d in zip(indices, days))
    return PatientRecord(pid, sex, birth_year, events)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
