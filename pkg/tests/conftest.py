from __future__ import annotations

from datetime import date

import pytest

from milltwin.store import Sample, TimeSeriesStore
from milltwin.timebase import from_iso

# three-phase current table recorded from the machine HMI (13/01/2020 morning)
TABLE1_DAY = date(2020, 1, 13)
TABLE1_ROWS = [
    ("2020-01-13T08:09:50Z", 0.68, 0.09, 0.58),
    ("2020-01-13T08:09:51Z", 0.68, 0.09, 0.58),
    ("2020-01-13T08:09:52Z", 2.15, 1.75, 2.63),
    ("2020-01-13T08:09:53Z", 2.15, 1.75, 2.63),
    ("2020-01-13T08:09:54Z", 2.15, 1.75, 2.63),
    ("2020-01-13T08:09:55Z", 3.61, 3.51, 3.71),
    ("2020-01-13T08:09:56Z", 3.81, 3.51, 3.81),
    ("2020-01-13T08:09:57Z", 3.81, 3.51, 3.81),
    ("2020-01-13T08:09:58Z", 3.51, 3.61, 3.81),
    ("2020-01-13T08:09:59Z", 3.51, 3.61, 3.81),
]

CURRENT_CHANNELS = ("cur-l1", "cur-l2", "cur-l3")
ALL_CHANNELS = CURRENT_CHANNELS + ("temp-spindle", "vib-spindle")


def table1_series() -> dict[str, list[Sample]]:
    out: dict[str, list[Sample]] = {ch: [] for ch in CURRENT_CHANNELS}
    for iso, v1, v2, v3 in TABLE1_ROWS:
        ts = from_iso(iso)
        for ch, v in zip(CURRENT_CHANNELS, (v1, v2, v3)):
            out[ch].append(Sample(ts, v))
    return out


@pytest.fixture
def store(tmp_path) -> TimeSeriesStore:
    return TimeSeriesStore(tmp_path / "store", channels=ALL_CHANNELS)


@pytest.fixture
def table1_store(store) -> TimeSeriesStore:
    for ch, samples in table1_series().items():
        store.append(ch, samples)
    return store
