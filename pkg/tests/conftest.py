"""Shared fixtures: hand-built micro datasets and cached synthetic populations."""

from __future__ import annotations

import datetime
import time

import pytest

from smiscreen.datamodel import ClinicalEvent, Dataset, Person
from smiscreen.phecode import load_default_map
from smiscreen.synth import SynthConfig, generate_population


def d(text: str) -> datetime.date:
    return datetime.date.fromisoformat(text)


def make_person(
    pid: str,
    birth_year: int = 1980,
    gender: str = "F",
    start: str = "2010-01-01",
    end: str = "2015-12-31",
    source: str = "CLAIMS",
) -> Person:
    return Person(pid, birth_year, gender, d(start), d(end), source)


def make_event(
    pid: str, date: str, kind: str = "DX", system: str = "ICD10", code: str = "F32.9"
) -> ClinicalEvent:
    return ClinicalEvent(pid, d(date), kind, system, code)


def make_dataset(persons, events, source: str = "CLAIMS") -> Dataset:
    return Dataset(list(persons), list(events), source)


@pytest.fixture(scope="session")
def phemap():
    return load_default_map()


@pytest.fixture(scope="session")
def pop5k():
    """Mid-size CLAIMS population for module-level statistical checks."""
    cfg = SynthConfig.default("CLAIMS", 5000, seed=42)
    return generate_population(cfg)


@pytest.fixture(scope="session")
def pop50k():
    """The acceptance-scale population (50k persons, seed 42); generation
    wall time is recorded for the runtime-budget criteria."""
    cfg = SynthConfig.default("CLAIMS", 50000, seed=42)
    t0 = time.perf_counter()
    dataset, truth = generate_population(cfg)
    elapsed = time.perf_counter() - t0
    return dataset, truth, elapsed
