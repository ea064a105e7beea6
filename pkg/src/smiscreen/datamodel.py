"""Core clinical record types and CSV ingestion.

Input universe is two tables: persons (demographics plus an explicit
enrollment span bounding what is observable for that person) and dated
clinical events (diagnoses and medication fills). Events outside a person's
enrollment are hard errors rather than silent drops, since downstream
matching counts would be corrupted by quiet data loss.

File formats (UTF-8, comma separated, no quoting):
  persons.csv: person_id,birth_year,gender,enroll_start,enroll_end,source
  events.csv:  person_id,date,kind,system,code
dates are ISO YYYY-MM-DD; kind is written lowercase (dx/rx) on disk.
"""

from __future__ import annotations

import csv
import datetime
import sys
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field

from .errors import DataError

GENDERS = frozenset({"F", "M", "U"})
SOURCES = frozenset({"CLAIMS", "EHR"})
EVENT_KINDS = frozenset({"DX", "RX"})
CODE_SYSTEMS = frozenset({"ICD9", "ICD10", "NDC"})

# kind=DX carries an ICD code, kind=RX an NDC fill
SYSTEMS_FOR_KIND = {"DX": frozenset({"ICD9", "ICD10"}), "RX": frozenset({"NDC"})}

PERSONS_HEADER = ["person_id", "birth_year", "gender", "enroll_start", "enroll_end", "source"]
EVENTS_HEADER = ["person_id", "date", "kind", "system", "code"]


@dataclass(frozen=True, slots=True)
class Person:
    person_id: str
    birth_year: int
    gender: str
    enroll_start: datetime.date
    enroll_end: datetime.date
    source: str


@dataclass(frozen=True, slots=True)
class ClinicalEvent:
    person_id: str
    date: datetime.date
    kind: str
    system: str
    code: str


@dataclass
class ValidationReport:
    n_persons: int
    n_events: int
    n_events_by_kind: dict[str, int]
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def _parse_date(text: str, where: str) -> datetime.date:
    try:
        return datetime.date.fromisoformat(text)
    except ValueError as exc:
        raise DataError(f"{where}: unparseable date {text!r}") from exc


def load_persons(path: str) -> list[Person]:
    """Parse persons.csv, rejecting malformed rows and duplicate ids."""
    persons: list[Person] = []
    seen: set[str] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != PERSONS_HEADER:
            raise DataError(f"{path}: expected header {','.join(PERSONS_HEADER)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 6:
                raise DataError(f"{path}:{lineno}: expected 6 columns, got {len(row)}")
            pid, birth_raw, gender, start_raw, end_raw, source = row
            where = f"{path}:{lineno}"
            if pid in seen:
                raise DataError(f"{where}: duplicate person_id {pid!r}")
            seen.add(pid)
            try:
                birth_year = int(birth_raw)
            except ValueError as exc:
                raise DataError(f"{where}: unparseable birth_year {birth_raw!r}") from exc
            if gender not in GENDERS:
                raise DataError(f"{where}: unknown gender token {gender!r}")
            if source not in SOURCES:
                raise DataError(f"{where}: unknown source token {source!r}")
            start = _parse_date(start_raw, where)
            end = _parse_date(end_raw, where)
            if start > end:
                raise DataError(f"{where}: enroll_start {start} after enroll_end {end}")
            if birth_year > end.year:
                raise DataError(f"{where}: birth_year {birth_year} after enrollment end {end}")
            persons.append(Person(sys.intern(pid), birth_year, gender, start, end, source))
    return persons


def load_events(path: str, persons: list[Person]) -> list[ClinicalEvent]:
    """Parse events.csv against an already-loaded person table.

    Returns events sorted by (person_id, date); ties keep file order.
    """
    by_id = {p.person_id: p for p in persons}
    events: list[ClinicalEvent] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != EVENTS_HEADER:
            raise DataError(f"{path}: expected header {','.join(EVENTS_HEADER)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise DataError(f"{path}:{lineno}: expected 5 columns, got {len(row)}")
            pid, date_raw, kind_raw, system, code = row
            where = f"{path}:{lineno}"
            person = by_id.get(pid)
            if person is None:
                raise DataError(f"{where}: unknown person_id {pid!r}")
            kind = kind_raw.upper()
            if kind not in EVENT_KINDS:
                raise DataError(f"{where}: unknown event kind {kind_raw!r}")
            if system not in CODE_SYSTEMS or system not in SYSTEMS_FOR_KIND[kind]:
                raise DataError(f"{where}: kind {kind_raw!r} inconsistent with system {system!r}")
            date = _parse_date(date_raw, where)
            if not person.enroll_start <= date <= person.enroll_end:
                raise DataError(
                    f"{where}: event for {pid!r} dated {date} outside enrollment "
                    f"[{person.enroll_start}, {person.enroll_end}]"
                )
            events.append(ClinicalEvent(person.person_id, date, kind, system, sys.intern(code)))
    events.sort(key=lambda e: (e.person_id, e.date))
    return events


def write_persons(persons: list[Person], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(PERSONS_HEADER)
        for p in persons:
            writer.writerow(
                [p.person_id, p.birth_year, p.gender,
                 p.enroll_start.isoformat(), p.enroll_end.isoformat(), p.source]
            )


def write_events(events: list[ClinicalEvent], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(EVENTS_HEADER)
        for e in events:
            writer.writerow([e.person_id, e.date.isoformat(), e.kind.lower(), e.system, e.code])


class Dataset:
    """Immutable person + event tables with per-person lookup indices.

    Events are held per person, date-sorted; the flat `events` view is
    ordered by (person_id, date). Treat instances as frozen after
    construction: derived datasets come from `replace_person_events`.
    """

    def __init__(self, persons: list[Person], events: list[ClinicalEvent], source: str):
        if source not in SOURCES:
            raise DataError(f"unknown dataset source {source!r}")
        self.persons = persons
        self.source = source
        self.persons_by_id: dict[str, Person] = {}
        for p in persons:
            if p.person_id in self.persons_by_id:
                raise DataError(f"duplicate person_id {p.person_id!r}")
            self.persons_by_id[p.person_id] = p
        self._events_by_person: dict[str, list[ClinicalEvent]] = {}
        for e in events:
            self._events_by_person.setdefault(e.person_id, []).append(e)
        for pid, evs in self._events_by_person.items():
            evs.sort(key=lambda e: e.date)
        self._ordinals: dict[str, list[int]] = {}
        self._dx_ordinals: dict[str, list[int]] = {}

    @classmethod
    def from_files(cls, persons_path: str, events_path: str) -> "Dataset":
        persons = load_persons(persons_path)
        if not persons:
            raise DataError(f"{persons_path}: no persons")
        sources = {p.source for p in persons}
        if len(sources) > 1:
            raise DataError(f"{persons_path}: mixed sources {sorted(sources)}")
        events = load_events(events_path, persons)
        return cls(persons, events, sources.pop())

    @property
    def events(self) -> list[ClinicalEvent]:
        """Flat event table ordered by (person_id, date)."""
        out: list[ClinicalEvent] = []
        for pid in sorted(self._events_by_person):
            out.extend(self._events_by_person[pid])
        return out

    def events_for(self, person_id: str) -> list[ClinicalEvent]:
        return self._events_by_person.get(person_id, [])

    def _date_ordinals(self, person_id: str) -> list[int]:
        cached = self._ordinals.get(person_id)
        if cached is None:
            cached = [e.date.toordinal() for e in self.events_for(person_id)]
            self._ordinals[person_id] = cached
        return cached

    def events_in_window(
        self, person_id: str, start: datetime.date, end: datetime.date
    ) -> list[ClinicalEvent]:
        """Events dated within [start, end], inclusive both ends."""
        ordinals = self._date_ordinals(person_id)
        lo = bisect_left(ordinals, start.toordinal())
        hi = bisect_right(ordinals, end.toordinal())
        return self.events_for(person_id)[lo:hi]

    def dx_count_before(self, person_id: str, cutoff: datetime.date) -> int:
        """Raw DX event count strictly before `cutoff`."""
        cached = self._dx_ordinals.get(person_id)
        if cached is None:
            cached = [e.date.toordinal() for e in self.events_for(person_id) if e.kind == "DX"]
            self._dx_ordinals[person_id] = cached
        return bisect_left(cached, cutoff.toordinal())

    def has_dx_in_window(self, person_id: str, start: datetime.date, end: datetime.date) -> bool:
        cached = self._dx_ordinals.get(person_id)
        if cached is None:
            self.dx_count_before(person_id, start)
            cached = self._dx_ordinals[person_id]
        lo = bisect_left(cached, start.toordinal())
        return lo < len(cached) and cached[lo] <= end.toordinal()

    def replace_person_events(self, person_id: str, events: list[ClinicalEvent]) -> "Dataset":
        """Derived dataset with one person's events swapped out.

        Shares person records with the parent; used for mutation checks.
        """
        if person_id not in self.persons_by_id:
            raise DataError(f"unknown person_id {person_id!r}")
        clone = object.__new__(Dataset)
        clone.persons = self.persons
        clone.source = self.source
        clone.persons_by_id = self.persons_by_id
        clone._events_by_person = dict(self._events_by_person)
        clone._events_by_person[person_id] = sorted(events, key=lambda e: e.date)
        clone._ordinals = {}
        clone._dx_ordinals = {}
        return clone

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.source == other.source
            and self.persons == other.persons
            and self._events_by_person == other._events_by_person
        )


def validate_dataset(d: Dataset) -> ValidationReport:
    """Check every dataset invariant; violations are reported, not raised."""
    violations: list[str] = []
    kind_counts = {"DX": 0, "RX": 0}
    n_events = 0
    seen_ids: set[str] = set()
    for p in d.persons:
        if p.person_id in seen_ids:
            violations.append(f"duplicate person_id {p.person_id!r}")
        seen_ids.add(p.person_id)
        if p.enroll_start > p.enroll_end:
            violations.append(f"{p.person_id}: enroll_start after enroll_end")
        if p.birth_year > p.enroll_end.year:
            violations.append(f"{p.person_id}: birth_year {p.birth_year} after enrollment end")
        if p.gender not in GENDERS:
            violations.append(f"{p.person_id}: unknown gender {p.gender!r}")
        if p.source != d.source:
            violations.append(f"{p.person_id}: source {p.source!r} != dataset source {d.source!r}")
    for pid in sorted(d._events_by_person):
        person = d.persons_by_id.get(pid)
        if person is None:
            violations.append(f"events reference unknown person_id {pid!r}")
        prev: datetime.date | None = None
        for e in d._events_by_person[pid]:
            n_events += 1
            if e.kind not in EVENT_KINDS:
                violations.append(f"{pid}: unknown event kind {e.kind!r}")
            elif e.system not in SYSTEMS_FOR_KIND[e.kind]:
                violations.append(f"{pid}: kind {e.kind} inconsistent with system {e.system}")
            else:
                kind_counts[e.kind] += 1
            if person is not None and not person.enroll_start <= e.date <= person.enroll_end:
                violations.append(f"{pid}: event dated {e.date} outside enrollment")
            if prev is not None and e.date < prev:
                violations.append(f"{pid}: events out of date order at {e.date}")
            prev = e.date
    return ValidationReport(
        n_persons=len(d.persons),
        n_events=n_events,
        n_events_by_kind=kind_counts,
        violations=violations,
    )
