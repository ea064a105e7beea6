"""Case-control cohort construction with temporal-bias guards.

Cases are persons with at least one SMI-mapped diagnosis; their features
come from a 12-month observation window that ends a randomized gap of
14..365 days before first onset, so the model cannot key on the immediate
run-up to diagnosis. Controls are SMI-free persons matched on birth year,
gender, and prior diagnosis count, and inherit the case's exact window.

Two further cohorts cover the fine-tuning scenarios: risk at the 18th
birthday and risk after a first substance-related diagnosis. Persons in
those cohorts are kept out of the all-age cohort.
"""

from __future__ import annotations

import datetime
from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .datamodel import Dataset
from .dates import add_months, window_start_for_end
from .errors import DegenerateCohortError
from .phecode import PhecodeMap, map_event, smi_set, substance_set

GAP_MIN_DAYS = 14
GAP_MAX_DAYS = 365

ALL_AGE = "ALL_AGE"
AGE18 = "AGE18"
SUBSTANCE = "SUBSTANCE"
COHORT_KINDS = (ALL_AGE, AGE18, SUBSTANCE)


@dataclass(frozen=True, slots=True)
class ObservationWindow:
    start: datetime.date
    end: datetime.date
    gap_days: int | None = None  # cases in the all-age cohort only

    @property
    def length_days(self) -> int:
        return (self.end - self.start).days + 1


@dataclass(frozen=True, slots=True)
class CohortExample:
    person_id: str
    label: int
    window: ObservationWindow
    match_group: str
    cohort_kind: str
    index_date: datetime.date | None


@dataclass(frozen=True, slots=True)
class MatchKey:
    birth_year: int
    gender: str
    pre_window_dx_count: int


@dataclass
class CohortBuildStats:
    n_cases_found: int = 0
    n_cases_excluded: int = 0
    n_windows_dropped: int = 0
    n_cases_retained: int = 0
    n_cases_without_controls: int = 0
    n_controls: int = 0

    @property
    def n_examples(self) -> int:
        return self.n_cases_retained + self.n_controls


def find_cases(d: Dataset, m: PhecodeMap) -> list[tuple[str, datetime.date]]:
    """All persons with an SMI-mapped diagnosis, with their first onset date."""
    smi = smi_set()
    onsets: dict[str, datetime.date] = {}
    for p in d.persons:
        for e in d.events_for(p.person_id):
            code = map_event(e, m)
            if code is not None and smi.contains(code):
                onsets[p.person_id] = e.date  # events are date-sorted per person
                break
    return sorted(onsets.items())


def first_onset_by_person(d: Dataset, m: PhecodeMap) -> dict[str, datetime.date]:
    return dict(find_cases(d, m))


def gap_stream(seed: int, person_id: str) -> np.random.Generator:
    return rngmod.stream(seed, "gap", person_id)


def sample_gap(rng: np.random.Generator) -> int:
    """Uniform gap length in days, both bounds inclusive."""
    return int(rng.integers(GAP_MIN_DAYS, GAP_MAX_DAYS + 1))


@dataclass(frozen=True, slots=True)
class CaseWindow:
    person_id: str
    onset: datetime.date
    window: ObservationWindow


def build_case_windows(
    cases: list[tuple[str, datetime.date]], d: Dataset, seed: int
) -> tuple[list[CaseWindow], int]:
    """Assign gap-shifted 12-month windows; drop cases that do not fit.

    window.end = onset - gap; window.start = end - 12 months + 1 day.
    Cases whose window starts before enrollment are dropped (second return
    value counts them), keeping feature windows uniformly 12 months long.
    """
    out: list[CaseWindow] = []
    dropped = 0
    for person_id, onset in cases:
        person = d.persons_by_id[person_id]
        gap = sample_gap(gap_stream(seed, person_id))
        end = onset - datetime.timedelta(days=gap)
        start = window_start_for_end(end)
        if start < person.enroll_start or end > person.enroll_end:
            dropped += 1
            continue
        out.append(CaseWindow(person_id, onset, ObservationWindow(start, end, gap_days=gap)))
    return out, dropped


def match_controls(
    case_windows: list[CaseWindow],
    d: Dataset,
    m: PhecodeMap,
    k: int = 10,
    seed: int = 0,
    exclude: frozenset[str] = frozenset(),
    stats: CohortBuildStats | None = None,
) -> list[CohortExample]:
    """Pair each case with up to k matched, never-SMI controls.

    Matching is exact on (birth_year, gender), nearest on the raw count of
    DX events before the window start, greedy in descending case count so
    high-utilization cases get first pick of scarce lookalikes. A control
    serves at most one case and must be observable over the case's whole
    window with at least one in-window diagnosis.
    """
    smi_pids = {pid for pid, _ in find_cases(d, m)}
    strata: dict[tuple[int, str], list[str]] = {}
    for p in d.persons:
        if p.person_id in smi_pids or p.person_id in exclude:
            continue
        strata.setdefault((p.birth_year, p.gender), []).append(p.person_id)
    for pool in strata.values():
        pool.sort()

    def case_key(cw: CaseWindow) -> tuple[int, str]:
        return (-d.dx_count_before(cw.person_id, cw.window.start), cw.person_id)

    used: set[str] = set()
    examples: list[CohortExample] = []
    for cw in sorted(case_windows, key=case_key):
        person = d.persons_by_id[cw.person_id]
        window = cw.window
        case_count = d.dx_count_before(cw.person_id, window.start)
        ranked: list[tuple[int, int, str]] = []
        for pid in strata.get((person.birth_year, person.gender), []):
            if pid in used:
                continue
            cand = d.persons_by_id[pid]
            if cand.enroll_start > window.start or cand.enroll_end < window.end:
                continue
            if not d.has_dx_in_window(pid, window.start, window.end):
                continue
            diff = abs(d.dx_count_before(pid, window.start) - case_count)
            ranked.append((diff, rngmod.stable_seed(seed, "ctl-tie", pid), pid))
        ranked.sort()
        chosen = [pid for _, _, pid in ranked[:k]]
        used.update(chosen)
        examples.append(
            CohortExample(cw.person_id, 1, window, cw.person_id, ALL_AGE, cw.onset)
        )
        shared = ObservationWindow(window.start, window.end)
        for pid in chosen:
            examples.append(CohortExample(pid, 0, shared, cw.person_id, ALL_AGE, None))
        if stats is not None:
            stats.n_controls += len(chosen)
            if not chosen:
                stats.n_cases_without_controls += 1
    examples.sort(key=lambda ex: (ex.match_group, -ex.label, ex.person_id))
    return examples


def build_all_age_cohort(
    d: Dataset,
    m: PhecodeMap,
    seed: int,
    k: int = 10,
    exclude_use_cases: bool = True,
) -> tuple[list[CohortExample], CohortBuildStats]:
    """Full all-age matched cohort; use-case cohort members are excluded."""
    stats = CohortBuildStats()
    exclude = use_case_person_ids(d, m) if exclude_use_cases else frozenset()
    cases = find_cases(d, m)
    stats.n_cases_found = len(cases)
    cases = [(pid, onset) for pid, onset in cases if pid not in exclude]
    stats.n_cases_excluded = stats.n_cases_found - len(cases)
    case_windows, dropped = build_case_windows(cases, d, seed)
    stats.n_windows_dropped = dropped
    stats.n_cases_retained = len(case_windows)
    examples = match_controls(case_windows, d, m, k=k, seed=seed, exclude=exclude, stats=stats)
    return examples, stats


def _eighteenth_birthday(birth_year: int) -> datetime.date:
    # Records carry year of birth only; birthdays are pinned to Jan 1.
    return datetime.date(birth_year + 18, 1, 1)


def build_age18_cohort(d: Dataset, m: PhecodeMap) -> list[CohortExample]:
    """Risk-at-18 cohort: observe the year before the 18th birthday,
    label by SMI onset in the year after. Natural prevalence, no matching.

    Persons with any SMI diagnosis before the birthday are excluded; the
    target is future risk, not prevalent disease.
    """
    onsets = first_onset_by_person(d, m)
    out: list[CohortExample] = []
    for p in d.persons:
        birthday = _eighteenth_birthday(p.birth_year)
        span_start = add_months(birthday, -12)
        span_end = add_months(birthday, 12)
        if p.enroll_start > span_start or p.enroll_end < span_end:
            continue
        window = ObservationWindow(span_start, birthday - datetime.timedelta(days=1))
        if not d.events_in_window(p.person_id, window.start, window.end):
            continue
        onset = onsets.get(p.person_id)
        if onset is not None and onset < birthday:
            continue
        test_end = add_months(birthday, 12) - datetime.timedelta(days=1)
        label = int(onset is not None and birthday <= onset <= test_end)
        out.append(CohortExample(p.person_id, label, window, p.person_id, AGE18, birthday))
    return out


def build_substance_cohort(d: Dataset, m: PhecodeMap) -> list[CohortExample]:
    """Post-substance-diagnosis cohort: observe the year up to and including
    the first substance-related diagnosis, label by SMI in the year after."""
    substances = substance_set()
    onsets = first_onset_by_person(d, m)
    out: list[CohortExample] = []
    for p in d.persons:
        index_date: datetime.date | None = None
        for e in d.events_for(p.person_id):
            code = map_event(e, m)
            if code is not None and substances.contains(code):
                index_date = e.date
                break
        if index_date is None:
            continue
        window = ObservationWindow(window_start_for_end(index_date), index_date)
        test_end = add_months(index_date, 12)
        if p.enroll_start > window.start or p.enroll_end < test_end:
            continue
        onset = onsets.get(p.person_id)
        if onset is not None and onset <= index_date:
            continue
        label = int(onset is not None and onset <= test_end)
        out.append(CohortExample(p.person_id, label, window, p.person_id, SUBSTANCE, index_date))
    return out


def build_cohort(
    d: Dataset, m: PhecodeMap, kind: str, seed: int, k: int = 10
) -> tuple[list[CohortExample], CohortBuildStats]:
    """Dispatch on cohort kind; errors when nobody is eligible."""
    if kind == ALL_AGE:
        examples, stats = build_all_age_cohort(d, m, seed, k=k)
    elif kind == AGE18:
        examples = build_age18_cohort(d, m)
        stats = CohortBuildStats(n_cases_retained=sum(ex.label for ex in examples))
        stats.n_controls = len(examples) - stats.n_cases_retained
    elif kind == SUBSTANCE:
        examples = build_substance_cohort(d, m)
        stats = CohortBuildStats(n_cases_retained=sum(ex.label for ex in examples))
        stats.n_controls = len(examples) - stats.n_cases_retained
    else:
        raise ValueError(f"unknown cohort kind {kind!r}")
    if not examples:
        raise DegenerateCohortError(f"cohort {kind}: zero eligible persons")
    return examples, stats


def use_case_person_ids(d: Dataset, m: PhecodeMap) -> frozenset[str]:
    """Persons belonging to either use-case cohort."""
    ids = {ex.person_id for ex in build_age18_cohort(d, m)}
    ids.update(ex.person_id for ex in build_substance_cohort(d, m))
    return frozenset(ids)


def prevalence(examples: list[CohortExample]) -> float:
    if not examples:
        return 0.0
    return sum(ex.label for ex in examples) / len(examples)


def write_cohort(examples: list[CohortExample], path: str) -> None:
    """cohort.csv: person_id,label,cohort_kind,match_group,window_start,
    window_end,gap_days,index_date (empty fields where not applicable)."""
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["person_id", "label", "cohort_kind", "match_group",
             "window_start", "window_end", "gap_days", "index_date"]
        )
        for ex in examples:
            writer.writerow(
                [
                    ex.person_id,
                    ex.label,
                    ex.cohort_kind,
                    ex.match_group,
                    ex.window.start.isoformat(),
                    ex.window.end.isoformat(),
                    "" if ex.window.gap_days is None else ex.window.gap_days,
                    "" if ex.index_date is None else ex.index_date.isoformat(),
                ]
            )
