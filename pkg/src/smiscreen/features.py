"""Code vocabularies and model-ready feature vectors.

The discrete feature space is the set of namespaced code strings
("dx:ICD10:F20.0", "rx:NDC:1234") seen inside training-split windows;
ICD9 and ICD10 spellings stay distinct entries by design. An example's
features are the in-vocabulary codes present in its window (presence
encoding, deduplicated) plus a small dense demographic vector. Everything
is window-bounded: no event after window.end can influence a vector.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .cohort import CohortExample
from .datamodel import ClinicalEvent, Dataset
from .errors import DataError

DEMOGRAPHICS_DIM = 4  # age_norm, gender one-hot F/M/U
_GENDER_SLOT = {"F": 1, "M": 2, "U": 3}


def namespaced_code(e: ClinicalEvent) -> str:
    return f"{e.kind.lower()}:{e.system}:{e.code}"


@dataclass(frozen=True)
class Vocabulary:
    """Ordered code list with dense indices; order is lexicographic, so a
    rebuild from the same windows is always index-identical."""

    entries: tuple[str, ...]
    provenance: str = ""

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def index(self) -> dict[str, int]:
        cached = self.__dict__.get("_index")
        if cached is None:
            cached = {code: i for i, code in enumerate(self.entries)}
            object.__setattr__(self, "_index", cached)
        return cached

    def fingerprint(self) -> str:
        digest = hashlib.sha256("\n".join(self.entries).encode("utf-8"))
        return digest.hexdigest()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Vocabulary):
            return NotImplemented
        return self.entries == other.entries

    def __hash__(self) -> int:
        return hash(self.entries)


@dataclass(frozen=True)
class FeatureVector:
    code_indices: np.ndarray  # sorted unique int64 indices into the vocabulary
    demographics: np.ndarray  # float64 [age_norm, F, M, U]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FeatureVector):
            return NotImplemented
        return np.array_equal(self.code_indices, other.code_indices) and np.array_equal(
            self.demographics, other.demographics
        )


def build_vocabulary(train_examples: list[CohortExample], d: Dataset) -> Vocabulary:
    """Union of namespaced codes inside training windows, sorted."""
    if not train_examples:
        raise DataError("cannot build a vocabulary from an empty training set")
    codes: set[str] = set()
    for ex in train_examples:
        for e in d.events_in_window(ex.person_id, ex.window.start, ex.window.end):
            codes.add(namespaced_code(e))
    return Vocabulary(tuple(sorted(codes)), provenance=f"train:{len(train_examples)}")


def intersect_vocabularies(a: Vocabulary, b: Vocabulary) -> Vocabulary:
    shared = set(a.entries) & set(b.entries)
    if not shared:
        raise DataError("vocabulary intersection is empty; cross-source evaluation impossible")
    return Vocabulary(tuple(sorted(shared)), provenance=f"intersect({a.provenance},{b.provenance})")


def featurize(ex: CohortExample, d: Dataset, v: Vocabulary) -> FeatureVector:
    """Feature vector for one example; out-of-vocabulary codes are skipped."""
    person = d.persons_by_id.get(ex.person_id)
    if person is None:
        raise DataError(f"unknown person_id {ex.person_id!r}")
    index = v.index
    hits: set[int] = set()
    for e in d.events_in_window(ex.person_id, ex.window.start, ex.window.end):
        idx = index.get(namespaced_code(e))
        if idx is not None:
            hits.add(idx)
    code_indices = np.array(sorted(hits), dtype=np.int64)
    age_norm = (ex.window.end.year - person.birth_year) / 100.0
    demographics = np.zeros(DEMOGRAPHICS_DIM, dtype=np.float64)
    demographics[0] = age_norm
    demographics[_GENDER_SLOT[person.gender]] = 1.0
    return FeatureVector(code_indices, demographics)


def featurize_all(
    examples: list[CohortExample], d: Dataset, v: Vocabulary
) -> list[FeatureVector]:
    return [featurize(ex, d, v) for ex in examples]


def write_vocabulary(v: Vocabulary, path: str) -> None:
    """vocabulary.txt: one namespaced code per line, line number = index."""
    with open(path, "w", encoding="utf-8") as fh:
        for code in v.entries:
            fh.write(code + "\n")


def load_vocabulary(path: str) -> Vocabulary:
    with open(path, encoding="utf-8") as fh:
        entries = tuple(line.rstrip("\n") for line in fh if line.strip())
    if not entries:
        raise DataError(f"{path}: empty vocabulary")
    return Vocabulary(entries, provenance=f"file:{path}")
