"""Records, super records, releases and the privacy configuration."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, NamedTuple, Sequence, Union

from .taxonomy import TaxonomyTree, generalize_lca

VARIANTS = ("num", "all", "baseline")


class SchemaError(ValueError):
    """A record or file does not match the declared schema."""


class InfeasibleReleaseError(RuntimeError):
    """The release cannot satisfy NC-bounding (fewer than k new cases)."""


class Interval(NamedTuple):
    lo: float
    hi: float

    def __str__(self) -> str:
        return f"{format_number(self.lo)}-{format_number(self.hi)}"

    @property
    def mid(self) -> float:
        return (self.lo + self.hi) / 2


Numeric = Union[float, Interval]


def format_number(x: float) -> str:
    if math.isfinite(x) and x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(float(x))


def lo(v: Numeric) -> float:
    return v.lo if isinstance(v, Interval) else float(v)


def hi(v: Numeric) -> float:
    return v.hi if isinstance(v, Interval) else float(v)


def mid(v: Numeric) -> float:
    return v.mid if isinstance(v, Interval) else float(v)


@dataclass(frozen=True)
class QidSchema:
    categorical: tuple[str, ...]
    numeric: Mapping[str, tuple[float, float]]
    sensitive: tuple[str, ...]
    other: tuple[str, ...] = ()
    case_id: str = "case_id"

    def __post_init__(self):
        object.__setattr__(self, "categorical", tuple(self.categorical))
        object.__setattr__(self, "sensitive", tuple(self.sensitive))
        object.__setattr__(self, "other", tuple(self.other))
        object.__setattr__(self, "numeric", {a: (float(b[0]), float(b[1])) for a, b in self.numeric.items()})
        names = [*self.categorical, *self.numeric, *self.sensitive, *self.other, self.case_id]
        if len(set(names)) != len(names):
            raise SchemaError(f"attribute names must be unique: {names}")
        for attr, (mn, mx) in self.numeric.items():
            if not mn < mx:
                raise SchemaError(f"numeric bounds for {attr!r} must satisfy min < max, got [{mn}, {mx}]")

    @property
    def qids(self) -> tuple[str, ...]:
        return (*self.categorical, *self.numeric)

    @property
    def columns(self) -> tuple[str, ...]:
        return (self.case_id, *self.categorical, *self.numeric, *self.sensitive, *self.other)

    def span(self, attr: str) -> float:
        mn, mx = self.numeric[attr]
        return mx - mn

    def clamp(self, attr: str, x: float) -> float:
        mn, mx = self.numeric[attr]
        return min(max(x, mn), mx)

    def validate(self, record: "Record", trees: Mapping[str, TaxonomyTree] | None = None,
                 check_bounds: bool = True) -> None:
        if set(record.cat_qid) != set(self.categorical) or set(record.num_qid) != set(self.numeric) \
                or set(record.sensitive) != set(self.sensitive) or not set(record.other) <= set(self.other):
            raise SchemaError(f"record {record.case_id!r} does not match the schema")
        if trees is not None:
            for attr in self.categorical:
                if record.cat_qid[attr] not in trees[attr]:
                    raise SchemaError(f"value {record.cat_qid[attr]!r} of {attr!r} is not in its taxonomy")
        if check_bounds:
            for attr, (mn, mx) in self.numeric.items():
                v = record.num_qid[attr]
                if lo(v) < mn or hi(v) > mx:
                    raise SchemaError(f"{attr}={v} of case {record.case_id!r} is outside [{mn}, {mx}]")


@dataclass(frozen=True)
class Record:
    case_id: str
    cat_qid: Mapping[str, str]
    num_qid: Mapping[str, Numeric]
    sensitive: Mapping[str, frozenset]
    other: Mapping[str, frozenset] = field(default_factory=dict)

    def key(self) -> tuple:
        """Hashable full content, used for exact-duplicate detection."""
        return (
            self.case_id,
            tuple(sorted(self.cat_qid.items())),
            tuple(sorted(self.num_qid.items())),
            tuple(sorted((a, tuple(sorted(v))) for a, v in self.sensitive.items())),
            tuple(sorted((a, tuple(sorted(v))) for a, v in self.other.items())),
        )

    def sensitive_values(self) -> frozenset:
        out: set = set()
        for values in self.sensitive.values():
            out |= values
        return frozenset(out)


@dataclass(frozen=True)
class SuperRecord:
    """All reports of one case within a release, merged."""

    case_id: str
    cat_qid: Mapping[str, str]
    num_qid: Mapping[str, Numeric]
    sensitive: Mapping[str, frozenset]
    constituents: tuple[Record, ...]

    def sensitive_values(self) -> frozenset:
        out: set = set()
        for values in self.sensitive.values():
            out |= values
        return frozenset(out)

    def with_qid(self, cat_qid=None, num_qid=None) -> "SuperRecord":
        return replace(
            self,
            cat_qid=dict(cat_qid) if cat_qid is not None else self.cat_qid,
            num_qid=dict(num_qid) if num_qid is not None else self.num_qid,
        )


@dataclass
class Release:
    """One published table. ``groups[j]`` is the group id of ``records[j]`` when known."""

    index: int
    records: list[Record]
    groups: list[int] | None = None
    suppressed: tuple[str, ...] = ()

    def case_ids(self) -> set[str]:
        return {r.case_id for r in self.records}

    def by_case(self) -> dict[str, list[Record]]:
        out: dict[str, list[Record]] = {}
        for r in self.records:
            out.setdefault(r.case_id, []).append(r)
        return out


class ReleaseHistory:
    """Previously published releases, ordered by index."""

    def __init__(self, releases: Iterable[Release] = ()):
        self.releases: list[Release] = sorted(releases, key=lambda r: r.index)
        seen = [r.index for r in self.releases]
        if len(set(seen)) != len(seen):
            raise ValueError(f"duplicate release indices in history: {seen}")

    def __len__(self) -> int:
        return len(self.releases)

    def __iter__(self):
        return iter(self.releases)

    @property
    def next_index(self) -> int:
        return self.releases[-1].index + 1 if self.releases else 1

    def window(self, lifespan_x: int | None) -> list[Release]:
        if lifespan_x is None:
            return list(self.releases)
        return self.releases[-lifespan_x:] if lifespan_x > 0 else []

    def earliest_clones(self, lifespan_x: int | None = None) -> dict[str, Record]:
        """First published record of every case in the scanned window."""
        out: dict[str, Record] = {}
        for release in self.window(lifespan_x):
            for rec in release.records:
                out.setdefault(rec.case_id, rec)
        return out

    def append(self, release: Release) -> None:
        if self.releases and release.index <= self.releases[-1].index:
            raise ValueError("releases must be appended in increasing index order")
        self.releases.append(release)


@dataclass(frozen=True)
class Theta:
    """Per-sensitive-value confidence thresholds with a default."""

    default: float
    overrides: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for v in (self.default, *self.overrides.values()):
            if not 0 < v <= 1:
                raise ValueError(f"theta values must lie in (0, 1], got {v}")

    def __call__(self, value: str) -> float:
        return self.overrides.get(value, self.default)


@dataclass(frozen=True)
class PrivacyConfig:
    k: int
    theta: Theta
    epsilon: float = 1.0
    lifespan_x: int | None = None
    variant: str = "num"
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.k < 2:
            raise ValueError(f"k must be >= 2, got {self.k}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.lifespan_x is not None and self.lifespan_x < 1:
            raise ValueError("lifespan_x must be a positive integer or None (unbounded)")


def merge_super_records(records: Sequence[Record], schema: QidSchema,
                        trees: Mapping[str, TaxonomyTree]) -> list[SuperRecord]:
    """Combine the reports sharing a case id, in first-appearance order.

    Differing categorical values are generalized to their LCA, differing numeric
    values become the covering interval, sensitive sets are unioned.
    """
    buckets: dict[str, list[Record]] = {}
    seen: set = set()
    for rec in records:
        schema.validate(rec, check_bounds=False)
        key = rec.key()
        if key in seen:
            continue
        seen.add(key)
        buckets.setdefault(rec.case_id, []).append(rec)

    out = []
    for case_id, group in buckets.items():
        if len(group) == 1:
            r = group[0]
            out.append(SuperRecord(case_id, dict(r.cat_qid), dict(r.num_qid), dict(r.sensitive), (r,)))
            continue
        cat = {a: generalize_lca([r.cat_qid[a] for r in group], trees[a]) for a in schema.categorical}
        num = {}
        for a in schema.numeric:
            lows = [lo(r.num_qid[a]) for r in group]
            highs = [hi(r.num_qid[a]) for r in group]
            if all(isinstance(r.num_qid[a], (int, float)) for r in group) and min(lows) == max(highs):
                num[a] = float(min(lows))
            else:
                num[a] = Interval(min(lows), max(highs))
        sens = {a: frozenset().union(*(r.sensitive[a] for r in group)) for a in schema.sensitive}
        out.append(SuperRecord(case_id, cat, num, sens, tuple(group)))
    return out


def down_pose(supers: Iterable[SuperRecord]) -> list[Record]:
    return [r for s in supers for r in s.constituents]


def classify_cases(supers: Iterable[SuperRecord], history: ReleaseHistory | Sequence[Release],
                   lifespan_x: int | None = None) -> tuple[set[str], set[str]]:
    """Split case ids into new cases and old cases (seen within the last ``lifespan_x`` releases)."""
    if not isinstance(history, ReleaseHistory):
        history = ReleaseHistory(history)
    published: set[str] = set()
    for release in history.window(lifespan_x):
        published |= release.case_ids()
    new, old = set(), set()
    for s in supers:
        (old if s.case_id in published else new).add(s.case_id)
    return new, old
