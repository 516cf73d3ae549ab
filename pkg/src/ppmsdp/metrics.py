"""Distortion, disclosure-risk and signal metrics.

``record_distortion`` is the per-record information loss: a normalised numeric
distance per numeric QID plus an ancestor-chain distance per categorical QID,
evaluated on the full taxonomy. Generalized numeric values are handled by the
expected absolute distance over the published interval.
"""

from __future__ import annotations

import operator
import re
from dataclasses import dataclass
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

from .model import Interval, Numeric, QidSchema, Record, hi, lo, mid
from .taxonomy import TaxonomyTree, categorical_distortion


class AlignmentError(ValueError):
    """Original and anonymized datasets do not pair up record by record."""


def interval_distance(a, L, U):
    """Mean of ``|x - a|`` for x uniform on ``[L, U]`` (plain ``|a - L|`` when ``U == L``).

    Works elementwise on numpy arrays.
    """
    a, L, U = np.broadcast_arrays(np.asarray(a, float), np.asarray(L, float), np.asarray(U, float))
    if np.any(U < L):
        raise ValueError("interval upper bound below lower bound")
    width = U - L
    # outside the interval every x lies on one side of a, so the mean is the
    # distance to the midpoint (this also avoids cancelling squares)
    outside = np.abs(a - (L + U) / 2)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        inside = ((a - L) ** 2 + (U - a) ** 2) / (2 * np.where(width > 0, width, 1))
    out = np.where((a <= L) | (a >= U), outside, inside)
    out = np.where(width > 0, out, np.abs(a - L))
    return out if out.ndim else float(out)


def numeric_distance(original: float, anonymized: Numeric, bounds: tuple[float, float]) -> float:
    mn, mx = bounds
    if isinstance(anonymized, Interval):
        if anonymized.hi < anonymized.lo:
            raise ValueError(f"invalid interval {anonymized}")
        d = interval_distance(original, anonymized.lo, anonymized.hi)
    else:
        d = abs(original - anonymized)
    return float(d) / (mx - mn)


def record_distortion(r: Record, r_anon: Record, schema: QidSchema,
                      trees: Mapping[str, TaxonomyTree]) -> float:
    total = 0.0
    for attr, bounds in schema.numeric.items():
        total += numeric_distance(mid(r.num_qid[attr]), r_anon.num_qid[attr], bounds)
    for attr in schema.categorical:
        total += categorical_distortion(r.cat_qid[attr], r_anon.cat_qid[attr], trees[attr])
    return total


# -- alignment -----------------------------------------------------------

def align(original: Sequence[Record], anonymized: Sequence[Record]) -> tuple[list[int], list[int]]:
    """Pair rows by (case id, occurrence number); unmatched originals are dropped.

    Returns index lists into ``original`` and ``anonymized``.
    """
    slots: dict[tuple[str, int], int] = {}
    counts: dict[str, int] = {}
    for j, r in enumerate(anonymized):
        n = counts.get(r.case_id, 0)
        counts[r.case_id] = n + 1
        slots[(r.case_id, n)] = j
    counts.clear()
    oi, ai = [], []
    for i, r in enumerate(original):
        n = counts.get(r.case_id, 0)
        counts[r.case_id] = n + 1
        j = slots.get((r.case_id, n))
        if j is not None:
            oi.append(i)
            ai.append(j)
    return oi, ai


def _check_aligned(D: Sequence[Record], Dp: Sequence[Record]) -> None:
    if len(D) != len(Dp) or any(a.case_id != b.case_id for a, b in zip(D, Dp)):
        raise AlignmentError("datasets are not aligned record by record; use metrics.align first")


# -- information loss ----------------------------------------------------

def nil(D: Sequence[Record], Dp: Sequence[Record], groups: Sequence | None,
        schema: QidSchema, trees: Mapping[str, TaxonomyTree]) -> float:
    """Sum over groups of the group's total record distortion over ``|QID| * |g|``.

    ``groups`` labels each anonymized record; when omitted, records sharing a
    published QID tuple form a group.
    """
    _check_aligned(D, Dp)
    if groups is None:
        groups = [_published_key(r, schema) for r in Dp]
    if len(groups) != len(Dp):
        raise AlignmentError("group labels do not match the anonymized records")
    il: dict = {}
    size: dict = {}
    for r, rp, g in zip(D, Dp, groups):
        il[g] = il.get(g, 0.0) + record_distortion(r, rp, schema, trees)
        size[g] = size.get(g, 0) + 1
    q = len(schema.qids)
    return sum(il[g] / (q * size[g]) for g in il)


def _published_key(r: Record, schema: QidSchema) -> tuple:
    return tuple(r.cat_qid[a] for a in schema.categorical) + tuple(r.num_qid[a] for a in schema.numeric)


# -- linkage risks -------------------------------------------------------

class _Encoded:
    def __init__(self, D, Dp, schema, trees):
        self.cat = []
        for attr in schema.categorical:
            t = trees[attr]
            self.cat.append((
                t.distortion_table,
                np.array([t.index[r.cat_qid[attr]] for r in D]),
                np.array([t.index[r.cat_qid[attr]] for r in Dp]),
            ))
        self.num = []
        for attr in schema.numeric:
            self.num.append((
                schema.span(attr),
                np.array([mid(r.num_qid[attr]) for r in D]),
                np.array([lo(r.num_qid[attr]) for r in Dp]),
                np.array([hi(r.num_qid[attr]) for r in Dp]),
            ))

    def rows(self, start: int, stop: int) -> np.ndarray:
        """Distances from originals ``start:stop`` to every anonymized record."""
        out = 0.0
        for table, oc, pc in self.cat:
            out = out + table[oc[start:stop, None], pc[None, :]]
        for span, a, L, U in self.num:
            out = out + interval_distance(a[start:stop, None], L[None, :], U[None, :]) / span
        return np.asarray(out)


def min_difference_sets(D: Sequence[Record], Dp: Sequence[Record], schema: QidSchema,
                        trees: Mapping[str, TaxonomyTree], chunk: int = 256,
                        atol: float = 1e-12) -> Iterator[tuple[int, np.ndarray]]:
    """For each original record, the anonymized records at minimum distance (ties kept)."""
    enc = _Encoded(D, Dp, schema, trees)
    for start in range(0, len(D), chunk):
        block = enc.rows(start, min(start + chunk, len(D)))
        if block.ndim == 0:
            block = np.zeros((min(chunk, len(D) - start), len(Dp)))
        best = block.min(axis=1)
        for off in range(block.shape[0]):
            yield start + off, np.flatnonzero(block[off] <= best[off] + atol)


def linkage_risks(D: Sequence[Record], Dp: Sequence[Record], schema: QidSchema,
                  trees: Mapping[str, TaxonomyTree]) -> tuple[float, float]:
    """Record-linkage risk and revised attribute risk, computed in one pass."""
    _check_aligned(D, Dp)
    if not D:
        return 0.0, 0.0
    token_sets = [sorted(r.sensitive_values()) for r in Dp]
    vocab = {t: i for i, t in enumerate(sorted({t for ts in token_sets for t in ts}))}
    incidence = np.zeros((len(Dp), max(len(vocab), 1)), dtype=np.int32)
    for j, ts in enumerate(token_sets):
        for t in ts:
            incidence[j, vocab[t]] = 1
    pr_sum = ar_sum = 0.0
    for i, G in min_difference_sets(D, Dp, schema, trees):
        if not np.any(G == i):
            continue
        size = len(G)
        pr_sum += 1.0 / size
        counts = incidence[G].sum(axis=0)
        present = counts[counts > 0]
        if present.size:
            ar_sum += float(np.maximum(1.0 / size, present / size).mean())
    return pr_sum / len(D), ar_sum / len(D)


def rr(D: Sequence[Record], Dp: Sequence[Record], schema: QidSchema,
       trees: Mapping[str, TaxonomyTree]) -> float:
    return linkage_risks(D, Dp, schema, trees)[0]


def ar_rev(D: Sequence[Record], Dp: Sequence[Record], schema: QidSchema,
           trees: Mapping[str, TaxonomyTree]) -> float:
    return linkage_risks(D, Dp, schema, trees)[1]


# -- ADR signal ----------------------------------------------------------

@dataclass(frozen=True)
class ContingencyTable:
    a: int
    b: int
    c: int
    d: int

    def __post_init__(self):
        if min(self.a, self.b, self.c, self.d) < 0:
            raise ValueError("contingency counts must be non-negative")

    @property
    def total(self) -> int:
        return self.a + self.b + self.c + self.d


def prr(t: ContingencyTable) -> float | None:
    """Proportional reporting ratio; ``None`` when a margin makes it undefined."""
    if t.a + t.b == 0 or t.c == 0:
        return None
    return (t.a / (t.a + t.b)) / (t.c / (t.c + t.d))


_OPS = {">": operator.gt, ">=": operator.ge, "<": operator.lt, "<=": operator.le,
        "==": operator.eq, "=": operator.eq, "!=": operator.ne}
_FILTER = re.compile(r"^\s*([^<>=!]+?)\s*(>=|<=|==|!=|>|<|=)\s*(.+?)\s*$")


def parse_filter(expr: str, schema: QidSchema) -> Callable[[Record], bool]:
    """``"Weight>50"`` style predicate. Numeric filters test interval midpoints."""
    m = _FILTER.match(expr)
    if not m:
        raise ValueError(f"cannot parse filter {expr!r}")
    attr, op, rhs = m.groups()
    fn = _OPS[op]
    if attr in schema.numeric:
        bound = float(rhs)
        return lambda r: fn(mid(r.num_qid[attr]), bound)
    if attr in schema.categorical and op in ("=", "==", "!="):
        return lambda r: fn(r.cat_qid[attr], rhs)
    raise ValueError(f"filter attribute {attr!r} is not a usable QID")


def _values(r: Record, attr: str) -> frozenset:
    if attr in r.sensitive:
        return r.sensitive[attr]
    if attr in r.other:
        return r.other[attr]
    raise KeyError(f"attribute {attr!r} not present on record {r.case_id!r}")


def contingency(records: Sequence[Record], drug_attr: str, drug: str, reaction_attr: str,
                reaction: str, where: Callable[[Record], bool] | None = None) -> ContingencyTable:
    a = b = c = d = 0
    for r in records:
        if where is not None and not where(r):
            continue
        has_drug = drug in _values(r, drug_attr)
        has_reaction = reaction in _values(r, reaction_attr)
        if has_drug and has_reaction:
            a += 1
        elif has_drug:
            b += 1
        elif has_reaction:
            c += 1
        else:
            d += 1
    return ContingencyTable(a, b, c, d)


def signal_bias(D: Sequence[Record], Dp: Sequence[Record], schema: QidSchema, drug: str,
                reaction: str, drug_attr: str = "Drug", reaction_attr: str = "Reaction",
                filter_expr: str | None = None) -> float | None:
    where = parse_filter(filter_expr, schema) if filter_expr else None
    before = prr(contingency(D, drug_attr, drug, reaction_attr, reaction, where))
    after = prr(contingency(Dp, drug_attr, drug, reaction_attr, reaction, where))
    if before is None or after is None:
        return None
    return abs(before - after)
