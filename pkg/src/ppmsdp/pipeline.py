"""End-to-end anonymization of one release.

Three variants share merge -> classify -> NCC grouping and differ afterwards:

``num``       cover old cases categorically, generalize + merge groups, Laplace on numerics
``all``       merge on virtual generalization, Laplace on numerics, exponential draw on categoricals
``baseline``  cover old cases, publish LCA and covering intervals (no noise)
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from typing import Callable, Mapping, Sequence

from .grouping import GroupingResult, QidGroup, ncc_grouping
from .mechanisms import NoiseBudget, exponential_perturb_group, perturb_numeric_group
from .model import (Interval, PrivacyConfig, QidSchema, Record, Release, ReleaseHistory,
                    classify_cases, hi, lo, merge_super_records)
from .taxonomy import TaxonomyTree

log = logging.getLogger(__name__)


class DataIntegrityError(ValueError):
    """A previously published value cannot be interpreted against the taxonomy."""


def qidc_covering(groups: Sequence[QidGroup], history: ReleaseHistory, schema: QidSchema,
                  trees: Mapping[str, TaxonomyTree], lifespan_x: int | None = None,
                  numeric: bool = False) -> list[QidGroup]:
    """Generalize each old case so that it covers its earliest published clone.

    Categorical values move to the LCA with the clone's value. With ``numeric``
    the numeric value also widens to an interval covering the clone.
    """
    clones = history.earliest_clones(lifespan_x)
    out = []
    for g in groups:
        members = []
        for m, is_new in zip(g.members, g.new_flags):
            clone = None if is_new else clones.get(m.case_id)
            if clone is None:
                members.append(m)
                continue
            cat = {}
            for a in schema.categorical:
                published = clone.cat_qid.get(a)
                if published not in trees[a]:
                    raise DataIntegrityError(
                        f"case {m.case_id!r}: published {a}={published!r} is not in the taxonomy")
                cat[a] = trees[a].lca(m.cat_qid[a], published)
            num = dict(m.num_qid)
            if numeric:
                for a in schema.numeric:
                    c = clone.num_qid.get(a)
                    if c is None:
                        raise DataIntegrityError(f"case {m.case_id!r}: published {a} missing")
                    L, U = min(lo(m.num_qid[a]), lo(c)), max(hi(m.num_qid[a]), hi(c))
                    num[a] = Interval(L, U) if U > L else float(L)
            members.append(m.with_qid(cat_qid=cat, num_qid=num))
        out.append(QidGroup(members, list(g.new_flags), gid=g.gid))
    return out


def _merge_by(groups: Sequence[QidGroup], key: Callable[[QidGroup], tuple]) -> list[QidGroup]:
    merged: dict[tuple, QidGroup] = {}
    for g in groups:
        k = key(g)
        if k in merged:
            merged[k].members.extend(g.members)
            merged[k].new_flags.extend(g.new_flags)
        else:
            merged[k] = QidGroup(list(g.members), list(g.new_flags))
    out = list(merged.values())
    for gid, g in enumerate(out):
        g.gid = gid
    return out


def qidc_gen_and_merge(groups: Sequence[QidGroup], schema: QidSchema,
                       trees: Mapping[str, TaxonomyTree]) -> list[QidGroup]:
    """Generalize categoricals to the group LCA, then merge groups with identical tuples."""
    generalized = []
    for g in groups:
        cat = g.virtual_cat(schema, trees)
        members = [m.with_qid(cat_qid=cat) for m in g.members]
        generalized.append(QidGroup(members, list(g.new_flags), gid=g.gid))
    return _merge_by(generalized, lambda g: tuple(g.members[0].cat_qid[a] for a in schema.categorical))


def virtual_gen_and_merge(groups: Sequence[QidGroup], schema: QidSchema,
                          trees: Mapping[str, TaxonomyTree]) -> list[QidGroup]:
    """Merge groups whose LCA tuples coincide; member values stay raw."""
    return _merge_by(groups, lambda g: tuple(g.virtual_cat(schema, trees)[a] for a in schema.categorical))


def _map_groups(fn, groups, workers: int):
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, groups))
    return [fn(g) for g in groups]


def _publish(records: Sequence[Record], treatment: dict, index: int,
             suppressed: Sequence[str]) -> Release:
    out, gids = [], []
    for r in records:
        t = treatment.get(r.case_id)
        if t is None:
            continue
        cat, num, gid = t
        out.append(Record(r.case_id, dict(cat), dict(num), dict(r.sensitive), dict(r.other)))
        gids.append(gid)
    return Release(index, out, gids, tuple(suppressed))


def group_release(records: Sequence[Record], history: ReleaseHistory, cfg: PrivacyConfig,
                  schema: QidSchema, trees: Mapping[str, TaxonomyTree]) -> GroupingResult:
    """Validate, merge into super records, classify and run NCC grouping."""
    for r in records:
        schema.validate(r, trees)
    supers = merge_super_records(records, schema, trees)
    new, old = classify_cases(supers, history, cfg.lifespan_x)
    result = ncc_grouping(supers, new, old, cfg, schema, trees)
    log.info("release %d: %d super records (%d new), %d groups, %d suppressed",
             history.next_index, len(supers), len(new), len(result.groups), len(result.suppressed))
    return result


def anonymize_num(records: Sequence[Record], history: ReleaseHistory, cfg: PrivacyConfig,
                  schema: QidSchema, trees: Mapping[str, TaxonomyTree],
                  grouping: GroupingResult | None = None) -> Release:
    index = history.next_index
    result = grouping or group_release(records, history, cfg, schema, trees)
    groups = qidc_covering(result.groups, history, schema, trees, cfg.lifespan_x)
    groups = qidc_gen_and_merge(groups, schema, trees)
    budget = NoiseBudget(cfg.epsilon, cfg.seed, index)
    noised = _map_groups(lambda g: perturb_numeric_group(g, schema, budget), groups, cfg.workers)
    treatment = {}
    for g, nums in zip(groups, noised):
        for m, num in zip(g.members, nums):
            treatment[m.case_id] = (m.cat_qid, num, g.gid)
    return _publish(records, treatment, index, [s.case_id for s in result.suppressed])


def anonymize_all(records: Sequence[Record], history: ReleaseHistory, cfg: PrivacyConfig,
                  schema: QidSchema, trees: Mapping[str, TaxonomyTree],
                  grouping: GroupingResult | None = None) -> Release:
    index = history.next_index
    result = grouping or group_release(records, history, cfg, schema, trees)
    groups = virtual_gen_and_merge(result.groups, schema, trees)
    budget = NoiseBudget(cfg.epsilon, cfg.seed, index)

    def perturb(g):
        return perturb_numeric_group(g, schema, budget), exponential_perturb_group(g, schema, trees, budget)

    treatment = {}
    for g, (nums, cat) in zip(groups, _map_groups(perturb, groups, cfg.workers)):
        for m, num in zip(g.members, nums):
            treatment[m.case_id] = (cat, num, g.gid)
    return _publish(records, treatment, index, [s.case_id for s in result.suppressed])


def anonymize_baseline(records: Sequence[Record], history: ReleaseHistory, cfg: PrivacyConfig,
                       schema: QidSchema, trees: Mapping[str, TaxonomyTree],
                       grouping: GroupingResult | None = None) -> Release:
    index = history.next_index
    result = grouping or group_release(records, history, cfg, schema, trees)
    groups = qidc_covering(result.groups, history, schema, trees, cfg.lifespan_x, numeric=True)
    treatment = {}
    for g in groups:
        cat = g.virtual_cat(schema, trees)
        num = g.virtual_num(schema)
        for m in g.members:
            treatment[m.case_id] = (cat, num, g.gid)
    return _publish(records, treatment, index, [s.case_id for s in result.suppressed])


ANONYMIZERS = {"num": anonymize_num, "all": anonymize_all, "baseline": anonymize_baseline}


def anonymize(records: Sequence[Record], history: ReleaseHistory, cfg: PrivacyConfig,
              schema: QidSchema, trees: Mapping[str, TaxonomyTree], **kw) -> Release:
    return ANONYMIZERS[cfg.variant](records, history, cfg, schema, trees, **kw)


def anonymize_series(raw_releases: Sequence[Sequence[Record]], cfg: PrivacyConfig, schema: QidSchema,
                     trees: Mapping[str, TaxonomyTree], groupings: list | None = None) -> list[Release]:
    """Anonymize releases in order, each against the ones published before it.

    ``groupings`` may carry precomputed :class:`GroupingResult` objects (grouping
    depends only on raw data and case history, not on the variant or epsilon).
    """
    history = ReleaseHistory()
    out = []
    for i, records in enumerate(raw_releases):
        grouping = groupings[i] if groupings else None
        release = anonymize(records, history, cfg, schema, trees, grouping=grouping)
        history.append(release)
        out.append(release)
    return out


def precompute_groupings(raw_releases: Sequence[Sequence[Record]], cfg: PrivacyConfig,
                         schema: QidSchema, trees: Mapping[str, TaxonomyTree]) -> list[GroupingResult]:
    """Groupings for a series; valid for any variant run with the same k, theta and lifespan."""
    history = ReleaseHistory()
    out = []
    for i, records in enumerate(raw_releases):
        result = group_release(records, history, cfg, schema, trees)
        out.append(result)
        # only case ids matter for classification of later releases
        dropped = {s.case_id for s in result.suppressed}
        history.append(Release(i + 1, [r for r in records if r.case_id not in dropped]))
    return out
