"""Cross-release (backward / forward / latest) attack simulation and series audit.

A published record covers an attacker's raw QID when every categorical value is
an ancestor-or-equal of the raw leaf and every numeric value is an interval
containing the raw number, or a point within ``tau`` of it. ``tau`` is
``coverage_fraction`` times the attribute's published range in that release.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import sparse

from .model import Interval, QidSchema, Record, Release, Theta, hi, lo, mid
from .taxonomy import TaxonomyTree

ATTACKS = ("backward", "forward", "latest")
IN_RELEASE = "in_release"
FIRST_APPEARS_IN = "first_appears_in"


@dataclass(frozen=True)
class AttackTarget:
    qid: Mapping[str, object]
    known_release: int
    knowledge_kind: str = IN_RELEASE
    case_id: str | None = None
    label: str = ""

    def __post_init__(self):
        if self.knowledge_kind not in (IN_RELEASE, FIRST_APPEARS_IN):
            raise ValueError(f"unknown knowledge kind {self.knowledge_kind!r}")

    @property
    def attacks(self) -> tuple[str, ...]:
        if self.knowledge_kind == FIRST_APPEARS_IN:
            return ATTACKS
        return ("backward", "forward")


@dataclass(frozen=True)
class BackgroundRule:
    """Holding ``value`` implies the QID constraints: allowed nodes (categorical) or a range (numeric)."""

    value: str
    constraints: Mapping[str, object]


@dataclass
class AttackResult:
    kind: str
    release: int
    candidates: frozenset[str]
    pruned: frozenset[str]
    sensitive: dict[str, frozenset[str]]

    def frequencies(self) -> dict[str, float]:
        n = len(self.pruned)
        counts: dict[str, int] = {}
        for c in self.pruned:
            for v in self.sensitive[c]:
                counts[v] = counts.get(v, 0) + 1
        return {v: c / n for v, c in sorted(counts.items())} if n else {}

    def common_values(self) -> frozenset[str]:
        sets = [self.sensitive[c] for c in self.pruned]
        return frozenset.intersection(*sets) if sets else frozenset()

    def all_values(self) -> frozenset[str]:
        return frozenset().union(*(self.sensitive[c] for c in self.pruned))


class _View:
    """Column arrays of one release, collapsed to one entry per case."""

    def __init__(self, release: Release, schema: QidSchema, trees: Mapping[str, TaxonomyTree],
                 gindex: dict[str, int], vocab: dict[str, int], coverage_fraction: float):
        self.index = release.index
        rows = release.records
        local: dict[str, int] = {}
        row_case = np.empty(len(rows), dtype=np.int64)
        values: list[set] = []
        for j, r in enumerate(rows):
            c = local.setdefault(r.case_id, len(local))
            if c == len(values):
                values.append(set())
            values[c] |= r.sensitive_values()
            row_case[j] = c
        self.n = len(local)
        self.case_ids = list(local)
        self.case_gid = np.array([gindex[c] for c in self.case_ids], dtype=np.int64)
        self.gpos = np.full(len(gindex), -1, dtype=np.int64)
        self.gpos[self.case_gid] = np.arange(self.n)
        self.row_case = row_case
        self.single_row = len(rows) == self.n
        self.values = [frozenset(v) for v in values]
        r_idx = [c for c, vs in enumerate(self.values) for _ in vs]
        c_idx = [vocab[v] for vs in self.values for v in vs]
        self.incidence = sparse.csr_matrix((np.ones(len(c_idx)), (r_idx, c_idx)),
                                           shape=(self.n, max(len(vocab), 1)))
        self.cat = {}
        for a in schema.categorical:
            t = trees[a]
            self.cat[a] = np.array([t.index.get(r.cat_qid.get(a), -1) for r in rows], dtype=np.int64)
        self.num = {}
        for a in schema.numeric:
            L = np.array([lo(r.num_qid[a]) for r in rows])
            U = np.array([hi(r.num_qid[a]) for r in rows])
            point = np.array([not isinstance(r.num_qid[a], Interval) for r in rows], dtype=bool)
            span = float(U.max() - L.min()) if len(rows) else 0.0
            self.num[a] = (L, U, point, coverage_fraction * span)

    def covers(self, qid: Mapping[str, object], trees: Mapping[str, TaxonomyTree]) -> np.ndarray:
        row = np.ones(len(self.row_case), dtype=bool)
        for a, v in qid.items():
            if a in self.cat:
                t = trees[a]
                codes = self.cat[a]
                ok = np.zeros_like(row)
                valid = codes >= 0
                ok[valid] = t.covers_table[codes[valid], t.index[v]]
                row &= ok
            elif a in self.num:
                L, U, point, tau = self.num[a]
                x = float(v)
                row &= np.where(point, np.abs(L - x) <= tau, (L <= x) & (x <= U))
            else:
                raise KeyError(f"target attribute {a!r} is not a QID of the release")
        if self.single_row:
            return row
        return np.bincount(self.row_case, weights=row, minlength=self.n) > 0


class Attacker:
    """Linking attacker over a published series."""

    def __init__(self, releases: Sequence[Release], schema: QidSchema,
                 trees: Mapping[str, TaxonomyTree], coverage_fraction: float = 0.05):
        self.schema = schema
        self.trees = trees
        self.releases = sorted(releases, key=lambda r: r.index)
        gindex: dict[str, int] = {}
        vocab_set: set[str] = set()
        for rel in self.releases:
            for r in rel.records:
                gindex.setdefault(r.case_id, len(gindex))
                vocab_set |= r.sensitive_values()
        self.vocab = {v: i for i, v in enumerate(sorted(vocab_set))}
        self.gindex = gindex
        self.views = [_View(rel, schema, trees, gindex, self.vocab, coverage_fraction)
                      for rel in self.releases]
        self.pos = {v.index: p for p, v in enumerate(self.views)}

    def view(self, index: int) -> _View:
        try:
            return self.views[self.pos[index]]
        except KeyError:
            raise KeyError(f"release {index} is not part of the series") from None

    # -- low-level (local indices, used by the audit) ------------------
    def _masks(self, target: AttackTarget) -> dict[int, np.ndarray]:
        return {v.index: v.covers(target.qid, self.trees) for v in self.views}

    def _prune(self, kind: str, target: AttackTarget, masks: dict[int, np.ndarray]):
        base = self.view(target.known_release)
        cand = np.flatnonzero(masks[base.index])
        gids = base.case_gid[cand]
        keep = np.ones(len(cand), dtype=bool)
        for v in self.views:
            if kind == "backward" and v.index < base.index or kind == "forward" and v.index > base.index:
                p = v.gpos[gids]
                present = p >= 0
                keep[present] &= masks[v.index][p[present]]
            elif kind == "latest" and v.index < base.index:
                keep &= v.gpos[gids] < 0
            elif kind not in ATTACKS:
                raise ValueError(f"unknown attack {kind!r}")
        return cand, keep

    def _background_mask(self, target: AttackTarget, rules: Iterable[BackgroundRule]) -> np.ndarray:
        bad = np.zeros(max(len(self.vocab), 1))
        for rule in rules:
            j = self.vocab.get(rule.value)
            if j is not None and not _consistent(rule, target.qid, self.schema, self.trees):
                bad[j] = 1
        return bad

    # -- public --------------------------------------------------------
    def candidate_set(self, target: AttackTarget, release: int | None = None) -> frozenset[str]:
        v = self.view(target.known_release if release is None else release)
        mask = v.covers(target.qid, self.trees)
        return frozenset(v.case_ids[i] for i in np.flatnonzero(mask))

    def attack(self, kind: str, target: AttackTarget,
               rules: Iterable[BackgroundRule] | None = None) -> AttackResult:
        masks = self._masks(target)
        cand, keep = self._prune(kind, target, masks)
        base = self.view(target.known_release)
        if rules:
            bad = self._background_mask(target, rules)
            keep &= (base.incidence[cand] @ bad) == 0 if len(cand) else keep
        return AttackResult(
            kind, base.index,
            frozenset(base.case_ids[i] for i in cand),
            frozenset(base.case_ids[i] for i in cand[keep]),
            {base.case_ids[i]: base.values[i] for i in cand},
        )

    def background_prune(self, result: AttackResult, target: AttackTarget,
                         rules: Iterable[BackgroundRule]) -> AttackResult:
        rules = list(rules)
        keep = frozenset(c for c in result.pruned
                         if all(_consistent(r, target.qid, self.schema, self.trees)
                                for r in rules if r.value in result.sensitive[c]))
        return AttackResult(result.kind, result.release, result.candidates, keep, result.sensitive)


def _consistent(rule: BackgroundRule, qid: Mapping[str, object], schema: QidSchema,
                trees: Mapping[str, TaxonomyTree]) -> bool:
    for attr, allowed in rule.constraints.items():
        if attr not in qid:
            continue
        if attr in schema.categorical:
            t = trees[attr]
            if not any(a in t and t.is_ancestor_or_equal(a, qid[attr]) for a in allowed):
                return False
        else:
            low, high = allowed
            if not low <= float(qid[attr]) <= high:
                return False
    return True


def candidate_set(target: AttackTarget, release: Release, schema: QidSchema,
                  trees: Mapping[str, TaxonomyTree], coverage_fraction: float = 0.05) -> frozenset[str]:
    return Attacker([release], schema, trees, coverage_fraction).candidate_set(target, release.index)


def backward_attack(target, releases, schema, trees, coverage_fraction=0.05) -> AttackResult:
    return Attacker(releases, schema, trees, coverage_fraction).attack("backward", target)


def forward_attack(target, releases, schema, trees, coverage_fraction=0.05) -> AttackResult:
    return Attacker(releases, schema, trees, coverage_fraction).attack("forward", target)


def latest_attack(target, releases, schema, trees, coverage_fraction=0.05) -> AttackResult:
    return Attacker(releases, schema, trees, coverage_fraction).attack("latest", target)


def background_prune(result: AttackResult, target: AttackTarget, releases, rules, schema, trees,
                     coverage_fraction=0.05) -> AttackResult:
    return Attacker(releases, schema, trees, coverage_fraction).background_prune(result, target, rules)


# -- audit ---------------------------------------------------------------

def _case_order(case_id: str) -> tuple:
    # numeric ids in numeric order, anything else after them
    return (0, int(case_id), "") if case_id.isdigit() else (1, 0, case_id)


@dataclass
class Finding:
    release: int
    attack: str
    target: str
    size: int
    record_breach: bool
    attribute_breach: bool
    top_value: str | None
    top_frequency: float
    candidates: tuple[str, ...]


@dataclass
class ReleaseAudit:
    """Counts per (target, attack) pair, except ``targets`` and ``breached_targets``.

    A record breach needs the target's own case among fewer than k survivors;
    ``small_candidate_sets`` counts every survivor set below k, empty ones included.
    """

    targets: int = 0
    breached_targets: int = 0
    record_breaches: int = 0
    attribute_breaches: int = 0
    small_candidate_sets: int = 0
    by_attack: dict[str, list[int]] = field(default_factory=lambda: {a: [0, 0] for a in ATTACKS})


@dataclass
class AuditReport:
    k: int
    per_release: dict[int, ReleaseAudit]
    findings: list[Finding]
    ci_sizes: dict[str, list[int]]
    background: bool = False

    @property
    def record_breaches(self) -> int:
        return sum(r.record_breaches for r in self.per_release.values())

    @property
    def attribute_breaches(self) -> int:
        return sum(r.attribute_breaches for r in self.per_release.values())

    @property
    def breached_targets(self) -> int:
        return sum(r.breached_targets for r in self.per_release.values())

    @property
    def small_candidate_sets(self) -> int:
        return sum(r.small_candidate_sets for r in self.per_release.values())

    @property
    def targets(self) -> int:
        return sum(r.targets for r in self.per_release.values())

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "background": self.background,
            "targets": self.targets,
            "breached_targets": self.breached_targets,
            "record_breaches": self.record_breaches,
            "attribute_breaches": self.attribute_breaches,
            "small_candidate_sets": self.small_candidate_sets,
            "per_release": {
                str(i): {
                    "targets": r.targets,
                    "breached_targets": r.breached_targets,
                    "record_breaches": r.record_breaches,
                    "attribute_breaches": r.attribute_breaches,
                    "small_candidate_sets": r.small_candidate_sets,
                    "by_attack": {a: {"record": v[0], "attribute": v[1]} for a, v in r.by_attack.items()},
                }
                for i, r in sorted(self.per_release.items())
            },
            "findings": [f.__dict__ | {"candidates": list(f.candidates)} for f in self.findings],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self, max_findings: int = 20) -> str:
        lines = [f"audit k={self.k} background={'on' if self.background else 'off'}",
                 "release\ttargets\tbreached\trecord\tattribute\tsmall_ci"]
        for i, r in sorted(self.per_release.items()):
            lines.append(f"R_{i}\t{r.targets}\t{r.breached_targets}\t{r.record_breaches}\t{r.attribute_breaches}"
                         f"\t{r.small_candidate_sets}")
        lines.append(f"total\t{self.targets}\t{self.breached_targets}\t{self.record_breaches}\t"
                     f"{self.attribute_breaches}\t{self.small_candidate_sets}")
        for f in self.findings[:max_findings]:
            kinds = "+".join(k for k, on in (("record", f.record_breach), ("attribute", f.attribute_breach)) if on)
            lines.append(f"breach R_{f.release} {f.attack} target={f.target} |CI|={f.size} {kinds} "
                         f"top={f.top_value}:{f.top_frequency:.2f} CI={{{', '.join(f.candidates)}}}")
        if len(self.findings) > max_findings:
            lines.append(f"... {len(self.findings) - max_findings} more breaches")
        return "\n".join(lines)


def _evaluate(attacker: Attacker, target: AttackTarget, k: int, theta: Theta,
              rules: Sequence[BackgroundRule] | None, theta_vec: np.ndarray,
              report: AuditReport, per: ReleaseAudit) -> None:
    masks = attacker._masks(target)
    base = attacker.view(target.known_release)
    own = base.gpos[attacker.gindex[target.case_id]] if target.case_id in attacker.gindex else -1
    bad = attacker._background_mask(target, rules) if rules else None
    hit = False
    for kind in target.attacks:
        cand, keep = attacker._prune(kind, target, masks)
        if bad is not None and len(cand):
            keep &= (base.incidence[cand] @ bad) == 0
        kept = cand[keep]
        size = len(kept)
        report.ci_sizes[kind].append(size)
        per.small_candidate_sets += size < k
        if size == 0:
            continue
        # a breach needs the target's own record to survive; unknown owner counts as survived
        if target.case_id is not None and own not in kept:
            continue
        counts = np.asarray(base.incidence[kept].sum(axis=0)).ravel()
        freqs = counts / size
        over = freqs > theta_vec + 1e-12
        rec = size < k
        att = bool(over.any())
        if not (rec or att):
            continue
        hit = True
        per.by_attack[kind][0] += rec
        per.by_attack[kind][1] += att
        per.record_breaches += rec
        per.attribute_breaches += att
        top = int(np.argmax(freqs)) if counts.any() else None
        vocab = list(attacker.vocab)
        report.findings.append(Finding(
            base.index, kind, target.label or str(target.case_id), size, rec, att,
            vocab[top] if top is not None else None, float(freqs[top]) if top is not None else 0.0,
            tuple(sorted((base.case_ids[i] for i in kept), key=_case_order)) if size <= 2 * k else (),
        ))
    per.targets += 1
    per.breached_targets += hit


def audit_targets(targets: Iterable[AttackTarget], releases: Sequence[Release], schema: QidSchema,
                  trees: Mapping[str, TaxonomyTree], k: int, theta: Theta,
                  rules: Sequence[BackgroundRule] | None = None,
                  coverage_fraction: float = 0.05) -> AuditReport:
    """Run every attack the targets' knowledge allows and count breaches."""
    attacker = Attacker(releases, schema, trees, coverage_fraction)
    theta_vec = np.array([theta(v) for v in attacker.vocab] or [1.0])
    report = AuditReport(k, {}, [], {a: [] for a in ATTACKS}, background=bool(rules))
    for target in targets:
        per = report.per_release.setdefault(target.known_release, ReleaseAudit())
        _evaluate(attacker, target, k, theta, rules, theta_vec, report, per)
    return report


def pseudo_targets(releases: Sequence[Release], originals: Sequence[Sequence[Record]],
                   schema: QidSchema) -> list[AttackTarget]:
    """One target per published case per release, carrying the case's raw QID.

    Every case is audited as 'known to be in this release'; cases published for
    the first time are additionally audited with first-appearance knowledge.
    """
    out = []
    seen: set[str] = set()
    for release, raw in zip(sorted(releases, key=lambda r: r.index), originals):
        published = release.case_ids()
        first_rows: dict[str, Record] = {}
        for r in raw:
            if r.case_id in published:
                first_rows.setdefault(r.case_id, r)
        for case_id, r in first_rows.items():
            qid = {a: r.cat_qid[a] for a in schema.categorical}
            qid.update({a: mid(r.num_qid[a]) for a in schema.numeric})
            kind = IN_RELEASE if case_id in seen else FIRST_APPEARS_IN
            out.append(AttackTarget(qid, release.index, kind, case_id=case_id))
        seen |= published
    return out


def audit_series(releases: Sequence[Release], originals: Sequence[Sequence[Record]],
                 schema: QidSchema, trees: Mapping[str, TaxonomyTree], k: int, theta: Theta,
                 rules: Sequence[BackgroundRule] | None = None,
                 coverage_fraction: float = 0.05) -> AuditReport:
    """Audit every published case of every release against all applicable attacks.

    ``originals[i]`` holds the raw records behind the i-th release (by index order).
    """
    if not releases:
        raise ValueError("audit needs at least one release")
    targets = pseudo_targets(releases, originals, schema)
    return audit_targets(targets, releases, schema, trees, k, theta, rules, coverage_fraction)
