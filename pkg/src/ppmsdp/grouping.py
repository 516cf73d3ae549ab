"""New-case-core grouping.

Phase 1 builds cores out of new cases only, each growing greedily from the first
unassigned new case by the record with the smallest ``delta_il * privacy_risk``
until it holds at least k records and respects every sensitive-value threshold.
Phase 2 places leftover new cases and all old cases into the existing group with
the smallest product, skipping groups whose bounds the record would break.

The scalar functions (``delta_il``, ``privacy_risk``, ``check_bounds``) define
the scoring; ``_Engine`` evaluates the same quantities with numpy over all
candidates at once.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np
from scipy import sparse

from .metrics import interval_distance
from .model import (InfeasibleReleaseError, Interval, PrivacyConfig, QidSchema, SuperRecord,
                    Theta, hi, lo, mid)
from .taxonomy import TaxonomyTree, categorical_distortion, generalize_lca

log = logging.getLogger(__name__)

# Slack for frequency-vs-threshold comparisons (counts/size vs theta).
_FREQ_EPS = 1e-9


@dataclass
class QidGroup:
    members: list[SuperRecord]
    new_flags: list[bool] = field(default_factory=list)
    gid: int = -1

    def __post_init__(self):
        if not self.new_flags:
            self.new_flags = [False] * len(self.members)
        if len(self.new_flags) != len(self.members):
            raise ValueError("new_flags must align with members")

    def __len__(self) -> int:
        return len(self.members)

    @property
    def new_count(self) -> int:
        return sum(self.new_flags)

    def virtual_cat(self, schema: QidSchema, trees: Mapping[str, TaxonomyTree]) -> dict[str, str]:
        return {a: generalize_lca([m.cat_qid[a] for m in self.members], trees[a]) for a in schema.categorical}

    def virtual_num(self, schema: QidSchema) -> dict[str, Interval]:
        return {a: Interval(min(lo(m.num_qid[a]) for m in self.members),
                            max(hi(m.num_qid[a]) for m in self.members)) for a in schema.numeric}

    def value_counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for m in self.members:
            for v in m.sensitive_values():
                out[v] = out.get(v, 0) + 1
        return out


class BoundsCheck(NamedTuple):
    passed: bool
    violations: list[str]

    def __bool__(self) -> bool:
        return self.passed


def check_bounds(g: QidGroup, cfg: PrivacyConfig, mode: str = "ms") -> BoundsCheck:
    """``ms``: size >= k and every value frequency within its threshold. ``nc``: >= k new cases."""
    if mode == "nc":
        ok = g.new_count >= cfg.k
        return BoundsCheck(ok, [] if ok else [f"{g.new_count} new cases < k={cfg.k}"])
    if mode != "ms":
        raise ValueError(f"unknown bounds mode {mode!r}")
    violations = []
    if len(g) < cfg.k:
        violations.append(f"size {len(g)} < k={cfg.k}")
    for value, count in sorted(g.value_counts().items()):
        if count > cfg.theta(value) * len(g) + _FREQ_EPS:
            violations.append(f"{value!r} frequency {count}/{len(g)} > {cfg.theta(value)}")
    return BoundsCheck(not violations, violations)


def group_information_loss(members: Sequence[SuperRecord], schema: QidSchema,
                           trees: Mapping[str, TaxonomyTree]) -> float:
    """Total distortion of generalizing ``members`` to their LCA / covering interval."""
    if not members:
        return 0.0
    g = QidGroup(list(members))
    cat = g.virtual_cat(schema, trees)
    num = g.virtual_num(schema)
    total = 0.0
    for m in members:
        for a in schema.categorical:
            total += categorical_distortion(m.cat_qid[a], cat[a], trees[a])
        for a in schema.numeric:
            total += float(interval_distance(mid(m.num_qid[a]), num[a].lo, num[a].hi)) / schema.span(a)
    return total


def delta_il(g: QidGroup, r: SuperRecord, schema: QidSchema, trees: Mapping[str, TaxonomyTree]) -> float:
    before = group_information_loss(g.members, schema, trees)
    after = group_information_loss([*g.members, r], schema, trees)
    return max(after - before, 0.0)


def privacy_risk(g: QidGroup, r: SuperRecord, theta: Theta) -> float:
    """Product over values in ``g + r`` of ``max(1, freq / theta)``."""
    counts = g.value_counts()
    for v in r.sensitive_values():
        counts[v] = counts.get(v, 0) + 1
    n = len(g) + 1
    out = 1.0
    for v, c in counts.items():
        out *= max(1.0, (c / n) / theta(v))
    return out


@dataclass
class GroupingResult:
    groups: list[QidGroup]
    suppressed: list[SuperRecord]


# -- vectorised engine ---------------------------------------------------

class _Engine:
    def __init__(self, supers: Sequence[SuperRecord], schema: QidSchema,
                 trees: Mapping[str, TaxonomyTree], theta: Theta):
        self.n = len(supers)
        self.cat = []
        for a in schema.categorical:
            t = trees[a]
            codes = np.array([t.index[s.cat_qid[a]] for s in supers], dtype=np.int64)
            self.cat.append((codes, t.lca_table, t.distortion_table, len(t)))
        self.num = []
        for a in schema.numeric:
            self.num.append((
                np.array([lo(s.num_qid[a]) for s in supers]),
                np.array([hi(s.num_qid[a]) for s in supers]),
                np.array([mid(s.num_qid[a]) for s in supers]),
                schema.span(a),
            ))
        value_sets = [sorted(s.sensitive_values()) for s in supers]
        self.vocab = sorted({v for vs in value_sets for v in vs})
        vindex = {v: i for i, v in enumerate(self.vocab)}
        self.tokens = [np.array([vindex[v] for v in vs], dtype=np.int64) for vs in value_sets]
        rows = np.repeat(np.arange(self.n), [len(t) for t in self.tokens])
        cols = np.concatenate(self.tokens) if self.n else np.array([], dtype=np.int64)
        self.T = max(len(self.vocab), 1)
        self.M = sparse.csr_matrix((np.ones(len(cols)), (rows, cols)), shape=(self.n, self.T))
        self.theta = np.array([theta(v) for v in self.vocab] or [1.0])

    # numeric cost of a group with moments (s, S1, S2) widened to [nL, nU],
    # plus the candidate at position mc; every point lies inside its interval
    @staticmethod
    def _num_cost(s, S1, S2, nL, nU, mc, span):
        w = nU - nL
        inside = (2 * S2 - 2 * (nL + nU) * S1 + s * (nL ** 2 + nU ** 2)
                  + (mc - nL) ** 2 + (nU - mc) ** 2)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(w > 0, inside / (2 * np.where(w > 0, w, 1.0)), 0.0)
        return out / span

    @staticmethod
    def _f(counts, thr):
        with np.errstate(divide="ignore"):
            return np.where(counts > 0, np.maximum(0.0, np.log(np.maximum(counts, 1e-300) / thr)), 0.0)


class _Core:
    """Mutable state of one growing group."""

    def __init__(self, eng: _Engine, i: int):
        self.eng = eng
        self.idx = [i]
        self.cat_counts = []
        self.cat_lca = []
        for codes, _, _, nn in eng.cat:
            c = np.zeros(nn)
            c[codes[i]] = 1
            self.cat_counts.append(c)
            self.cat_lca.append(int(codes[i]))
        self.L = [float(l[i]) for l, _, _, _ in eng.num]
        self.U = [float(h[i]) for _, h, _, _ in eng.num]
        self.S1 = [float(m[i]) for _, _, m, _ in eng.num]
        self.S2 = [float(m[i]) ** 2 for _, _, m, _ in eng.num]
        self.tok = np.zeros(eng.T)
        self.tok[eng.tokens[i]] += 1
        self.cost = self._cost_of_self()

    def _cost_of_self(self) -> float:
        total = 0.0
        for (codes, _, il, _), c, l in zip(self.eng.cat, self.cat_counts, self.cat_lca):
            total += float(c @ il[:, l])
        for j, (_, _, _, span) in enumerate(self.eng.num):
            s = len(self.idx)
            w = self.U[j] - self.L[j]
            if w > 0:
                total += (2 * self.S2[j] - 2 * (self.L[j] + self.U[j]) * self.S1[j]
                          + s * (self.L[j] ** 2 + self.U[j] ** 2)) / (2 * w) / span
        return total

    @property
    def size(self) -> int:
        return len(self.idx)

    def passes(self, k: int) -> bool:
        return self.size >= k and bool(np.all(self.tok <= self.eng.theta * self.size + _FREQ_EPS))

    def score(self, cand: np.ndarray, Mdelta_all=None):
        eng = self.eng
        new_cost = np.zeros(len(cand))
        for (codes, lca, il, _), c, l in zip(eng.cat, self.cat_counts, self.cat_lca):
            cc = codes[cand]
            new = lca[l, cc]
            new_cost += c @ il[:, new] + il[cc, new]
        s = self.size
        for j, (lo_, hi_, mid_, span) in enumerate(eng.num):
            nL = np.minimum(self.L[j], lo_[cand])
            nU = np.maximum(self.U[j], hi_[cand])
            new_cost += eng._num_cost(s, self.S1[j], self.S2[j], nL, nU, mid_[cand], span)
        delta = np.maximum(new_cost - self.cost, 0.0)
        n1 = s + 1
        thr = eng.theta * n1
        fcur = eng._f(self.tok, thr)
        fplus = eng._f(self.tok + 1, thr)
        logpr = fcur.sum() + (eng.M @ (fplus - fcur))[cand]
        return delta, logpr, new_cost

    def add(self, i: int, new_cost: float) -> None:
        eng = self.eng
        self.idx.append(i)
        for a, (codes, lca, _, _) in enumerate(eng.cat):
            self.cat_counts[a][codes[i]] += 1
            self.cat_lca[a] = int(lca[self.cat_lca[a], codes[i]])
        for j, (lo_, hi_, mid_, _) in enumerate(eng.num):
            self.L[j] = min(self.L[j], float(lo_[i]))
            self.U[j] = max(self.U[j], float(hi_[i]))
            self.S1[j] += float(mid_[i])
            self.S2[j] += float(mid_[i]) ** 2
        self.tok[eng.tokens[i]] += 1
        self.cost = float(new_cost)


class _Pool:
    """Column-wise state of all finished groups, for phase 2 assignment."""

    def __init__(self, eng: _Engine, cores: list[_Core], new_mask: np.ndarray):
        self.eng = eng
        G = len(cores)
        self.members = [list(c.idx) for c in cores]
        self.size = np.array([c.size for c in cores], dtype=float)
        self.new_size = np.array([sum(new_mask[i] for i in c.idx) for c in cores], dtype=float)
        self.cat_counts = [np.stack([c.cat_counts[a] for c in cores]) for a in range(len(eng.cat))]
        self.cat_lca = [np.array([c.cat_lca[a] for c in cores]) for a in range(len(eng.cat))]
        self.L = [np.array([c.L[j] for c in cores]) for j in range(len(eng.num))]
        self.U = [np.array([c.U[j] for c in cores]) for j in range(len(eng.num))]
        self.S1 = [np.array([c.S1[j] for c in cores]) for j in range(len(eng.num))]
        self.S2 = [np.array([c.S2[j] for c in cores]) for j in range(len(eng.num))]
        self.tok = np.stack([c.tok for c in cores]) if G else np.zeros((0, eng.T))
        self.tok_new = np.zeros_like(self.tok)
        for g, c in enumerate(cores):
            for i in c.idx:
                if new_mask[i]:
                    self.tok_new[g, eng.tokens[i]] += 1
        self.cost = np.array([c.cost for c in cores])

    def _violations(self, counts, sizes, toks):
        thr = self.eng.theta[None, :] * (sizes + 1)[:, None] + _FREQ_EPS
        cur = counts > thr
        plus = counts[:, toks] + 1 > thr[:, toks]
        return cur.sum(axis=1) - cur[:, toks].sum(axis=1) + plus.sum(axis=1)

    def place(self, i: int, is_new: bool) -> int | None:
        eng = self.eng
        G = len(self.members)
        new_cost = np.zeros(G)
        for a, (codes, lca, il, _) in enumerate(eng.cat):
            ci = codes[i]
            new = lca[self.cat_lca[a], ci]
            new_cost += np.einsum("gn,ng->g", self.cat_counts[a], il[:, new]) + il[ci, new]
        for j, (lo_, hi_, mid_, span) in enumerate(eng.num):
            nL = np.minimum(self.L[j], lo_[i])
            nU = np.maximum(self.U[j], hi_[i])
            new_cost += eng._num_cost(self.size, self.S1[j], self.S2[j], nL, nU, mid_[i], span)
        delta = np.maximum(new_cost - self.cost, 0.0)
        toks = eng.tokens[i]
        thr = eng.theta[None, :] * (self.size + 1)[:, None]
        fcur = eng._f(self.tok, thr)
        logpr = fcur.sum(axis=1) + (eng._f(self.tok[:, toks] + 1, thr[:, toks]) - fcur[:, toks]).sum(axis=1)
        feasible = self._violations(self.tok, self.size, toks) == 0
        if is_new:
            feasible &= self._violations(self.tok_new, self.new_size, toks) == 0
        if not feasible.any():
            return None
        key = delta * np.exp(logpr)
        cand = np.flatnonzero(feasible)
        g = int(cand[np.lexsort((cand, logpr[cand], key[cand]))[0]])
        self.members[g].append(i)
        for a, (codes, lca, _, _) in enumerate(eng.cat):
            self.cat_counts[a][g, codes[i]] += 1
            self.cat_lca[a][g] = lca[self.cat_lca[a][g], codes[i]]
        for j, (lo_, hi_, mid_, _) in enumerate(eng.num):
            self.L[j][g] = min(self.L[j][g], lo_[i])
            self.U[j][g] = max(self.U[j][g], hi_[i])
            self.S1[j][g] += mid_[i]
            self.S2[j][g] += mid_[i] ** 2
        self.size[g] += 1
        self.tok[g, toks] += 1
        if is_new:
            self.new_size[g] += 1
            self.tok_new[g, toks] += 1
        self.cost[g] = new_cost[g]
        return g


def ncc_grouping(supers: Sequence[SuperRecord], new_cases: set[str], old_cases: set[str],
                 cfg: PrivacyConfig, schema: QidSchema,
                 trees: Mapping[str, TaxonomyTree]) -> GroupingResult:
    """Cluster super records into groups satisfying MS(k, theta)- and NC-bounding."""
    ids = [s.case_id for s in supers]
    if set(ids) != (new_cases | old_cases) or new_cases & old_cases:
        raise ValueError("new and old cases must partition the super records")
    k = cfg.k
    new_mask = np.array([s.case_id in new_cases for s in supers], dtype=bool)
    nc_order = np.flatnonzero(new_mask)
    if len(nc_order) < k:
        raise InfeasibleReleaseError(
            f"only {len(nc_order)} new cases; NC-bounding needs at least k={k}")

    eng = _Engine(supers, schema, trees, cfg.theta)
    free = new_mask.copy()
    cores: list[_Core] = []
    while free.sum() >= k:
        seed = int(np.flatnonzero(free)[0])
        free[seed] = False
        core = _Core(eng, seed)
        while not core.passes(k):
            cand = np.flatnonzero(free)
            if cand.size == 0:
                break
            delta, logpr, new_cost = core.score(cand)
            key = delta * np.exp(logpr)
            pick = int(np.lexsort((cand, logpr, key))[0])
            free[cand[pick]] = False
            core.add(int(cand[pick]), new_cost[pick])
        if not core.passes(k):
            # could not be completed: hand its records to phase 2
            free[core.idx] = True
            break
        cores.append(core)
    if not cores:
        raise InfeasibleReleaseError("no group of new cases satisfies the thresholds")

    pool = _Pool(eng, cores, new_mask)
    suppressed = []
    leftovers = [int(i) for i in np.flatnonzero(free)] + [int(i) for i in np.flatnonzero(~new_mask)]
    for i in leftovers:
        if pool.place(i, bool(new_mask[i])) is None:
            suppressed.append(supers[i])
    if suppressed:
        log.info("suppressed %d super records that fit no group", len(suppressed))

    groups = [QidGroup([supers[i] for i in m], [bool(new_mask[i]) for i in m], gid=g)
              for g, m in enumerate(pool.members)]
    return GroupingResult(groups, suppressed)
