from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ppmsdp.grouping import (QidGroup, check_bounds, delta_il, group_information_loss, ncc_grouping,
                             privacy_risk)
from ppmsdp.model import InfeasibleReleaseError, Interval, PrivacyConfig, QidSchema, Record, SuperRecord, Theta
from ppmsdp.taxonomy import TaxonomyTree

from oracles import distance

SCHEMA = QidSchema(categorical=("Gender", "Age"), numeric={"Weight": (0, 200)}, sensitive=("Disease",))
TREES = {
    "Gender": TaxonomyTree.from_nested({"Any": {"Male": {}, "Female": {}}}),
    "Age": TaxonomyTree.from_nested({"Any": {"Non-adult": {"Child": {}, "Adolescent": {}},
                                             "Adult": {"Young": {}, "Elderly": {}}}}),
}
PARENTS = {a: {n: t.parent(n) for n in t.nodes} for a, t in TREES.items()}
DISEASES = ("Flu", "HIV", "Asthma", "Gout", "Acne", "Migraine")


def sup(case, gender, age, weight, diseases):
    return SuperRecord(str(case), {"Gender": gender, "Age": age}, {"Weight": weight},
                       {"Disease": frozenset(diseases)}, ())


@st.composite
def instances(draw):
    n = draw(st.integers(6, 26))
    supers = []
    for i in range(n):
        supers.append(sup(i, draw(st.sampled_from(["Male", "Female", "Any"])),
                          draw(st.sampled_from(TREES["Age"].nodes)),
                          draw(st.floats(1, 199).map(lambda x: round(x, 3))),
                          draw(st.sets(st.sampled_from(DISEASES), min_size=1, max_size=2))))
    old = draw(st.sets(st.integers(0, n - 1), max_size=n // 3))
    k = draw(st.integers(2, 4))
    theta = draw(st.sampled_from([0.5, 0.75, 1.0]))
    return supers, {str(i) for i in old}, k, theta


# -- scalar reference --------------------------------------------------------

def _fits(members, theta, extra):
    n = len(members) + 1
    counts = {}
    for m in [*members, extra]:
        for v in m.sensitive_values():
            counts[v] = counts.get(v, 0) + 1
    return all(c <= theta(v) * n + 1e-9 for v, c in counts.items())


def reference_grouping(supers, new_ids, cfg):
    k, theta = cfg.k, cfg.theta
    free = [i for i, s in enumerate(supers) if s.case_id in new_ids]
    cores = []
    while len(free) >= k:
        core = [free.pop(0)]
        while not check_bounds(QidGroup([supers[i] for i in core]), cfg):
            if not free:
                break
            g = QidGroup([supers[i] for i in core])
            scored = []
            for c in free:
                pr = privacy_risk(g, supers[c], theta)
                scored.append((delta_il(g, supers[c], SCHEMA, TREES) * pr, pr, c))
            best = min(scored, key=lambda t: (round(t[0], 9), round(t[1], 9), t[2]))[2]
            free.remove(best)
            core.append(best)
        if not check_bounds(QidGroup([supers[i] for i in core]), cfg):
            free = sorted(free + core)
            break
        cores.append(core)
    if not cores:
        raise InfeasibleReleaseError("none")
    old = [i for i, s in enumerate(supers) if s.case_id not in new_ids]
    suppressed = []
    for i in free + old:
        is_new = supers[i].case_id in new_ids
        options = []
        for gi, core in enumerate(cores):
            members = [supers[j] for j in core]
            if not _fits(members, theta, supers[i]):
                continue
            if is_new and not _fits([m for m in members if m.case_id in new_ids], theta, supers[i]):
                continue
            g = QidGroup(members)
            pr = privacy_risk(g, supers[i], theta)
            options.append((round(delta_il(g, supers[i], SCHEMA, TREES) * pr, 9), round(pr, 9), gi))
        if options:
            cores[min(options)[2]].append(i)
        else:
            suppressed.append(i)
    return [[supers[i].case_id for i in c] for c in cores], [supers[i].case_id for i in suppressed]


# -- scalar pieces -------------------------------------------------------------

def test_group_information_loss_matches_distance_oracle():
    members = [sup(1, "Male", "Child", 30.0, ["Flu"]), sup(2, "Female", "Adolescent", 50.0, ["HIV"]),
               sup(3, "Male", "Child", Interval(40.0, 44.0), ["Flu"])]
    published = Record("x", {"Gender": "Any", "Age": "Non-adult"}, {"Weight": Interval(30.0, 50.0)}, {})
    expected = sum(distance(m, published, SCHEMA, PARENTS) for m in members)
    assert group_information_loss(members, SCHEMA, TREES) == pytest.approx(expected, rel=1e-12)


def test_delta_il_and_privacy_risk():
    g = QidGroup([sup(1, "Male", "Child", 30.0, ["Flu"]), sup(2, "Male", "Child", 30.0, ["HIV"])])
    assert delta_il(g, sup(3, "Male", "Child", 30.0, ["Gout"]), SCHEMA, TREES) == 0
    assert delta_il(g, sup(3, "Female", "Child", 30.0, ["Gout"]), SCHEMA, TREES) > 0
    theta = Theta(0.5)
    # adding a third Flu: Flu 2/3 over 0.5 -> 4/3; HIV 1/3 -> 1
    assert privacy_risk(g, sup(3, "Male", "Child", 30.0, ["Flu"]), theta) == pytest.approx(4 / 3)
    assert privacy_risk(g, sup(3, "Male", "Child", 30.0, ["Gout"]), theta) == 1.0


def test_check_bounds_modes():
    cfg = PrivacyConfig(k=3, theta=Theta(0.5))
    g = QidGroup([sup(i, "Male", "Child", 30.0, ["Flu" if i < 2 else "HIV"]) for i in range(4)],
                 [True, True, False, False])
    assert check_bounds(g, cfg)
    assert not check_bounds(g, cfg, "nc")
    bad = QidGroup([sup(i, "Male", "Child", 30.0, ["Flu"]) for i in range(3)])
    res = check_bounds(bad, cfg)
    assert not res and "Flu" in res.violations[0]
    with pytest.raises(ValueError):
        check_bounds(g, cfg, "xx")


def test_too_few_new_cases_is_infeasible():
    supers = [sup(i, "Male", "Child", 30.0, ["Flu"]) for i in range(5)]
    cfg = PrivacyConfig(k=3, theta=Theta(1.0))
    with pytest.raises(InfeasibleReleaseError):
        ncc_grouping(supers, {"0", "1"}, {"2", "3", "4"}, cfg, SCHEMA, TREES)


def test_partition_must_match():
    supers = [sup(i, "Male", "Child", 30.0, ["Flu"]) for i in range(3)]
    with pytest.raises(ValueError):
        ncc_grouping(supers, {"0"}, {"1"}, PrivacyConfig(k=2, theta=Theta(1.0)), SCHEMA, TREES)


# -- engine properties -------------------------------------------------------

@settings(max_examples=80, deadline=None)
@given(instances())
def test_engine_matches_scalar_reference(inst):
    supers, old, k, theta = inst
    new = {s.case_id for s in supers} - old
    cfg = PrivacyConfig(k=k, theta=Theta(theta))
    try:
        expected = reference_grouping(supers, new, cfg)
    except InfeasibleReleaseError:
        with pytest.raises(InfeasibleReleaseError):
            ncc_grouping(supers, new, old, cfg, SCHEMA, TREES)
        return
    result = ncc_grouping(supers, new, old, cfg, SCHEMA, TREES)
    assert [[m.case_id for m in g.members] for g in result.groups] == expected[0]
    assert [s.case_id for s in result.suppressed] == expected[1]


@settings(max_examples=80, deadline=None)
@given(instances())
def test_groups_satisfy_bounds_and_partition(inst):
    supers, old, k, theta = inst
    new = {s.case_id for s in supers} - old
    cfg = PrivacyConfig(k=k, theta=Theta(theta))
    try:
        result = ncc_grouping(supers, new, old, cfg, SCHEMA, TREES)
    except InfeasibleReleaseError:
        return
    placed = [m.case_id for g in result.groups for m in g.members] + [s.case_id for s in result.suppressed]
    assert sorted(placed) == sorted(s.case_id for s in supers)
    for g in result.groups:
        assert check_bounds(g, cfg, "ms"), check_bounds(g, cfg, "ms").violations
        assert check_bounds(g, cfg, "nc")
        core = QidGroup([m for m, f in zip(g.members, g.new_flags) if f])
        assert check_bounds(core, cfg, "ms")
        assert g.new_flags == [m.case_id in new for m in g.members]


def test_identical_records_form_tight_groups():
    supers = []
    for i in range(12):
        gender = "Male" if i % 2 else "Female"
        supers.append(sup(i, gender, "Young", 60.0 + (i % 2) * 40, [DISEASES[i % 6]]))
    cfg = PrivacyConfig(k=3, theta=Theta(0.5))
    result = ncc_grouping(supers, {s.case_id for s in supers}, set(), cfg, SCHEMA, TREES)
    for g in result.groups:
        assert len({m.cat_qid["Gender"] for m in g.members}) == 1
