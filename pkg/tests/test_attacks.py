from __future__ import annotations

import copy

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ppmsdp.attacks import (ATTACKS, AttackTarget, Attacker, BackgroundRule, audit_series, audit_targets,
                            background_prune, backward_attack, candidate_set, forward_attack, latest_attack)
from ppmsdp.model import Interval, PrivacyConfig, Record, Release, ReleaseHistory, Theta
from ppmsdp.pipeline import anonymize
from ppmsdp.synth import SynthConfig, synth_generate


def target(gender, age, release, kind="in_release", case=None):
    return AttackTarget({"Gender": gender, "Age": age}, release, kind, case_id=case)


def test_candidate_sets(table1):
    s, t, rel = table1["schema"], table1["trees"], table1["releases"]
    assert candidate_set(target("Male", 37, 3), rel[2], s, t) == {"1", "3", "7", "12"}
    assert candidate_set(target("Female", 30, 3), rel[2], s, t) == {"13", "14", "15", "16"}
    assert candidate_set(target("Male", 90, 3), rel[2], s, t) == frozenset()


def test_backward_attack_finds_bob(table1):
    res = backward_attack(target("Male", 37, 3), table1["releases"], table1["schema"], table1["trees"])
    assert res.candidates == {"1", "3", "7", "12"}
    assert res.pruned == {"12"}
    assert res.common_values() == {"Diabetes", "Flu"}


def test_forward_attack_finds_john(table1):
    res = forward_attack(target("Male", 44, 2), table1["releases"], table1["schema"], table1["trees"])
    assert res.candidates == {"1", "3", "8", "9"}
    assert res.pruned == {"8", "9"}
    assert res.common_values() == {"Diabetes"}
    assert res.frequencies()["Diabetes"] == 1.0


def test_latest_attack_finds_jane(table1):
    res = latest_attack(target("Female", 30, 3, "first_appears_in"), table1["releases"],
                        table1["schema"], table1["trees"])
    assert res.pruned == {"15", "16"}
    assert res.all_values() == {"Breast Cancer"}


def test_latest_on_first_release_prunes_nothing(table1):
    res = latest_attack(target("Male", 25, 1, "first_appears_in"), table1["releases"],
                        table1["schema"], table1["trees"])
    assert res.pruned == res.candidates == {"1", "2", "3", "4"}


def test_single_release_is_plain_candidate_set(table1):
    only = [table1["releases"][2]]
    for fn in (backward_attack, forward_attack, latest_attack):
        res = fn(target("Male", 37, 3), only, table1["schema"], table1["trees"])
        assert res.pruned == res.candidates == {"1", "3", "7", "12"}


def test_background_prune(table1):
    s, t = table1["schema"], table1["trees"]

    def row(case, disease):
        return Record(case, {"Gender": "Any"}, {"Age": Interval(20, 40)}, {"Disease": frozenset({disease})})

    rel = [Release(1, [row("1", "Flu"), row("2", "Breast Cancer"), row("3", "HIV"), row("4", "Flu")])]
    rules = [BackgroundRule("Breast Cancer", {"Gender": ("Female",)})]
    male, female = target("Male", 30, 1), target("Female", 30, 1)
    attacker = Attacker(rel, s, t)
    res = attacker.attack("backward", male)
    assert res.pruned == {"1", "2", "3", "4"}
    assert background_prune(res, male, rel, rules, s, t).pruned == {"1", "3", "4"}
    assert attacker.attack("backward", male, rules).pruned == {"1", "3", "4"}
    assert background_prune(res, female, rel, rules, s, t).pruned == res.pruned
    assert background_prune(res, male, rel, [], s, t).pruned == res.pruned
    unrelated = [BackgroundRule("Gout", {"Gender": ("Male",)})]
    assert background_prune(res, female, rel, unrelated, s, t).pruned == res.pruned


def test_numeric_range_rules(table1):
    s, t, rel = table1["schema"], table1["trees"], table1["releases"]
    rules = [BackgroundRule("HIV", {"Age": (60, 100)})]
    res = Attacker(rel, s, t).attack("backward", target("Male", 25, 1), rules)
    assert res.pruned == {"2", "4"}


def test_audit_table1(table1):
    report = audit_targets(table1["targets"].values(), table1["releases"], table1["schema"], table1["trees"],
                           4, table1["theta"])
    assert report.breached_targets == 3
    found = {(f.target, f.attack): set(f.candidates) for f in report.findings}
    assert found[("Bob", "backward")] == {"12"}
    assert found[("John", "forward")] == {"8", "9"}
    assert found[("Jane", "latest")] == {"15", "16"}
    assert {f.target for f in report.findings} == {"Bob", "John", "Jane"}
    assert "Bob" in report.to_text() and '"breached_targets": 3' in report.to_json()


def test_unknown_attribute_and_kind(table1):
    with pytest.raises(ValueError):
        AttackTarget({"Gender": "Male"}, 1, "sometime")
    attacker = Attacker(table1["releases"], table1["schema"], table1["trees"])
    with pytest.raises(KeyError):
        attacker.attack("backward", AttackTarget({"Height": 3}, 1))
    with pytest.raises(KeyError):
        attacker.attack("backward", AttackTarget({"Gender": "Male"}, 9))


# -- properties on anonymized synthetic series --------------------------------

@pytest.fixture(scope="module")
def small_series():
    syn = synth_generate(SynthConfig(releases=3, records_per_release=150, seed=5))
    history, out = ReleaseHistory(), []
    cfg = PrivacyConfig(k=4, theta=syn.theta, variant="baseline")
    for raw in syn.releases:
        rel = anonymize(raw, history, cfg, syn.schema, syn.trees)
        history.append(rel)
        out.append(rel)
    return syn, out


@settings(max_examples=40, deadline=None)
@given(st.data())
def test_pruning_is_monotone(small_series, data):
    syn, releases = small_series
    i = data.draw(st.integers(0, 2))
    raw = data.draw(st.sampled_from(syn.releases[i]))
    qid = {**raw.cat_qid, "Weight": raw.num_qid["Weight"]}
    t = AttackTarget(qid, i + 1, data.draw(st.sampled_from(["in_release", "first_appears_in"])))
    attacker = Attacker(releases, syn.schema, syn.trees)
    for kind in ATTACKS:
        res = attacker.attack(kind, t, syn.rules)
        assert res.pruned <= res.candidates
        assert res.candidates == attacker.candidate_set(t)


def test_single_release_baseline_has_no_breaches(small_series):
    syn, releases = small_series
    report = audit_series(releases[:1], syn.releases[:1], syn.schema, syn.trees, 4, syn.theta)
    assert report.targets > 0
    assert report.record_breaches == report.attribute_breaches == 0


def test_audit_is_read_only(small_series):
    syn, releases = small_series
    before = copy.deepcopy(releases)
    audit_series(releases, syn.releases, syn.schema, syn.trees, 4, syn.theta, syn.rules)
    assert releases == before


def test_empty_series_rejected(small_series):
    syn, _ = small_series
    with pytest.raises(ValueError):
        audit_series([], [], syn.schema, syn.trees, 4, syn.theta)


def test_tau_window_on_points():
    from ppmsdp.model import QidSchema
    schema = QidSchema(categorical=(), numeric={"W": (0, 100)}, sensitive=("S",))
    recs = [Record(str(i), {}, {"W": float(w)}, {"S": frozenset({"x"})}) for i, w in enumerate([0, 50, 54, 100])]
    rel = Release(1, recs)
    t = AttackTarget({"W": 52.0}, 1)
    # published range 100, tau = 5
    assert candidate_set(t, rel, schema, {}) == {"1", "2"}
    assert candidate_set(t, rel, schema, {}, coverage_fraction=0.01) == frozenset()
    wide = Release(1, [Record("9", {}, {"W": Interval(40, 60)}, {"S": frozenset()})])
    assert candidate_set(t, wide, schema, {}) == {"9"}
