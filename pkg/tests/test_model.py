from __future__ import annotations

import pytest

from ppmsdp.model import (Interval, PrivacyConfig, QidSchema, Record, Release, ReleaseHistory,
                          SchemaError, Theta, classify_cases, down_pose, format_number,
                          merge_super_records)
from ppmsdp.taxonomy import TaxonomyTree

SCHEMA = QidSchema(categorical=("Gender", "Age"), numeric={"Weight": (0, 200)}, sensitive=("Disease",))
TREES = {
    "Gender": TaxonomyTree.from_nested({"Any": {"Male": {}, "Female": {}}}),
    "Age": TaxonomyTree.from_nested({"Any": {"Non-adult": {"Child": {}, "Adolescent": {}}, "Adult": {}}}),
}


def rec(case, gender="Male", age="Child", weight=30.0, disease=("Flu",)):
    return Record(case, {"Gender": gender, "Age": age}, {"Weight": weight}, {"Disease": frozenset(disease)})


def test_format_number_and_interval():
    assert format_number(35.0) == "35"
    assert format_number(35.5) == "35.5"
    assert format_number(-2.0) == "-2"
    assert str(Interval(20.0, 30.0)) == "20-30"
    assert Interval(20, 30).mid == 25


def test_schema_validation():
    with pytest.raises(SchemaError, match="unique"):
        QidSchema(categorical=("A",), numeric={"A": (0, 1)}, sensitive=("S",))
    with pytest.raises(SchemaError, match="min < max"):
        QidSchema(categorical=(), numeric={"W": (5, 5)}, sensitive=("S",))
    SCHEMA.validate(rec("1"), TREES)
    with pytest.raises(SchemaError, match="outside"):
        SCHEMA.validate(rec("1", weight=500.0))
    with pytest.raises(SchemaError, match="taxonomy"):
        SCHEMA.validate(rec("1", age="Teen"), TREES)


def test_internal_node_is_a_valid_raw_value():
    SCHEMA.validate(rec("1", age="Non-adult"), TREES)


def test_merge_super_records_generalizes_conflicts():
    rows = [rec("1", age="Child", weight=30.0, disease=("Flu",)),
            rec("1", age="Adolescent", weight=40.0, disease=("HIV",)),
            rec("2", weight=50.0),
            rec("2", weight=50.0)]  # exact duplicate
    supers = merge_super_records(rows, SCHEMA, TREES)
    assert [s.case_id for s in supers] == ["1", "2"]
    first, second = supers
    assert first.cat_qid == {"Gender": "Male", "Age": "Non-adult"}
    assert first.num_qid["Weight"] == Interval(30.0, 40.0)
    assert first.sensitive["Disease"] == {"Flu", "HIV"}
    assert len(first.constituents) == 2
    assert second.num_qid["Weight"] == 50.0 and len(second.constituents) == 1


def test_merge_same_point_values_stay_points():
    supers = merge_super_records([rec("1", disease=("Flu",)), rec("1", disease=("HIV",))], SCHEMA, TREES)
    assert supers[0].num_qid["Weight"] == 30.0
    assert not isinstance(supers[0].num_qid["Weight"], Interval)


def test_down_pose_restores_originals():
    rows = [rec("1", age="Child"), rec("1", age="Adolescent", disease=("HIV",)), rec("2")]
    assert down_pose(merge_super_records(rows, SCHEMA, TREES)) == rows


def test_classify_cases_with_lifespan():
    h = ReleaseHistory([Release(1, [rec("1"), rec("2")]), Release(2, [rec("3")])])
    supers = merge_super_records([rec("1"), rec("3"), rec("4")], SCHEMA, TREES)
    assert classify_cases(supers, h) == ({"4"}, {"1", "3"})
    assert classify_cases(supers, h, lifespan_x=1) == ({"1", "4"}, {"3"})


def test_history_order_and_clones():
    h = ReleaseHistory()
    assert h.next_index == 1
    h.append(Release(1, [rec("1", age="Non-adult")]))
    h.append(Release(2, [rec("1", age="Any")]))
    assert h.earliest_clones()["1"].cat_qid["Age"] == "Non-adult"
    assert h.earliest_clones(lifespan_x=1)["1"].cat_qid["Age"] == "Any"
    with pytest.raises(ValueError):
        h.append(Release(2, []))
    with pytest.raises(ValueError, match="duplicate"):
        ReleaseHistory([Release(1, []), Release(1, [])])


def test_theta_and_config():
    theta = Theta(0.4, {"HIV": 0.2})
    assert theta("HIV") == 0.2 and theta("Flu") == 0.4
    with pytest.raises(ValueError):
        Theta(0.0)
    with pytest.raises(ValueError):
        PrivacyConfig(k=1, theta=theta)
    with pytest.raises(ValueError):
        PrivacyConfig(k=5, theta=theta, epsilon=0)
    with pytest.raises(ValueError):
        PrivacyConfig(k=5, theta=theta, variant="full")
    with pytest.raises(ValueError):
        PrivacyConfig(k=5, theta=theta, lifespan_x=0)
