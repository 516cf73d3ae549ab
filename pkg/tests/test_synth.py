from __future__ import annotations

import math

import pytest

from ppmsdp import files
from ppmsdp.synth import (ELDERLY_INDICATIONS, FEMALE_INDICATIONS, MALE_INDICATIONS, SynthConfig,
                          synth_generate, write_series)


def test_same_seed_same_files(tmp_path):
    cfg = SynthConfig(releases=2, records_per_release=200, seed=4)
    write_series(tmp_path / "a", synth_generate(cfg), cfg)
    write_series(tmp_path / "b", synth_generate(cfg), cfg)
    for name in ("D_1.csv", "D_2.csv", "schema.json", "Age.json", "theta.json", "background.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert synth_generate(cfg).releases != synth_generate(SynthConfig(releases=2, records_per_release=200,
                                                                      seed=5)).releases


def test_no_followups_means_unique_cases():
    syn = synth_generate(SynthConfig(releases=3, records_per_release=300, followup_ratio=0.0,
                                     multi_report_prob=0.0, seed=1))
    ids = [r.case_id for rel in syn.releases for r in rel]
    assert len(ids) == len(set(ids)) == 900


def test_followup_count_is_binomial():
    n, ratio = 5000, 0.2
    syn = synth_generate(SynthConfig(releases=3, records_per_release=n, followup_ratio=ratio, seed=2))
    seen = set()
    sd = math.sqrt(n * ratio * (1 - ratio))
    for i, rel in enumerate(syn.releases):
        old = {r.case_id for r in rel} & seen
        if i:
            # counting oracle: each row is a follow-up with probability ratio
            assert abs(len(old) - n * ratio) <= 4 * sd
        seen |= {r.case_id for r in rel}
        assert len(rel) == n


def test_followups_keep_demographics():
    syn = synth_generate(SynthConfig(releases=2, records_per_release=500, seed=3))
    first = {r.case_id: r for r in syn.releases[0]}
    for r in syn.releases[1]:
        if r.case_id in first:
            assert r.cat_qid == first[r.case_id].cat_qid
            assert r.num_qid == first[r.case_id].num_qid


def test_linked_indications_respect_demographics():
    syn = synth_generate(SynthConfig(releases=1, records_per_release=3000, seed=6))
    female = male = elderly = 0
    for r in syn.releases[0]:
        ind = r.sensitive["Indication"]
        if ind & set(FEMALE_INDICATIONS):
            female += 1
            assert r.cat_qid["Gender"] == "Female"
        if ind & set(MALE_INDICATIONS):
            male += 1
            assert r.cat_qid["Gender"] == "Male"
        if ind & set(ELDERLY_INDICATIONS):
            elderly += 1
            assert r.cat_qid["Age"] == "Elderly"
        lo, hi = syn.schema.numeric["Weight"]
        assert lo <= r.num_qid["Weight"] <= hi
    assert female and male and elderly


def test_written_series_loads_back(tmp_path):
    cfg = SynthConfig(releases=1, records_per_release=100, seed=8)
    syn = synth_generate(cfg)
    (path,) = write_series(tmp_path, syn, cfg)
    schema, trees = files.load_taxonomy_dir(tmp_path)
    assert schema == syn.schema and trees == syn.trees
    assert files.load_records(path, schema, trees) == syn.releases[0]
    loaded = files.load_background(tmp_path / "background.json")
    assert sorted(loaded, key=lambda r: r.value) == sorted(syn.rules, key=lambda r: r.value)


def test_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(followup_ratio=1.0)
    with pytest.raises(ValueError):
        SynthConfig(gender_weights={})
    with pytest.raises(ValueError):
        SynthConfig.from_dict({"records": 5})
    assert SynthConfig.from_dict(SynthConfig(seed=3).to_dict()) == SynthConfig(seed=3)
