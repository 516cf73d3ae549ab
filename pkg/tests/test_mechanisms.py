from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from ppmsdp.grouping import QidGroup
from ppmsdp.mechanisms import (NoiseBudget, candidate_noise_set, exponential_choose,
                               exponential_perturb_group, exponential_weights, laplace_from_uniform,
                               laplace_samples, local_sensitivity, perturb_numeric,
                               perturb_numeric_group, quality, quality_sensitivity, rng_stream,
                               unnormalized_weight)
from ppmsdp.model import Interval, QidSchema, SuperRecord
from ppmsdp.taxonomy import TaxonomyTree

from strategies import tree_and_nodes

SCHEMA = QidSchema(categorical=("Age",), numeric={"Weight": (0, 100)}, sensitive=("Disease",))


@settings(max_examples=100, deadline=None)
@given(st.floats(-0.4999, 0.4999), st.floats(0.01, 50))
def test_inverse_cdf_matches_scipy(u, b):
    assert laplace_from_uniform(u, b) == pytest.approx(stats.laplace.ppf(u + 0.5, scale=b), rel=1e-9, abs=1e-9)


def test_local_sensitivity():
    assert local_sensitivity([30, 35, 45]) == 15
    assert local_sensitivity([Interval(20, 30), 50]) == 30
    with pytest.raises(ValueError):
        local_sensitivity([])


def test_zero_sensitivity_keeps_values():
    rng = np.random.default_rng(0)
    assert perturb_numeric([42.0, 42.0], "Weight", SCHEMA, 0.1, rng) == [42.0, 42.0]


def test_noise_is_clamped_to_bounds():
    rng = np.random.default_rng(1)
    out = perturb_numeric([0.0, 100.0] * 50, "Weight", SCHEMA, 0.01, rng)
    assert min(out) >= 0 and max(out) <= 100
    assert {0.0, 100.0} <= set(out)


def test_interval_members_collapse_to_midpoint():
    rng = np.random.default_rng(2)
    out = perturb_numeric([Interval(40, 60), Interval(40, 60)], "Weight", SCHEMA, 1e12, rng)
    assert out == pytest.approx([50.0, 50.0], abs=1e-6)


def test_streams_are_keyed_and_reproducible():
    a = rng_stream(7, 2, 3, "Weight").random(4)
    assert np.array_equal(a, rng_stream(7, 2, 3, "Weight").random(4))
    for other in (rng_stream(8, 2, 3, "Weight"), rng_stream(7, 1, 3, "Weight"),
                  rng_stream(7, 2, 4, "Weight"), rng_stream(7, 2, 3, "Age")):
        assert not np.array_equal(a, other.random(4))


def test_laplace_moments_small_sample():
    z = laplace_samples(2.0, np.random.default_rng(3), 20000)
    assert abs(z.mean()) < 0.1
    assert z.var() == pytest.approx(8.0, rel=0.08)


# -- exponential mechanism ----------------------------------------------

def test_candidate_set_and_quality(example2):
    age = example2["trees"]["Age"]
    dom = ["Child", "In-school", "Adolescent"]
    assert set(candidate_noise_set(dom, age)) == {"Child", "In-school", "Adolescent", "Non-adult"}
    assert quality("Child", dom, age, exact=True) == Fraction(3, 2)
    assert quality_sensitivity(dom, age, exact=True) == Fraction(1, 4)
    with pytest.raises(ValueError):
        quality("Adult", dom, age)


def test_weights_follow_exponential_rule(example2):
    age = example2["trees"]["Age"]
    dom = ["Child", "In-school", "Adolescent"]
    psi, p = exponential_weights(dom, age, 0.1)
    raw = np.array([math.exp(-0.1 * quality(v, dom, age) / (2 * 0.25)) for v in psi])
    assert p == pytest.approx(raw / raw.sum(), rel=1e-12)
    assert unnormalized_weight("Child", dom, age, 0.1) == pytest.approx(math.exp(-0.3), rel=1e-12)


def test_singleton_domain_is_identity():
    t = TaxonomyTree.from_nested({"Any": {"A": {}, "B": {}}})
    rng = np.random.default_rng(0)
    assert exponential_choose(["A", "A"], t, 0.1, rng) == "A"


def test_larger_epsilon_concentrates_on_best(example2):
    age = example2["trees"]["Age"]
    dom = ["Child", "In-school", "Adolescent"]
    _, p_low = exponential_weights(dom, age, 0.1)
    psi, p_high = exponential_weights(dom, age, 100.0)
    best = int(np.argmax(p_high))
    assert p_high[best] > p_low[best]
    q = [quality(v, dom, age) for v in psi]
    assert q[best] == min(q)


@settings(max_examples=40, deadline=None)
@given(tree_and_nodes(count=3), st.floats(0.01, 20))
def test_weights_are_a_distribution_over_cover(data, eps):
    t, values = data
    psi, p = exponential_weights(values, t, eps)
    assert set(values) <= set(psi)
    assert p.sum() == pytest.approx(1.0)
    assert np.all(p > 0)


def _super(case, age, weight):
    return SuperRecord(case, {"Age": age}, {"Weight": weight}, {"Disease": frozenset({"Flu"})}, ())


def test_group_perturbation_assigns_one_node(example2):
    age = example2["trees"]["Age"]
    g = QidGroup([_super("1", "Child", 30.0), _super("2", "In-school", 35.0), _super("3", "Adolescent", 45.0)],
                 gid=0)
    budget = NoiseBudget(0.1, seed=5, release_index=1)
    cat = exponential_perturb_group(g, SCHEMA, {"Age": age}, budget)
    assert cat["Age"] in {"Child", "In-school", "Adolescent", "Non-adult"}
    nums = perturb_numeric_group(g, SCHEMA, budget)
    assert len(nums) == 3 and all(0 <= n["Weight"] <= 100 for n in nums)
    assert nums == perturb_numeric_group(g, SCHEMA, budget)


def test_budget_rejects_nonpositive_epsilon():
    with pytest.raises(ValueError):
        NoiseBudget(0.0, 1, 1)
