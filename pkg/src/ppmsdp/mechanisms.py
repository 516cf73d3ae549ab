"""Laplace and taxonomy-guided exponential perturbation.

Every random draw comes from a stream keyed by (seed, release index, group id,
attribute), so results do not depend on the order groups are processed in.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from .model import QidSchema, hi, lo, mid
from .taxonomy import TaxonomyTree, categorical_distortion, minimal_cover_subtree


@dataclass(frozen=True)
class NoiseBudget:
    epsilon: float
    seed: int
    release_index: int

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")

    def stream(self, group_id: int, attr: str) -> np.random.Generator:
        return rng_stream(self.seed, self.release_index, group_id, attr)


def rng_stream(seed: int, release_index: int, group_id: int, attr: str) -> np.random.Generator:
    key = (int(release_index), int(group_id), zlib.crc32(attr.encode("utf-8")))
    ss = np.random.SeedSequence(entropy=int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=key)
    return np.random.Generator(np.random.PCG64(ss))


# -- Laplace -------------------------------------------------------------

def laplace_from_uniform(u, b: float):
    """Inverse CDF of Laplace(0, b) at ``u`` in (-1/2, 1/2)."""
    u = np.asarray(u, float)
    out = -b * np.sign(u) * np.log1p(-2 * np.abs(u))
    return out if out.ndim else float(out)


def _open_uniform(rng: np.random.Generator, n: int) -> np.ndarray:
    r = rng.random(n)
    while np.any(r == 0.0):
        r[r == 0.0] = rng.random(int(np.sum(r == 0.0)))
    return r - 0.5


def laplace_samples(b: float, rng: np.random.Generator, n: int) -> np.ndarray:
    if b < 0:
        raise ValueError(f"Laplace scale must be non-negative, got {b}")
    if b == 0:
        return np.zeros(n)
    return laplace_from_uniform(_open_uniform(rng, n), b)


def laplace_sample(b: float, rng: np.random.Generator) -> float:
    return float(laplace_samples(b, rng, 1)[0])


def local_sensitivity(values: Iterable) -> float:
    """max - min over a group's values; intervals contribute both endpoints."""
    values = list(values)
    if not values:
        raise ValueError("local sensitivity of an empty group")
    return max(hi(v) for v in values) - min(lo(v) for v in values)


def perturb_numeric(values: Sequence, attr: str, schema: QidSchema, epsilon: float,
                    rng: np.random.Generator) -> list[float]:
    """Noise each value with scale ``local_sensitivity / epsilon`` and clamp to the attribute bounds.

    Interval entries collapse to their midpoint first.
    """
    scale = local_sensitivity(values) / epsilon
    noise = laplace_samples(scale, rng, len(values))
    mn, mx = schema.numeric[attr]
    return [float(min(max(mid(v) + z, mn), mx)) for v, z in zip(values, noise)]


def perturb_numeric_group(g, schema: QidSchema, budget: NoiseBudget) -> list[dict[str, float]]:
    """Noised numeric QIDs for each member of ``g``, in member order."""
    out: list[dict[str, float]] = [{} for _ in g.members]
    for attr in schema.numeric:
        rng = budget.stream(g.gid, attr)
        noised = perturb_numeric([m.num_qid[attr] for m in g.members], attr, schema, budget.epsilon, rng)
        for slot, v in zip(out, noised):
            slot[attr] = v
    return out


# -- exponential ---------------------------------------------------------

def _dom(values: Iterable[str]) -> list[str]:
    dom = list(dict.fromkeys(values))
    if not dom:
        raise ValueError("empty attribute domain")
    return dom


def candidate_noise_set(values: Iterable[str], tree: TaxonomyTree) -> list[str]:
    """The group's values plus their ancestors inside the minimal covering subtree, in tree order."""
    cover = minimal_cover_subtree(_dom(values), tree)
    return list(cover.nodes)


def quality(v: str, values: Iterable[str], tree: TaxonomyTree, exact: bool = False):
    """Total ancestor-chain distortion between ``v`` and every candidate in the covering subtree.

    Lower is better.
    """
    cover = minimal_cover_subtree(_dom(values), tree)
    if v not in cover:
        raise ValueError(f"{v!r} is not a candidate noise value")
    total = sum((categorical_distortion(u, v, cover, exact=True) for u in cover.nodes), Fraction(0))
    return total if exact else float(total)


def quality_sensitivity(values: Iterable[str], tree: TaxonomyTree, exact: bool = False):
    """Spread of the distortion: largest (value, candidate) distortion minus the
    smallest distortion of a value from the covering subtree's root."""
    dom = _dom(values)
    cover = minimal_cover_subtree(dom, tree)
    top = max(categorical_distortion(u, v, cover, exact=True) for u in dom for v in cover.nodes)
    bottom = min(categorical_distortion(u, cover.root, cover, exact=True) for u in dom)
    out = top - bottom
    return out if exact else float(out)


def exponential_weights(values: Iterable[str], tree: TaxonomyTree,
                        epsilon: float) -> tuple[list[str], np.ndarray]:
    """Candidates and their normalised selection probabilities ``~ exp(-eps * q / (2 dq))``."""
    dom = _dom(values)
    psi = candidate_noise_set(dom, tree)
    dq = quality_sensitivity(dom, tree)
    if dq == 0:
        return psi, np.full(len(psi), 1.0 / len(psi))
    q = np.array([quality(v, dom, tree) for v in psi])
    logw = -epsilon * (q - q.min()) / (2 * dq)
    w = np.exp(logw)
    return psi, w / w.sum()


def unnormalized_weight(v: str, values: Iterable[str], tree: TaxonomyTree, epsilon: float) -> float:
    dom = _dom(values)
    dq = quality_sensitivity(dom, tree)
    if dq == 0:
        return 1.0
    return math.exp(-epsilon * quality(v, dom, tree) / (2 * dq))


def exponential_choose(values: Iterable[str], tree: TaxonomyTree, epsilon: float,
                       rng: np.random.Generator) -> str:
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    psi, p = exponential_weights(values, tree, epsilon)
    if len(psi) == 1:
        return psi[0]
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(p), u, side="right"))
    return psi[min(idx, len(psi) - 1)]


def exponential_perturb_group(g, schema: QidSchema, trees: Mapping[str, TaxonomyTree],
                              budget: NoiseBudget) -> dict[str, str]:
    """One draw per categorical attribute for the whole group."""
    return {
        attr: exponential_choose([m.cat_qid[attr] for m in g.members], trees[attr], budget.epsilon,
                                 budget.stream(g.gid, attr))
        for attr in schema.categorical
    }
