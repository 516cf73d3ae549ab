"""Synthetic adverse-event report series with follow-up cases.

Demographics drive the clinical content: some indications only occur for one
gender or in the elderly, so background-knowledge rules have something to bite on.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .attacks import BackgroundRule
from .model import QidSchema, Record, Theta
from .taxonomy import TaxonomyTree

AGE_TREE = {
    "Any": {
        "Non-adult": {"Child": {"Infant": {}, "In-school": {}}, "Adolescent": {}},
        "Adult": {"Young Adult": {}, "Middle-aged": {}, "Elderly": {}},
    }
}
GENDER_TREE = {"Any": {"Male": {}, "Female": {}}}

# mean and sd of body weight per age band
WEIGHT_BY_AGE = {
    "Infant": (9.0, 3.0), "In-school": (30.0, 8.0), "Adolescent": (55.0, 12.0),
    "Young Adult": (72.0, 15.0), "Middle-aged": (80.0, 16.0), "Elderly": (74.0, 14.0),
}

GENERAL_INDICATIONS = (
    "Hypertension", "Type 2 Diabetes", "Asthma", "Depression", "Rheumatoid Arthritis", "Migraine",
    "Influenza", "Pneumonia", "Epilepsy", "Psoriasis", "Anaemia", "Hypothyroidism", "Gout", "Insomnia",
    "Acne", "Eczema", "Bronchitis", "Sinusitis", "Osteoporosis", "HIV Infection", "Hyperlipidaemia",
    "Atrial Fibrillation", "Urinary Tract Infection", "Anxiety",
)
FEMALE_INDICATIONS = ("Breast Cancer", "Cervicitis", "Polycystic Ovary Syndrome")
MALE_INDICATIONS = ("Prostate Cancer", "Inguinal Hernia")
ELDERLY_INDICATIONS = ("COPD", "Alzheimer's Disease")

REACTIONS = (
    "NAUSEA", "HEADACHE", "DIZZINESS", "RASH", "FATIGUE", "VOMITING", "DIARRHOEA", "PRURITUS",
    "INSOMNIA", "ARTHRALGIA", "DYSPNOEA", "OEDEMA PERIPHERAL", "ABDOMINAL PAIN", "CONSTIPATION",
    "WEIGHT INCREASED", "HYPOTENSION", "TACHYCARDIA", "MYALGIA", "PYREXIA", "COUGH", "ALOPECIA",
    "DRY MOUTH", "ANXIETY", "TREMOR", "HEPATIC ENZYME INCREASED", "BACK PAIN", "CHEST PAIN",
    "SOMNOLENCE", "DEPRESSION", "CEREBROVASCULAR ACCIDENT",
)
DRUGS = (
    "AVANDIA", "LIPITOR", "METFORMIN", "LISINOPRIL", "ZOLOFT", "HUMIRA", "ADVAIR", "SYNTHROID",
    "NEXIUM", "PLAVIX", "SEROQUEL", "LYRICA", "CRESTOR", "ENBREL", "ALLOPURINOL",
)


@dataclass
class SynthConfig:
    releases: int = 3
    records_per_release: int = 5000
    followup_ratio: float = 0.2
    seed: int = 0
    multi_report_prob: float = 0.02
    linked_indication_prob: float = 0.15
    gender_weights: Mapping[str, float] = field(default_factory=lambda: {"Male": 0.48, "Female": 0.52})
    age_weights: Mapping[str, float] = field(default_factory=lambda: {
        "Infant": 0.04, "In-school": 0.08, "Adolescent": 0.08,
        "Young Adult": 0.25, "Middle-aged": 0.3, "Elderly": 0.25})
    weight_bounds: tuple[float, float] = (0.0, 250.0)
    theta_default: float = 0.4
    signal_drug: str = "AVANDIA"
    signal_reaction: str = "CEREBROVASCULAR ACCIDENT"
    signal_rate: float = 0.25

    def __post_init__(self):
        if not 0 <= self.followup_ratio < 1:
            raise ValueError("followup_ratio must lie in [0, 1)")
        if self.releases < 1 or self.records_per_release < 1:
            raise ValueError("need at least one release with one record")
        if not self.gender_weights or not self.age_weights:
            raise ValueError("categorical weight tables must be non-empty")
        unknown = set(self.age_weights) - set(WEIGHT_BY_AGE)
        if unknown:
            raise ValueError(f"unknown age bands {sorted(unknown)}")
        self.weight_bounds = tuple(float(b) for b in self.weight_bounds)

    @classmethod
    def from_dict(cls, d: Mapping) -> "SynthConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown synth config keys {sorted(extra)}")
        return cls(**d)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["gender_weights"] = dict(self.gender_weights)
        out["age_weights"] = dict(self.age_weights)
        out["weight_bounds"] = list(self.weight_bounds)
        return out


@dataclass
class SynthSeries:
    schema: QidSchema
    trees: dict[str, TaxonomyTree]
    releases: list[list[Record]]
    theta: Theta
    rules: list[BackgroundRule]


def synth_schema(cfg: SynthConfig) -> QidSchema:
    return QidSchema(categorical=("Gender", "Age"), numeric={"Weight": cfg.weight_bounds},
                     sensitive=("Indication", "Reaction"), other=("Drug",))


def synth_trees() -> dict[str, TaxonomyTree]:
    return {"Gender": TaxonomyTree.from_nested(GENDER_TREE, "Gender"),
            "Age": TaxonomyTree.from_nested(AGE_TREE, "Age")}


def background_rules() -> list[BackgroundRule]:
    rules = [BackgroundRule(v, {"Gender": ("Female",)}) for v in FEMALE_INDICATIONS]
    rules += [BackgroundRule(v, {"Gender": ("Male",)}) for v in MALE_INDICATIONS]
    rules += [BackgroundRule(v, {"Age": ("Elderly",)}) for v in ELDERLY_INDICATIONS]
    return rules


def _pick(rng: np.random.Generator, weights: Mapping[str, float]) -> str:
    keys = list(weights)
    p = np.array([weights[k] for k in keys], float)
    return keys[int(rng.choice(len(keys), p=p / p.sum()))]


class _Generator:
    def __init__(self, cfg: SynthConfig):
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.next_id = 1
        self.profiles: dict[str, tuple[str, str, float, frozenset, frozenset]] = {}

    def _indications(self, gender: str, age: str) -> frozenset:
        rng, cfg = self.rng, self.cfg
        out = set(rng.choice(GENERAL_INDICATIONS, size=int(rng.integers(1, 3)), replace=False))
        if rng.random() < cfg.linked_indication_prob:
            pool = FEMALE_INDICATIONS if gender == "Female" else MALE_INDICATIONS
            out.add(str(rng.choice(pool)))
        if age == "Elderly" and rng.random() < cfg.linked_indication_prob:
            out.add(str(rng.choice(ELDERLY_INDICATIONS)))
        return frozenset(str(v) for v in out)

    def _reactions(self, drugs: frozenset) -> frozenset:
        rng, cfg = self.rng, self.cfg
        pool = [r for r in REACTIONS if r != cfg.signal_reaction]
        out = {str(v) for v in rng.choice(pool, size=int(rng.integers(1, 4)), replace=False)}
        rate = cfg.signal_rate if cfg.signal_drug in drugs else cfg.signal_rate / 10
        if rng.random() < rate:
            out.add(cfg.signal_reaction)
        return frozenset(out)

    def new_case(self) -> str:
        rng, cfg = self.rng, self.cfg
        case_id = str(self.next_id)
        self.next_id += 1
        gender = _pick(rng, cfg.gender_weights)
        age = _pick(rng, cfg.age_weights)
        mu, sd = WEIGHT_BY_AGE[age]
        lo_, hi_ = cfg.weight_bounds
        weight = round(float(np.clip(rng.normal(mu, sd), lo_ + 1, hi_ - 1)), 1)
        drugs = frozenset(str(d) for d in rng.choice(DRUGS, size=int(rng.integers(1, 3)), replace=False))
        self.profiles[case_id] = (gender, age, weight, self._indications(gender, age), drugs)
        return case_id

    def report(self, case_id: str) -> Record:
        gender, age, weight, indications, drugs = self.profiles[case_id]
        return Record(case_id, {"Gender": gender, "Age": age}, {"Weight": weight},
                      {"Indication": indications, "Reaction": self._reactions(drugs)},
                      {"Drug": drugs})


def synth_generate(cfg: SynthConfig) -> SynthSeries:
    """Deterministic given ``cfg.seed``."""
    gen = _Generator(cfg)
    rng = gen.rng
    releases: list[list[Record]] = []
    for i in range(cfg.releases):
        prior = list(gen.profiles)
        n = cfg.records_per_release
        n_follow = int(rng.binomial(n, cfg.followup_ratio)) if i > 0 else 0
        n_follow = min(n_follow, len(prior))
        follow = [prior[j] for j in rng.choice(len(prior), size=n_follow, replace=False)] if n_follow else []
        rows = [gen.report(c) for c in follow]
        fresh: list[str] = []
        while len(rows) < n:
            if fresh and rng.random() < cfg.multi_report_prob:
                rows.append(gen.report(fresh[int(rng.integers(len(fresh)))]))
            else:
                fresh.append(gen.new_case())
                rows.append(gen.report(fresh[-1]))
        order = rng.permutation(len(rows))
        releases.append([rows[j] for j in order])
    return SynthSeries(synth_schema(cfg), synth_trees(), releases, Theta(cfg.theta_default), background_rules())


def write_series(directory, series: SynthSeries, cfg: SynthConfig | None = None) -> list[Path]:
    from .files import dump_json, atomic_write_text, store_background, store_records, store_taxonomy_dir, store_theta

    directory = Path(directory)
    store_taxonomy_dir(directory, series.schema, series.trees)
    store_theta(directory / "theta.json", series.theta)
    store_background(directory / "background.json", series.rules)
    if cfg is not None:
        atomic_write_text(directory / "synth_config.json", dump_json(cfg.to_dict()))
    paths = []
    for i, records in enumerate(series.releases, start=1):
        p = directory / f"D_{i}.csv"
        store_records(p, records, series.schema)
        paths.append(p)
    return paths
