"""Question interventions (displacement / perturbation) and semantic distance.

Distance is a deterministic slot-weighted mismatch score in [0, 1]: questions
from different templates are maximally distant, synonym swaps count a small
epsilon, and everything else scores the slot's weight. The threshold splits
the augmentation regime (keep the answer) from the ignorance regime.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import ConfigError, InterventionError
from .worldgen import COUNT_RANGE, RELATIONS, QuestionSpec, Vocab, make_question

DEFAULT_SLOT_WEIGHTS = {"subject": 0.4, "attribute": 0.2, "count": 0.2, "relation": 0.2}


@dataclass(frozen=True)
class Intervention:
    kind: str                       # none | displacement | perturbation
    source_instance_id: str | None = None
    slot: str | None = None
    old: object = None
    new: object = None


@dataclass
class DistanceModel:
    slot_weights: dict = field(default_factory=lambda: dict(DEFAULT_SLOT_WEIGHTS))
    synonym_distance: float = 0.05
    threshold: float = 0.2
    displacement_distance: float = 1.0
    synonyms: frozenset = frozenset()

    def __post_init__(self):
        total = sum(self.slot_weights.values())
        if abs(total - 1.0) > 1e-9 or any(w < 0 for w in self.slot_weights.values()):
            raise ConfigError("slot weights must be non-negative and sum to 1")
        if not 0.0 <= self.synonym_distance < self.threshold < 1.0:
            raise ConfigError("need 0 <= synonym_distance < threshold < 1")

    @classmethod
    def from_vocab(cls, vocab: Vocab, **kwargs) -> "DistanceModel":
        pairs = frozenset(frozenset(p) for p in vocab.synonym_pairs)
        return cls(synonyms=pairs, **kwargs)

    def is_synonym(self, a: str, b: str) -> bool:
        return frozenset((a, b)) in self.synonyms


@dataclass
class InterventionPolicy:
    displacement_ratio: float = 0.5
    crucial_slots: tuple = ("subject", "attribute", "count", "relation")
    synonym_prob: float = 0.15

    def __post_init__(self):
        extra = set(self.crucial_slots) - {"subject", "attribute", "count", "relation"}
        if extra:
            raise ConfigError(f"crucial_slots contains unknown slots: {sorted(extra)}")
        if not 0.0 <= self.displacement_ratio <= 1.0:
            raise ConfigError("displacement_ratio must lie in [0, 1]")


def displace(q: QuestionSpec, pool, rng):
    """Swap in a question from another pair; general questions are never used."""
    eligible = [(qid, cand) for qid, cand in pool
                if not cand.is_general and cand != q]
    if not eligible:
        raise InterventionError("no eligible displacement question in the pool")
    qid, cand = eligible[int(rng.integers(len(eligible)))]
    return cand, Intervention(kind="displacement", source_instance_id=qid)


def perturb(q: QuestionSpec, vocab: Vocab, policy: InterventionPolicy, rng):
    """Replace exactly one crucial slot with a different token of its category."""
    slots = q.slot_map
    present = [s for s in policy.crucial_slots if s in slots]
    if not present:
        raise InterventionError("question has no crucial slot to perturb")
    slot = present[int(rng.integers(len(present)))]
    old = slots[slot]
    if slot == "relation":
        new = RELATIONS[1 - RELATIONS.index(old)]
    elif slot == "count":
        candidates = [c for c in range(COUNT_RANGE[0], COUNT_RANGE[1] + 1) if c != old]
        new = candidates[int(rng.integers(len(candidates)))]
    else:
        synonyms = vocab.synonyms_of(old)
        if synonyms and rng.random() < policy.synonym_prob:
            new = synonyms[int(rng.integers(len(synonyms)))]
        else:
            category = vocab.subjects if slot == "subject" else vocab.attributes
            candidates = [t for t in category if t != old]
            if not candidates:
                raise InterventionError(f"no replacement token for slot {slot!r}")
            new = candidates[int(rng.integers(len(candidates)))]
    new_slots = dict(slots)
    new_slots[slot] = new
    q_new = make_question(q.template, new_slots)
    return q_new, Intervention(kind="perturbation", slot=slot, old=old, new=new)


def semantic_distance(q: QuestionSpec, q2: QuestionSpec, dm: DistanceModel) -> float:
    if q.template != q2.template:
        return dm.displacement_distance
    a, b = q.slot_map, q2.slot_map
    d = 0.0
    for slot, weight in dm.slot_weights.items():
        ta, tb = a.get(slot), b.get(slot)
        if slot == "relation":
            # The temporal reference is the (relation, anchor action) pair.
            ta = (ta, a.get("ref_action"))
            tb = (tb, b.get("ref_action"))
        if ta == tb:
            continue
        if ta is None or tb is None:
            d += weight
        elif isinstance(ta, str) and isinstance(tb, str) and dm.is_synonym(ta, tb):
            d += weight * dm.synonym_distance
        else:
            d += weight
    return min(d, 1.0)


def intervene(q: QuestionSpec, pool, vocab: Vocab, policy: InterventionPolicy,
              dm: DistanceModel, rng):
    """Displace with probability displacement_ratio, otherwise perturb."""
    if rng.random() < policy.displacement_ratio:
        q_new, record = displace(q, pool, rng)
    else:
        q_new, record = perturb(q, vocab, policy, rng)
    return q_new, semantic_distance(q, q_new, dm), record


def intervention_record(instance_id: str, record: Intervention, d: float) -> str:
    """One JSON audit line per applied intervention."""
    out = {"instance_id": instance_id, "kind": record.kind, "d": d}
    if record.source_instance_id is not None:
        out["source"] = record.source_instance_id
    if record.slot is not None:
        out.update(slot=record.slot, old=record.old, new=record.new)
    return json.dumps(out, sort_keys=True)
