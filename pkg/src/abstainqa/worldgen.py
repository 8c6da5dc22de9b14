"""Synthetic templated VideoQA world with plantable question->answer shortcuts.

Scenes are short symbolic event lists; "videos" are fixed random token
embeddings pooled over each scene plus Gaussian noise, so the correct answer
stays recoverable from the feature vector. The training split can carry a
planted spurious correlation between one question trigger (template + subject)
and a forced answer, realized by rewriting scenes so the video stays truthful.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, GenerationError

TEMPLATES = ("Action", "Transition", "Frame")
COUNT_RANGE = (1, 5)
RELATIONS = ("before", "after")


def stable_hash(text: str) -> int:
    """Platform-independent 64-bit hash used to derive per-token/per-id seeds."""
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")


@dataclass(frozen=True)
class Vocab:
    subjects: tuple = ("boy", "girl", "woman", "lady", "child", "kid", "dog", "baby")
    attributes: tuple = ("red", "blue", "green", "white", "black", "tall")
    actions: tuple = ("dancing", "jumping", "eating", "crying",
                      "running", "singing", "clapping", "waving")
    synonym_pairs: tuple = (("woman", "lady"), ("child", "kid"))

    def validate(self):
        for name, toks in (("subjects", self.subjects),
                           ("attributes", self.attributes),
                           ("actions", self.actions)):
            if not toks:
                raise ConfigError(f"vocab.{name} must be non-empty")
            if len(set(toks)) != len(toks):
                raise ConfigError(f"vocab.{name} contains duplicates")
        for a, b in self.synonym_pairs:
            cat_a, cat_b = self.category(a), self.category(b)
            if cat_a is None or cat_a != cat_b:
                raise ConfigError(f"synonym pair ({a}, {b}) must share a slot category")

    def category(self, token: str):
        if token in self.subjects:
            return "subject"
        if token in self.attributes:
            return "attribute"
        if token in self.actions:
            return "action"
        return None

    def synonyms_of(self, token: str) -> tuple:
        out = []
        for a, b in self.synonym_pairs:
            if token == a:
                out.append(b)
            elif token == b:
                out.append(a)
        return tuple(out)


@dataclass(frozen=True)
class Event:
    subject: str
    attribute: str
    action: str
    count: int
    position: int


@dataclass(frozen=True)
class Scene:
    scene_id: str
    events: tuple  # ordered Event tuple, positions 0..K-1


@dataclass(frozen=True)
class QuestionSpec:
    template: str               # Action | Transition | Frame
    slots: tuple                # sorted tuple of (slot_name, token) pairs
    is_general: bool

    @property
    def slot_map(self) -> dict:
        return dict(self.slots)

    def text(self) -> str:
        """Deterministic surface form, for logs and reports only."""
        s = self.slot_map
        who = s["subject"] if self.is_general else f"{s.get('attribute', '')} {s['subject']}".strip()
        if self.template == "Action":
            return f"what does the {who} do {s['count']} times?"
        if self.template == "Transition":
            return f"what does the {who} do {s['relation']} {s['ref_action']}?"
        return f"what does the {who} do?"


def make_question(template: str, slots: dict) -> QuestionSpec:
    return QuestionSpec(template=template,
                        slots=tuple(sorted(slots.items())),
                        is_general="attribute" not in slots)


@dataclass(frozen=True)
class OptionSet:
    options: tuple
    correct_index: int
    not_given_index: int | None = None

    def validate(self):
        if len(set(self.options)) != len(self.options):
            raise ConfigError("options must be distinct")
        if not 0 <= self.correct_index < len(self.options):
            raise ConfigError("correct_index out of range")


@dataclass(frozen=True)
class QAInstance:
    id: str
    split: str                  # train | test | test_conflict
    scene: Scene
    video: np.ndarray
    question: QuestionSpec
    answer: str                 # action token
    options: OptionSet | None
    biased: bool = False


@dataclass(frozen=True)
class BiasSpec:
    target_template: str = "Frame"
    target_subject: str = "baby"
    forced_action: str = "crying"
    strength: float = 0.9

    def matches(self, q: QuestionSpec) -> bool:
        return (q.template == self.target_template
                and q.slot_map.get("subject") == self.target_subject)


@dataclass
class WorldConfig:
    train_size: int = 8000
    test_size: int = 2000
    conflict_size: int = 500
    k_min: int = 1
    k_max: int = 4
    video_dim: int = 64
    noise_sigma: float = 0.1
    binding_scale: float = 0.5
    # Sampling weights over TEMPLATES (Action, Transition, Frame). Frame-heavy
    # by default, matching the frame-QA dominance of real VideoQA corpora.
    template_mix: tuple = (0.25, 0.25, 0.5)
    general_fraction: float = 0.25
    options_n: int = 5
    seed: int = 0
    featurizer_seed: int = 1
    vocab: Vocab = field(default_factory=Vocab)
    bias: BiasSpec = field(default_factory=BiasSpec)

    def validate(self):
        self.vocab.validate()
        if not 1 <= self.k_min <= self.k_max:
            raise ConfigError("need 1 <= k_min <= k_max")
        if self.k_max > len(self.vocab.subjects):
            raise ConfigError("k_max exceeds the number of distinct subjects")
        if self.bias.forced_action not in self.vocab.actions:
            raise ConfigError(f"forced_action {self.bias.forced_action!r} not in vocab.actions")
        if not 0.0 <= self.bias.strength <= 1.0:
            raise ConfigError("bias strength must lie in [0, 1]")
        if self.conflict_size > 0 and len(self.vocab.actions) < 2:
            raise ConfigError("conflict split needs at least two actions")
        if not 2 <= self.options_n <= len(self.vocab.actions):
            raise ConfigError("options_n must fit the action pool")
        if self.binding_scale <= 0.0:
            raise ConfigError("binding_scale must be positive")
        mix = tuple(self.template_mix)
        if len(mix) != len(TEMPLATES) or any(w < 0.0 for w in mix) or sum(mix) <= 0.0:
            raise ConfigError("template_mix needs one non-negative weight per "
                              "template with a positive sum")


# ---------------------------------------------------------------------------
# Scene and video generation
# ---------------------------------------------------------------------------

def generate_scene(vocab: Vocab, k: int, rng_seed: int, scene_id: str = "scene") -> Scene:
    """Sample k events with distinct subjects (hence unique template answers)."""
    if k < 1:
        raise GenerationError("scene needs at least one event")
    if k > len(vocab.subjects):
        raise GenerationError(
            f"cannot place {k} events with only {len(vocab.subjects)} distinct subjects")
    rng = np.random.default_rng(np.random.SeedSequence([rng_seed & 0xFFFFFFFF, stable_hash(scene_id)]))
    subjects = rng.choice(len(vocab.subjects), size=k, replace=False)
    events = []
    for pos in range(k):
        events.append(Event(
            subject=vocab.subjects[subjects[pos]],
            attribute=vocab.attributes[rng.integers(len(vocab.attributes))],
            action=vocab.actions[rng.integers(len(vocab.actions))],
            count=int(rng.integers(COUNT_RANGE[0], COUNT_RANGE[1] + 1)),
            position=pos,
        ))
    return Scene(scene_id=scene_id, events=tuple(events))


def event_tokens(event: Event) -> tuple:
    """Tokens pooled into the video feature for one event.

    Bound-pair tokens keep subject/attribute/count/order attached to their
    action so the answer (and question-scene mismatches) stay recoverable
    from the pooled sum.
    """
    return (
        event.subject,
        event.attribute,
        event.action,
        f"count:{event.count}",
        f"pos:{event.position}",
        f"{event.subject}|{event.action}",
        f"{event.subject}|{event.attribute}",
        f"{event.subject}|count:{event.count}",
        f"{event.action}|pos:{event.position}",
    )


MAX_POSITIONS = 8


def featurizer_basis(vocab: Vocab) -> tuple:
    """Primitive tokens that get mutually orthogonal feature directions."""
    return (tuple(vocab.subjects) + tuple(vocab.attributes) + tuple(vocab.actions)
            + tuple(f"count:{c}" for c in range(COUNT_RANGE[0], COUNT_RANGE[1] + 1))
            + tuple(f"pos:{p}" for p in range(MAX_POSITIONS)))


class TokenFeaturizer:
    """Fixed token embeddings drawn once from the featurizer seed.

    Primitive tokens (subjects, attributes, actions, counts, positions) are
    assigned orthogonal unit basis vectors so their presence in a pooled sum
    is exactly recoverable; bound-pair tokens get random vectors of norm
    `binding_scale`, confined to the remaining dimensions so they do not bleed
    into the primitive subspace. A binding_scale below 1 makes cross-event
    binding (which event's action pairs with which subject) genuinely hard to
    read out, mimicking imperfect video understanding, while the presence of
    individual subjects/attributes/actions stays easy. When the basis does not
    fit in `dim`, everything falls back to dense random vectors.
    """

    def __init__(self, featurizer_seed: int, dim: int, basis_tokens: tuple = (),
                 binding_scale: float = 1.0):
        self.seed = featurizer_seed
        self.dim = dim
        self.binding_scale = binding_scale
        self.basis = {t: i for i, t in enumerate(basis_tokens)} \
            if 0 < len(basis_tokens) < dim else {}
        self._cache: dict = {}

    def embed(self, token: str) -> np.ndarray:
        vec = self._cache.get(token)
        if vec is None:
            vec = np.zeros(self.dim)
            slot = self.basis.get(token)
            if slot is not None:
                vec[slot] = 1.0
            else:
                rng = np.random.default_rng(
                    np.random.SeedSequence([self.seed, stable_hash(token)]))
                free = self.dim - len(self.basis)
                vec[len(self.basis):] = (self.binding_scale
                                         * rng.standard_normal(free) / np.sqrt(free))
            self._cache[token] = vec
        return vec

    def render(self, scene: Scene, noise_sigma: float, noise_seed: int) -> np.ndarray:
        feat = np.zeros(self.dim)
        for event in scene.events:
            for token in event_tokens(event):
                feat = feat + self.embed(token)
        if noise_sigma > 0.0:
            rng = np.random.default_rng(np.random.SeedSequence([noise_seed & 0xFFFFFFFFFFFF]))
            feat = feat + noise_sigma * rng.standard_normal(self.dim)
        return feat


def render_video(scene: Scene, featurizer_seed: int, noise_sigma: float,
                 noise_seed: int, dim: int = 64, vocab: Vocab | None = None,
                 binding_scale: float = 1.0) -> np.ndarray:
    basis = featurizer_basis(vocab) if vocab is not None else ()
    featurizer = TokenFeaturizer(featurizer_seed, dim, basis, binding_scale)
    return featurizer.render(scene, noise_sigma, noise_seed)


# ---------------------------------------------------------------------------
# Questions and answers
# ---------------------------------------------------------------------------

def generate_question(scene: Scene, template: str, rng_seed: int,
                      general_fraction: float = 0.0):
    """Pick an event compatible with the template and phrase a question about it.

    Returns (QuestionSpec, answer action token). Frame questions drop the
    attribute slot (becoming "general") with probability general_fraction.
    """
    rng = np.random.default_rng(np.random.SeedSequence([rng_seed & 0xFFFFFFFF, stable_hash(template)]))
    events = scene.events
    if template == "Action":
        ev = events[rng.integers(len(events))]
        slots = {"subject": ev.subject, "attribute": ev.attribute, "count": ev.count}
        return make_question(template, slots), ev.action
    if template == "Transition":
        if len(events) < 2:
            raise GenerationError("Transition template needs at least two events")
        i = int(rng.integers(len(events) - 1))
        relation = RELATIONS[rng.integers(2)]
        if relation == "after":
            ref, ev = events[i], events[i + 1]
        else:
            ref, ev = events[i + 1], events[i]
        slots = {"subject": ev.subject, "attribute": ev.attribute,
                 "relation": relation, "ref_action": ref.action}
        return make_question(template, slots), ev.action
    if template == "Frame":
        ev = events[rng.integers(len(events))]
        slots = {"subject": ev.subject}
        if rng.random() >= general_fraction:
            slots["attribute"] = ev.attribute
        return make_question(template, slots), ev.action
    raise GenerationError(f"unknown template {template!r}")


def derive_answer(scene: Scene, question: QuestionSpec):
    """Re-derive the answer from the scene; None when no unique referent exists."""
    slots = question.slot_map
    matches = [ev for ev in scene.events if ev.subject == slots.get("subject")]
    if "attribute" in slots:
        matches = [ev for ev in matches if ev.attribute == slots["attribute"]]
    if question.template == "Action":
        matches = [ev for ev in matches if ev.count == slots.get("count")]
    if question.template == "Transition":
        relation, ref = slots.get("relation"), slots.get("ref_action")
        kept = []
        for ev in matches:
            adj = ev.position - 1 if relation == "after" else ev.position + 1
            if 0 <= adj < len(scene.events) and scene.events[adj].action == ref:
                kept.append(ev)
        matches = kept
    if len(matches) != 1:
        return None
    return matches[0].action


# ---------------------------------------------------------------------------
# Dataset assembly
# ---------------------------------------------------------------------------

def _make_options(answer: str, vocab: Vocab, n: int, rng) -> OptionSet:
    pool = [a for a in vocab.actions if a != answer]
    picks = list(rng.choice(len(pool), size=n - 1, replace=False))
    options = [pool[i] for i in picks] + [answer]
    order = rng.permutation(n)
    shuffled = [options[i] for i in order]
    return OptionSet(options=tuple(shuffled),
                     correct_index=int(shuffled.index(answer)),
                     not_given_index=None)


def _instance_rng(cfg: WorldConfig, instance_id: str):
    return np.random.default_rng(
        np.random.SeedSequence([cfg.seed, stable_hash(instance_id)]))


def _generate_instance(cfg: WorldConfig, featurizer: TokenFeaturizer, split: str,
                       index: int, template: str | None = None,
                       force_subject: str | None = None) -> QAInstance:
    instance_id = f"{split}-{index:06d}"
    rng = _instance_rng(cfg, instance_id)
    if template is None:
        mix = np.asarray(cfg.template_mix, dtype=float)
        template = TEMPLATES[rng.choice(len(TEMPLATES), p=mix / mix.sum())]
    k_lo = max(cfg.k_min, 2) if template == "Transition" else cfg.k_min
    k = int(rng.integers(k_lo, cfg.k_max + 1))
    scene = generate_scene(cfg.vocab, k, int(rng.integers(2**31)), scene_id=f"sc-{instance_id}")
    if force_subject is not None and all(ev.subject != force_subject for ev in scene.events):
        slot = int(rng.integers(k))
        forced = replace(scene.events[slot], subject=force_subject)
        scene = Scene(scene.scene_id, scene.events[:slot] + (forced,) + scene.events[slot + 1:])
    question, answer = generate_question(scene, template, int(rng.integers(2**31)),
                                         general_fraction=cfg.general_fraction)
    if force_subject is not None and question.slot_map.get("subject") != force_subject:
        ev = next(e for e in scene.events if e.subject == force_subject)
        slots = {"subject": ev.subject}
        if template == "Action":
            slots.update(attribute=ev.attribute, count=ev.count)
        elif template == "Frame":
            if not question.is_general:
                slots["attribute"] = ev.attribute
        else:  # Transition: keep the relation, re-anchor on the forced subject
            if ev.position + 1 < len(scene.events):
                slots.update(attribute=ev.attribute, relation="before",
                             ref_action=scene.events[ev.position + 1].action)
            else:
                slots.update(attribute=ev.attribute, relation="after",
                             ref_action=scene.events[ev.position - 1].action)
        question = make_question(template, slots)
        answer = ev.action
    video = featurizer.render(scene, cfg.noise_sigma,
                              noise_seed=stable_hash("noise:" + instance_id))
    options = _make_options(answer, cfg.vocab, cfg.options_n, rng)
    return QAInstance(id=instance_id, split=split, scene=scene, video=video,
                      question=question, answer=answer, options=options)


def plant_bias(instances: list, bias: BiasSpec, rng_seed: int,
               cfg: WorldConfig, featurizer: TokenFeaturizer) -> list:
    """Rewrite a beta-fraction of trigger-matching train scenes to the forced action.

    The scene (not the label) is rewritten and the video re-rendered, so the
    feature stays truthful; only the question->answer statistics are skewed.
    """
    if bias.forced_action not in cfg.vocab.actions:
        raise ConfigError(f"forced_action {bias.forced_action!r} not in vocab")
    out = []
    for inst in instances:
        if inst.split != "train":
            raise ConfigError("plant_bias applies to train instances only")
        if not bias.matches(inst.question) or bias.strength <= 0.0:
            out.append(inst)
            continue
        coin_rng = np.random.default_rng(
            np.random.SeedSequence([rng_seed, stable_hash("bias:" + inst.id)]))
        if coin_rng.random() >= bias.strength:
            out.append(inst)
            continue
        subject = inst.question.slot_map["subject"]
        events = []
        for ev in inst.scene.events:
            if ev.subject == subject:
                ev = replace(ev, action=bias.forced_action)
            events.append(ev)
        scene = Scene(inst.scene.scene_id, tuple(events))
        answer = derive_answer(scene, inst.question)
        if answer != bias.forced_action:
            raise GenerationError(f"bias rewrite broke derivability for {inst.id}")
        video = featurizer.render(scene, cfg.noise_sigma,
                                  noise_seed=stable_hash("noise:" + inst.id))
        options_rng = np.random.default_rng(
            np.random.SeedSequence([rng_seed, stable_hash("biasopt:" + inst.id)]))
        options = _make_options(answer, cfg.vocab, cfg.options_n, options_rng)
        out.append(replace(inst, scene=scene, answer=answer, video=video,
                           options=options, biased=True))
    return out


@dataclass
class Dataset:
    train: list
    test: list
    test_conflict: list
    config: WorldConfig
    content_hash: str = ""

    def split(self, name: str) -> list:
        return {"train": self.train, "test": self.test,
                "test_conflict": self.test_conflict}[name]


def build_dataset(cfg: WorldConfig) -> Dataset:
    cfg.validate()
    featurizer = TokenFeaturizer(cfg.featurizer_seed, cfg.video_dim,
                                 featurizer_basis(cfg.vocab), cfg.binding_scale)
    train = [_generate_instance(cfg, featurizer, "train", i) for i in range(cfg.train_size)]
    train = plant_bias(train, cfg.bias, cfg.seed, cfg, featurizer)
    test = [_generate_instance(cfg, featurizer, "test", i) for i in range(cfg.test_size)]
    conflict = []
    attempt = 0
    limit = max(50 * cfg.conflict_size, 1000)
    while len(conflict) < cfg.conflict_size:
        if attempt >= limit:
            raise ConfigError("could not populate test_conflict under this config")
        inst = _generate_instance(cfg, featurizer, "test_conflict", attempt,
                                  template=cfg.bias.target_template,
                                  force_subject=cfg.bias.target_subject)
        attempt += 1
        if not cfg.bias.matches(inst.question):
            continue
        if inst.answer == cfg.bias.forced_action:
            continue
        conflict.append(inst)
    for inst in train + test + conflict:
        if derive_answer(inst.scene, inst.question) != inst.answer:
            raise GenerationError(f"scene-answer audit failed for {inst.id}")
    ds = Dataset(train=train, test=test, test_conflict=conflict, config=cfg)
    ds.content_hash = dataset_hash(ds)
    return ds


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def instance_to_record(inst: QAInstance) -> dict:
    rec = {
        "id": inst.id,
        "split": inst.split,
        "template": inst.question.template,
        "slots": inst.question.slot_map,
        "is_general": inst.question.is_general,
        "answer": inst.answer,
        "biased": inst.biased,
        "video": [float(x) for x in inst.video],
        "scene": [{"subject": e.subject, "attribute": e.attribute, "action": e.action,
                   "count": e.count, "position": e.position} for e in inst.scene.events],
        "scene_id": inst.scene.scene_id,
    }
    if inst.options is not None:
        rec["options"] = {"tokens": list(inst.options.options),
                          "correct_index": inst.options.correct_index}
    return rec


def instance_from_record(rec: dict) -> QAInstance:
    events = tuple(Event(e["subject"], e["attribute"], e["action"],
                         int(e["count"]), int(e["position"])) for e in rec["scene"])
    slots = {k: (int(v) if k == "count" else v) for k, v in rec["slots"].items()}
    options = None
    if "options" in rec:
        toks = tuple(rec["options"]["tokens"])
        options = OptionSet(options=toks, correct_index=int(rec["options"]["correct_index"]))
    return QAInstance(
        id=rec["id"], split=rec["split"],
        scene=Scene(rec["scene_id"], events),
        video=np.asarray(rec["video"], dtype=float),
        question=make_question(rec["template"], slots),
        answer=rec["answer"], options=options, biased=bool(rec["biased"]))


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _split_lines(instances: list) -> str:
    return "".join(_dumps(instance_to_record(i)) + "\n" for i in instances)


def dataset_hash(ds: Dataset) -> str:
    h = hashlib.sha256()
    for split in (ds.train, ds.test, ds.test_conflict):
        h.update(_split_lines(split).encode("utf-8"))
    return h.hexdigest()


def world_config_to_dict(cfg: WorldConfig) -> dict:
    d = {k: getattr(cfg, k) for k in (
        "train_size", "test_size", "conflict_size", "k_min", "k_max", "video_dim",
        "noise_sigma", "binding_scale", "general_fraction", "options_n", "seed",
        "featurizer_seed")}
    d["template_mix"] = list(cfg.template_mix)
    d["vocab"] = {"subjects": list(cfg.vocab.subjects),
                  "attributes": list(cfg.vocab.attributes),
                  "actions": list(cfg.vocab.actions),
                  "synonym_pairs": [list(p) for p in cfg.vocab.synonym_pairs]}
    d["bias"] = {"target_template": cfg.bias.target_template,
                 "target_subject": cfg.bias.target_subject,
                 "forced_action": cfg.bias.forced_action,
                 "strength": cfg.bias.strength}
    return d


def world_config_from_dict(d: dict) -> WorldConfig:
    d = dict(d)
    vocab = Vocab(**{k: tuple(tuple(p) if isinstance(p, list) else p for p in v)
                     if k == "synonym_pairs" else tuple(v)
                     for k, v in d.pop("vocab").items()}) if "vocab" in d else Vocab()
    bias = BiasSpec(**d.pop("bias")) if "bias" in d else BiasSpec()
    if "template_mix" in d:
        d["template_mix"] = tuple(d["template_mix"])
    return WorldConfig(vocab=vocab, bias=bias, **d)


def save_dataset(ds: Dataset, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("train", "test", "test_conflict"):
        (out / f"{name}.jsonl").write_text(_split_lines(ds.split(name)), encoding="utf-8")
    manifest = {
        "config": world_config_to_dict(ds.config),
        "content_hash": ds.content_hash,
        "sizes": {"train": len(ds.train), "test": len(ds.test),
                  "test_conflict": len(ds.test_conflict)},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n",
                                       encoding="utf-8")
    return manifest


def load_dataset(in_dir) -> Dataset:
    src = Path(in_dir)
    manifest = json.loads((src / "manifest.json").read_text(encoding="utf-8"))
    cfg = world_config_from_dict(manifest["config"])
    splits = {}
    for name in ("train", "test", "test_conflict"):
        lines = (src / f"{name}.jsonl").read_text(encoding="utf-8").splitlines()
        splits[name] = [instance_from_record(json.loads(line)) for line in lines]
    ds = Dataset(train=splits["train"], test=splits["test"],
                 test_conflict=splits["test_conflict"], config=cfg)
    ds.content_hash = dataset_hash(ds)
    if ds.content_hash != manifest["content_hash"]:
        raise ConfigError("dataset content hash mismatch; files were modified")
    return ds
