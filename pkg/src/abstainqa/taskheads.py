"""Training targets and option-set construction for both task types.

Multi-choice training always sees the reserved NOT_GIVEN option appended last.
Intervened multi-choice examples above the distance threshold get a resampled
option set (random distractors + the original correct answer + NOT_GIVEN) with
NOT_GIVEN as the supervised target; below-threshold perturbations are treated
as augmentation and keep the original answer. Open-ended targets carry the
distance as a soft abstention label.
"""
from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError, InterventionError
from .intervene import DistanceModel, Intervention
from .worldgen import OptionSet, QAInstance, QuestionSpec, derive_answer

NOT_GIVEN = "<not_given>"


@dataclass(frozen=True)
class TrainTarget:
    task: str                   # mcqa | oeqa
    answer_index: int
    d: float
    intervened: bool
    options: OptionSet | None = None


def augment_options(options: OptionSet) -> OptionSet:
    """Append the reserved NOT_GIVEN option; original order and index kept."""
    if NOT_GIVEN in options.options:
        raise ConfigError("option set already contains the NOT_GIVEN option")
    augmented = options.options + (NOT_GIVEN,)
    return OptionSet(options=augmented,
                     correct_index=options.correct_index,
                     not_given_index=len(augmented) - 1)


def intervened_options(options: OptionSet, global_pool, rng,
                       drop_original_correct: bool = False,
                       reject=()) -> OptionSet:
    """Resample distractors around the original correct answer, target NOT_GIVEN.

    `reject` lists tokens that must not appear as distractors (e.g. an answer
    the intervened question could still derive from the scene).
    """
    original_correct = options.options[options.correct_index]
    banned = {original_correct, NOT_GIVEN, *reject}
    pool = [t for t in global_pool if t not in banned]
    n_distractors = len(options.options) - (0 if drop_original_correct else 1)
    if len(pool) < n_distractors:
        raise InterventionError("global option pool too small for distractor sampling")
    picks = rng.choice(len(pool), size=n_distractors, replace=False)
    body = [pool[int(i)] for i in picks]
    if not drop_original_correct:
        body.append(original_correct)
    order = rng.permutation(len(body))
    shuffled = [body[int(i)] for i in order] + [NOT_GIVEN]
    return OptionSet(options=tuple(shuffled),
                     correct_index=len(shuffled) - 1,
                     not_given_index=len(shuffled) - 1)


def build_target(instance: QAInstance, intervened_question: QuestionSpec | None,
                 d: float, dm: DistanceModel, *, task: str, answer_pool,
                 rng=None, global_pool=None,
                 drop_original_correct: bool = False) -> TrainTarget:
    """Resolve the supervised target after an (optional) intervention.

    Below-threshold interventions count as augmentation: the original answer
    stays. Above-threshold multi-choice examples switch to a resampled option
    set with NOT_GIVEN as target; open-ended examples keep the answer index and
    let the soft label d drive the abstention loss.
    """
    if not 0.0 <= d <= 1.0:
        raise ConfigError("distance must lie in [0, 1]")
    intervened = intervened_question is not None
    answer_index = answer_pool.index(instance.answer)
    if task == "oeqa":
        return TrainTarget(task="oeqa", answer_index=answer_index,
                           d=d if intervened else 0.0, intervened=intervened)
    if task != "mcqa":
        raise ConfigError(f"unknown task {task!r}")
    if instance.options is None:
        raise ConfigError("multi-choice target needs an option set")
    if not intervened or d < dm.threshold:
        options = augment_options(instance.options)
        return TrainTarget(task="mcqa", answer_index=options.correct_index,
                           d=d, intervened=intervened, options=options)
    reject = []
    derivable = derive_answer(instance.scene, intervened_question)
    if derivable is not None:
        reject.append(derivable)
    options = intervened_options(instance.options, global_pool, rng,
                                 drop_original_correct=drop_original_correct,
                                 reject=reject)
    return TrainTarget(task="mcqa", answer_index=options.not_given_index,
                       d=d, intervened=True, options=options)
