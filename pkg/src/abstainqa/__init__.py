"""Synthetic video-QA world with plantable shortcuts and ignorance-aware training."""

from .curriculum import Schedule, prob, should_intervene
from .errors import (AbstainQAError, ConfigError, GenerationError,
                     InterventionError, NumericError, TrainingDivergedError,
                     UnknownTokenError)
from .evalharness import (EvalConfig, admission_accuracy, bias_breaking_experiment,
                          clean_accuracy, evaluate_run, shortcut_rate, sweep,
                          unknown_rate)
from .intervene import (DEFAULT_SLOT_WEIGHTS, DistanceModel, Intervention,
                        InterventionPolicy, displace, intervene, perturb,
                        semantic_distance)
from .nnet import (ModelConfig, ModelParams, forward_mcqa, forward_oeqa,
                   grad_check, init_params, load_params, loss_mcqa, loss_oeqa,
                   model_config_from_vocab, predict_option, save_params)
from .taskheads import NOT_GIVEN, TrainTarget, augment_options, build_target, intervened_options
from .trainer import TrainConfig, RunManifest, train, train_baseline_augmented
from .worldgen import (BiasSpec, Dataset, QAInstance, QuestionSpec, Scene,
                       Vocab, WorldConfig, build_dataset, derive_answer,
                       generate_question, generate_scene, load_dataset,
                       plant_bias, save_dataset)

__version__ = "0.1.0"
