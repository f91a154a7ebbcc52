"""N-modal contrastive embedding alignment over pre-extracted feature vectors.

Trains one projection head per modality so that artifacts belonging to the
same post land close together on a shared unit sphere, regardless of which
modality they came from.  Ships the two batch losses (generalized triplet and
generalized CLIP/InfoNCE), a deterministic trainer, a cross-modal retrieval
harness, and simple downstream classifiers.
"""

from nmodal.data import (
    EmbeddingBundle,
    Post,
    SynthConfig,
    generate_synthetic,
    read_bundle,
    split_bundle,
    write_bundle,
)
from nmodal.downstream import (
    ExperimentConfig,
    LabeledEmbeddings,
    kfold_split,
    predict_proba,
    roc_auc,
    roc_curve,
    run_account_experiment,
    run_stance_experiment,
    smote_oversample,
    train_linear_classifier,
)
from nmodal.evaluation import (
    EvalConfig,
    RecallReport,
    evaluate_recall,
    recall_over_population,
    run_retrieval_experiment,
    sweep_projection_dims,
    time_training,
)
from nmodal.losses import LossConfig, ModalBatch, bimodal_clip_loss, nmodal_clip_loss, nmodal_triplet_loss
from nmodal.model import (
    ModelState,
    TrainConfig,
    embed,
    embed_bundle,
    embed_matrix,
    load_checkpoint,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "EmbeddingBundle",
    "Post",
    "SynthConfig",
    "generate_synthetic",
    "read_bundle",
    "split_bundle",
    "write_bundle",
    "LossConfig",
    "ModalBatch",
    "bimodal_clip_loss",
    "nmodal_clip_loss",
    "nmodal_triplet_loss",
    "ModelState",
    "TrainConfig",
    "train",
    "embed",
    "embed_matrix",
    "embed_bundle",
    "save_checkpoint",
    "load_checkpoint",
    "EvalConfig",
    "RecallReport",
    "evaluate_recall",
    "recall_over_population",
    "run_retrieval_experiment",
    "sweep_projection_dims",
    "time_training",
    "ExperimentConfig",
    "LabeledEmbeddings",
    "train_linear_classifier",
    "predict_proba",
    "roc_auc",
    "roc_curve",
    "smote_oversample",
    "kfold_split",
    "run_stance_experiment",
    "run_account_experiment",
    "__version__",
]
