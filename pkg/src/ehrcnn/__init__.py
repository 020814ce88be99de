"""Risk prediction from longitudinal medical event sequences.

CBOW event embeddings, a temporal CNN with max-over-time pooling, linear and
forest baselines, case/control cohort construction and exact ranking metrics.
"""

__version__ = "0.1.0"

from .cnn import CnnConfig, CnnModel, InputMode, PAD  # noqa: E402
from .cohort import CohortDataset, CohortSpec, build_cohort  # noqa: E402
from .data import PatientRecord, Vocabulary, build_vocabulary, load_dataset  # noqa: E402
from .embedding import CbowConfig, CbowEmbedder, EmbeddingMatrix, train_cbow  # noqa: E402
from .training import CnnRiskClassifier, TrainConfig, train_cnn  # noqa: E402

__all__ = [
    "CbowConfig", "CbowEmbedder", "CnnConfig", "CnnModel", "CnnRiskClassifier",
    "CohortDataset", "CohortSpec", "EmbeddingMatrix", "InputMode", "PAD",
    "PatientRecord", "TrainConfig", "Vocabulary", "build_cohort", "build_vocabulary",
    "load_dataset", "train_cbow", "train_cnn",
]
