"""Two-view fusion attention for 8-class facial expression recognition."""

from fusionfer.checkpoint import load_checkpoint, save_checkpoint
from fusionfer.features import (
    CLASS_NAMES,
    EmbeddingRecord,
    EmbeddingSet,
    PairedDataset,
    ToyEncoder,
    load_embeddings,
    pair_views,
    save_embeddings,
    uniform_class_sample,
)
from fusionfer.fusion import (
    STRATEGIES,
    AdamState,
    FusionConfig,
    FusionModel,
    TrainConfig,
    cross_entropy,
    fusion_backward,
    fusion_forward,
    train_fusion,
)
from fusionfer.metrics import accuracy, f1_per_class, confusion_counts, macro_f1, sliding_window_smooth
from fusionfer.regions import EYE, MOUTH, NOSE, ViewComposition, compose_views, crop_region

__version__ = "0.1.0"
