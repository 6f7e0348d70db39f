"""From-scratch CNN training and inference for handwritten lowercase letters."""

from .dataset import AugmentPlan, LabeledImage, SplitManifest, augment_dataset, load_image, split_dataset
from .errors import (
    ConfigError,
    DataError,
    FormatError,
    GlyphForgeError,
    IntegrityError,
    LayoutError,
    NumericError,
    ShapeError,
    StateError,
)
from .layers import LayerStack
from .metrics import EvalReport, confusion_matrix, report
from .model import ModelArtifact, ModelConfig, build_model, count_parameters, load_model, save_model
from .optim import AdamState, adam_step, softmax_cross_entropy
from .trainer import EpochLog, emit_loss_curve, evaluate, train

__version__ = "0.1.0"
