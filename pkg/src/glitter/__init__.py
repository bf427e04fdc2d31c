"""Few-shot node classification with task-specific learned structures."""

from .config import TrainConfig
from .data import SBMConfig, generate_sbm_dataset, load_checkpoint, load_dataset
from .evaluation import evaluate
from .meta import train

__all__ = ["TrainConfig", "SBMConfig", "generate_sbm_dataset", "load_dataset", "load_checkpoint",
           "train", "evaluate"]
__version__ = "0.1.0"
