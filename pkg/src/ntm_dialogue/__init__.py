"""Neural Turing Machine memory for multi-turn dialogue models."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ModelDims, TrainConfig
from .const import Architecture, Precision, SegmentPolicy, Task
from .corpus import Conversation, Vocabulary, build_vocab, read_corpus
from .dntms import DNTMSModel
from .ntm import NTM
from .ntmlm import NTMLMModel
from .trainer import Trainer

__all__ = [
    "Architecture",
    "Checkpoint",
    "Conversation",
    "DNTMSModel",
    "ModelDims",
    "NTM",
    "NTMLMModel",
    "Precision",
    "SegmentPolicy",
    "Task",
    "TrainConfig",
    "Trainer",
    "Vocabulary",
    "build_vocab",
    "load_checkpoint",
    "read_corpus",
    "save_checkpoint",
]
