"""Zero-shot human-object interaction detection with text-embedding classifiers."""
from ._kernels import BACKEND
from .evaluation import Detection, EvalReport, evaluate
from .label_space import LabelSpace, Setting, SplitSpec, build_label_space, make_split
from .matching import LossWeights, hungarian_solve
from .model import KI2HOI, ModelConfig
from .training import TrainConfig, fit, predict

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Detection",
    "EvalReport",
    "KI2HOI",
    "LabelSpace",
    "LossWeights",
    "ModelConfig",
    "Setting",
    "SplitSpec",
    "TrainConfig",
    "build_label_space",
    "evaluate",
    "fit",
    "hungarian_solve",
    "make_split",
    "predict",
]
