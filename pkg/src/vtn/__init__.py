"""Video transformer network at desk scale on a small numpy autograd core."""

from .config import (ConfigError, EncoderConfig, InferenceConfig, ModelConfig, RunConfig,
                     SynthTaskSpec, TrainConfig, desk_train_config)
from .data import Video, generate_synth_dataset
from .inference import Chunked, FullVideo, MultiView, PrecomputedFeatures, predict
from .kernels import BACKEND as KERNEL_BACKEND
from .model import VTN
from .tensor import Tensor, backward, no_grad
from .training import TrainLog, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "EncoderConfig", "InferenceConfig", "ModelConfig", "RunConfig",
    "SynthTaskSpec", "TrainConfig", "desk_train_config", "Video", "generate_synth_dataset",
    "Chunked", "FullVideo", "MultiView", "PrecomputedFeatures", "predict", "KERNEL_BACKEND",
    "VTN", "Tensor", "backward", "no_grad", "TrainLog", "evaluate", "train",
]
