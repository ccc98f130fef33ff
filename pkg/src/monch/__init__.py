"""Single-branch multi-class cell segmentation with vision-language prompts.

Desk-scale implementation: a minimal differentiable tensor engine, stub
vision/text encoders, multi-grained feature enhancement, a progressive
prompt decoder, a text-conditioned segmentation head, and the training /
evaluation / ablation harness around them.
"""

from .config import TrainConfig
from .tensor import GradTape, NumericsError, Tensor, TensorError

__version__ = "0.1.0"

__all__ = ["GradTape", "NumericsError", "Tensor", "TensorError", "TrainConfig", "__version__"]
