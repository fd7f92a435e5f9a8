"""Vision Eagle Attention on a numpy ResNet-18.

Submodules: ``nn`` (layer kernels), ``backbone`` (ResNet-18 and the attention
model), ``data`` and ``idx`` (dataset ingestion), ``metrics``, ``training``,
``cli``. Hot loops live in ``kernels``, which picks the compiled extension
when available and a numpy fallback otherwise.
"""
from .backbone import (
    SelfGated,
    VeaBlockSpec,
    VeaConfig,
    apply_attention,
    build_resnet18,
    build_vea_resnet18,
    forward,
)
from .kernels import backend_name
from .metrics import ConfusionMatrix, aggregate, confusion_from_predictions, multiclass_mcc
from .nn import Mode
from .training import TrainConfig, evaluate, load_checkpoint, lr_schedule, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "ConfusionMatrix",
    "Mode",
    "SelfGated",
    "TrainConfig",
    "VeaBlockSpec",
    "VeaConfig",
    "aggregate",
    "apply_attention",
    "backend_name",
    "build_resnet18",
    "build_vea_resnet18",
    "confusion_from_predictions",
    "evaluate",
    "forward",
    "load_checkpoint",
    "lr_schedule",
    "multiclass_mcc",
    "save_checkpoint",
    "train",
]
