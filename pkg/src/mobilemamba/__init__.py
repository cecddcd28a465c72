"""MobileMamba: a numpy inference engine for lightweight multi-receptive-field vision Mamba models."""

from .fusion import FusionError, FusionReport, fold_bn, fuse_model
from .graph import BlockGraph
from .metrics import BenchResult, CostReport, bench, bench_pair, count_costs
from .model import PRESETS, ModelConfig, build, forward, forward_features, preset
from .mrffi import MrffiConfig, SsmConfig, partition
from .tensor import BatchNormParams, ConvSpec, ShapeError
from .weights import WeightFormatError, load_weights, save_weights

__all__ = [
    "BatchNormParams", "BenchResult", "BlockGraph", "ConvSpec", "CostReport", "FusionError", "FusionReport",
    "ModelConfig", "MrffiConfig", "PRESETS", "ShapeError", "SsmConfig", "WeightFormatError", "bench",
    "bench_pair", "build", "count_costs", "fold_bn", "forward", "forward_features", "fuse_model",
    "load_weights", "partition", "preset", "save_weights",
]
