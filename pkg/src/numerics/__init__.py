# LDSeg Numerics Package
from src.numerics.tensor import Tensor, as_tensor, backward, concat, get_dtype, no_grad, precision
from src.numerics.layers import (
    attention2d,
    conv2d,
    group_norm,
    layer_norm,
    linear,
    time_embedding,
    upsample_nearest,
)
from src.numerics.params import ParamStore, sgd_adam_step
from src.numerics.random import DATA_STREAM, SAMPLING_STREAM, TRAIN_STREAM, RngStream

__all__ = [
    'Tensor', 'as_tensor', 'backward', 'concat', 'get_dtype', 'no_grad', 'precision',
    'attention2d', 'conv2d', 'group_norm', 'layer_norm', 'linear', 'time_embedding', 'upsample_nearest',
    'ParamStore', 'sgd_adam_step',
    'RngStream', 'DATA_STREAM', 'TRAIN_STREAM', 'SAMPLING_STREAM',
]
