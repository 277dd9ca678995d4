"""Small deterministic layer engine shared by both networks."""
from .activations import hard_sigmoid, hard_sigmoid_grad, softmax
from .gradcheck import check_network, finite_diff_grad
from .layers import (Conv1D, Conv2D, Dense, DepthwiseConv1D, DepthwiseConv2D, InstanceNorm,
                     LayerSpec, MaxPool, UpsampleNearest)
from .network import NetworkGraph, backward, build, forward, param_count
from .optim import AdamState, adam_init, adam_step
from .serialize import load_weights, save_weights

__all__ = [
    "hard_sigmoid", "hard_sigmoid_grad", "softmax", "check_network", "finite_diff_grad",
    "Conv1D", "Conv2D", "Dense", "DepthwiseConv1D", "DepthwiseConv2D", "InstanceNorm",
    "LayerSpec", "MaxPool", "UpsampleNearest", "NetworkGraph", "backward", "build", "forward",
    "param_count", "AdamState", "adam_init", "adam_step", "load_weights", "save_weights",
]
