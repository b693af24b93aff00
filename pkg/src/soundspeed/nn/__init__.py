"""Minimal NCHW tensor layers with reverse-mode gradients, and the
encoder-decoder networks built from them."""

from .layers import (Param, Conv2d, BatchNorm2d, ReLU, MaxPool2x2, Upsample2x,
                     LinearResize, l2_loss)
from .network import Network, build_network, save_checkpoint, load_checkpoint

__all__ = [
    "Param", "Conv2d", "BatchNorm2d", "ReLU", "MaxPool2x2", "Upsample2x",
    "LinearResize", "l2_loss", "Network", "build_network",
    "save_checkpoint", "load_checkpoint",
]
