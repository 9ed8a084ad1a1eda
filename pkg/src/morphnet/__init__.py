"""Morphological networks: dilation/erosion neurons, max-plus rewrites and constructions."""

from .errors import ConfigError, DimensionError, InputError, MorphNetError, VerificationError
from .network import (
    DilationErosionLayer,
    LinearLayer,
    NetworkSpec,
    Sigmoid,
    backward,
    forward,
    forward_block,
)
from .tropical import dilate, erode, maxplus_matmul, soft_dilate, soft_erode

__version__ = "0.1.0"
