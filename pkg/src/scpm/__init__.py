"""Annotation-free fine-grained image categorization pipeline.

Multi-scale part proposals from conv feature maps (multi-max pooling),
PCA reduction, per-scale-group diagonal-GMM Fisher vectors, mutual-
information cluster selection, linear SVM classification, and pairwise
key-part detection. Operates on precomputed feature maps stored in the
PFV1 container; see the `extractor` sidecar for producing those files.
"""

from . import (
    classify,
    codebook,
    encoder,
    featio,
    geometry,
    kernels,
    keypart,
    mmp,
    modelio,
    reduce,
    select,
)

__all__ = [
    "classify",
    "codebook",
    "encoder",
    "featio",
    "geometry",
    "kernels",
    "keypart",
    "mmp",
    "modelio",
    "reduce",
    "select",
]

__version__ = "0.1.0"
