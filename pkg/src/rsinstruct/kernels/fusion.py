"""Visual token fusion: multi-layer and multi-scale features to projected tokens.

Encoders are not part of this package. Callers supply per-layer token
features ``[N x C_i]`` and per-scale grids ``[h x w x C'_i]``;
:func:`synthetic_feature_stack` provides deterministic stand-ins.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .ops import ShapeError, linear_backward, linear_forward


@dataclass
class FeatureStack:
    layer_features: list[np.ndarray]  # each [N_tokens x C_i]
    scale_features: list[np.ndarray]  # each [h_i x w_i x C'_i]
    height: int
    width: int

    def __post_init__(self) -> None:
        if not self.layer_features or not self.scale_features:
            raise ShapeError("feature stack needs at least one layer and one scale feature")


def fuse_layers(layers: Sequence[np.ndarray]) -> np.ndarray:
    if not layers:
        raise ShapeError("no layer features")
    n = layers[0].shape[0]
    for i, f in enumerate(layers):
        if f.ndim != 2 or f.shape[0] != n:
            raise ShapeError(f"layer {i} has shape {f.shape}, expected [{n} x C]")
    return np.concatenate(layers, axis=1)


def fuse_scales(scales: Sequence[np.ndarray]) -> np.ndarray:
    """Average-pool every grid onto the coarsest one, stack channels, flatten to tokens."""
    if not scales:
        raise ShapeError("no scale features")
    for i, f in enumerate(scales):
        if f.ndim != 3:
            raise ShapeError(f"scale {i} must be [h x w x C], got {f.shape}")
    hm, wm = min((f.shape[0], f.shape[1]) for f in scales)
    pooled = []
    for i, f in enumerate(scales):
        h, w, c = f.shape
        if h % hm or w % wm:
            raise ShapeError(f"scale {i} grid {h}x{w} does not divide onto {hm}x{wm}")
        fh, fw = h // hm, w // wm
        pooled.append(f.reshape(hm, fh, wm, fw, c).mean(axis=(1, 3)))
    return np.concatenate(pooled, axis=2).reshape(hm * wm, -1)


def fuse_stack(stack: FeatureStack) -> np.ndarray:
    a = fuse_layers(stack.layer_features)
    b = fuse_scales(stack.scale_features)
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"layer tokens ({a.shape[0]}) and pooled scale tokens ({b.shape[0]}) differ")
    return np.concatenate([a, b], axis=1)


def project_visual(fused_layers: np.ndarray, fused_scales: np.ndarray,
                   weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Channel-concatenate both fused streams and map them to model width."""
    if fused_layers.shape[0] != fused_scales.shape[0]:
        raise ShapeError("layer and scale streams must have the same token count")
    return linear_forward(np.concatenate([fused_layers, fused_scales], axis=1), weight, bias)[0]


def projection_forward(features: np.ndarray, weight: np.ndarray, bias: np.ndarray):
    return linear_forward(features, weight, bias)


def projection_backward(dy: np.ndarray, cache):
    return linear_backward(dy, cache)


def concat_multimodal(visual: np.ndarray, language: np.ndarray) -> np.ndarray:
    """Visual tokens first, then language tokens."""
    if visual.ndim != 2 or language.ndim != 2 or visual.shape[1] != language.shape[1]:
        raise ShapeError(f"cannot concatenate visual {visual.shape} with language {language.shape}")
    return np.concatenate([visual, language], axis=0)


def synthetic_feature_stack(rng: np.random.Generator, height: int = 64, width: int = 64,
                            layer_channels: Sequence[int] = (4, 4),
                            scale_channels: Sequence[int] = (3, 3, 3),
                            first_stride: int = 4) -> FeatureStack:
    """Random features shaped like ViT layers plus a stride-4/8/16... CNN pyramid.

    Layer features get one token per cell of the coarsest pyramid level.
    """
    grids = []
    stride = first_stride
    for c in scale_channels:
        if height % stride or width % stride:
            raise ShapeError(f"image {height}x{width} is not divisible by stride {stride}")
        grids.append(rng.standard_normal((height // stride, width // stride, c)))
        stride *= 2
    hm, wm = grids[-1].shape[:2]
    layers = [rng.standard_normal((hm * wm, c)) for c in layer_channels]
    return FeatureStack(layers, grids, height, width)
