"""The three-branch ordinal gaze regressor.

Face, left-eye and right-eye patches each run through their own conv stack
(conv -> BN -> ReLU units, global average pool, FC to ``branch_feature_dim``).
The three features are concatenated, fused by one FC + ReLU into the final
feature, and a single head maps it to ``bins_x + bins_y`` sigmoid bin
probabilities (horizontal bins first).
"""
from __future__ import annotations

from collections import OrderedDict

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from gazetat import ops
from gazetat.errors import ShapeError
from gazetat.nn import ConvBNReLU, Linear, Module, Sequential
from gazetat.ordinal import LOG_EPS, GazeCodec
from gazetat.tensor import Tensor

BRANCHES = ("face", "left_eye", "right_eye")


class LayerSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    channels: int = Field(ge=1)
    kernel: int = Field(ge=1)
    stride: int = Field(ge=1)


DEFAULT_STACK = (
    LayerSpec(channels=16, kernel=3, stride=2),
    LayerSpec(channels=32, kernel=3, stride=2),
    LayerSpec(channels=64, kernel=3, stride=2),
    LayerSpec(channels=64, kernel=3, stride=1),
)


class GazeNetConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    patch_size: int = Field(default=64, ge=4)
    in_channels: int = Field(default=3, ge=1)
    branch_feature_dim: int = Field(default=128, ge=1)
    fusion_in: int = 384
    fusion_out: int = Field(default=128, ge=1)
    bins_x: int = Field(default=72, ge=2)
    bins_y: int = Field(default=98, ge=2)
    conv_stack: tuple[LayerSpec, ...] = DEFAULT_STACK
    width_multiplier: float = Field(default=1.0, gt=0)
    bn_momentum: float = Field(default=0.9, ge=0, lt=1)
    bn_eps: float = Field(default=1e-5, gt=0)
    log_eps: float = Field(default=LOG_EPS, gt=0, lt=0.5)

    @model_validator(mode="after")
    def _fusion_matches_branches(self) -> "GazeNetConfig":
        if self.fusion_in != 3 * self.branch_feature_dim:
            raise ValueError(
                f"fusion input width {self.fusion_in} must equal 3 x branch_feature_dim ({3 * self.branch_feature_dim})"
            )
        if not self.conv_stack:
            raise ValueError("conv_stack needs at least one layer")
        return self

    def scaled_channels(self) -> list[int]:
        return [max(1, int(round(spec.channels * self.width_multiplier))) for spec in self.conv_stack]


class Branch(Module):
    """One patch's sub-network: conv stack, global average pool, FC + ReLU."""

    def __init__(self, config: GazeNetConfig, rng: np.random.Generator):
        super().__init__()
        units, in_ch = [], config.in_channels
        for spec, out_ch in zip(config.conv_stack, config.scaled_channels()):
            units.append(ConvBNReLU(in_ch, out_ch, spec.kernel, spec.stride, rng, config.bn_momentum, config.bn_eps))
            in_ch = out_ch
        self.convs = Sequential(*units)
        self.fc = Linear(in_ch, config.branch_feature_dim, rng)

    def forward(self, x):
        pooled = ops.mean(self.convs(x), axis=(2, 3))
        return ops.relu(self.fc(pooled))


class GazeNet(Module):
    def __init__(self, config: GazeNetConfig, codec: GazeCodec, rng: np.random.Generator):
        super().__init__()
        if (codec.x.bins, codec.y.bins) != (config.bins_x, config.bins_y):
            raise ShapeError(
                "gazenet", f"codec has {codec.x.bins}x{codec.y.bins} bins, config {config.bins_x}x{config.bins_y}"
            )
        self.config = config
        self.codec = codec
        self.face = Branch(config, rng)
        self.left_eye = Branch(config, rng)
        self.right_eye = Branch(config, rng)
        self.fusion = Linear(config.fusion_in, config.fusion_out, rng)
        self.head = Linear(config.fusion_out, config.bins_x + config.bins_y, rng, gain=1.0)

    def _check(self, name: str, patch) -> Tensor:
        patch = patch if isinstance(patch, Tensor) else Tensor(patch)
        size, channels = self.config.patch_size, self.config.in_channels
        if patch.ndim != 4 or patch.shape[1:] != (channels, size, size):
            raise ShapeError("gazenet", f"{name} patch must be (N, {channels}, {size}, {size}), got {patch.shape}")
        return patch

    def extract_final_feature(self, face, left_eye, right_eye) -> Tensor:
        feats = [
            branch(self._check(name, patch))
            for name, branch, patch in zip(
                BRANCHES, (self.face, self.left_eye, self.right_eye), (face, left_eye, right_eye)
            )
        ]
        return ops.relu(self.fusion(ops.concat(feats, axis=1)))

    def head_probs(self, feature: Tensor) -> Tensor:
        return ops.sigmoid(self.head(feature))

    def forward(self, face, left_eye, right_eye) -> Tensor:
        return self.head_probs(self.extract_final_feature(face, left_eye, right_eye))

    def predict_gaze(self, bin_probs) -> np.ndarray:
        """Decoded (x_cm, y_cm) per row; shape ``(N, 2)`` or ``(2,)``."""
        return self.codec.decode(bin_probs)

    def conv_units(self) -> "OrderedDict[str, ConvBNReLU]":
        """Every conv -> BN -> ReLU unit keyed by its dotted path, in network order."""
        return OrderedDict((name, module) for name, module in self.named_modules() if isinstance(module, ConvBNReLU))

    def reset_parameters(self, rng: np.random.Generator) -> None:
        for module in (self.face, self.left_eye, self.right_eye, self.fusion, self.head):
            module.reset_parameters(rng)

    def __repr__(self) -> str:
        return f"GazeNet(patch={self.config.patch_size}, bins={self.codec.bins}, params={self.num_parameters()})"


def build_model(config: GazeNetConfig, codec: GazeCodec, seed: int) -> GazeNet:
    return GazeNet(config, codec, np.random.default_rng(seed))
