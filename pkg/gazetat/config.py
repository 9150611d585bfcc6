"""Flat ``key = value`` run configuration covering every tunable default.

Config files hold one ``key = value`` per line; ``#`` starts a comment, ``none``
clears an optional value and lists are comma separated. CLI ``--set key=value``
overrides are applied on top.
"""
from __future__ import annotations

from pathlib import Path
from typing import Iterable, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from gazetat.distillation import LossWeights
from gazetat.errors import ConfigError
from gazetat.gazenet import GazeNetConfig, LayerSpec
from gazetat.robustness import PgdConfig
from gazetat.synth import SynthConfig
from gazetat.training import OptimizerConfig, TatConfig

LIST_FIELDS = ("conv_channels", "conv_kernels", "conv_strides")


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    seed: int = 0
    precision: Literal["float32", "float64"] = "float32"

    # synthetic data
    n_subjects: int = 24
    samples_per_subject: int = 250
    val_subjects: int = 3
    test_subjects: int = 3
    screen_width_cm: float = 10.0
    screen_height_cm: float = 14.0
    patch_size: int = 64
    iris_radius: float = 0.13
    iris_intensity: float = 0.2
    noise_std: float = 2.0
    jitter_px: int = 1
    sequence_points: int = 8
    frames_per_sequence: int = 32
    subject_rotation_deg: float = 6.0
    subject_scale: float = 0.06
    subject_shift: float = 0.015

    # network
    bins_x: int = 72
    bins_y: int = 98
    branch_feature_dim: int = 128
    fusion_dim: int = 128
    conv_channels: tuple[int, ...] = (16, 32, 64, 64)
    conv_kernels: tuple[int, ...] = (3, 3, 3, 3)
    conv_strides: tuple[int, ...] = (2, 2, 2, 1)
    width_multiplier: float = 1.0
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5
    log_eps: float = 1e-7

    # mini-generation training
    mini_generations: int = 5
    epochs_per_generation: int = 7
    warmup_epochs: int = 1
    prune_ratio: float = 0.2
    prune_cap: float = 0.5
    prune_metric: Literal["cosine", "repr"] = "cosine"
    reinit_mode: Literal["aoi", "orth_raw", "uniform", "scratch"] = "aoi"
    per_filter_scalar: bool = False
    lambda_hard: float = 0.2
    lambda_mix: float = 0.4
    lambda_teacher: float = 0.6
    teacher_strategy: Literal["none", "last_one", "mean", "best", "random"] = "random"
    teacher_sampling: Literal["per_epoch", "per_minigen"] = "per_epoch"
    teacher_threshold: Optional[float] = None
    teacher_threshold_factor: float = 1.1
    lr: float = 0.01
    momentum: float = 0.9
    batch_size: int = 128
    lr_decay: float = 0.1
    weight_decay: float = 0.0
    divergence_factor: float = 10.0
    train_eval_samples: int = 1000
    eval_batch_size: int = 256
    eval_workers: int = Field(default=1, ge=1)

    # adversarial training and robustness
    pgd_epsilon: float = 3.0
    pgd_gamma: float = 1.0
    pgd_steps: int = 1
    pgd_center_bins: int = 8
    org_percent: float = 90.0
    attack_patches: Literal["all", "eyes"] = "all"
    msd_workers: int = Field(default=1, ge=1)

    @field_validator(*LIST_FIELDS, mode="before")
    @classmethod
    def _split_list(cls, value):
        if isinstance(value, str):
            return tuple(int(v) for v in value.split(",") if v.strip())
        return value

    # ---------- parsing ----------

    @classmethod
    def build(cls, values: dict) -> "RunConfig":
        unknown = sorted(set(values) - set(cls.model_fields))
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        try:
            return cls(**values)
        except ValidationError as exc:
            raise ConfigError(_describe(exc)) from None

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        return cls.build(parse_pairs(text.splitlines()))

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "RunConfig":
        try:
            return cls.from_text(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror or exc}") from None

    def with_overrides(self, assignments: Iterable[str]) -> "RunConfig":
        updates = parse_pairs(assignments, separator_hint="--set")
        if not updates:
            return self
        return self.build({**self.model_dump(), **updates})

    def to_text(self) -> str:
        lines = []
        for key, value in self.model_dump().items():
            if value is None:
                text = "none"
            elif isinstance(value, bool):
                text = str(value).lower()
            elif isinstance(value, tuple):
                text = ",".join(str(v) for v in value)
            else:
                text = str(value)
            lines.append(f"{key} = {text}")
        return "\n".join(lines) + "\n"

    # ---------- builders ----------

    def synth(self) -> SynthConfig:
        return self._sub(SynthConfig, {
            "n_subjects": self.n_subjects,
            "samples_per_subject": self.samples_per_subject,
            "val_subjects": self.val_subjects,
            "test_subjects": self.test_subjects,
            "width_cm": self.screen_width_cm,
            "height_cm": self.screen_height_cm,
            "patch_size": self.patch_size,
            "iris_radius": self.iris_radius,
            "iris_intensity": self.iris_intensity,
            "noise_std": self.noise_std,
            "jitter_px": self.jitter_px,
            "sequence_points": self.sequence_points,
            "frames_per_sequence": self.frames_per_sequence,
            "subject_rotation_deg": self.subject_rotation_deg,
            "subject_scale": self.subject_scale,
            "subject_shift": self.subject_shift,
            "seed": self.seed,
        })

    def net(self) -> GazeNetConfig:
        lengths = {len(self.conv_channels), len(self.conv_kernels), len(self.conv_strides)}
        if len(lengths) != 1:
            raise ConfigError("conv_channels, conv_kernels and conv_strides must have the same length")
        try:
            stack = tuple(
                LayerSpec(channels=c, kernel=k, stride=s)
                for c, k, s in zip(self.conv_channels, self.conv_kernels, self.conv_strides)
            )
        except ValidationError as exc:
            raise ConfigError(_describe(exc)) from None
        return self._sub(GazeNetConfig, {
            "patch_size": self.patch_size,
            "branch_feature_dim": self.branch_feature_dim,
            "fusion_in": 3 * self.branch_feature_dim,
            "fusion_out": self.fusion_dim,
            "bins_x": self.bins_x,
            "bins_y": self.bins_y,
            "conv_stack": stack,
            "width_multiplier": self.width_multiplier,
            "bn_momentum": self.bn_momentum,
            "bn_eps": self.bn_eps,
            "log_eps": self.log_eps,
        })

    def tat(self) -> TatConfig:
        return self._sub(TatConfig, {
            "net": self.net(),
            "mini_generations": self.mini_generations,
            "epochs_per_generation": self.epochs_per_generation,
            "warmup_epochs": self.warmup_epochs,
            "prune_ratio": self.prune_ratio,
            "prune_cap": self.prune_cap,
            "prune_metric": self.prune_metric,
            "reinit_mode": self.reinit_mode,
            "per_filter_scalar": self.per_filter_scalar,
            "weights": self._sub(LossWeights, {
                "hard": self.lambda_hard, "mix": self.lambda_mix, "teacher": self.lambda_teacher,
            }),
            "teacher_strategy": self.teacher_strategy,
            "teacher_sampling": self.teacher_sampling,
            "teacher_threshold": self.teacher_threshold,
            "teacher_threshold_factor": self.teacher_threshold_factor,
            "optimizer": self._sub(OptimizerConfig, {
                "lr": self.lr,
                "momentum": self.momentum,
                "batch_size": self.batch_size,
                "lr_decay": self.lr_decay,
                "weight_decay": self.weight_decay,
            }),
            "divergence_factor": self.divergence_factor,
            "train_eval_samples": self.train_eval_samples,
            "eval_batch_size": self.eval_batch_size,
            "eval_workers": self.eval_workers,
            "seed": self.seed,
        })

    def pgd(self) -> PgdConfig:
        return self._sub(PgdConfig, {
            "epsilon": self.pgd_epsilon,
            "gamma": self.pgd_gamma,
            "steps": self.pgd_steps,
            "center_bins": self.pgd_center_bins,
            "org_percent": self.org_percent,
            "attack_patches": self.attack_patches,
        })

    @staticmethod
    def _sub(model, values: dict):
        try:
            return model(**values)
        except ValidationError as exc:
            raise ConfigError(_describe(exc)) from None


def _describe(exc: ValidationError) -> str:
    problems = [f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}" for err in exc.errors()]
    return "invalid config: " + "; ".join(problems)


def parse_pairs(lines: Iterable[str], separator_hint: str = "config") -> dict[str, Optional[str]]:
    values: dict[str, Optional[str]] = {}
    for number, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{separator_hint} line {number}: expected 'key = value', got {raw.strip()!r}")
        value = value.strip()
        values[key.strip()] = None if value.lower() == "none" else value
    return values
