"""Training schemes: mini-generation training with distillation, pruning and re-initialization,
the plain single-generation baseline, and adversarial (DwO) training."""
from __future__ import annotations

import logging
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator
from tqdm import tqdm

from gazetat.checkpoint import save_checkpoint
from gazetat.distillation import (
    LossWeights,
    TeacherEntry,
    TeacherPool,
    TeacherStrategy,
    mixup_batch,
    predict_teachers,
    teacher_loss,
    total_loss,
)
from gazetat.errors import ConfigError, TrainingDivergedError
from gazetat.gazenet import GazeNet, GazeNetConfig
from gazetat.optim import SGD, epoch_lr
from gazetat.ordinal import GazeCodec, ordinal_loss
from gazetat.pruning import PruneMetric, prune_report, score_model, select_prune_set
from gazetat.reinit import ReinitMode, plan_reinit, reinit, reinit_report
from gazetat.robustness import PgdConfig, perturb_batch
from gazetat.synth import GazeDataset, SplitView
from gazetat.tensor import no_grad

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ["epoch", "mini_generation", "lr", "train_loss", "train_err_cm", "val_err_cm", "reborn"]
GENERATION_COLUMNS = ["mini_generation", "val_err_cm", "test_err_cm", "pool_size", "admitted"]


class TeacherSampling(str, Enum):
    PER_EPOCH = "per_epoch"
    PER_MINIGEN = "per_minigen"


class OptimizerConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    lr: float = Field(default=0.01, gt=0)
    momentum: float = Field(default=0.9, ge=0, lt=1)
    batch_size: int = Field(default=128, ge=2)
    lr_decay: float = Field(default=0.1, gt=0, le=1)
    weight_decay: float = Field(default=0.0, ge=0)


class TatConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    net: GazeNetConfig = GazeNetConfig()
    mini_generations: int = Field(default=5, ge=1)
    epochs_per_generation: int = Field(default=7, ge=1)
    warmup_epochs: int = Field(default=1, ge=0)
    prune_ratio: float = Field(default=0.2, ge=0, le=1)
    prune_cap: float = Field(default=0.5, ge=0, le=1)
    prune_metric: PruneMetric = PruneMetric.COSINE
    reinit_mode: ReinitMode = ReinitMode.AOI
    per_filter_scalar: bool = False
    weights: LossWeights = LossWeights()
    teacher_strategy: TeacherStrategy = TeacherStrategy.RANDOM
    teacher_sampling: TeacherSampling = TeacherSampling.PER_EPOCH
    teacher_threshold: Optional[float] = Field(default=None, gt=0)
    teacher_threshold_factor: float = Field(default=1.1, gt=0)
    optimizer: OptimizerConfig = OptimizerConfig()
    divergence_factor: float = Field(default=10.0, gt=1)
    train_eval_samples: int = Field(default=1000, ge=1)
    eval_batch_size: int = Field(default=256, ge=1)
    eval_workers: int = Field(default=1, ge=1)
    seed: int = 0

    @model_validator(mode="after")
    def _trainable(self) -> "TatConfig":
        if self.weights.hard == 0 and self.weights.mix == 0:
            raise ValueError("lambda_hard and lambda_mix cannot both be 0")
        return self

    @property
    def total_epochs(self) -> int:
        return self.mini_generations * self.epochs_per_generation + self.warmup_epochs

    def plain(self) -> "TatConfig":
        """The single-generation, hard-loss-only baseline with the same epoch budget."""
        return self.model_copy(update={
            "mini_generations": 1,
            "epochs_per_generation": self.mini_generations * self.epochs_per_generation,
            "weights": self.weights.model_copy(update={"mix": 0.0, "teacher": 0.0}),
            "prune_ratio": 0.0,
            "teacher_strategy": TeacherStrategy.NONE,
        })


@dataclass
class TrainResult:
    model: GazeNet
    history: pd.DataFrame
    generations: pd.DataFrame
    surgeries: pd.DataFrame
    prune_scores: pd.DataFrame
    pool: TeacherPool
    initial_val_error: float

    @property
    def final_val_error(self) -> float:
        return float(self.history["val_err_cm"].iloc[-1])


def codec_for(dataset: GazeDataset, net: GazeNetConfig) -> GazeCodec:
    """Bins spanning the dataset's screen; bin size = range / (bins + 1)."""
    synth = dataset.synth_config
    if synth.patch_size != net.patch_size:
        raise ConfigError(f"network expects {net.patch_size}px patches, dataset has {synth.patch_size}px")
    codec = GazeCodec.for_screen(synth.width_cm, synth.height_cm, net.bins_x, net.bins_y, net.log_eps)
    dataset.check_codec(codec)
    return codec


def mean_euclidean_error(pred: np.ndarray, gt: np.ndarray) -> float:
    return float(np.mean(np.linalg.norm(np.asarray(pred) - np.asarray(gt), axis=1)))


def _chunk_predictions(model: GazeNet, split: SplitView, positions: np.ndarray) -> np.ndarray:
    batch = split.batch(positions)
    with no_grad():
        return model.predict_gaze(model(*batch.inputs))


def _predict_split(model: GazeNet, split: SplitView, batch_size: int, workers: int) -> np.ndarray:
    chunks = [np.arange(start, min(start + batch_size, len(split))) for start in range(0, len(split), batch_size)]
    was_training = model.training
    model.eval()
    try:
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                parts = list(pool.map(lambda pos: _chunk_predictions(model, split, pos), chunks))
        else:
            parts = [_chunk_predictions(model, split, pos) for pos in chunks]
    finally:
        model.train(was_training)
    return np.concatenate(parts) if parts else np.empty((0, 2))


def evaluate(model: GazeNet, split: SplitView, batch_size: int = 256, workers: int = 1) -> float:
    """Mean Euclidean distance (cm) between decoded predictions and ground truth, eval-mode BN."""
    if len(split) == 0:
        raise ValueError(f"cannot evaluate on empty split {split.name!r}")
    return mean_euclidean_error(_predict_split(model, split, batch_size, workers), split.gt)


def predictions(model: GazeNet, split: SplitView, batch_size: int = 256, workers: int = 1) -> pd.DataFrame:
    pred = _predict_split(model, split, batch_size, workers)
    gt = split.gt
    return pd.DataFrame({
        "record": split.records,
        "subject": split.subjects,
        "gt_x": gt[:, 0],
        "gt_y": gt[:, 1],
        "pred_x": pred[:, 0],
        "pred_y": pred[:, 1],
        "error_cm": np.linalg.norm(pred - gt, axis=1),
    })


class _Streams:
    """Independent random streams, so enabling one feature never shifts another's draws."""

    def __init__(self, seed: int):
        init, shuffle, mix, teacher, surgery, attack = np.random.SeedSequence(seed).spawn(6)
        self.init = np.random.default_rng(init)
        self.shuffle = np.random.default_rng(shuffle)
        self.mix = np.random.default_rng(mix)
        self.surgery = np.random.default_rng(surgery)
        self.attack = np.random.default_rng(attack)
        self.teacher_base = int(teacher.generate_state(1)[0])

    def teacher_rng(self, step: int) -> np.random.Generator:
        return np.random.default_rng([self.teacher_base, step])


def train_epoch(
    model: GazeNet,
    split: SplitView,
    optimizer: SGD,
    weights: LossWeights,
    teachers: Sequence[TeacherEntry],
    streams: _Streams,
    batch_size: int,
    pgd: Optional[PgdConfig] = None,
) -> float:
    """One pass over ``split``; returns the mean total loss, or NaN as soon as a loss is non-finite."""
    losses = []
    for batch in split.batches(batch_size, model.codec, shuffle=True, rng=streams.shuffle):
        if pgd is not None:
            batch, _ = perturb_batch(model, batch, pgd, streams.attack)
        model.train()
        feature = model.extract_final_feature(*batch.inputs)
        probs = model.head_probs(feature)
        eps = model.codec.log_eps
        hard = ordinal_loss(probs, batch.labels, eps=eps)
        mix = None
        if weights.mix > 0:
            mixed, mixed_labels = mixup_batch(feature, batch.labels, streams.mix)
            mix = ordinal_loss(model.head_probs(mixed), mixed_labels, eps=eps)
        soft = None
        if teachers and weights.teacher > 0:
            soft = teacher_loss(probs, predict_teachers(teachers, batch.inputs), eps)
        loss = total_loss(hard, mix, soft, weights)
        value = loss.item()
        if not np.isfinite(value):
            return float("nan")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        losses.append(value)
        logger.debug(
            "batch loss %.5f (hard %.5f, mix %s, teacher %s)", value, hard.item(),
            f"{mix.item():.5f}" if mix is not None else "-", f"{soft.item():.5f}" if soft is not None else "-",
        )
    return float(np.mean(losses))


def _dump(model: GazeNet, run_dir: Optional[Path], metadata: dict) -> Path:
    directory = Path(run_dir) if run_dir is not None else Path(tempfile.mkdtemp(prefix="gazetat-diverged-"))
    return save_checkpoint(model, directory / "diverged.ckpt", metadata)


def _surgery(model: GazeNet, config: TatConfig, rng: np.random.Generator, mini_generation: int):
    scores = score_model(model, config.prune_metric)
    selection = select_prune_set(scores, config.prune_ratio, config.prune_cap)
    plan = plan_reinit(model, selection, rng)
    scalars = reinit(model, plan, config.reinit_mode, rng, config.per_filter_scalar)
    surgery = reinit_report(model, plan, scalars)
    surgery.insert(0, "mini_generation", mini_generation)
    scored = prune_report(scores, selection)
    scored.insert(0, "mini_generation", mini_generation)
    logger.info(
        "mini-generation %d surgery: %s re-initialized %d/%d filters in %d layers",
        mini_generation, config.reinit_mode.value, selection.count, len(scored), len(plan),
    )
    return surgery, scored


def _run(
    config: TatConfig,
    dataset: GazeDataset,
    scheme: str,
    pgd: Optional[PgdConfig] = None,
    model: Optional[GazeNet] = None,
    run_dir: Optional[Union[str, Path]] = None,
    progress: bool = False,
) -> TrainResult:
    streams = _Streams(config.seed)
    codec = codec_for(dataset, config.net)
    if model is None:
        model = GazeNet(config.net, codec, streams.init)
    train, val, test = dataset.split("train"), dataset.split("val"), dataset.split("test")
    train_eval = train.subset(config.train_eval_samples, seed=config.seed)
    opt = config.optimizer

    def measure(split: SplitView) -> float:
        return evaluate(model, split, config.eval_batch_size, config.eval_workers)

    initial_val = measure(val)
    logger.info("%s: %d train / %d val / %d test samples, %d epochs, initial val error %.4f cm",
                scheme, len(train), len(val), len(test), config.total_epochs, initial_val)
    pool = TeacherPool(config.teacher_strategy, config.teacher_threshold, config.teacher_threshold_factor)
    history, generations, surgeries, scores = [], [], [], []
    epoch, reborn = 0, False
    bar = tqdm(total=config.total_epochs, desc=scheme, unit="epoch", disable=not progress)
    try:
        for k in range(1, config.mini_generations + 1):
            n_epochs = config.epochs_per_generation + (config.warmup_epochs if k == 1 else 0)
            optimizer = SGD(model.parameters(), opt.lr, opt.momentum, opt.weight_decay)
            teachers: list[TeacherEntry] = []
            if config.teacher_sampling is TeacherSampling.PER_MINIGEN and len(pool):
                teachers = pool.choose(streams.teacher_rng(k))
            for local in range(n_epochs):
                epoch += 1
                optimizer.lr = epoch_lr(opt.lr, local, n_epochs, opt.lr_decay)
                if config.teacher_sampling is TeacherSampling.PER_EPOCH and len(pool):
                    teachers = pool.choose(streams.teacher_rng(epoch))
                loss = train_epoch(model, train, optimizer, config.weights, teachers, streams, opt.batch_size, pgd)
                meta = {"scheme": scheme, "mini_generation": k, "epoch": epoch, "seed": config.seed}
                if not np.isfinite(loss):
                    raise TrainingDivergedError(f"non-finite loss in epoch {epoch}", _dump(model, run_dir, meta))
                train_err, val_err = measure(train_eval), measure(val)
                history.append((epoch, k, optimizer.lr, loss, train_err, val_err, reborn))
                reborn = False
                logger.info("epoch %d (mini-generation %d): loss %.4f, train %.4f cm, val %.4f cm",
                            epoch, k, loss, train_err, val_err)
                bar.update(1)
                bar.set_postfix(mg=k, val=f"{val_err:.3f}")
                if val_err > config.divergence_factor * initial_val:
                    raise TrainingDivergedError(
                        f"val error {val_err:.4f} cm exceeds {config.divergence_factor}x the initial {initial_val:.4f} cm",
                        _dump(model, run_dir, {**meta, "val_err_cm": val_err}),
                    )
            admitted = pool.add_teacher(model.snapshot(), val_err, k)
            generations.append((k, val_err, measure(test), len(pool), admitted))
            needs_surgery = config.prune_ratio > 0 or config.reinit_mode is ReinitMode.SCRATCH
            if k < config.mini_generations and needs_surgery:
                surgery, scored = _surgery(model, config, streams.surgery, k)
                surgeries.append(surgery)
                scores.append(scored)
                reborn = True
    finally:
        bar.close()
    return TrainResult(
        model=model,
        history=pd.DataFrame(history, columns=HISTORY_COLUMNS),
        generations=pd.DataFrame(generations, columns=GENERATION_COLUMNS),
        surgeries=pd.concat(surgeries, ignore_index=True) if surgeries else pd.DataFrame(),
        prune_scores=pd.concat(scores, ignore_index=True) if scores else pd.DataFrame(),
        pool=pool,
        initial_val_error=initial_val,
    )


def run_tat(config: TatConfig, dataset: GazeDataset, pgd: Optional[PgdConfig] = None, **kwargs) -> TrainResult:
    """K mini-generations; between consecutive ones the model is registered as a teacher,
    scored, pruned and re-initialized. ``pgd`` adds adversarial batch mixing (tat+dwo)."""
    return _run(config, dataset, "tat+dwo" if pgd is not None else "tat", pgd=pgd, **kwargs)


def run_plain(config: TatConfig, dataset: GazeDataset, **kwargs) -> TrainResult:
    return _run(config.plain(), dataset, "plain", **kwargs)


def run_dwo(config: TatConfig, dataset: GazeDataset, pgd: PgdConfig, model: Optional[GazeNet] = None,
            **kwargs) -> TrainResult:
    """Plain training where every batch mixes clean and PGD-perturbed samples."""
    return _run(config.plain(), dataset, "dwo", pgd=pgd, model=model, **kwargs)
