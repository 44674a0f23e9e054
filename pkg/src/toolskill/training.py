"""Two-phase training: pre-train on primitive data, fine-tune the decoder head.

Normalization statistics are fit on the pre-training corpus and frozen; the
fine-tuning stage and every later rollout reuse them unchanged (three demos
cannot estimate stable channel ranges, and the encoder's features assume the
pre-training scale). Observation-channel masks for the sensor ablations are
applied to both the input windows and the state-prediction targets, so a
masked-out channel carries no signal anywhere in the loss.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import sensing, seq2seq
from .data import Dataset
from .errors import ConfigError, NumericalError
from .seq2seq import Dims, Seq2SeqParams, WindowBatch

log = logging.getLogger(__name__)

PRETRAIN_EPOCHS = 2000
PRETRAIN_LR = 0.001
FINETUNE_EPOCHS = 300
FINETUNE_LR = 0.005
BETA = 0.1
DEFAULT_BATCH = 64


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = PRETRAIN_EPOCHS
    lr: float = PRETRAIN_LR
    beta: float = BETA
    t_past: int = 20
    t_next: int = 10
    dropout: float = seq2seq.DROPOUT_RATE
    seed: int = 0
    mask: tuple = seq2seq.GROUPS  # parameter groups receiving gradients
    batch_size: int | None = DEFAULT_BATCH  # None = full-batch updates
    channel_mask: str = "full"

    def __post_init__(self):
        if self.epochs <= 0:
            raise ConfigError("epochs must be > 0")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must be in [0, 1)")
        try:
            sensing.channel_mask(self.channel_mask)
        except Exception as e:
            raise ConfigError(str(e)) from None

    def finetune_variant(self, seed=None) -> "TrainConfig":
        return replace(
            self,
            epochs=FINETUNE_EPOCHS,
            lr=FINETUNE_LR,
            mask=("dec_fc",),
            seed=self.seed if seed is None else seed,
        )


def window_dataset(
    dataset: Dataset,
    stats: sensing.NormalizationStats,
    t_past: int,
    t_next: int,
    channel_mask: str = "full",
) -> WindowBatch:
    """Slide a (t_past, t_next) window over every trajectory, stride 1.

    Observations and actions are normalized with the supplied statistics.
    Trajectories shorter than one window are skipped with a warning.
    Windows never cross trajectory boundaries.
    """
    mask = sensing.channel_mask(channel_mask)
    span = t_past + t_next
    past, fut_obs, fut_act = [], [], []
    for i, traj in enumerate(dataset.trajectories):
        n = len(traj)
        if n < span:
            log.warning("trajectory %d has %d frames < window span %d; skipped", i, n, span)
            continue
        obs = stats.normalize("obs", traj.observations())
        obs[:, ~mask] = 0.0
        act = stats.normalize("act", traj.actions())
        starts = np.arange(n - span + 1)
        past.append(obs[starts[:, None] + np.arange(t_past)])
        fut_obs.append(obs[starts[:, None] + t_past + np.arange(t_next)])
        fut_act.append(act[starts[:, None] + t_past + np.arange(t_next)])
    if not past:
        return WindowBatch(
            np.empty((0, t_past, sensing.OBS_CHANNELS)),
            np.empty((0, t_next, sensing.OBS_CHANNELS)),
            np.empty((0, t_next, 2)),
        )
    return WindowBatch(
        np.concatenate(past), np.concatenate(fut_obs), np.concatenate(fut_act)
    )


@dataclass
class TrainResult:
    params: Seq2SeqParams
    loss_curve: np.ndarray
    stats: sensing.NormalizationStats
    config: TrainConfig = None


def _run_epochs(params, windows, cfg: TrainConfig) -> tuple[Seq2SeqParams, np.ndarray]:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x7281]))
    n = len(windows)
    if n == 0:
        raise ConfigError("no training windows (all trajectories too short?)")
    batch = n if cfg.batch_size is None else min(cfg.batch_size, n)
    curve = np.empty(cfg.epochs)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n) if batch < n else np.arange(n)
        total, seen = 0.0, 0
        for s in range(0, n, batch):
            mb = windows.take(order[s : s + batch])
            mb_loss, grads = seq2seq.backward(
                params, mb, cfg.beta, mask=cfg.mask, mode="train", rng=rng,
                dropout=cfg.dropout,
            )
            if not math.isfinite(mb_loss):
                raise NumericalError(
                    f"non-finite loss {mb_loss} at epoch {epoch + 1}", epoch=epoch + 1
                )
            params = seq2seq.sgd_step(params, grads, cfg.lr)
            total += mb_loss * len(mb)
            seen += len(mb)
        curve[epoch] = total / seen
        if epoch % 200 == 0 or epoch == cfg.epochs - 1:
            log.info("epoch %d/%d loss %.6f", epoch + 1, cfg.epochs, curve[epoch])
    return params, curve


def pretrain(dataset: Dataset, cfg: TrainConfig) -> TrainResult:
    """Train all four parameter groups from scratch on the given corpus."""
    stats = sensing.fit_normalization(dataset)
    windows = window_dataset(dataset, stats, cfg.t_past, cfg.t_next, cfg.channel_mask)
    dims = Dims(t_past=cfg.t_past, t_next=cfg.t_next, obs=sensing.OBS_CHANNELS)
    params = seq2seq.init_params(dims, cfg.seed)
    params, curve = _run_epochs(params, windows, cfg)
    return TrainResult(params=params, loss_curve=curve, stats=stats, config=cfg)


def finetune(
    base_params: Seq2SeqParams,
    demos: Dataset,
    cfg: TrainConfig,
    stats: sensing.NormalizationStats,
) -> TrainResult:
    """Adapt the base policy to demonstrations, updating only cfg.mask groups.

    The default protocol touches the decoder FC layer alone; every other
    group stays bit-identical to the base parameters.
    """
    windows = window_dataset(demos, stats, cfg.t_past, cfg.t_next, cfg.channel_mask)
    params, curve = _run_epochs(base_params.copy(), windows, cfg)
    return TrainResult(params=params, loss_curve=curve, stats=stats, config=cfg)
