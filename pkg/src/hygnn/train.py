"""Seeded mini-batch training with Adam and periodic checkpoints."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .checkpoint import Checkpoint, save_checkpoint
from .config import TrainConfig
from .data import Scene, augment, generate_density_gt, generate_localization_gt
from .model import HyGnn, model_forward
from .ops import mse_loss
from .optim import AdamState, adam_step
from .tensor import Tape, Tensor, backward

log = logging.getLogger(__name__)


class DivergenceError(ArithmeticError):
    pass


@dataclass
class StepLoss:
    step: int
    density: float
    localization: float
    total: float


@dataclass
class TrainResult:
    model: HyGnn
    adam: AdamState
    config: TrainConfig
    step: int = 0  # number of completed optimisation steps
    losses: list[StepLoss] = field(default_factory=list)

    def checkpoint(self) -> Checkpoint:
        return Checkpoint.capture(self.model, self.adam, self.config, self.step)


def joint_loss(
    density: Tensor,
    localization: Tensor,
    gt_density: np.ndarray,
    gt_localization: np.ndarray,
    lam: float,
    reduction: str = "mean",
) -> tuple[Tensor, Tensor, Optional[Tensor]]:
    """Counting MSE plus ``lam`` times localization MSE.

    Returns (total, density term, localization term); with ``lam == 0`` the
    localization term is never built, so the localization head gets exactly
    zero gradient.
    """
    l1 = mse_loss(density, gt_density, reduction)
    if lam == 0:
        return l1, l1, None
    l2 = mse_loss(localization, gt_localization, reduction)
    return l1 + lam * l2, l1, l2


def make_batch(
    scenes: Sequence[Scene],
    targets: Sequence[tuple[np.ndarray, np.ndarray]],
    config: TrainConfig,
    step: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sample and augment one batch; depends only on (seed, step)."""
    rng = np.random.default_rng([config.seed, step])
    n = len(scenes)
    if config.batch <= n:
        idx = rng.permutation(n)[: config.batch]
    else:
        idx = rng.integers(0, n, size=config.batch)
    images, dens, locs = [], [], []
    for i in idx:
        scene, d, l = augment(scenes[i], *targets[i], config.crop, seed=int(rng.integers(1 << 62)))
        images.append(scene.image)
        dens.append(d)
        locs.append(l)
    return np.stack(images), np.stack(dens), np.stack(locs)


def ground_truths(scenes: Sequence[Scene], config: TrainConfig) -> list[tuple[np.ndarray, np.ndarray]]:
    return [
        (generate_density_gt(s, config.sigma), generate_localization_gt(s, config.sigma_loc))
        for s in scenes
    ]


def train(
    config: TrainConfig,
    dataset: Sequence[Scene],
    resume: Optional[Checkpoint] = None,
    checkpoint_path: Optional[Path] = None,
) -> TrainResult:
    """Run steps ``resume.step`` (or 0) up to ``config.iterations``."""
    if not dataset:
        raise ValueError("training dataset is empty")
    if resume is not None:
        model = resume.build_model()
        adam = resume.adam_state()
        start = resume.step
    else:
        model = HyGnn(config.dfl_config(), config.graph_config(), seed=config.seed)
        adam = AdamState(
            lr=config.lr,
            beta1=config.beta1,
            beta2=config.beta2,
            epsilon=config.epsilon,
            weight_decay=config.weight_decay,
        )
        start = 0

    targets = ground_truths(dataset, config)
    params = model.parameters()
    result = TrainResult(model, adam, config, step=start)
    for step in range(start, config.iterations):
        images, dens, locs = make_batch(dataset, targets, config, step)
        # overflow surfaces as a non-finite loss below, with a clearer message
        with Tape(), np.errstate(over="ignore", invalid="ignore"):
            D, L = model_forward(Tensor(images), model)
            total, l1, l2 = joint_loss(D, L, dens, locs, config.lam, config.reduction)
        entry = StepLoss(step, l1.item(), 0.0 if l2 is None else l2.item(), total.item())
        if not np.isfinite(entry.total):
            raise DivergenceError(
                f"loss became non-finite at step {step}: density={entry.density} "
                f"localization={entry.localization}; try a smaller lr (now {config.lr})"
            )
        with np.errstate(over="ignore", invalid="ignore"):
            grads = backward(total, params.values())
            adam_step(params, grads, adam)
        result.losses.append(entry)
        result.step = step + 1
        if step % 50 == 0 or step == config.iterations - 1:
            log.info("step %d  L1 %.6g  L2 %.6g  total %.6g", step, entry.density, entry.localization, entry.total)
        if checkpoint_path and config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
            save_checkpoint(checkpoint_path, result.checkpoint())
    if checkpoint_path:
        save_checkpoint(checkpoint_path, result.checkpoint())
    return result


def write_loss_log(path, losses: Sequence[StepLoss]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step\tdensity_loss\tlocalization_loss\ttotal\n")
        for e in losses:
            fh.write(f"{e.step}\t{e.density!r}\t{e.localization!r}\t{e.total!r}\n")
