"""Counting metrics, dataset evaluation and map export."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Scene
from .io import read_ppm, write_pgm
from .model import HyGnn, model_forward
from .tensor import Tensor


@dataclass
class EvalResult:
    mae: float
    mse: float  # root of the mean squared count error, the usual crowd-counting convention
    counts: list[float]
    gt_counts: list[float]


def count_metrics(predicted: Sequence[float], ground_truth: Sequence[float]) -> tuple[float, float]:
    """MAE = mean |C - C_gt|;  MSE = sqrt(mean |C - C_gt|^2)."""
    pred = np.asarray(predicted, dtype=np.float64)
    gt = np.asarray(ground_truth, dtype=np.float64)
    if pred.shape != gt.shape or pred.size == 0:
        raise ValueError("need equally many (>= 1) predicted and ground-truth counts")
    err = np.abs(pred - gt)
    peak = float(err.max())
    if peak == 0.0:
        return 0.0, 0.0
    # scaling by the peak keeps err**2 clear of underflow and overflow
    scaled = err / peak
    return float(np.mean(err)), peak * float(np.sqrt(np.mean(scaled * scaled)))


def predict_maps(model: HyGnn, image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """[3,H,W] image -> raw (density, localization) maps, each [H/8, W/8]."""
    D, L = model_forward(Tensor(image[None]), model)
    return D.data[0, 0], L.data[0, 0]


def evaluate(model: HyGnn, dataset: Sequence[Scene]) -> EvalResult:
    if not dataset:
        raise ValueError("evaluation dataset is empty")
    counts, gts = [], []
    for scene in dataset:
        density, _ = predict_maps(model, scene.image)
        counts.append(float(density.sum()))
        gts.append(float(scene.count))
    mae, mse = count_metrics(counts, gts)
    return EvalResult(mae, mse, counts, gts)


def infer_export(model: HyGnn, image_path, prefix) -> dict:
    """Write ``<prefix>.density.pgm``, ``<prefix>.localization.pgm`` and ``<prefix>.count.txt``.

    Returns the raw count, the map shape and the three output paths.
    """
    image = read_ppm(image_path)
    density, localization = predict_maps(model, image)
    count = float(density.sum())
    prefix = str(prefix)
    paths = {
        "density": Path(prefix + ".density.pgm"),
        "localization": Path(prefix + ".localization.pgm"),
        "count_file": Path(prefix + ".count.txt"),
    }
    write_pgm(paths["density"], density)
    write_pgm(paths["localization"], localization)
    paths["count_file"].write_text(f"{count!r}\n", encoding="utf-8")
    return {"count": count, "shape": density.shape, **paths}
