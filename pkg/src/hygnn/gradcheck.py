"""Analytic-vs-finite-difference gradient checks for every op and the full model."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

import numpy as np

from . import ops
from .dfl import DflConfig
from .graph import HybridGraphConfig
from .model import HyGnn, model_forward
from .ops import ConvGruParams, ConvParams
from .tensor import Tape, Tensor, backward, finite_diff_grad, relative_error
from .train import joint_loss

TOLERANCE = 1e-4
EPS = 1e-6


@dataclass
class GradCheckRow:
    name: str
    analytic: float  # largest-magnitude analytic entry compared on this row
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    rows: list[GradCheckRow] = field(default_factory=list)
    tolerance: float = TOLERANCE

    @property
    def max_rel_error(self) -> float:
        return max((r.rel_error for r in self.rows), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def format(self) -> str:
        lines = [f"{'check':48s} {'analytic':>14s} {'numeric':>14s} {'rel.err':>10s}"]
        for r in self.rows:
            lines.append(f"{r.name:48s} {r.analytic:14.6e} {r.numeric:14.6e} {r.rel_error:10.2e}")
        verdict = "PASS" if self.passed else "FAIL"
        lines.append(f"max relative error {self.max_rel_error:.3e} (tolerance {self.tolerance:g}): {verdict}")
        return "\n".join(lines)


def check_function(
    name: str,
    fn: Callable[..., Tensor],
    inputs: list[Tensor],
    rng: np.random.Generator,
    eps: float = EPS,
) -> list[GradCheckRow]:
    """Compare d/d(input) of sum(fn(*inputs) * R) for a fixed random R, one row per input."""
    weight = rng.uniform(-1.0, 1.0, size=fn(*inputs).shape)

    def scalar(*args):
        return (fn(*args) * weight).sum()

    with Tape():
        probe = [Tensor(t.data.copy(), grad_tracked=True) for t in inputs]
        loss = scalar(*probe)
    grads = backward(loss, probe)

    rows = []
    for k, t in enumerate(inputs):
        def f_k(x, k=k):
            args = [Tensor(a.data) for a in inputs]
            args[k] = x
            return scalar(*args)

        numeric = finite_diff_grad(f_k, Tensor(t.data.copy()), eps).data
        analytic = grads[probe[k]].data
        worst = int(np.argmax(np.abs(analytic - numeric)))
        rows.append(
            GradCheckRow(
                f"{name}[arg{k}]",
                float(analytic.flat[worst]),
                float(numeric.flat[worst]),
                relative_error(analytic, numeric),
            )
        )
    return rows


def _u(rng, *shape):
    return Tensor(rng.uniform(-1.0, 1.0, size=shape))


def _conv(kernel, bias, **kw):
    return ConvParams(kernel, bias, **kw)


def op_cases(rng: np.random.Generator) -> list[tuple[str, Callable[..., Tensor], list[Tensor]]]:
    """Every differentiable op on small random inputs in [-1, 1]."""
    B, C, H, W = 2, 3, 5, 6
    cases = [
        ("conv2d", lambda x, k, b: ops.conv2d(x, _conv(k, b, padding=1)),
         [_u(rng, B, C, H, W), _u(rng, 2, C, 3, 3), _u(rng, 2)]),
        ("conv2d_dilated", lambda x, k, b: ops.conv2d(x, _conv(k, b, padding=2, dilation=2)),
         [_u(rng, B, C, H, W), _u(rng, 2, C, 3, 3), _u(rng, 2)]),
        ("conv2d_strided", lambda x, k, b: ops.conv2d(x, _conv(k, b, padding=1, stride=2)),
         [_u(rng, B, C, H, W), _u(rng, 2, C, 3, 3), _u(rng, 2)]),
        ("max_pool2d", lambda x: ops.max_pool2d(x), [_u(rng, B, C, 4, 6)]),
        ("relu", ops.relu, [_u(rng, B, C, H, W)]),
        ("sigmoid", ops.sigmoid, [_u(rng, B, C, H, W)]),
        ("tanh", ops.tanh, [_u(rng, B, C, H, W)]),
        ("bilinear_resize_up", lambda x: ops.bilinear_resize(x, 6, 5), [_u(rng, B, C, 3, 4)]),
        ("bilinear_resize_down", lambda x: ops.bilinear_resize(x, 2, 3), [_u(rng, B, C, H, W)]),
        ("adaptive_avg_pool", lambda x: ops.adaptive_avg_pool(x, 2), [_u(rng, B, C, H, W)]),
        ("pyramid_pool", lambda x: ops.pyramid_pool(x, 3), [_u(rng, B, C, H, W)]),
        ("concat_channels", lambda a, b: ops.concat_channels([a, b]),
         [_u(rng, B, 2, H, W), _u(rng, B, 1, H, W)]),
        ("dynamic_conv", ops.dynamic_conv, [_u(rng, B, C, H, W), _u(rng, B, C, C, 1, 1)]),
        ("conv_gru_step",
         lambda s, x, rk, rb, uk, ub, ck, cb: ops.conv_gru_step(
             s, x, ConvGruParams(_conv(rk, rb, padding=1), _conv(uk, ub, padding=1), _conv(ck, cb, padding=1))),
         [_u(rng, B, C, 4, 4), _u(rng, B, C, 4, 4)]
         + [t for _ in range(3) for t in (_u(rng, C, 2 * C, 3, 3), _u(rng, C))]),
        ("linear", ops.linear, [_u(rng, B, 4), _u(rng, 4, 3), _u(rng, 3)]),
        ("global_avg_pool", ops.global_avg_pool, [_u(rng, B, C, H, W)]),
        ("broadcast_mul", lambda a, b: a * b, [_u(rng, B, C, H, W), _u(rng, B, 1, H, W)]),
        ("sub", lambda a, b: a - b, [_u(rng, B, C, H, W), _u(rng, B, C, H, W)]),
        ("mse_loss", lambda p: ops.mse_loss(p, np.linspace(-1, 1, B * H * W).reshape(B, 1, H, W)),
         [_u(rng, B, 1, H, W)]),
    ]
    return cases


def check_ops(seed: int = 0, eps: float = EPS) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    report = GradCheckReport()
    for name, fn, inputs in op_cases(rng):
        report.rows.extend(check_function(name, fn, inputs, rng, eps))
    return report


def tiny_model(seed: int = 0, n_scales: int = 2, iterations: int = 1) -> HyGnn:
    scales = [1, 2, 4, 3, 6][:n_scales]
    return HyGnn(
        DflConfig(width_multiplier=Fraction(1, 8), scales=scales),
        HybridGraphConfig(n_scales=n_scales, iterations=iterations),
        seed=seed,
    )


def check_model(
    model: Optional[HyGnn] = None,
    size: int = 16,
    n_samples: int = 24,
    seed: int = 0,
    eps: float = EPS,
    lam: float = 1.0,
) -> GradCheckReport:
    """Spot-check ``n_samples`` random scalar parameters of the full network."""
    model = model or tiny_model(seed)
    rng = np.random.default_rng(seed + 1)
    image = Tensor(rng.uniform(0.0, 1.0, size=(1, 3, size, size)))
    h = size // 8
    gt_d = rng.uniform(0.0, 0.5, size=(1, 1, h, h))
    gt_l = rng.uniform(0.0, 0.5, size=(1, 1, h, h))

    def loss_value() -> Tensor:
        D, L = model_forward(image, model)
        return joint_loss(D, L, gt_d, gt_l, lam)[0]

    params = model.parameters()
    with Tape():
        loss = loss_value()
    grads = backward(loss, params.values())

    names = list(params)
    sizes = np.array([params[n].size for n in names], dtype=np.float64)
    # half the samples uniform over tensors so small tensors are not starved
    picks = list(rng.choice(len(names), size=n_samples // 2, replace=True))
    picks += list(rng.choice(len(names), size=n_samples - len(picks), p=sizes / sizes.sum()))

    report = GradCheckReport()
    for ti in picks:
        name = names[ti]
        p = params[name]
        # prefer entries the loss actually reaches; zero-vs-zero rows prove little
        live = np.flatnonzero(grads[p].data)
        k = int(rng.choice(live)) if live.size else int(rng.integers(p.size))
        original = p.data.flat[k]
        p.data.flat[k] = original + eps
        hi = loss_value().item()
        p.data.flat[k] = original - eps
        lo = loss_value().item()
        p.data.flat[k] = original
        numeric = (hi - lo) / (2 * eps)
        analytic = float(grads[p].data.flat[k])
        report.rows.append(
            GradCheckRow(f"{name}[{k}]", analytic, numeric, relative_error(analytic, numeric))
        )
    return report


def grad_check(full: bool = False, seed: int = 0) -> GradCheckReport:
    report = check_ops(seed)
    if full:
        report.rows.extend(check_model(seed=seed).rows)
    return report
