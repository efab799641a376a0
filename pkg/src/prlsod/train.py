"""End-to-end toy training: supervision targets, forward, losses, Adam update."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import DirectionField, SignedDistanceMap, direction_field, normalize_sdm, signed_distance_map
from .losses import LossWeights, loss_df, loss_ds, loss_prl, loss_sdm
from .net import NetConfig, Outputs, PRLNet
from .tensor import NonFiniteError, Rng, Tensor, no_grad


class Adam:
    def __init__(self, params: list[Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


class DivergenceError(FloatingPointError):
    def __init__(self, step: int, detail: str = ""):
        super().__init__(f"training diverged at step {step}{': ' + detail if detail else ''}")
        self.step = step


def synthetic_pair(size: int = 96, box: tuple[int, int, int, int] | None = None):
    """Bright rectangle on a dark background in both spectra, with its mask.

    ``box`` is ``(row0, row1, col0, col1)``, end-exclusive.
    """
    r0, r1, c0, c1 = box or (size * 7 // 24, size * 17 // 24, size * 5 // 24, size * 19 // 24)
    mask = np.zeros((size, size), dtype=np.uint8)
    mask[r0:r1, c0:c1] = 1
    rgb = np.empty((size, size, 3))
    rgb[:] = (0.10, 0.12, 0.18)
    rgb[mask.astype(bool)] = (0.90, 0.80, 0.65)
    thermal = np.where(mask.astype(bool), 0.85, 0.20)
    return rgb, thermal, mask


@dataclass
class Targets:
    mask: np.ndarray
    sdm: SignedDistanceMap
    field: DirectionField


def make_targets(mask, sdm_norm: str = "max-abs", border_rule: str = "interface") -> Targets:
    m = np.asarray(mask).astype(bool)
    sdm = normalize_sdm(signed_distance_map(m, border_rule), sdm_norm)
    return Targets(m, sdm, direction_field(m, border_rule))


@dataclass
class StepLog:
    step: int
    l_prl: float
    l_sal: float
    l_sdm: float
    l_df: float
    mae: float

    def row(self) -> list:
        return [self.step, self.l_prl, self.l_sal, self.l_sdm, self.l_df, self.mae]


LOG_COLUMNS = ["step", "l_prl", "l_sal", "l_sdm", "l_df", "mae"]


@dataclass
class TrainResult:
    net: PRLNet
    history: list[StepLog] = field(default_factory=list)
    final: Outputs | None = None

    @property
    def initial_loss(self) -> float:
        return self.history[0].l_prl

    @property
    def final_loss(self) -> float:
        return self.history[-1].l_prl

    @property
    def reduction(self) -> float:
        return 1.0 - self.final_loss / self.initial_loss


def compute_losses(out: Outputs, targets: Targets, weights: LossWeights):
    l_sal = loss_ds(out.saliency, targets.mask, targets.field, weights)
    l_sdm = loss_sdm(out.sdm, targets.sdm)
    l_df = loss_df(out.field, targets.field, weights.df_angle_eps)
    return loss_prl(l_sal, l_sdm, l_df, weights), l_sal, l_sdm, l_df


def _log(step: int, out: Outputs, losses, targets: Targets) -> StepLog:
    total, l_sal, l_sdm, l_df = (float(x.item()) for x in losses)
    mae = float(np.abs(out.saliency.data[..., 0] - targets.mask).mean())
    return StepLog(step, total, l_sal, l_sdm, l_df, mae)


def train_toy(
    rgb,
    thermal,
    mask,
    steps: int = 200,
    cfg: NetConfig = NetConfig(),
    weights: LossWeights = LossWeights(),
    seed: int = 0,
    lr: float = 1e-3,
    sdm_norm: str = "max-abs",
    border_rule: str = "interface",
    callback: Callable[[StepLog], None] | None = None,
) -> TrainResult:
    """Fit one aligned RGB-T pair for ``steps`` Adam updates.

    ``history`` holds the losses before each update plus one final row after
    the last update (so it has ``steps + 1`` entries).
    """
    targets = make_targets(mask, sdm_norm, border_rule)
    net = PRLNet(cfg, Rng(seed))
    opt = Adam(net.parameters(), lr=lr)
    result = TrainResult(net)
    for step in range(steps):
        opt.zero_grad()
        try:
            out = net(rgb, thermal)
            losses = compute_losses(out, targets, weights)
        except NonFiniteError as exc:
            raise DivergenceError(step, str(exc)) from exc
        entry = _log(step, out, losses, targets)
        if not math.isfinite(entry.l_prl):
            raise DivergenceError(step, "non-finite loss")
        result.history.append(entry)
        if callback:
            callback(entry)
        losses[0].backward()
        opt.step()
    with no_grad():
        try:
            out = net(rgb, thermal)
            losses = compute_losses(out, targets, weights)
        except NonFiniteError as exc:
            raise DivergenceError(steps, str(exc)) from exc
    entry = _log(steps, out, losses, targets)
    result.history.append(entry)
    if callback:
        callback(entry)
    result.final = out
    return result
