"""Masked k-space losses, the Adam optimizer and the self-supervised training loop."""

from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import recon
from .recon import ModelParams
from .sampling import SamplingMask, SamplingPlan, sample_step_masks, select_fraction

ETA_MIN = 1e-3


class TrainingError(RuntimeError):
    pass


def _broadcast_mask(m, kshape) -> np.ndarray:
    m = np.asarray(m, dtype=bool)
    if m.shape == tuple(kshape):
        return m
    if m.shape != tuple(kshape[:3]):
        raise ValueError(f"mask shape {m.shape} does not match k-space {tuple(kshape)}")
    return np.broadcast_to(m[..., None], kshape)


def masked_loss_and_grad(pred_k: np.ndarray, target_k: np.ndarray, m, norm: str = "l1"):
    """Loss over the masked entries, normalized by their count, and dL/dpred.

    ``l1`` sums complex moduli ``|pred - target|``; ``l2`` sums their squares.
    """
    mb = _broadcast_mask(m, pred_k.shape)
    count = int(mb.sum())
    if count == 0:
        raise ValueError("empty loss mask")
    diff = np.where(mb, pred_k - target_k, 0)
    mag = np.abs(diff)
    if norm == "l1":
        loss = mag.sum() / count
        grad = np.where(mag > 0, diff / np.where(mag > 0, mag, 1.0), 0) / count
    elif norm == "l2":
        loss = np.sum(mag**2) / count
        grad = 2.0 * diff / count
    else:
        raise ValueError(f"norm must be l1 or l2, got {norm!r}")
    return float(loss), grad


def masked_loss(pred_k, target_k, m, norm: str = "l1") -> float:
    return masked_loss_and_grad(pred_k, target_k, m, norm)[0]


def _path_loss(params, y_in, m_in, target, m_loss, coils, norm):
    pred, tape = recon.forward(params, y_in, m_in, coils)
    loss, g = masked_loss_and_grad(pred, target, m_loss, norm)
    return loss, recon.backward(params, y_in, m_in, coils, g, tape)


def _average(x: ModelParams, y: ModelParams) -> ModelParams:
    out = x.copy()
    for k in out.arrays:
        out.arrays[k] = 0.5 * (x.arrays[k] + y.arrays[k])
    return out


def single_loss_and_grad(params, y1, y2, my1, my2, coils, norm="l1"):
    """Loss(M_Y2 * f(Y1), Y2) and its parameter gradient."""
    return _path_loss(params, y1, my1, y2, my2, coils, norm)


def cross_loss_and_grad(params, y1, y2, my1, my2, coils, norm="l1"):
    """Symmetric cross-consistency loss, 1/2 per direction, shared parameters."""
    _nonempty(my1)
    _nonempty(my2)
    l12, g12 = _path_loss(params, y1, my1, y2, my2, coils, norm)
    l21, g21 = _path_loss(params, y2, my2, y1, my1, coils, norm)
    return 0.5 * l12 + 0.5 * l21, _average(g12, g21)


def cross_loss(params, y1, y2, my1, my2, coils, norm="l1") -> float:
    _nonempty(my1)
    _nonempty(my2)
    p12 = recon.reconstruct(params, y1, my1, coils)
    p21 = recon.reconstruct(params, y2, my2, coils)
    return 0.5 * masked_loss(p12, y2, my2, norm) + 0.5 * masked_loss(p21, y1, my1, norm)


def _nonempty(m):
    if not np.asarray(m, dtype=bool).any():
        raise ValueError("empty loss mask")


class Adam:
    """Adam on the real-vector view of the parameters."""

    def __init__(self, lr=4e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, params: ModelParams, grads: ModelParams) -> ModelParams:
        theta = params.to_vector()
        g = grads.to_vector()
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        mhat = self.m / (1 - self.beta1**self.t)
        vhat = self.v / (1 - self.beta2**self.t)
        theta = theta - self.lr * mhat / (np.sqrt(vhat) + self.eps)
        out = params.from_vector(theta)
        out.step = params.step + 1
        for k in out.arrays:
            if k.endswith(".eta"):
                out.arrays[k] = np.maximum(out.arrays[k], ETA_MIN)
        return out


@dataclass
class EarlyStop:
    enabled: bool = False
    patience: int = 10
    every: int = 25
    val_subset_index: int = 2


@dataclass
class TrainConfig:
    plan: SamplingPlan
    loss_kind: str = "single"  # single | cross | supervised
    norm: str = "l1"
    steps: int = 100
    lr: float = 4e-4
    batch: int = 1
    seed: int = 0
    early_stop: EarlyStop = field(default_factory=EarlyStop)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.loss_kind not in ("single", "cross", "supervised"):
            raise ValueError(f"unknown loss kind {self.loss_kind!r}")
        if self.norm not in ("l1", "l2"):
            raise ValueError(f"unknown norm {self.norm!r}")
        if self.batch != 1:
            raise ValueError("only batch size 1 is supported")
        if self.loss_kind == "cross" and self.plan.subsets != 2:
            raise ValueError("cross loss needs exactly two subsets")
        if self.early_stop.enabled and self.plan.subsets != 3:
            raise ValueError("early stopping needs a third (validation) subset")


@dataclass
class TrainRun:
    log: List[dict]
    params: ModelParams
    seed: int
    wall_time: float
    stopped_early: bool = False
    val_log: List[tuple] = field(default_factory=list)

    def write_csv(self, path) -> None:
        write_log_csv(path, self.log)


LOG_FIELDS = ("step", "loss", "grad_norm", "lr", "wall_ms")


def write_log_csv(path, rows) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(r[k]) if isinstance(r[k], float) else r[k]) for k in LOG_FIELDS})


def step_loss_and_grad(params, config: TrainConfig, y0, coils, my, subsets):
    """Configured loss for one (data, masks) draw; returns ``(loss, grads)``."""
    m1, m2 = subsets[0].bits, subsets[1].bits
    y1 = y0 * m1[..., None]
    if config.loss_kind == "supervised":
        full = np.ones_like(m1)
        return _path_loss(params, y1, m1, y0, full, coils, config.norm)
    y2 = y0 * m2[..., None]
    if config.loss_kind == "cross":
        return cross_loss_and_grad(params, y1, y2, m1, m2, coils, config.norm)
    return single_loss_and_grad(params, y1, y2, m1, m2, coils, config.norm)


def validation_loss(params, y0, coils, subsets, config: TrainConfig) -> float:
    """Loss on the held-out subset, predicting from all training subsets."""
    val = subsets[config.early_stop.val_subset_index].bits
    m_in = np.zeros_like(val)
    for i, s in enumerate(subsets):
        if i != config.early_stop.val_subset_index:
            m_in |= s.bits
    pred = recon.reconstruct(params, y0 * m_in[..., None], m_in, coils)
    return masked_loss(pred, y0 * val[..., None], val, config.norm)


def train(config: TrainConfig, data, params: ModelParams) -> TrainRun:
    """Self-supervised training loop.

    Each step draws a subject from ``data`` (an object with ``sample(rng)``
    returning ``(image, y0, coils)`` and a ``shape`` attribute), draws M_Y and
    the re-undersampled subsets from the plan, evaluates the configured loss
    and takes one Adam step.
    """
    rng_data = np.random.default_rng([config.seed, 0])
    rng_mask = np.random.default_rng([config.seed, 1])
    opt = Adam(lr=config.lr)
    log: List[dict] = []
    val_log: List[tuple] = []
    best = np.inf
    bad = 0
    stopped = False
    t_start = time.perf_counter()
    for step in range(config.steps):
        t0 = time.perf_counter()
        _, y0, coils = data.sample(rng_data)
        my, subsets = sample_step_masks(config.plan, data.shape, rng_mask)
        if config.plan.resplit == "disjoint" and np.any(subsets[0].bits & subsets[1].bits):
            raise TrainingError(f"input and loss subsets overlap at step {step}")
        try:
            loss, grads = step_loss_and_grad(params, config, y0, coils, my, subsets)
        except recon.DivergenceError as e:
            raise TrainingError(f"{e} (step {step})") from e
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss at step {step}")
        gnorm = grads.global_norm()
        params = opt.step(params, grads)
        log.append(dict(step=step, loss=loss, grad_norm=gnorm, lr=config.lr,
                        wall_ms=round(1000 * (time.perf_counter() - t0), 3)))

        es = config.early_stop
        if es.enabled and (step + 1) % es.every == 0:
            v = validation_loss(params, y0, coils, subsets, config)
            val_log.append((step, v))
            if v < best:
                best, bad = v, 0
            else:
                bad += 1
                if bad >= es.patience:
                    stopped = True
                    break
    return TrainRun(log=log, params=params, seed=config.seed,
                    wall_time=time.perf_counter() - t_start, stopped_early=stopped,
                    val_log=val_log)


def id_input_mask(my: SamplingMask, ratio: float, rng: np.random.Generator) -> SamplingMask:
    """Input mask for in-distribution inference: a ``ratio`` subset of M_Y."""
    return select_fraction(my, ratio, rng)


def infer(params: ModelParams, y: np.ndarray, my, coils: np.ndarray, scenario: str = "OOD",
          ratio: float = 0.4, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Reconstruct acquired k-space ``y``.

    ``OOD`` feeds everything that was acquired; ``ID`` first re-undersamples
    the acquisition with ``ratio`` as during training.
    """
    scenario = scenario.upper()
    if not isinstance(my, SamplingMask):
        my = SamplingMask(my)
    if scenario == "OOD":
        return recon.reconstruct(params, y * my.bits[..., None], my.bits, coils)
    if scenario == "ID":
        rng = rng if rng is not None else np.random.default_rng(0)
        m1 = id_input_mask(my, ratio, rng).bits
        return recon.reconstruct(params, y * m1[..., None], m1, coils)
    raise ValueError(f"scenario must be ID or OOD, got {scenario!r}")


def config_to_dict(config: TrainConfig) -> dict:
    d = asdict(config)
    d["plan"] = config.plan.to_dict()
    return d


def config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    d["plan"] = SamplingPlan.from_dict(d["plan"])
    d["early_stop"] = EarlyStop(**d.get("early_stop", {}))
    return TrainConfig(**d)
