"""Initial undersampling masks, re-undersampling into subsets, and presets.

Masks live on the ``(nx, ny, nt)`` k-space grid. ``kx`` (axis 0) is the
readout direction, so the Cartesian line family samples whole ``kx`` lines
at chosen ``(ky, t)`` positions.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Optional, Tuple, Union

import numpy as np

GOLDEN_RATIO = (1 + np.sqrt(5)) / 2
RATIO_EPS = 0.02
MAX_REDRAWS = 8

Range = Union[float, Tuple[float, float]]


class EmptySubsetError(RuntimeError):
    pass


@dataclass(frozen=True)
class SamplingMask:
    """Binary k-space mask with an optional record of its calibration band."""

    bits: np.ndarray
    acs: Optional[np.ndarray] = None
    acceleration: Optional[float] = None

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        object.__setattr__(self, "bits", bits)
        if self.acs is not None:
            object.__setattr__(self, "acs", np.asarray(self.acs, dtype=bool) & bits)

    def __array__(self, dtype=None, copy=None):
        return self.bits if dtype is None else self.bits.astype(dtype)

    @property
    def shape(self):
        return self.bits.shape

    def count(self) -> int:
        return int(self.bits.sum())

    def density(self) -> float:
        return float(self.bits.mean()) if self.bits.size else 0.0

    def __mul__(self, other: "SamplingMask") -> "SamplingMask":
        return effective_mask(self, other)

    def __eq__(self, other):
        return isinstance(other, SamplingMask) and np.array_equal(self.bits, other.bits)

    __hash__ = None

    @classmethod
    def full(cls, shape) -> "SamplingMask":
        return cls(np.ones(shape, dtype=bool), acceleration=1.0)


def effective_mask(m, my) -> SamplingMask:
    """Hadamard product ``m * my``: the sampling pattern a subset really has."""
    a = np.asarray(m, dtype=bool)
    b = np.asarray(my, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    acs = getattr(my, "acs", None)
    return SamplingMask(a & b, acs=None if acs is None else acs & a)


@dataclass(frozen=True)
class SamplingPlan:
    """How the initial mask and the re-undersampled subsets are drawn.

    ``acceleration``, ``input_ratio`` and ``loss_ratio`` accept either a fixed
    value or a ``(low, high)`` range that is sampled every step. In disjoint
    mode the loss subset is the complement of the input subset (and of the
    validation subset when there are three), so ``loss_ratio`` is ignored.
    """

    initial_seed_mode: str = "random"  # "fixed" | "random"
    initial_seed: int = 0
    acceleration: Union[int, Tuple[int, int]] = 8
    mask_family: str = "lines"  # "lines" | "bernoulli"
    acs_lines: int = 4
    resplit: str = "independent"  # "disjoint" | "independent"
    input_ratio: Range = (0.0, 1.0)
    loss_ratio: Range = (0.0, 1.0)
    val_ratio: float = 0.2
    subsets: int = 2
    holdout_validation: bool = False

    def __post_init__(self):
        if self.initial_seed_mode not in ("fixed", "random"):
            raise ValueError(f"initial_seed_mode must be fixed|random, got {self.initial_seed_mode!r}")
        if self.mask_family not in ("lines", "bernoulli"):
            raise ValueError(f"mask_family must be lines|bernoulli, got {self.mask_family!r}")
        if self.resplit not in ("disjoint", "independent"):
            raise ValueError(f"resplit must be disjoint|independent, got {self.resplit!r}")
        if self.subsets not in (2, 3):
            raise ValueError("subsets must be 2 or 3")
        if self.holdout_validation and self.subsets != 3:
            raise ValueError("holdout validation needs three subsets")
        lo, hi = _as_range(self.acceleration)
        if lo < 1:
            raise ValueError(f"acceleration must be >= 1, got {lo}")
        if self.acs_lines < 0:
            raise ValueError("acs_lines must be >= 0")
        if self.resplit == "independent":
            for name in ("input_ratio", "loss_ratio"):
                r = _as_range(getattr(self, name))
                if r[0] == r[1] and not 0 < r[0] < 1:
                    raise ValueError(f"independent {name} must lie in (0, 1), got {r[0]}")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SamplingPlan":
        d = dict(d)
        for k in ("acceleration", "input_ratio", "loss_ratio"):
            if isinstance(d.get(k), list):
                d[k] = tuple(d[k])
        return cls(**d)


def _as_range(v) -> Tuple[float, float]:
    if isinstance(v, (tuple, list)):
        lo, hi = v
        return float(lo), float(hi)
    return float(v), float(v)


def draw_ratio(v: Range, rng: np.random.Generator, eps: float = RATIO_EPS) -> float:
    """A fixed ratio, or a uniform draw on the range clipped to ``[eps, 1 - eps]``."""
    lo, hi = _as_range(v)
    if lo == hi:
        return lo
    lo, hi = max(lo, eps), min(hi, 1.0 - eps)
    if lo > hi:
        raise ValueError(f"empty ratio interval after clipping: {v}")
    return float(rng.uniform(lo, hi))


def draw_acceleration(plan: SamplingPlan, rng: np.random.Generator) -> float:
    lo, hi = _as_range(plan.acceleration)
    if lo == hi:
        return lo
    return float(rng.integers(int(lo), int(hi) + 1))


def acs_band(ny: int, n: int) -> np.ndarray:
    """Indices of the ``n`` central ky lines."""
    start = ny // 2 - n // 2
    return np.arange(start, start + n)


def _line_budget(ny: int, R: float, acs_lines: int) -> Tuple[int, int]:
    """Lines per frame and calibration lines actually used for acceleration R.

    The calibration band counts toward the per-frame budget and may use at
    most a quarter of it, so the pattern keeps an incoherent part at high R.
    """
    budget = int(min(ny, max(1, round(ny / R))))
    if budget >= ny:
        return ny, min(acs_lines, ny)
    return budget, min(acs_lines, budget // 4)


def _vd_weights(ky: np.ndarray, ny: int, power: float = 2.0, floor: float = 0.05) -> np.ndarray:
    d = np.abs(ky - ny // 2) / (ny / 2)
    return (1.0 - np.clip(d, 0, 1)) ** power + floor


def _line_frame(candidates: np.ndarray, m: int, ny: int, offset: float, jitter: np.ndarray) -> np.ndarray:
    """Pick ``m`` lines from ``candidates`` by stratified inverse-CDF sampling."""
    if m <= 0:
        return np.array([], dtype=int)
    w = _vd_weights(candidates, ny)
    cdf = np.cumsum(w) / w.sum()
    u = (np.arange(m) + (offset + jitter) % 1.0) / m
    picks = np.minimum(np.searchsorted(cdf, u), len(candidates) - 1)
    chosen = []
    used = np.zeros(len(candidates), dtype=bool)
    for p in picks:
        if used[p]:
            # nearest free candidate
            free = np.flatnonzero(~used)
            p = free[np.argmin(np.abs(free - p))]
        used[p] = True
        chosen.append(candidates[p])
    return np.asarray(chosen, dtype=int)


def draw_initial_mask(plan: SamplingPlan, shape, rng: np.random.Generator) -> SamplingMask:
    """Draw M_Y on a ``(nx, ny, nt)`` grid.

    In fixed-seed mode ``rng`` is ignored and every call reproduces the same
    mask. The line family keeps the same number of lines in every frame; its
    variable-density pattern is shifted between frames by golden-ratio
    offsets, standing in for a VISTA-style spatiotemporal sampler.
    """
    nx, ny, nt = shape
    if plan.acs_lines > ny:
        raise ValueError(f"ACS band of {plan.acs_lines} lines exceeds ky extent {ny}")
    if plan.initial_seed_mode == "fixed":
        rng = np.random.default_rng(plan.initial_seed)
    R = draw_acceleration(plan, rng)
    if R < 1:
        raise ValueError(f"acceleration must be >= 1, got {R}")

    bits = np.zeros(shape, dtype=bool)
    acs = np.zeros(shape, dtype=bool)
    if plan.mask_family == "lines":
        budget, n_acs = _line_budget(ny, R, plan.acs_lines)
        band = acs_band(ny, n_acs)
        acs[:, band, :] = True
        candidates = np.setdiff1d(np.arange(ny), band)
        phase0 = rng.uniform()
        jitter = rng.uniform(-0.5, 0.5, size=nt) * 0.5
        for t in range(nt):
            lines = _line_frame(candidates, budget - n_acs, ny, phase0 + t / GOLDEN_RATIO, jitter[t])
            bits[:, lines, t] = True
        bits |= acs
    else:
        band = acs_band(ny, plan.acs_lines)
        acs[:, band, :] = True
        n_total = bits.size
        n_acs = int(acs.sum())
        p = (n_total / R - n_acs) / max(n_total - n_acs, 1)
        p = float(np.clip(p, 0.0, 1.0))
        bits = (rng.random(shape) < p) | acs
    return SamplingMask(bits, acs=acs, acceleration=R)


def _choose(idx: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    n = int(min(max(n, 0), len(idx)))
    if n == 0:
        return idx[:0]
    return rng.choice(idx, size=n, replace=False)


def _flat_mask(shape, idx) -> np.ndarray:
    m = np.zeros(int(np.prod(shape)), dtype=bool)
    m[idx] = True
    return m.reshape(shape)


def _split_disjoint(my: SamplingMask, plan: SamplingPlan, rng) -> list:
    acquired = my.bits.ravel()
    acs = my.acs.ravel() if my.acs is not None else np.zeros_like(acquired)
    idx_all = np.flatnonzero(acquired)
    n_total = len(idx_all)
    free = np.flatnonzero(acquired & ~acs)
    acs_idx = np.flatnonzero(acquired & acs)

    val_idx = free[:0]
    if plan.subsets == 3:
        val_idx = _choose(free, round(plan.val_ratio * n_total), rng)
        free = np.setdiff1d(free, val_idx)

    q = draw_ratio(plan.input_ratio, rng)
    n_in = round(q * n_total)
    # calibration lines go to the input subset
    in_idx = np.concatenate([acs_idx, _choose(free, n_in - len(acs_idx), rng)])
    loss_idx = np.setdiff1d(np.concatenate([free, acs_idx]), in_idx)

    out = [_flat_mask(my.shape, in_idx), _flat_mask(my.shape, loss_idx)]
    if plan.subsets == 3:
        out.append(_flat_mask(my.shape, val_idx))
    return out


def _split_independent(my: SamplingMask, plan: SamplingPlan, rng) -> list:
    ratios = [draw_ratio(plan.input_ratio, rng), draw_ratio(plan.loss_ratio, rng)]
    if plan.subsets == 3:
        ratios.append(plan.val_ratio)
    return [my.bits & (rng.random(my.shape) < r) for r in ratios]


def re_undersample(my: SamplingMask, plan: SamplingPlan, rng: np.random.Generator) -> list:
    """Split the acquired set into ``plan.subsets`` masks M_1 ... M_L.

    Disjoint mode partitions the acquired locations exactly; independent mode
    includes each acquired location in each subset by its own Bernoulli
    trial. Draws with an empty subset are repeated up to ``MAX_REDRAWS`` times.
    """
    if my.count() == 0:
        raise ValueError("acquired mask is empty")
    split = _split_disjoint if plan.resplit == "disjoint" else _split_independent
    for _ in range(MAX_REDRAWS + 1):
        subsets = split(my, plan, rng)
        if all(s.any() for s in subsets):
            return [SamplingMask(s) for s in subsets]
    raise EmptySubsetError("empty subset after retries")


def select_fraction(my: SamplingMask, ratio: float, rng: np.random.Generator) -> SamplingMask:
    """Keep ``round(ratio * |my|)`` acquired locations chosen uniformly."""
    if not 0 < ratio <= 1:
        raise ValueError(f"ratio must lie in (0, 1], got {ratio}")
    idx = np.flatnonzero(my.bits.ravel())
    if ratio == 1:
        return SamplingMask(my.bits.copy())
    keep = _choose(idx, max(1, round(ratio * len(idx))), rng)
    return SamplingMask(_flat_mask(my.shape, keep))


def sample_step_masks(plan: SamplingPlan, shape, rng: np.random.Generator):
    """Initial mask plus subsets for one training step.

    A fixed-seed plan is fully deterministic: both the initial mask and its
    split are reproduced at every step.
    """
    if plan.initial_seed_mode == "fixed":
        rng = np.random.default_rng([plan.initial_seed, 1])
    my = draw_initial_mask(plan, shape, rng)
    return my, re_undersample(my, plan, rng)


# --------------------------------------------------------------------------- #
# presets

_FULL = (0.0, 1.0)

PRESETS = {
    "units-fix": SamplingPlan(
        initial_seed_mode="fixed", acceleration=8, resplit="disjoint", input_ratio=0.4
    ),
    "rand-init-seed": SamplingPlan(
        initial_seed_mode="random", acceleration=8, resplit="disjoint", input_ratio=0.4
    ),
    "rand-ratio": SamplingPlan(
        initial_seed_mode="random", acceleration=8, resplit="disjoint", input_ratio=_FULL
    ),
    "independent-mask": SamplingPlan(
        initial_seed_mode="random", acceleration=8, resplit="independent",
        input_ratio=_FULL, loss_ratio=_FULL,
    ),
    "units-base": SamplingPlan(
        initial_seed_mode="random", acceleration=(2, 16), resplit="independent",
        input_ratio=_FULL, loss_ratio=_FULL,
    ),
    "units-cross": SamplingPlan(
        initial_seed_mode="random", acceleration=(2, 16), resplit="independent",
        input_ratio=_FULL, loss_ratio=_FULL,
    ),
    "ssdu": SamplingPlan(
        initial_seed_mode="fixed", acceleration=8, resplit="disjoint", input_ratio=0.6
    ),
    "zs-ssl": SamplingPlan(
        initial_seed_mode="fixed", acceleration=8, resplit="disjoint", input_ratio=0.4,
        val_ratio=0.2, subsets=3, holdout_validation=True,
    ),
}

# presets that differ from their sampling plan only in the training loss
PRESET_LOSS = {"units-cross": "cross"}

ABLATION_VARIANTS = ("units-fix", "rand-init-seed", "rand-ratio", "independent-mask", "units-base")


def preset(name: str) -> SamplingPlan:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; valid presets: {', '.join(PRESETS)}") from None


def with_seed(plan: SamplingPlan, seed: int) -> SamplingPlan:
    return replace(plan, initial_seed=int(seed))
