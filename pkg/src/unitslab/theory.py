"""Monte Carlo and closed-form checks of the self-supervision theory.

The testbed is a small circularly-symmetric complex Gaussian prior over a
length-N k-space vector. Acquisition masks are Bernoulli(p) per location, input
masks come from a finite pattern set and supervision masks are Bernoulli(r).
The supervised-optimal predictor is then the Gaussian conditional mean, which
is linear in the observed entries for each effective input mask, so a
mask-keyed linear model can represent it exactly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as sla

from .recon import LinearLookupModel, linear_predict, mask_key

MIN_TRIALS = 100


class InsufficientTrialsError(ValueError):
    pass


@dataclass(frozen=True)
class VerificationReport:
    claim: str
    trials: int
    estimate: float
    reference: float
    abs_dev: float
    rel_dev: float
    passed: bool
    tolerance: float
    note: str = ""

    @classmethod
    def build(cls, claim, trials, estimate, reference, tolerance, deviation=None, note=""):
        abs_dev = abs(estimate - reference) if deviation is None else deviation
        rel = abs_dev / abs(reference) if reference != 0 else abs_dev
        return cls(claim, int(trials), float(estimate), float(reference), float(abs_dev),
                   float(rel), bool(abs_dev <= tolerance), float(tolerance), note)


REPORT_FIELDS = ("claim", "trials", "estimate", "reference", "abs_dev", "rel_dev",
                 "passed", "tolerance", "note")


def write_reports(path, reports: Sequence[VerificationReport]) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_FIELDS)
        for r in reports:
            d = asdict(r)
            w.writerow([repr(d[k]) if isinstance(d[k], float) else d[k] for k in REPORT_FIELDS])


def summary_block(reports: Sequence[VerificationReport]) -> str:
    lines = []
    for r in reports:
        flag = "PASS" if r.passed else "FAIL"
        lines.append(f"[{flag}] {r.claim}: estimate={r.estimate:.6g} reference={r.reference:.6g} "
                     f"dev={r.abs_dev:.3g} tol={r.tolerance:.3g} trials={r.trials}")
    n_fail = sum(not r.passed for r in reports)
    lines.append(f"{len(reports) - n_fail}/{len(reports)} claims passed")
    return "\n".join(lines)


# --------------------------------------------------------------------------- #
# Gaussian world


def circulant_covariance(n: int, rho: float) -> np.ndarray:
    """Real symmetric circulant covariance ``rho ** circular_distance``."""
    d = np.arange(n)
    dist = np.minimum(d, n - d)
    return sla.circulant(rho**dist)


DEFAULT_PATTERNS = (
    "11110000",
    "00111100",
    "00001111",
    "11000011",
)


@dataclass
class GaussianWorld:
    mu: np.ndarray
    cov: np.ndarray
    patterns: np.ndarray  # (P, N) bool
    pattern_probs: np.ndarray
    p: float = 0.8
    r: float = 0.5

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=complex)
        self.cov = np.asarray(self.cov, dtype=complex)
        self.patterns = np.asarray(self.patterns, dtype=bool)
        self.pattern_probs = np.asarray(self.pattern_probs, dtype=float)
        n = self.mu.shape[0]
        if self.cov.shape != (n, n) or self.patterns.shape[1] != n:
            raise ValueError("inconsistent world dimensions")
        if not np.allclose(self.cov, self.cov.conj().T, atol=1e-12):
            raise ValueError("covariance must be Hermitian")
        self.chol = np.linalg.cholesky(self.cov)  # raises if not PD
        if np.any(self.pattern_probs <= 0) or np.any(self.pattern_probs > 1):
            raise ValueError("pattern probabilities must lie in (0, 1)")
        if abs(self.pattern_probs.sum() - 1) > 1e-12:
            raise ValueError("pattern probabilities must sum to 1")
        if not (0 < self.p <= 1):
            raise ValueError("p must lie in (0, 1]")
        q = self.q
        if np.any(q <= 0) or np.any(q >= 1):
            raise ValueError("every location must be hit by some pattern and missed by another")
        self._cache: Dict[str, Tuple[np.ndarray, np.ndarray]] = {}

    @property
    def n(self) -> int:
        return self.mu.shape[0]

    @property
    def q(self) -> np.ndarray:
        """Marginal input-mask inclusion probability per location."""
        return self.pattern_probs @ self.patterns

    def sample_y0(self, rng: np.random.Generator, size: int) -> np.ndarray:
        z = (rng.standard_normal((size, self.n)) + 1j * rng.standard_normal((size, self.n))) / np.sqrt(2)
        return self.mu + z @ self.chol.T

    def sample_masks(self, rng: np.random.Generator, size: int):
        """Draws ``(M_Y, M_1, M_2)`` as bool arrays of shape ``(size, N)``."""
        my = rng.random((size, self.n)) < self.p
        idx = rng.choice(len(self.pattern_probs), size=size, p=self.pattern_probs)
        m1 = self.patterns[idx]
        m2 = rng.random((size, self.n)) < self.r
        return my, m1, m2

    def posterior_affine(self, observed) -> Tuple[np.ndarray, np.ndarray]:
        """``(W, b)`` with ``E[Y0 | Y0_O = y_O] = W @ y + b`` for ``y`` zero off ``O``."""
        obs = np.asarray(observed, dtype=bool)
        key = mask_key(obs)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        n = self.n
        W = np.zeros((n, n), dtype=complex)
        b = self.mu.copy()
        o = np.flatnonzero(obs)
        if o.size:
            S_oo = self.cov[np.ix_(o, o)]
            cf = sla.cho_factor(S_oo)
            gain = sla.cho_solve(cf, self.cov[o, :]).conj().T  # Sigma_{:,O} Sigma_OO^{-1}
            W[:, o] = gain
            b = self.mu - gain @ self.mu[o]
            # observed rows reproduce the observation exactly
            W[o, :] = 0
            W[o, o] = 1
            b[o] = 0
        self._cache[key] = (W, b)
        return W, b

    def key_distribution(self) -> Dict[str, float]:
        """Exact probability of every effective input mask M_Y * M_1."""
        out: Dict[str, float] = {}
        n = self.n
        for pat, pi in zip(self.patterns, self.pattern_probs):
            on = np.flatnonzero(pat)
            for bits in range(1 << on.size):
                sel = np.array([(bits >> j) & 1 for j in range(on.size)], dtype=bool)
                k = np.zeros(n, dtype=bool)
                k[on[sel]] = True
                pr = pi * self.p ** sel.sum() * (1 - self.p) ** (on.size - sel.sum())
                key = mask_key(k)
                out[key] = out.get(key, 0.0) + pr
        return out

    def supervision_weight(self, key_bits) -> np.ndarray:
        """P(M_Y,i = 1 | M_Y * M_1 = key) per location."""
        k = np.asarray(key_bits, dtype=bool)
        post = np.zeros(len(self.pattern_probs))
        for j, (pat, pi) in enumerate(zip(self.patterns, self.pattern_probs)):
            if np.any(k & ~pat):
                continue
            m = pat.sum()
            s = k.sum()
            post[j] = pi * self.p**s * (1 - self.p) ** (m - s)
        if post.sum() == 0:
            raise ValueError("key is impossible under this world")
        post /= post.sum()
        w = np.where(self.patterns, 0.0, self.p)  # off-pattern locations are free
        s = post @ w
        s[k] = 1.0
        return s


def default_world(n: int = 8, rho: float = 0.6, p: float = 0.8, r: float = 0.5,
                  patterns: Sequence[str] = DEFAULT_PATTERNS, seed: int = 0) -> GaussianWorld:
    """Circulant-covariance world with a smooth complex mean."""
    rng = np.random.default_rng(seed)
    pats = np.array([[c == "1" for c in s] for s in patterns], dtype=bool)
    if pats.shape[1] != n:
        raise ValueError("pattern length must equal n")
    mu = 0.7 * np.exp(1j * (2 * np.pi * np.arange(n) / n + rng.uniform(0, 2 * np.pi)))
    probs = np.full(len(pats), 1.0 / len(pats))
    return GaussianWorld(mu=mu, cov=circulant_covariance(n, rho), patterns=pats,
                         pattern_probs=probs, p=p, r=r)


def diagonal_world(n: int = 8, p: float = 0.8, r: float = 0.5,
                   patterns: Sequence[str] = DEFAULT_PATTERNS, variances=None) -> GaussianWorld:
    pats = np.array([[c == "1" for c in s] for s in patterns], dtype=bool)
    var = np.ones(n) if variances is None else np.asarray(variances, dtype=float)
    return GaussianWorld(mu=np.zeros(n), cov=np.diag(var), patterns=pats,
                         pattern_probs=np.full(len(pats), 1.0 / len(pats)), p=p, r=r)


def bayes_posterior_mean(world: GaussianWorld, y1: np.ndarray, observed) -> np.ndarray:
    """Gaussian conditional mean of the full vector given the observed entries."""
    W, b = world.posterior_affine(observed)
    y = np.where(np.asarray(observed, dtype=bool), y1, 0)
    return W @ y + b


def oracle_model(world: GaussianWorld, keys: Optional[Sequence[str]] = None) -> LinearLookupModel:
    """Lookup model whose entries are the closed-form posterior-mean maps."""
    keys = list(world.key_distribution()) if keys is None else keys
    model = LinearLookupModel(world.n)
    for k in keys:
        bits = np.array([c == "1" for c in k], dtype=bool)
        model.set(k, *world.posterior_affine(bits))
    return model


# --------------------------------------------------------------------------- #
# conditional-probability formula


def k_formula(p: float, q: float) -> float:
    """P(location not acquired | not present in the input), for Bernoulli masks."""
    return (1 - p) / (1 - p * q)


def verify_k_formula(p: float, q: float, trials: int = 1_000_000, rng=None,
                     tolerance: float = 0.01) -> VerificationReport:
    if not (0 < p <= 1) or not (0 < q < 1):
        raise ValueError("need 0 < p <= 1 and 0 < q < 1")
    rng = np.random.default_rng(0) if rng is None else rng
    my = rng.random(trials) < p
    m1 = rng.random(trials) < q
    missing = ~(my & m1)
    n_cond = int(missing.sum())
    if n_cond == 0:
        raise ValueError("no conditioning events; increase trials")
    est = float(np.sum(~my & missing) / n_cond)
    return VerificationReport.build(f"k_formula(p={p:g},q={q:g})", trials, est, k_formula(p, q), tolerance)


def verify_k_grid(values: Sequence[float] = tuple(np.round(np.arange(0.1, 1.0, 0.1), 1)),
                  trials: int = 1_000_000, rng=None, tolerance: float = 0.01) -> List[VerificationReport]:
    rng = np.random.default_rng(0) if rng is None else rng
    return [verify_k_formula(float(p), float(q), trials, rng, tolerance) for p in values for q in values]


# --------------------------------------------------------------------------- #
# variance halving


def verify_variance_halving(sigma: float, trials: int = 100_000, rng=None,
                            coupling: str = "independent", tolerance: float = 0.02) -> VerificationReport:
    """Variance of the averaged error of two predictions relative to one.

    ``coupling`` picks the second error: an independent draw, a copy of the
    first (``correlated``) or its negation (``anti``).
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if trials < 2:
        raise InsufficientTrialsError("need at least 2 trials")
    rng = np.random.default_rng(0) if rng is None else rng
    e1 = sigma * (rng.standard_normal(trials) + 1j * rng.standard_normal(trials))
    if coupling == "independent":
        e2 = sigma * (rng.standard_normal(trials) + 1j * rng.standard_normal(trials))
        ref = 0.5
    elif coupling == "correlated":
        e2, ref = e1.copy(), 1.0
    elif coupling == "anti":
        e2, ref = -e1, 0.0
    else:
        raise ValueError(f"unknown coupling {coupling!r}")
    ebar = 0.5 * (e1 + e2)
    ratio = float(np.var(ebar) / np.var(e1))
    return VerificationReport.build(f"variance_halving(sigma={sigma:g},{coupling})", trials,
                                    ratio, ref, tolerance)


# --------------------------------------------------------------------------- #
# unbiasedness of the self-supervised residual


Predictor = Callable[[np.ndarray, np.ndarray], np.ndarray]


def model_predictor(model: LinearLookupModel) -> Predictor:
    def f(y1, key_bits):
        return linear_predict(model, y1, mask_key(key_bits))
    return f


def oracle_predictor(world: GaussianWorld, bias: complex = 0.0) -> Predictor:
    def f(y1, key_bits):
        return bayes_posterior_mean(world, y1, key_bits) + bias
    return f


def _predict_batch(predictor: Predictor, y1: np.ndarray, keys: np.ndarray) -> np.ndarray:
    out = np.empty_like(y1)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    for j, k in enumerate(uniq):
        rows = np.flatnonzero(inv == j)
        # affine predictors: evaluate once per row (cheap at N <= 32)
        for i in rows:
            out[i] = predictor(y1[i], k)
    return out


def _affine_batch(world: GaussianWorld, y1: np.ndarray, keys: np.ndarray, bias: complex) -> np.ndarray:
    out = np.empty_like(y1)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    for j, k in enumerate(uniq):
        rows = inv == j
        W, b = world.posterior_affine(k)
        out[rows] = y1[rows] @ W.T + b + bias
    return out


@dataclass
class UnbiasednessResult:
    report: VerificationReport
    mean_residual: np.ndarray
    std_error: np.ndarray


def verify_unbiasedness(world: GaussianWorld, predictor: Optional[Predictor] = None, trials: int = 100_000,
                        rng=None, bias: complex = 0.0, n_se: float = 3.0) -> UnbiasednessResult:
    """Mean of ``M_Y2 * f(Y1) - Y2`` per location, tested against ``n_se`` standard errors.

    With ``predictor=None`` the closed-form oracle (plus ``bias``) is used on a
    fast batched path.
    """
    if trials < MIN_TRIALS:
        raise InsufficientTrialsError(f"insufficient trials: {trials} < {MIN_TRIALS}")
    rng = np.random.default_rng(0) if rng is None else rng
    y0 = world.sample_y0(rng, trials)
    my, m1, m2 = world.sample_masks(rng, trials)
    key = my & m1
    y1 = np.where(key, y0, 0)
    sup = my & m2
    if predictor is None:
        pred = _affine_batch(world, y1, key, bias)
    else:
        pred = _predict_batch(predictor, y1, key)
    res = np.where(sup, pred - y0, 0)
    mean = res.mean(axis=0)
    se = np.sqrt(np.mean(np.abs(res - mean) ** 2, axis=0) / trials)
    z = np.abs(mean) / np.where(se > 0, se, np.inf)
    worst = float(np.max(z))
    rep = VerificationReport.build("unbiasedness" + ("(injected bias)" if bias else ""), trials,
                                   estimate=float(np.max(np.abs(mean))), reference=0.0,
                                   tolerance=n_se, deviation=worst,
                                   note="deviation is max |mean residual| / standard error")
    return UnbiasednessResult(rep, mean, se)


def expected_bias_residual(world: GaussianWorld, bias: complex) -> np.ndarray:
    """Expected residual of an oracle shifted by ``bias``: P(M_Y2,i = 1) * bias."""
    return np.full(world.n, world.p * world.r * bias)


# --------------------------------------------------------------------------- #
# training the lookup model with the self-supervised loss


@dataclass
class LookupTrainConfig:
    steps: int = 200_000
    step_size: float = 0.2  # scaled per key by 1 / E||[y1; 1]||^2
    burn_in: int = 50  # per-key updates before iterate averaging starts
    loss_kind: str = "single"  # single | cross
    norm: str = "l2"
    seed: int = 0
    checkpoints: Tuple[int, ...] = (1_000, 2_000, 5_000, 10_000, 20_000, 50_000, 100_000, 200_000)
    chunk: int = 4096

    def __post_init__(self):
        if self.norm != "l2":
            raise ValueError("theorem verification requires the l2 norm")
        if self.loss_kind not in ("single", "cross"):
            raise ValueError("loss_kind must be single or cross")
        if self.step_size <= 0 or self.steps < 0:
            raise ValueError("step_size must be positive and steps non-negative")


class _KeyState:
    __slots__ = ("theta", "avg", "n", "n_avg", "gamma")

    def __init__(self, n: int, gamma: float):
        self.theta = np.zeros((n, n + 1), dtype=complex)
        self.theta[:, :n] = np.eye(n)
        self.avg = self.theta.copy()
        self.n = 0
        self.n_avg = 0
        self.gamma = gamma


def _key_gamma(world: GaussianWorld, key: np.ndarray, base: float) -> float:
    second = np.abs(world.mu) ** 2 + np.real(np.diag(world.cov))
    return base / (1.0 + float(second[key].sum()))


def _sgd_update(st: _KeyState, x: np.ndarray, target: np.ndarray, sup: np.ndarray, burn_in: int) -> float:
    """One step on ||sup * (theta @ x - target)||^2; returns the sample loss."""
    e = np.where(sup, st.theta @ x - target, 0)
    loss = float(np.real(np.vdot(e, e)))
    # gradient of the real loss w.r.t. (Re, Im) packed as complex: 2 e x^H
    st.theta -= st.gamma * 2.0 * np.outer(e, x.conj())
    st.n += 1
    if st.n > burn_in:
        st.n_avg += 1
        st.avg += (st.theta - st.avg) / st.n_avg
    else:
        st.avg[...] = st.theta
    return loss


def _model_from_states(states: Dict[str, _KeyState], n: int) -> LinearLookupModel:
    model = LinearLookupModel(n)
    for k, st in states.items():
        model.set(k, st.avg[:, :n].copy(), st.avg[:, n].copy())
    return model


@dataclass
class ProbeSet:
    keys: List[str]
    y0: Dict[str, np.ndarray]
    excluded: Dict[str, str]


def make_probe_set(world: GaussianWorld, draws: int = 256, min_prob: float = 0.02,
                   rng=None) -> ProbeSet:
    """Held-out probe draws for every key that is frequent enough and identifiable.

    A key is identifiable when every location has nonzero expected supervision
    weight given that key; otherwise the loss never constrains that output.
    """
    rng = np.random.default_rng(12345) if rng is None else rng
    keys, y0, excluded = [], {}, {}
    for k, pr in sorted(world.key_distribution().items()):
        bits = np.array([c == "1" for c in k], dtype=bool)
        if pr < min_prob:
            excluded[k] = f"rare (prob {pr:.4f})"
            continue
        if np.any(world.supervision_weight(bits) == 0):
            excluded[k] = "unidentifiable (zero supervision weight)"
            continue
        keys.append(k)
        y0[k] = world.sample_y0(rng, draws)
    return ProbeSet(keys, y0, excluded)


def relative_deviation(world: GaussianWorld, model: LinearLookupModel, probe: ProbeSet) -> Dict[str, float]:
    """Per key: RMS ||f(y1) - oracle|| / RMS ||oracle|| over the probe draws."""
    out = {}
    for k in probe.keys:
        bits = np.array([c == "1" for c in k], dtype=bool)
        y1 = np.where(bits, probe.y0[k], 0)
        W, b = world.posterior_affine(bits)
        ref = y1 @ W.T + b
        if k in model.table:
            Wm, bm = model.table[k]
            pred = y1 @ Wm.T + bm
        else:
            pred = y1
        out[k] = float(np.sqrt(np.mean(np.abs(pred - ref) ** 2) / np.mean(np.abs(ref) ** 2)))
    return out


@dataclass
class LookupRun:
    model: LinearLookupModel
    losses: np.ndarray
    curve: List[Tuple[int, float]]  # (step, max relative deviation)
    per_key: Dict[str, float]


def train_lookup(world: GaussianWorld, config: LookupTrainConfig,
                 probe: Optional[ProbeSet] = None) -> LookupRun:
    """Trains the mask-keyed linear model on the self-supervised masked loss.

    Each step draws Y0, M_Y, M_1, M_2; the input is M_Y * M_1 * Y0 and the loss
    is the squared error on M_Y * M_2 only. ``cross`` additionally swaps the
    roles of the two subsets with weight 1/2 per direction. Each key runs SGD
    with iterate averaging; the averaged iterate is the returned model.
    """
    rng = np.random.default_rng([config.seed, 17])
    n = world.n
    states: Dict[str, _KeyState] = {}
    losses = np.empty(config.steps)
    curve: List[Tuple[int, float]] = []
    marks = set(c for c in config.checkpoints if c <= config.steps)
    ones = np.ones(1, dtype=complex)
    w = 0.5 if config.loss_kind == "cross" else 1.0
    step = 0
    while step < config.steps:
        m = min(config.chunk, config.steps - step)
        y0 = world.sample_y0(rng, m)
        my, m1, m2 = world.sample_masks(rng, m)
        k1 = my & m1
        k2 = my & m2
        for j in range(m):
            loss = 0.0
            dirs = [(k1[j], k2[j])]
            if config.loss_kind == "cross":
                dirs.append((k2[j], k1[j]))
            for kin, ksup in dirs:
                key = mask_key(kin)
                st = states.get(key)
                if st is None:
                    st = states[key] = _KeyState(n, w * _key_gamma(world, kin, config.step_size))
                x = np.concatenate([np.where(kin, y0[j], 0), ones])
                loss += w * _sgd_update(st, x, np.where(ksup, y0[j], 0), ksup, config.burn_in)
            losses[step] = loss
            step += 1
            if step in marks and probe is not None:
                dev = relative_deviation(world, _model_from_states(states, n), probe)
                curve.append((step, max(dev.values())))
    model = _model_from_states(states, n)
    per_key = relative_deviation(world, model, probe) if probe is not None else {}
    return LookupRun(model, losses, curve, per_key)


def moving_average(x: Sequence[float], window: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if window < 1 or window > x.size:
        raise ValueError("window must lie in [1, len(x)]")
    c = np.cumsum(np.concatenate([[0.0], x]))
    return (c[window:] - c[:-window]) / window


def is_nonincreasing(x: Sequence[float], slack: Sequence[float] | float = 0.0) -> bool:
    """True if each value is at most the running minimum of its predecessors plus ``slack``."""
    x = np.asarray(x, dtype=float)
    s = np.broadcast_to(np.asarray(slack, dtype=float), x.shape)
    run_min = np.minimum.accumulate(x)
    return bool(np.all(x[1:] <= run_min[:-1] + s[1:]))


@dataclass
class Theorem1Result:
    report: VerificationReport
    monotone_report: VerificationReport
    support_report: VerificationReport
    run: LookupRun
    probe: ProbeSet


def verify_theorem1(world: GaussianWorld, config: Optional[LookupTrainConfig] = None,
                    probe_draws: int = 256, min_key_prob: float = 0.02,
                    tolerance: float = 5e-2) -> Theorem1Result:
    """Self-supervised lookup model vs the closed-form posterior mean.

    Returns three reports: the max relative deviation at the end of training,
    whether the deviation curve is non-increasing (3-point moving average over
    the checkpoints) and whether every probed key gives nonzero supervision
    weight to every location.
    """
    if not (0 < world.r < 1):
        raise ValueError("supervision probability r must lie in (0, 1)")
    if np.any(world.q <= 0) or np.any(world.q >= 1):
        raise ValueError("input inclusion probabilities must lie in (0, 1)")
    config = LookupTrainConfig() if config is None else config
    probe = make_probe_set(world, probe_draws, min_key_prob)
    run = train_lookup(world, config, probe)
    worst = max(run.per_key.values()) if run.per_key else math.inf
    rep = VerificationReport.build("theorem1_max_rel_dev", config.steps, worst, 0.0, tolerance,
                                   note=f"{len(probe.keys)} keys probed, {len(probe.excluded)} excluded")
    devs = [d for _, d in run.curve]
    if len(devs) >= 3:
        ma = moving_average(devs, 3)
        mono = is_nonincreasing(ma)
        rise = float(np.max(ma[1:] - np.minimum.accumulate(ma)[:-1], initial=0.0))
    else:
        mono, rise = len(devs) > 0, 0.0
    mono_rep = VerificationReport(
        "theorem1_monotone", config.steps, rise, 0.0, rise, rise, mono, 0.0,
        note="largest rise of the 3-checkpoint moving average above its running minimum")
    min_w = min(float(world.supervision_weight(np.array([c == "1" for c in k])).min())
                for k in probe.keys) if probe.keys else 0.0
    sup_rep = VerificationReport("theorem1_supervision_weight", len(probe.keys), min_w, 0.0,
                                 min_w, min_w, min_w > 0, 0.0,
                                 note="min over probed keys of P(location supervised | key) / r")
    return Theorem1Result(rep, mono_rep, sup_rep, run, probe)
