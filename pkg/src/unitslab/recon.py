"""Unrolled reconstruction network with hand-written reverse-mode gradients.

Every unroll ``u`` applies one gradient step on the data term followed by a
learned residual regularizer::

    x <- x - eta_u * A^H (A x - y) - R_u(x)
    R_u = T2 . S2 . modrelu(. , b1) . T1 . S1

``S*`` are 5x5 spatial and ``T*`` 3-tap temporal complex convolutions
(circular boundary, computed by FFT). The network returns the full
multi-coil k-space of the final image so losses can index it with any mask.

Gradient convention: for a real loss ``L`` and a complex quantity ``z`` the
gradient stored is ``dL/dRe(z) + 1j * dL/dIm(z)`` (twice the conjugate
Wirtinger derivative). Real parameters get plain derivatives.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
import scipy.fft as sfft

from .tensor import adjoint_op, forward_op, normal_op, read_grid, write_grid

MODRELU_EPS = 1e-12
DIVERGENCE_CAP = 1e6


class DivergenceError(RuntimeError):
    pass


# --------------------------------------------------------------------------- #
# parameters


@dataclass
class ModelParams:
    """Named parameter arrays. Kernels are complex, biases and steps real."""

    arrays: Dict[str, np.ndarray]
    unrolls: int
    channels: int
    step: int = 0

    def names(self):
        return list(self.arrays)

    def __getitem__(self, name):
        return self.arrays[name]

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.arrays.items()},
                           self.unrolls, self.channels, self.step)

    def zeros_like(self) -> "ModelParams":
        return ModelParams({k: np.zeros_like(v) for k, v in self.arrays.items()},
                           self.unrolls, self.channels, self.step)

    def num_real(self) -> int:
        return sum(v.size * (2 if np.iscomplexobj(v) else 1) for v in self.arrays.values())

    def to_vector(self) -> np.ndarray:
        """All parameters as one real vector (complex entries as re/im pairs)."""
        parts = []
        for v in self.arrays.values():
            if np.iscomplexobj(v):
                parts.append(np.ascontiguousarray(v).view(float).ravel())
            else:
                parts.append(np.asarray(v, dtype=float).ravel())
        return np.concatenate(parts) if parts else np.zeros(0)

    def from_vector(self, vec: np.ndarray) -> "ModelParams":
        out = {}
        i = 0
        for k, v in self.arrays.items():
            n = v.size * (2 if np.iscomplexobj(v) else 1)
            chunk = np.asarray(vec[i:i + n], dtype=float)
            if np.iscomplexobj(v):
                out[k] = chunk.copy().view(complex).reshape(v.shape)
            else:
                out[k] = chunk.reshape(v.shape).copy()
            i += n
        if i != len(vec):
            raise ValueError(f"vector length {len(vec)} does not match {i} parameters")
        return ModelParams(out, self.unrolls, self.channels, self.step)

    def global_norm(self) -> float:
        return float(np.linalg.norm(self.to_vector()))


def _layer_shapes(channels: int, ks: int, kt: int):
    C = channels
    return {
        "s1": (C, 1, ks, ks, 1),
        "t1": (C, C, 1, 1, kt),
        "s2": (C, C, ks, ks, 1),
        "t2": (1, C, 1, 1, kt),
    }


def init_params(unrolls: int = 6, channels: int = 4, ks: int = 5, kt: int = 3,
                seed: int = 0, out_gain: float = 0.1, eta: float = 1.0,
                zero_regularizer: bool = False) -> ModelParams:
    """Complex fan-in scaled init; real and imaginary parts drawn independently.

    ``out_gain`` scales the last temporal kernel so the regularizer starts as
    a small perturbation of the data-consistency iteration.
    """
    rng = np.random.default_rng(seed)
    arrays = {}
    for u in range(unrolls):
        for name, shape in _layer_shapes(channels, ks, kt).items():
            fan_in = int(np.prod(shape[1:]))
            std = np.sqrt(1.0 / (2 * fan_in))
            w = rng.normal(scale=std, size=shape) + 1j * rng.normal(scale=std, size=shape)
            if name == "t2":
                w *= out_gain
            if zero_regularizer:
                w[...] = 0
            arrays[f"u{u}.{name}"] = w
        arrays[f"u{u}.b1"] = np.zeros(channels)
        arrays[f"u{u}.eta"] = np.array(float(eta))
    return ModelParams(arrays, unrolls, channels)


# --------------------------------------------------------------------------- #
# layers


def _dft(n: int, k: int) -> np.ndarray:
    """``E[f, j] = exp(-2i pi f d_j / n)`` for centered tap offsets ``d_j``."""
    d = np.arange(k) - k // 2
    return np.exp(-2j * np.pi * np.outer(np.arange(n), d) / n)


def kernel_spectra(s: np.ndarray, t: np.ndarray, grid):
    """Spectra of a spatial ``(co, ci, kx, ky, 1)`` and temporal ``(co, co, 1, 1, kt)`` kernel.

    Equivalent to the FFT of each kernel placed circularly on the grid (taps
    alias onto the same cell when the grid is smaller than the kernel).
    Returned layouts are ``(nx, ny, ci, co)`` and ``(nt, ci, co)``.
    """
    nx, ny, nt = grid
    ex, ey, et = _dft(nx, s.shape[2]), _dft(ny, s.shape[3]), _dft(nt, t.shape[4])
    shat = np.einsum("xa,ocab,yb->xyco", ex, s[..., 0], ey, optimize=True)
    that = np.einsum("oct,ft->fco", t[:, :, 0, 0, :], et)
    return shat, that


def stage_forward_hat(xhat: np.ndarray, shat: np.ndarray, that: np.ndarray):
    """Spatial then temporal circular convolution in the Fourier domain.

    Activations are channel-last ``(nx, ny, nt, c)``.
    """
    h1hat = np.matmul(xhat, shat)
    h2hat = np.matmul(h1hat[..., None, :], that)[..., 0, :]
    return h2hat, h1hat


def stage_backward_hat(ghat: np.ndarray, xhat: np.ndarray, h1hat: np.ndarray,
                       shat: np.ndarray, that: np.ndarray, kshape_s, kshape_t):
    """Reverse pass of :func:`stage_forward_hat`.

    ``ghat`` is the unnormalized FFT of the image-domain gradient. Returns the
    FFT of the input gradient and the two kernel gradients.
    """
    nx, ny, nt = ghat.shape[:3]
    n = nx * ny * nt
    g1hat = np.matmul(ghat[..., None, :], np.conj(that).transpose(0, 2, 1))[..., 0, :]
    g0hat = np.matmul(g1hat, np.conj(shat).transpose(0, 1, 3, 2))
    ex, ey, et = _dft(nx, kshape_s[2]), _dft(ny, kshape_s[3]), _dft(nt, kshape_t[4])
    # pt[t, c, o] = sum_xy conj(h1[x, y, t, c]) g[x, y, t, o]
    h1 = np.conj(h1hat).reshape(nx * ny, nt, -1).transpose(1, 2, 0)
    pt = np.matmul(h1, ghat.reshape(nx * ny, nt, -1).transpose(1, 0, 2))
    gt = np.einsum("tco,tk->ock", pt, np.conj(et)) / n
    ps = np.matmul(np.conj(xhat).transpose(0, 1, 3, 2), g1hat)
    gs = np.einsum("xyco,xa,yb->ocab", ps, np.conj(ex), np.conj(ey), optimize=True) / n
    return g0hat, gs[..., None], gt[:, :, None, None, :]


_AX = (0, 1, 2)


def conv_stage(x: np.ndarray, s: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Image-domain convenience wrapper; ``x`` is ``(nx, ny, nt, ci)``."""
    shat, that = kernel_spectra(s, t, x.shape[:3])
    h2hat, _ = stage_forward_hat(sfft.fftn(x, axes=_AX), shat, that)
    return sfft.ifftn(h2hat, axes=_AX)


def conv_stage_backward(g: np.ndarray, x: np.ndarray, s: np.ndarray, t: np.ndarray):
    shat, that = kernel_spectra(s, t, x.shape[:3])
    xhat = sfft.fftn(x, axes=_AX)
    _, h1hat = stage_forward_hat(xhat, shat, that)
    g0hat, gs, gt = stage_backward_hat(sfft.fftn(g, axes=_AX), xhat, h1hat,
                                       shat, that, s.shape, t.shape)
    return sfft.ifftn(g0hat, axes=_AX), gs, gt


def modrelu(z: np.ndarray, b: np.ndarray):
    """relu(|z| + b) * z / |z| with one real bias per channel (last axis)."""
    a = np.abs(z)
    s = a + b
    g = np.maximum(s, 0.0) / (a + MODRELU_EPS)
    return g * z


def modrelu_backward(gout: np.ndarray, z: np.ndarray, b: np.ndarray):
    a = np.abs(z)
    s = a + b
    active = s > 0
    den = a + MODRELU_EPS
    g = np.where(active, s, 0.0) / den
    dg_da = (np.where(active, den, 0.0) - np.where(active, s, 0.0)) / den**2
    proj = np.real(np.conj(gout) * z)
    unit = z / np.where(a > 0, a, 1.0)
    gz = g * gout + dg_da * proj * unit
    gb = np.sum(np.where(active, proj, 0.0) / den, axis=tuple(range(z.ndim - 1)))
    return gz, gb


def regularizer_forward(x: np.ndarray, params: ModelParams, u: int):
    """R_u(x) for a single-channel image ``x`` of shape ``(nx, ny, nt)``."""
    grid = x.shape
    P = params.arrays
    s1hat, t1hat = kernel_spectra(P[f"u{u}.s1"], P[f"u{u}.t1"], grid)
    s2hat, t2hat = kernel_spectra(P[f"u{u}.s2"], P[f"u{u}.t2"], grid)
    xhat = sfft.fftn(x[..., None], axes=_AX)
    h2hat, h1hat = stage_forward_hat(xhat, s1hat, t1hat)
    h2 = sfft.ifftn(h2hat, axes=_AX)
    h3 = modrelu(h2, P[f"u{u}.b1"])
    h3hat = sfft.fftn(h3, axes=_AX)
    h5hat, h4hat = stage_forward_hat(h3hat, s2hat, t2hat)
    out = sfft.ifftn(h5hat, axes=_AX)[..., 0]
    cache = dict(spectra=(s1hat, t1hat, s2hat, t2hat), xhat=xhat, h1hat=h1hat,
                 h2=h2, h3hat=h3hat, h4hat=h4hat)
    return out, cache


def regularizer_backward(g: np.ndarray, params: ModelParams, u: int, cache, grads: Dict[str, np.ndarray]):
    """Accumulate parameter gradients into ``grads``; return gradient w.r.t. x."""
    P = params.arrays
    s1hat, t1hat, s2hat, t2hat = cache["spectra"]
    ghat = sfft.fftn(g[..., None], axes=_AX)
    g3hat, gs, gt = stage_backward_hat(ghat, cache["h3hat"], cache["h4hat"], s2hat, t2hat,
                                       P[f"u{u}.s2"].shape, P[f"u{u}.t2"].shape)
    grads[f"u{u}.s2"] += gs
    grads[f"u{u}.t2"] += gt
    g3 = sfft.ifftn(g3hat, axes=_AX)
    g2, gb = modrelu_backward(g3, cache["h2"], P[f"u{u}.b1"])
    grads[f"u{u}.b1"] += gb
    g0hat, gs, gt = stage_backward_hat(sfft.fftn(g2, axes=_AX), cache["xhat"], cache["h1hat"],
                                       s1hat, t1hat, P[f"u{u}.s1"].shape, P[f"u{u}.t1"].shape)
    grads[f"u{u}.s1"] += gs
    grads[f"u{u}.t1"] += gt
    return sfft.ifftn(g0hat, axes=_AX)[..., 0]

# --------------------------------------------------------------------------- #
# full model


@dataclass
class Tape:
    xs: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    caches: list = field(default_factory=list)


def forward(params: ModelParams, y_in: np.ndarray, m_in, coils: np.ndarray, keep: bool = True):
    """Run the unrolled network; returns ``(k_pred, tape)``."""
    m = np.asarray(m_in, dtype=bool)
    x = adjoint_op(y_in, coils, m)
    scale = float(np.linalg.norm(x)) + 1e-12
    tape = Tape() if keep else None
    for u in range(params.unrolls):
        resid = adjoint_op(forward_op(x, coils, m) - y_in, coils, m)
        reg, cache = regularizer_forward(x, params, u)
        eta = float(params.arrays[f"u{u}.eta"])
        x_new = x - eta * resid - reg
        if not np.all(np.isfinite(x_new)) or np.linalg.norm(x_new) > DIVERGENCE_CAP * scale:
            raise DivergenceError(f"divergence at unroll {u}")
        if keep:
            tape.xs.append(x)
            tape.residuals.append(resid)
            tape.caches.append(cache)
        x = x_new
    if keep:
        tape.xs.append(x)
    return forward_op(x, coils, None), tape


def reconstruct(params: ModelParams, y_in: np.ndarray, m_in, coils: np.ndarray) -> np.ndarray:
    """Predicted full multi-coil k-space for masked input ``y_in``."""
    k, _ = forward(params, y_in, m_in, coils, keep=False)
    return k


def backward(params: ModelParams, y_in: np.ndarray, m_in, coils: np.ndarray,
             cotangent: np.ndarray, tape: Optional[Tape] = None) -> ModelParams:
    """Gradient of a real loss w.r.t. all parameters given dL/dk_pred.

    Coil maps and the input data are treated as constants.
    """
    if tape is None:
        _, tape = forward(params, y_in, m_in, coils, keep=True)
    m = np.asarray(m_in, dtype=bool)
    grads = params.zeros_like()
    G = grads.arrays
    gx = adjoint_op(cotangent, coils, None)
    for u in reversed(range(params.unrolls)):
        eta = float(params.arrays[f"u{u}.eta"])
        G[f"u{u}.eta"] += -np.real(np.vdot(gx, tape.residuals[u]))
        g_prev = gx - eta * normal_op(gx, coils, m)
        # the regularizer enters with a minus sign
        g_prev += regularizer_backward(-gx, params, u, tape.caches[u], G)
        gx = g_prev
    return grads


def image_from_kspace(k: np.ndarray, coils: np.ndarray) -> np.ndarray:
    return adjoint_op(k, coils, None)


# --------------------------------------------------------------------------- #
# mask-keyed linear estimator


def mask_key(bits) -> str:
    return "".join("1" if b else "0" for b in np.asarray(bits, dtype=bool).ravel())


@dataclass
class LinearLookupModel:
    """``f(y1) = W[key] @ y1 + b[key]`` with one affine map per mask pattern.

    Unknown keys fall back to the identity map and are counted in
    ``missing_hits``.
    """

    n: int
    table: Dict[str, tuple] = field(default_factory=dict)
    missing_hits: int = 0

    def get(self, key: str):
        if key not in self.table:
            self.table[key] = (np.eye(self.n, dtype=complex), np.zeros(self.n, dtype=complex))
        return self.table[key]

    def set(self, key: str, W: np.ndarray, b: np.ndarray) -> None:
        W = np.asarray(W, dtype=complex)
        b = np.asarray(b, dtype=complex)
        if W.shape != (self.n, self.n) or b.shape != (self.n,):
            raise ValueError("W must be (n, n) and b (n,)")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise ValueError("non-finite lookup entry")
        self.table[key] = (W, b)


def linear_predict(model: LinearLookupModel, y1: np.ndarray, pattern_key: str) -> np.ndarray:
    y1 = np.asarray(y1, dtype=complex).ravel()
    entry = model.table.get(pattern_key)
    if entry is None:
        model.missing_hits += 1
        return y1.copy()
    W, b = entry
    return W @ y1 + b


# --------------------------------------------------------------------------- #
# checkpoints: one raw grid per tensor plus a JSON manifest


def save_checkpoint(directory, params: ModelParams, extra: Optional[dict] = None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    entries = []
    for name, arr in params.arrays.items():
        fname = f"{name}.grid"
        write_grid(d / fname, np.asarray(arr, dtype=complex), dtype="complex128")
        entries.append({"name": name, "file": fname, "shape": list(arr.shape),
                        "real": not np.iscomplexobj(arr)})
    manifest = {"unrolls": params.unrolls, "channels": params.channels, "step": params.step,
                "tensors": entries, **(extra or {})}
    (d / "checkpoint.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")


def load_checkpoint(directory) -> Tuple[ModelParams, dict]:
    d = Path(directory)
    manifest = json.loads((d / "checkpoint.json").read_text(encoding="utf-8"))
    arrays = {}
    for e in manifest["tensors"]:
        arr = read_grid(d / e["file"])
        if tuple(arr.shape) != tuple(e["shape"]):
            raise ValueError(f"checkpoint tensor {e['name']} has shape {arr.shape}, expected {e['shape']}")
        arrays[e["name"]] = arr.real.copy() if e["real"] else arr
    params = ModelParams(arrays, manifest["unrolls"], manifest["channels"], manifest["step"])
    return params, manifest
