"""Slow, independent reference implementations used only by the tests."""

from __future__ import annotations

import math

import numpy as np


def naive_centered_dft2(g: np.ndarray) -> np.ndarray:
    """Unitary 2D DFT over axes (0, 1) by direct summation, DC at n // 2."""
    nx, ny = g.shape[:2]
    out = np.zeros_like(g, dtype=complex)
    for kx in range(nx):
        for ky in range(ny):
            acc = 0
            for x in range(nx):
                for y in range(ny):
                    ph = (kx - nx // 2) * (x - nx // 2) / nx + (ky - ny // 2) * (y - ny // 2) / ny
                    acc = acc + g[x, y] * np.exp(-2j * np.pi * ph)
            out[kx, ky] = acc / math.sqrt(nx * ny)
    return out


def circular_conv_stage(x: np.ndarray, s: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Spatial (co, ci, kx, ky, 1) then temporal (co2, co, 1, 1, kt) circular convolution by loops."""
    nx, ny, nt, ci = x.shape
    co = s.shape[0]
    h = np.zeros((nx, ny, nt, co), dtype=complex)
    kx, ky = s.shape[2], s.shape[3]
    for o in range(co):
        for c in range(ci):
            for a in range(kx):
                for b in range(ky):
                    da, db = a - kx // 2, b - ky // 2
                    h[..., o] += s[o, c, a, b, 0] * np.roll(x[..., c], shift=(da, db), axis=(0, 1))
    co2 = t.shape[0]
    kt = t.shape[4]
    out = np.zeros((nx, ny, nt, co2), dtype=complex)
    for o in range(co2):
        for c in range(co):
            for k in range(kt):
                out[..., o] += t[o, c, 0, 0, k] * np.roll(h[..., c], shift=k - kt // 2, axis=2)
    return out


def loop_masked_loss(pred, target, mask, norm="l1") -> float:
    total, count = 0.0, 0
    for idx in np.ndindex(pred.shape):
        if mask[idx[:3]]:
            d = abs(complex(pred[idx]) - complex(target[idx]))
            total += d if norm == "l1" else d * d
            count += 1
    return total / count


def loop_mse(a, b) -> float:
    flat_a, flat_b = np.ravel(a), np.ravel(b)
    return sum((float(x) - float(y)) ** 2 for x, y in zip(flat_a, flat_b)) / len(flat_a)


def window_ssim(a: np.ndarray, b: np.ndarray, size=7, sigma=1.5, k1=0.01, k2=0.03, data_range=None):
    """SSIM of one 2D frame by explicit per-window weighted sums."""
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax**2) / (2 * sigma**2))
    w = np.outer(g, g)
    w /= w.sum()
    if data_range is None:
        data_range = max(a.max(), b.max()) - min(a.min(), b.min())
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    vals = []
    for i in range(a.shape[0] - size + 1):
        for j in range(a.shape[1] - size + 1):
            pa = a[i:i + size, j:j + size]
            pb = b[i:i + size, j:j + size]
            ma, mb = np.sum(w * pa), np.sum(w * pb)
            va = np.sum(w * (pa - ma) ** 2)
            vb = np.sum(w * (pb - mb) ** 2)
            cov = np.sum(w * (pa - ma) * (pb - mb))
            vals.append(((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma**2 + mb**2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def gaussian_conditional_mean(mu, cov, y, observed):
    """Posterior mean by explicit inverse (no Cholesky)."""
    o = np.flatnonzero(observed)
    if o.size == 0:
        return mu.copy()
    gain = cov[:, o] @ np.linalg.inv(cov[np.ix_(o, o)])
    return mu + gain @ (y[o] - mu[o])


def finite_difference(f, params, names_idx, h=1e-4):
    """Central differences of scalar ``f(params)`` for (name, flat index, part) triples."""
    out = []
    for name, i, part in names_idx:
        arr = params.arrays[name]
        flat = arr.reshape(-1)
        base = flat[i]
        step = h if part == "re" else 1j * h
        flat[i] = base + step
        fp = f(params)
        flat[i] = base - step
        fm = f(params)
        flat[i] = base
        out.append((fp - fm) / (2 * h))
    return np.array(out)
