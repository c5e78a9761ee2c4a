"""Complex grids, centered Fourier transforms and the multi-coil MRI operator.

Array conventions used throughout the package:

* image      -- complex ``(nx, ny, nt)``
* k-space    -- complex ``(nx, ny, nt, nc)``
* coil maps  -- complex ``(nx, ny, 1, nc)``, broadcast over frames
* mask       -- bool ``(nx, ny, nt)``, broadcast over coils

k-space is stored with DC at the grid center (``n // 2`` along each axis) and
all transforms are unitary.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import scipy.fft as sfft

PathLike = Union[str, Path]


def _check_axes(g: np.ndarray, axes: Sequence[int]) -> None:
    for ax in axes:
        if g.shape[ax] == 0:
            raise ValueError("empty axis")


def fft_centered(g: np.ndarray, axes: Sequence[int] = (0, 1)) -> np.ndarray:
    """Unitary FFT with DC moved to the center of every transformed axis."""
    g = np.asarray(g)
    axes = tuple(axes)
    _check_axes(g, axes)
    return sfft.fftshift(
        sfft.fftn(sfft.ifftshift(g, axes=axes), axes=axes, norm="ortho"), axes=axes
    )


def ifft_centered(g: np.ndarray, axes: Sequence[int] = (0, 1)) -> np.ndarray:
    """Inverse of :func:`fft_centered`."""
    g = np.asarray(g)
    axes = tuple(axes)
    _check_axes(g, axes)
    return sfft.fftshift(
        sfft.ifftn(sfft.ifftshift(g, axes=axes), axes=axes, norm="ortho"), axes=axes
    )


def _mask_array(mask, shape) -> Optional[np.ndarray]:
    if mask is None:
        return None
    m = np.asarray(mask, dtype=bool)
    if m.shape != tuple(shape[:3]):
        raise ValueError(f"mask shape {m.shape} does not match k-space shape {tuple(shape[:3])}")
    return m


def _check_coils(image_shape, coils: np.ndarray) -> None:
    if coils.ndim != 4 or coils.shape[2] != 1 or coils.shape[:2] != tuple(image_shape[:2]):
        raise ValueError(
            f"coil maps of shape {coils.shape} incompatible with image shape {tuple(image_shape)}"
        )


def forward_op(image: np.ndarray, coils: np.ndarray, mask=None) -> np.ndarray:
    """A x = mask * F(coils * x), per coil. ``mask=None`` means fully sampled."""
    image = np.asarray(image)
    if image.ndim == 4:
        if image.shape[3] != 1:
            raise ValueError("image must be single-channel (nc = 1)")
        image = image[..., 0]
    if image.ndim != 3:
        raise ValueError(f"image must be (nx, ny, nt), got {image.shape}")
    _check_coils(image.shape, coils)
    k = fft_centered(image[..., None] * coils, axes=(0, 1))
    m = _mask_array(mask, k.shape)
    if m is not None:
        k = k * m[..., None]
    return k


def adjoint_op(kspace: np.ndarray, coils: np.ndarray, mask=None) -> np.ndarray:
    """A^H k = sum_c conj(coils_c) * F^-1(mask * k_c)."""
    kspace = np.asarray(kspace)
    if kspace.ndim != 4 or kspace.shape[3] != coils.shape[3]:
        raise ValueError(f"k-space shape {kspace.shape} incompatible with coils {coils.shape}")
    _check_coils(kspace.shape, coils)
    m = _mask_array(mask, kspace.shape)
    if m is not None:
        kspace = kspace * m[..., None]
    return np.sum(np.conj(coils) * ifft_centered(kspace, axes=(0, 1)), axis=3)


def normal_op(image: np.ndarray, coils: np.ndarray, mask=None) -> np.ndarray:
    """A^H A x."""
    return adjoint_op(forward_op(image, coils, mask), coils, mask)


def coil_combine(kspace: np.ndarray, coils: np.ndarray) -> np.ndarray:
    """Image from full k-space; exact inverse of ``forward_op(., coils, None)``."""
    return adjoint_op(kspace, coils, None)


# --------------------------------------------------------------------------- #
# synthetic data


def _unit_coords(nx: int, ny: int):
    x = (np.arange(nx) - nx // 2) / (nx / 2)
    y = (np.arange(ny) - ny // 2) / (ny / 2)
    return np.meshgrid(x, y, indexing="ij")


def make_phantom(nx: int = 32, ny: int = 32, nt: int = 8, seed: int = 0) -> np.ndarray:
    """Dynamic complex ellipse phantom of shape ``(nx, ny, nt)``.

    A large static "body" ellipse holds 2-5 smaller ellipses whose centers and
    semi-axes oscillate sinusoidally over the frames (a crude cardiac motion
    surrogate). A smooth random phase makes the image genuinely complex. The
    peak magnitude is normalized to 1.
    """
    if nx < 8 or ny < 8:
        raise ValueError("phantom needs nx, ny >= 8")
    if nt < 1:
        raise ValueError("phantom needs nt >= 1")
    rng = np.random.default_rng(seed)
    X, Y = _unit_coords(nx, ny)
    n_inner = int(rng.integers(2, 6))

    body = dict(
        cx=rng.uniform(-0.05, 0.05), cy=rng.uniform(-0.05, 0.05),
        a=rng.uniform(0.65, 0.8), b=rng.uniform(0.55, 0.75),
        theta=rng.uniform(0, np.pi), value=rng.uniform(0.25, 0.4),
        amp=0.0, phase=0.0,
    )
    ellipses = [body]
    for _ in range(n_inner):
        ellipses.append(dict(
            cx=rng.uniform(-0.35, 0.35), cy=rng.uniform(-0.35, 0.35),
            a=rng.uniform(0.08, 0.3), b=rng.uniform(0.08, 0.3),
            theta=rng.uniform(0, np.pi), value=rng.uniform(-0.2, 0.6),
            amp=rng.uniform(0.0, 0.25), phase=rng.uniform(0, 2 * np.pi),
        ))

    # smooth phase: low-order polynomial in x, y
    c = rng.normal(scale=0.6, size=5)
    phase = c[0] + c[1] * X + c[2] * Y + c[3] * X * Y + c[4] * (X**2 - Y**2)

    frames = np.zeros((nx, ny, nt))
    for t in range(nt):
        w = 2 * np.pi * t / nt
        img = np.zeros((nx, ny))
        for e in ellipses:
            s = 1.0 + e["amp"] * np.sin(w + e["phase"])
            dx = e["amp"] * 0.1 * np.cos(w + e["phase"])
            ct, st = np.cos(e["theta"]), np.sin(e["theta"])
            u = (X - e["cx"] - dx) * ct + (Y - e["cy"]) * st
            v = -(X - e["cx"] - dx) * st + (Y - e["cy"]) * ct
            inside = (u / (e["a"] * s)) ** 2 + (v / (e["b"] * s)) ** 2 <= 1.0
            img[inside] += e["value"]
        frames[..., t] = img
    frames = np.clip(frames, 0.0, None)
    out = frames * np.exp(1j * phase)[..., None]
    peak = np.abs(out).max()
    return out / peak


def make_coils(nx: int = 32, ny: int = 32, nc: int = 2, seed: int = 0) -> np.ndarray:
    """Smooth synthetic coil sensitivities, shape ``(nx, ny, 1, nc)``.

    Each coil is a broad Gaussian lobe placed around the field of view with a
    linear phase ramp; maps are normalized so that ``sum_c |c|^2 == 1``.
    """
    if nc < 1:
        raise ValueError("need at least one coil")
    if nc == 1:
        return np.ones((nx, ny, 1, 1), dtype=complex)
    rng = np.random.default_rng(seed)
    X, Y = _unit_coords(nx, ny)
    maps = np.empty((nx, ny, nc), dtype=complex)
    for c in range(nc):
        ang = 2 * np.pi * c / nc + rng.uniform(-0.3, 0.3)
        r = rng.uniform(0.8, 1.2)
        width = rng.uniform(0.9, 1.3)
        mag = np.exp(-((X - r * np.cos(ang)) ** 2 + (Y - r * np.sin(ang)) ** 2) / (2 * width**2))
        ramp = rng.normal(scale=0.5, size=3)
        maps[..., c] = mag * np.exp(1j * (ramp[0] + ramp[1] * X + ramp[2] * Y))
    maps /= np.sqrt(np.sum(np.abs(maps) ** 2, axis=-1, keepdims=True))
    return maps[:, :, None, :]


class SubjectSet:
    """A fixed set of synthetic subjects (phantom + coil maps).

    ``sample(rng)`` returns ``(image, y0, coils)`` with ``y0`` the fully
    sampled multi-coil k-space of a randomly chosen subject.
    """

    def __init__(self, seeds, nx=32, ny=32, nt=8, nc=2):
        self.seeds = list(seeds)
        self.shape = (nx, ny, nt)
        self.subjects = []
        for s in self.seeds:
            image = make_phantom(nx, ny, nt, seed=s)
            coils = make_coils(nx, ny, nc, seed=s + 7919)
            self.subjects.append((image, forward_op(image, coils), coils))

    def __len__(self):
        return len(self.subjects)

    def __getitem__(self, i):
        return self.subjects[i]

    def sample(self, rng: np.random.Generator):
        if len(self.subjects) == 1:
            return self.subjects[0]
        return self.subjects[int(rng.integers(len(self.subjects)))]


# --------------------------------------------------------------------------- #
# raw grid format: one JSON header line, then little-endian payload

_PAYLOAD = {
    "complex64": np.dtype("<f4"),
    "complex128": np.dtype("<f8"),
    "bool": np.dtype("u1"),
}


def grid_bytes(arr: np.ndarray, dtype: Optional[str] = None) -> bytes:
    arr = np.asarray(arr)
    if dtype is None:
        dtype = "bool" if arr.dtype == bool else "complex64"
    if dtype not in _PAYLOAD:
        raise ValueError(f"unsupported grid dtype {dtype!r}")
    header = json.dumps({"shape": list(arr.shape), "dtype": dtype, "layout": "row-major"})
    if dtype == "bool":
        payload = np.ascontiguousarray(arr, dtype=bool).astype("u1").tobytes()
    else:
        c = np.ascontiguousarray(arr, dtype=complex)
        inter = np.empty(c.shape + (2,), dtype=_PAYLOAD[dtype])
        inter[..., 0] = c.real
        inter[..., 1] = c.imag
        payload = inter.tobytes()
    return header.encode("utf-8") + b"\n" + payload


def write_grid(path: PathLike, arr: np.ndarray, dtype: Optional[str] = None) -> None:
    Path(path).write_bytes(grid_bytes(arr, dtype))


def parse_grid(raw: bytes) -> np.ndarray:
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl].decode("utf-8"))
    if header.get("layout") != "row-major":
        raise ValueError("only row-major grids are supported")
    shape = tuple(header["shape"])
    dtype = header["dtype"]
    body = raw[nl + 1:]
    if dtype == "bool":
        return np.frombuffer(body, dtype="u1").reshape(shape).astype(bool)
    inter = np.frombuffer(body, dtype=_PAYLOAD[dtype]).reshape(shape + (2,))
    return inter[..., 0].astype(float) + 1j * inter[..., 1].astype(float)


def read_grid(path: PathLike) -> np.ndarray:
    return parse_grid(Path(path).read_bytes())
