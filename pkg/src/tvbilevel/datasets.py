"""Synthetic training data and on-disk containers.

Phantoms are piecewise-constant-dominant images in [0, 1] (ellipses,
rectangles, quantized blobs). Corruption is additive Gaussian noise and/or
impulse noise on a fixed fraction of pixels. Pairs round-trip through a small
binary container (magic "TVBL") and single images through ASCII PGM.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, MalformedFileError
from .grids import ImageGrid

MAGIC = b"TVBL"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")

PHANTOM_KINDS = ("ellipses", "rectangles", "blobs")
IMPULSE_MODES = ("salt_pepper", "missing")


def mix_seed(seed: int, k: int) -> int:
    """Derive a decorrelated 64-bit sub-seed (splitmix64 finalizer)."""
    z = (seed * 0x9E3779B97F4A7C15 + k) & 0xFFFFFFFFFFFFFFFF
    z ^= z >> 30
    z = (z * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z ^= z >> 27
    z = (z * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


@dataclass(frozen=True)
class NoiseModelSpec:
    """Corruption recipe: Gaussian sigma, impulse pixel fraction, base seed."""

    gaussian_sigma: float = 0.0
    impulse_fraction: float = 0.0
    seed: int = 0
    impulse_mode: str = "salt_pepper"

    def __post_init__(self):
        if self.gaussian_sigma < 0:
            raise ValueError(f"gaussian_sigma must be >= 0, got {self.gaussian_sigma}")
        if not 0.0 <= self.impulse_fraction <= 1.0:
            raise ValueError(f"impulse_fraction must lie in [0, 1], got {self.impulse_fraction}")
        if self.impulse_mode not in IMPULSE_MODES:
            raise ValueError(f"unknown impulse_mode {self.impulse_mode!r}")


@dataclass(frozen=True)
class TrainingPair:
    """Clean/noisy image pair; clean values stay in [0, 1]."""

    clean: ImageGrid
    noisy: ImageGrid
    index: int

    def __post_init__(self):
        if self.clean.values.shape != self.noisy.values.shape or self.clean.h != self.noisy.h:
            raise DimensionMismatchError("clean and noisy images live on different grids")
        lo = float(self.clean.values.min())
        hi = float(self.clean.values.max())
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"clean values must lie in [0, 1], got range [{lo}, {hi}]")


@dataclass(frozen=True)
class TrainingSet:
    """Immutable collection of pairs on one common grid."""

    pairs: tuple[TrainingPair, ...]

    def __post_init__(self):
        if not self.pairs:
            raise ValueError("a training set needs at least one pair")
        first = self.pairs[0].clean
        for p in self.pairs:
            if p.clean.values.shape != first.values.shape or p.clean.h != first.h:
                raise DimensionMismatchError("all pairs must share one grid")
        object.__setattr__(self, "pairs", tuple(self.pairs))

    @property
    def n(self) -> int:
        return len(self.pairs)

    @property
    def rows(self) -> int:
        return self.pairs[0].clean.rows

    @property
    def cols(self) -> int:
        return self.pairs[0].clean.cols


def _coords(rows: int, cols: int):
    y = (np.arange(rows) + 0.5) / rows
    x = (np.arange(cols) + 0.5) / cols
    return np.meshgrid(y, x, indexing="ij")


def make_phantom(kind: str, rows: int, cols: int, seed: int) -> ImageGrid:
    """Deterministic piecewise-constant-dominant phantom with values in [0, 1]."""
    if kind not in PHANTOM_KINDS:
        raise ValueError(f"unknown phantom kind {kind!r}")
    if rows < 1 or cols < 1:
        raise ValueError(f"grid must be at least 1x1, got {rows}x{cols}")
    rng = np.random.default_rng(seed)
    yy, xx = _coords(rows, cols)
    img = np.full((rows, cols), float(rng.uniform(0.05, 0.15)))

    if kind == "ellipses":
        count = int(rng.integers(3, 7))
        for s in range(count):
            cy, cx = rng.uniform(0.2, 0.8, size=2)
            ry = rng.uniform(0.12, 0.35)
            rx = rng.uniform(0.12, 0.35)
            ang = rng.uniform(0.0, np.pi)
            dy = yy - cy
            dx = xx - cx
            ur = np.cos(ang) * dx + np.sin(ang) * dy
            vr = -np.sin(ang) * dx + np.cos(ang) * dy
            mask = (ur / rx) ** 2 + (vr / ry) ** 2 <= 1.0
            img[mask] = rng.uniform(0.45, 1.0) if s == 0 else rng.uniform(0.2, 1.0)
    elif kind == "rectangles":
        count = int(rng.integers(4, 9))
        for s in range(count):
            y0, x0 = rng.uniform(0.05, 0.6, size=2)
            hgt = rng.uniform(0.2, 0.4)
            wid = rng.uniform(0.2, 0.4)
            mask = (yy >= y0) & (yy <= y0 + hgt) & (xx >= x0) & (xx <= x0 + wid)
            img[mask] = rng.uniform(0.45, 1.0) if s == 0 else rng.uniform(0.2, 1.0)
    else:
        z = np.zeros((rows, cols))
        for _ in range(int(rng.integers(4, 8))):
            cy, cx = rng.uniform(0.1, 0.9, size=2)
            w = rng.uniform(0.08, 0.3)
            a = rng.uniform(0.4, 1.0)
            z += a * np.exp(-(((yy - cy) ** 2) + (xx - cx) ** 2) / (2 * w * w))
        z -= z.min()
        peak = z.max()
        if peak > 0:
            z /= peak
        # quantize to five plateaus so the image is piecewise constant
        img = np.round(z * 4.0) / 4.0

    return ImageGrid(np.clip(img, 0.0, 1.0), 1.0 / cols)


def add_gaussian_noise(u: ImageGrid, sigma: float, seed: int) -> ImageGrid:
    """Additive N(0, sigma^2) noise; values are not clipped."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    rng = np.random.default_rng(seed)
    return u.like(u.values + rng.normal(0.0, sigma, size=u.values.shape))


def add_impulse_noise(u: ImageGrid, fraction: float, seed: int,
                      mode: str = "salt_pepper") -> ImageGrid:
    """Overwrite exactly round(fraction * npix) distinct pixels.

    salt_pepper sets each chosen pixel to 0 or 1 with probability 1/2;
    missing sets them to 0.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must lie in [0, 1], got {fraction}")
    if mode not in IMPULSE_MODES:
        raise ValueError(f"unknown impulse_mode {mode!r}")
    npix = u.values.size
    count = int(round(fraction * npix))
    out = u.values.copy()
    if count:
        rng = np.random.default_rng(seed)
        flat = rng.choice(npix, size=count, replace=False)
        if mode == "salt_pepper":
            vals = rng.integers(0, 2, size=count).astype(np.float64)
        else:
            vals = np.zeros(count)
        out.ravel()[flat] = vals
    return u.like(out)


def build_training_set(kind: str, rows: int, cols: int, n_pairs: int,
                       noise: NoiseModelSpec) -> TrainingSet:
    """N independent phantom/noisy pairs; pair k is a pure function of (noise.seed, k)."""
    if n_pairs < 1:
        raise ValueError(f"n_pairs must be >= 1, got {n_pairs}")
    pairs = []
    for k in range(n_pairs):
        sk = mix_seed(noise.seed, k)
        clean = make_phantom(kind, rows, cols, seed=mix_seed(sk, 1))
        noisy = clean
        if noise.gaussian_sigma > 0:
            noisy = add_gaussian_noise(noisy, noise.gaussian_sigma, seed=mix_seed(sk, 2))
        if noise.impulse_fraction > 0:
            noisy = add_impulse_noise(noisy, noise.impulse_fraction, seed=mix_seed(sk, 3),
                                      mode=noise.impulse_mode)
        pairs.append(TrainingPair(clean, noisy, index=k))
    return TrainingSet(tuple(pairs))


def save_set(ts: TrainingSet, path) -> None:
    """Write header (magic, version, rows, cols, N) + clean/noisy float64 LE payload."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, ts.rows, ts.cols, ts.n))
        for p in ts.pairs:
            fh.write(np.ascontiguousarray(p.clean.values, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(p.noisy.values, dtype="<f8").tobytes())


def load_set(path) -> TrainingSet:
    """Inverse of save_set; validates magic, version, and payload length."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise MalformedFileError(f"{path}: file shorter than the header")
    magic, version, rows, cols, n = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise MalformedFileError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise MalformedFileError(f"{path}: unsupported version {version}")
    frame = rows * cols * 8
    expected = _HEADER.size + 2 * n * frame
    if len(blob) != expected:
        raise MalformedFileError(
            f"{path}: payload has {len(blob) - _HEADER.size} bytes, expected {expected - _HEADER.size}"
        )
    pairs = []
    off = _HEADER.size
    for k in range(n):
        clean = np.frombuffer(blob, dtype="<f8", count=rows * cols, offset=off).reshape(rows, cols)
        off += frame
        noisy = np.frombuffer(blob, dtype="<f8", count=rows * cols, offset=off).reshape(rows, cols)
        off += frame
        pairs.append(TrainingPair(ImageGrid(clean, 1.0 / cols), ImageGrid(noisy, 1.0 / cols), k))
    return TrainingSet(tuple(pairs))


def export_pgm(u: ImageGrid, path) -> None:
    """ASCII PGM (P2, maxval 255); values are clamped to [0, 1] before scaling."""
    q = np.clip(u.values, 0.0, 1.0)
    q = np.rint(q * 255.0).astype(int)
    lines = [f"P2", f"{u.cols} {u.rows}", "255"]
    for row in q:
        lines.append(" ".join(str(v) for v in row))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def import_pgm(path) -> ImageGrid:
    """Read an ASCII PGM (P2) into values in [0, 1], h = 1/cols."""
    with open(path) as fh:
        tokens = []
        for line in fh:
            body = line.split("#", 1)[0]
            tokens.extend(body.split())
    if not tokens or tokens[0] != "P2":
        raise MalformedFileError(f"{path}: not an ASCII PGM (P2) file")
    try:
        cols, rows, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
        data = np.array([int(t) for t in tokens[4:]], dtype=np.float64)
    except (IndexError, ValueError) as exc:
        raise MalformedFileError(f"{path}: malformed PGM header or payload") from exc
    if maxval <= 0 or data.size != rows * cols:
        raise MalformedFileError(
            f"{path}: expected {rows * cols} samples at maxval > 0, got {data.size}"
        )
    if data.min() < 0 or data.max() > maxval:
        raise MalformedFileError(f"{path}: sample outside [0, {maxval}]")
    return ImageGrid((data / maxval).reshape(rows, cols), 1.0 / cols)
