"""Shared geometric primitives: grids, fields, anisotropic norms and shaping maps.

All 2D fields live on regular element-centre grids stored as (ny, nx) arrays,
row-major with (0, 0) at the lower-left corner.  An angle a always stands for
the direction vector (cos a, -sin a).
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Grid:
    """Regular grid of square elements of size h, origin at the centre of element (0, 0)."""

    nx: int
    ny: int
    h: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.nx <= 0 or self.ny <= 0:
            raise ValueError(f"grid must have positive extents, got {self.nx}x{self.ny}")
        if not (self.h > 0.0):
            raise ValueError(f"element size must be positive, got {self.h}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    def xs(self) -> np.ndarray:
        return self.origin[0] + self.h * np.arange(self.nx)

    def ys(self) -> np.ndarray:
        return self.origin[1] + self.h * np.arange(self.ny)

    def points(self) -> tuple[np.ndarray, np.ndarray]:
        """Element-centre coordinates as two (ny, nx) arrays (X, Y)."""
        return np.meshgrid(self.xs(), self.ys())

    def refine(self, factor: int) -> "Grid":
        """Nested refinement: each element splits into factor x factor children.

        Child centres tile the parent element, so factor 1 returns an identical grid.
        """
        if factor < 1:
            raise ValueError(f"refinement factor must be >= 1, got {factor}")
        hf = self.h / factor
        ox = self.origin[0] - self.h / 2 + hf / 2
        oy = self.origin[1] - self.h / 2 + hf / 2
        return Grid(self.nx * factor, self.ny * factor, hf, (ox, oy))


@dataclass
class ScalarField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(
                f"field shape {self.values.shape} does not match grid {self.grid.shape}"
            )


@dataclass
class ComplexField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != self.grid.shape:
            raise ValueError(
                f"field shape {self.values.shape} does not match grid {self.grid.shape}"
            )


@dataclass(frozen=True)
class Anisotropy:
    """Directional weights for the elliptic norm: r1 along the stripe direction, r2 across."""

    r1: float = 1.0 / np.pi
    r2: float = np.pi


def direction(theta):
    """Direction vector (cos t, -sin t) for angle array t, stacked on the last axis."""
    theta = np.asarray(theta, dtype=float)
    return np.stack([np.cos(theta), -np.sin(theta)], axis=-1)


def aniso_norm(v, theta, aniso: Anisotropy):
    """Anisotropic norm |M v| with M = [[r1 sin t, r1 cos t], [-r2 cos t, r2 sin t]].

    v has shape (..., 2); theta and the anisotropy weights broadcast against it.
    With (r1, r2) = (1/pi, pi) the norm is small along the stripe direction of t
    and large across it, so level sets are ellipses elongated along the stripes.
    """
    v = np.asarray(v, dtype=float)
    theta = np.asarray(theta, dtype=float)
    st, ct = np.sin(theta), np.cos(theta)
    r1 = np.asarray(aniso.r1, dtype=float)
    r2 = np.asarray(aniso.r2, dtype=float)
    a = r1 * (st * v[..., 0] + ct * v[..., 1])
    b = r2 * (-ct * v[..., 0] + st * v[..., 1])
    return np.hypot(a, b)


def heaviside(delta, eta):
    """Unit step: 1 where delta >= eta, else 0 (elementwise, float output)."""
    return np.where(np.asarray(delta, dtype=float) >= eta, 1.0, 0.0)


def smoothstep(t):
    """Cubic smoothstep 3t^2 - 2t^3 with clamping to [0, 1]."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def to_triangular(phase):
    """Map a phase angle to a triangular-wave density in [0, 1].

    Continuous across the phase branch cut; 0.5 at phase 0 and pi, peaks of 1
    at pi/2 and troughs of 0 at -pi/2.
    """
    return np.arcsin(np.sin(np.asarray(phase, dtype=float))) / np.pi + 0.5


def wrap_angle(theta):
    """Wrap angles to (-pi, pi]."""
    theta = np.asarray(theta, dtype=float)
    out = -((-theta + np.pi) % (2.0 * np.pi) - np.pi)
    return out


def mean_filter_3x3(a: np.ndarray, padding: str = "replicate") -> np.ndarray:
    """3x3 box mean with 'replicate' or 'zero' boundary padding."""
    if padding == "replicate":
        p = np.pad(a, 1, mode="edge")
    elif padding == "zero":
        p = np.pad(a, 1, mode="constant")
    else:
        raise ValueError(f"unknown padding {padding!r}")
    out = np.zeros_like(np.asarray(a, dtype=float))
    for dj in range(3):
        for di in range(3):
            out += p[dj : dj + a.shape[0], di : di + a.shape[1]]
    return out / 9.0


def _pillbox_3x3() -> np.ndarray:
    # Overlap area of a radius-1 disc centred on the middle pixel with each of the
    # 3x3 pixels, normalised to sum 1.  Computed once by subsampling.
    n = 510
    t = (np.arange(n) + 0.5) / n * 3.0 - 1.5
    X, Y = np.meshgrid(t, t)
    inside = (X * X + Y * Y <= 1.0).astype(float)
    k = inside.reshape(3, n // 3, 3, n // 3).sum(axis=(1, 3))
    return k / k.sum()


PILLBOX_3X3 = _pillbox_3x3()


def pillbox_filter_3x3(a: np.ndarray) -> np.ndarray:
    """Circular-averaging (radius 1 disc) 3x3 filter with zero padding."""
    p = np.pad(np.asarray(a, dtype=float), 1, mode="constant")
    out = np.zeros_like(np.asarray(a, dtype=float))
    for dj in range(3):
        for di in range(3):
            out += PILLBOX_3X3[dj, di] * p[dj : dj + a.shape[0], di : di + a.shape[1]]
    return out


def bilinear_sample(values: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of a (ny, nx) array at fractional index coords (x, y).

    Coordinates are clamped to the array bounds (edge replication).
    """
    ny, nx = values.shape[:2]
    x = np.clip(np.asarray(x, dtype=float), 0.0, nx - 1.0)
    y = np.clip(np.asarray(y, dtype=float), 0.0, ny - 1.0)
    i0 = np.clip(np.floor(x).astype(int), 0, nx - 2) if nx > 1 else np.zeros_like(x, dtype=int)
    j0 = np.clip(np.floor(y).astype(int), 0, ny - 2) if ny > 1 else np.zeros_like(y, dtype=int)
    i1 = np.minimum(i0 + 1, nx - 1)
    j1 = np.minimum(j0 + 1, ny - 1)
    fx = x - i0
    fy = y - j0
    v00 = values[j0, i0]
    v01 = values[j0, i1]
    v10 = values[j1, i0]
    v11 = values[j1, i1]
    return (
        v00 * (1 - fx) * (1 - fy)
        + v01 * fx * (1 - fy)
        + v10 * (1 - fx) * fy
        + v11 * fx * fy
    )


def bilinear_upsample(values: np.ndarray, factor: int) -> np.ndarray:
    """Upsample a (ny, nx) array by an integer factor with nested element centres."""
    ny, nx = values.shape
    fine_i = (np.arange(nx * factor) + 0.5) / factor - 0.5
    fine_j = (np.arange(ny * factor) + 0.5) / factor - 0.5
    X, Y = np.meshgrid(fine_i, fine_j)
    return bilinear_sample(values, X, Y)


def _catmull_rom_weights(f: np.ndarray) -> np.ndarray:
    # weights for samples at offsets -1, 0, 1, 2 around the cell containing f
    f2 = f * f
    f3 = f2 * f
    w0 = 0.5 * (-f3 + 2 * f2 - f)
    w1 = 0.5 * (3 * f3 - 5 * f2 + 2)
    w2 = 0.5 * (-3 * f3 + 4 * f2 + f)
    w3 = 0.5 * (f3 - f2)
    return np.stack([w0, w1, w2, w3])


def bicubic_upsample(values: np.ndarray, factor: int) -> np.ndarray:
    """Catmull-Rom bicubic upsampling by an integer factor, edge-clamped.

    Works for real or complex arrays; fine element centres are nested in the
    coarse elements exactly as in Grid.refine.
    """
    ny, nx = values.shape

    def axis_coords(n):
        t = (np.arange(n * factor) + 0.5) / factor - 0.5
        i0 = np.clip(np.floor(t).astype(int), 0, n - 1)
        f = t - i0
        idx = np.stack([np.clip(i0 + k, 0, n - 1) for k in (-1, 0, 1, 2)])
        return idx, _catmull_rom_weights(f)

    ix, wx = axis_coords(nx)
    jy, wy = axis_coords(ny)
    # interpolate rows first, then columns
    rows = np.zeros((ny, nx * factor), dtype=values.dtype)
    for k in range(4):
        rows += values[:, ix[k]] * wx[k]
    out = np.zeros((ny * factor, nx * factor), dtype=values.dtype)
    for k in range(4):
        out += rows[jy[k], :] * wy[k][:, None]
    return out


def sobel_gradient(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sobel x and y derivative estimates with replicate padding.

    Returned components follow the grid axes (x rightwards, y upwards in row
    order), so the pair behaves like a gradient direction, not image rows.
    """
    a = np.asarray(a, dtype=float)
    p = np.pad(a, 1, mode="edge")
    kx = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
    ky = kx.T
    gx = np.zeros_like(a)
    gy = np.zeros_like(a)
    for dj in range(3):
        for di in range(3):
            block = p[dj : dj + a.shape[0], di : di + a.shape[1]]
            gx += kx[dj, di] * block
            gy += ky[dj, di] * block
    return gx, gy
