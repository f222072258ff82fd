"""Filtered sampling of phasor kernel sets on intermediate grids.

The field of a kernel set is the sum of truncated Gabor responses; each sample
point carries an upsampled local orientation so kernels pointing away from it
are attenuated. Complex fields translate to phase, sine and triangular scalars
and upscale between nested grids by bicubic interpolation.
"""

from dataclasses import dataclass

import numpy as np

from .core import (
    Anisotropy,
    ComplexField,
    Grid,
    ScalarField,
    aniso_norm,
    bicubic_upsample,
    bilinear_sample,
    direction,
)
from .ingest import KernelSet

SINGULAR_THRESHOLD = 1e-9  # below this magnitude a sample has no usable phase


@dataclass
class SampleConfig:
    cutoff_threshold: float = 1e-6
    # "squared": support where exp(-beta delta^2) > threshold (consistent with
    # the Gaussian envelope, reach ~3-4 coarse elements); "verbatim": the
    # literal exp(-pi beta delta) > threshold form, kept for audit (its support
    # is a fraction of one coarse element).
    cutoff_mode: str = "squared"
    singular_threshold: float = SINGULAR_THRESHOLD

    def support_radius(self, beta: float) -> float:
        """Anisotropic-distance reach of one kernel under the cutoff."""
        log_inv = -np.log(self.cutoff_threshold)
        if self.cutoff_mode == "squared":
            return float(np.sqrt(log_inv / beta))
        if self.cutoff_mode == "verbatim":
            return float(log_inv / (np.pi * beta))
        raise ValueError(f"unknown cutoff_mode {self.cutoff_mode!r}")


@dataclass
class OrientationField:
    """Per-sample lamination orientation with interpolation-consistency weight."""

    grid: Grid
    theta_hat: np.ndarray  # (ny, nx) angles
    correct: np.ndarray  # (ny, nx) in [0, 1]; 1 where bilinear components cancelled


def upsample_orientations(theta: ScalarField, fine: Grid) -> OrientationField:
    """Upsample a coarse orientation field to a finer grid.

    cos/sin components are interpolated bilinearly so nearly identical angles
    across the branch cut average correctly; where components cancel (opposing
    directions) the blend falls back to the nearest coarse element's angle.
    """
    coarse = theta.grid
    X, Y = fine.points()
    ix = (X - coarse.origin[0]) / coarse.h
    iy = (Y - coarse.origin[1]) / coarse.h

    c = bilinear_sample(np.cos(theta.values), ix, iy)
    s = bilinear_sample(np.sin(theta.values), ix, iy)
    correct = 1.0 - 2.0 * np.maximum(c**2 + s**2 - 0.5, 0.0)

    ni = np.clip(np.rint(ix).astype(int), 0, coarse.nx - 1)
    nj = np.clip(np.rint(iy).astype(int), 0, coarse.ny - 1)
    nearest = theta.values[nj, ni]
    theta_hat = np.arctan2(s, c) * (1.0 - correct) + nearest * correct
    return OrientationField(grid=fine, theta_hat=theta_hat, correct=correct)


def sample_field(
    kernels: KernelSet,
    grid: Grid,
    orient: OrientationField | None,
    cfg: SampleConfig | None = None,
    aniso: Anisotropy | None = None,
) -> ComplexField:
    """Accumulate all kernel responses on the grid (ascending kernel index).

    orient=None means every sample matches each kernel's own orientation (no
    frequency-mismatch attenuation). aniso overrides the per-kernel anisotropy
    of the truncation distance; by default the kernel set's r1/r2 are used.
    Points outside every kernel's support are exactly zero.
    """
    cfg = cfg or SampleConfig()
    out = np.zeros(grid.shape, dtype=complex)
    if len(kernels) == 0:
        return ComplexField(grid, out)

    X, Y = grid.points()
    if orient is not None:
        dhat = direction(orient.theta_hat)  # (ny, nx, 2)
    two_pi_om = 2.0 * np.pi * kernels.omega
    beta, alpha, omega = kernels.beta, kernels.alpha, kernels.omega
    delta_max = cfg.support_radius(beta)

    for j in range(len(kernels)):
        a = aniso or Anisotropy(kernels.r1[j], kernels.r2[j])
        reach = delta_max / min(a.r1, a.r2)
        i0 = max(0, int(np.floor((kernels.x0[j, 0] - reach - grid.origin[0]) / grid.h)))
        i1 = min(grid.nx, int(np.ceil((kernels.x0[j, 0] + reach - grid.origin[0]) / grid.h)) + 1)
        j0 = max(0, int(np.floor((kernels.x0[j, 1] - reach - grid.origin[1]) / grid.h)))
        j1 = min(grid.ny, int(np.ceil((kernels.x0[j, 1] + reach - grid.origin[1]) / grid.h)) + 1)
        if i0 >= i1 or j0 >= j1:
            continue
        vx = X[j0:j1, i0:i1] - kernels.x0[j, 0]
        vy = Y[j0:j1, i0:i1] - kernels.x0[j, 1]
        delta = aniso_norm(np.stack([vx, vy], axis=-1), kernels.theta[j], a)
        inside = delta < delta_max
        if not inside.any():
            continue
        d = kernels.d[j]
        expo = -(beta**2) * delta**2
        if orient is not None:
            lx = omega * (d[0] - dhat[j0:j1, i0:i1, 0])
            ly = omega * (d[1] - dhat[j0:j1, i0:i1, 1])
            expo = expo - np.pi**2 * (lx**2 + ly**2) + 2j * alpha * (lx * vx + ly * vy)
        contrib = np.exp(expo / (alpha + beta)) * np.exp(
            1j * (two_pi_om * (d[0] * vx + d[1] * vy) + kernels.phi[j])
        )
        out[j0:j1, i0:i1] += np.where(inside, contrib, 0.0)
    return ComplexField(grid, out)


def to_phase(field: ComplexField, cfg: SampleConfig | None = None) -> tuple[ScalarField, np.ndarray]:
    """Instantaneous phase in [-pi, pi] plus a mask of phase-undefined samples.

    The branch cut at the negative real axis maps to +pi; samples with near-zero
    magnitude get phase 0 and are flagged singular.
    """
    cfg = cfg or SampleConfig()
    phase = np.angle(field.values)
    neg_axis = (phase == -np.pi)
    phase = np.where(neg_axis, np.pi, phase)
    singular = np.abs(field.values) < cfg.singular_threshold
    phase = np.where(singular, 0.0, phase)
    return ScalarField(field.grid, phase), singular


def upscale_complex(field: ComplexField, factor: int) -> ComplexField:
    """Bicubic upscale onto the nested refined grid; factor 1 is the identity."""
    if factor < 1:
        raise ValueError(f"upscale factor must be >= 1, got {factor}")
    if factor == 1:
        return ComplexField(field.grid, field.values.copy())
    return ComplexField(field.grid.refine(factor), bicubic_upsample(field.values, factor))
