"""Boundary kernels, smoothing cut-field and variable-thickness strips.

Staircase artefacts of the upsampled indicator are removed by a dedicated
layer of phasor kernels riding along the structural boundary: their wave's
1-contour defines a smooth replacement boundary, a tanh cut-field thresholds
the filtered indicator against it, and a phase band of the same wave yields a
boundary strip whose thickness follows the local lamination thickness. The
same pipeline applied to the fully-solid indicator smooths solid regions.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import (
    ComplexField,
    Grid,
    ScalarField,
    bilinear_sample,
    direction,
    heaviside,
    mean_filter_3x3,
    sobel_gradient,
    to_triangular,
)
from .ingest import SOLID_THRESHOLD, CoarseSolution, IndicatorSet, KernelSet
from .sample import SampleConfig, sample_field, to_phase

ARG_GUARD = 1e-12  # below this magnitude a complex average keeps the prior angle
UNIFORM_DOT = 0.95  # orientation-agreement threshold for bandwidth/alignment gates
BLEND_KNEE = 0.75  # |w| above which the nearest-layer blend engages


@dataclass
class BoundaryKernelSet:
    """Per-element boundary-kernel state on the coarse grid.

    All arrays are (ny, nx); only entries inside the region mask are
    meaningful, and only active elements carry kernels.
    """

    grid: Grid
    omega: float  # structural frequency the boundary wave derives from
    omega_bar: float  # boundary wave frequency
    region: np.ndarray  # bool, elements with a nonzero indicator gradient
    active: np.ndarray  # bool, kernel-carrying subset of region
    tau: np.ndarray  # raw gradient orientation
    w: np.ndarray  # signed alignment dot with the nearest lamination layer
    tau_bar: np.ndarray  # smoothed orientation
    c1: np.ndarray
    c2: np.ndarray
    c3: np.ndarray
    c4: np.ndarray
    delta_s: np.ndarray
    phi_hat: np.ndarray  # phase shift per element
    r1: np.ndarray
    r2: np.ndarray
    s_bar: np.ndarray  # filtered material indicator driving the cut

    def kernels(self) -> KernelSet:
        """Active boundary kernels as a sampleable flat kernel set."""
        jj, ii = np.nonzero(self.active)
        X, Y = self.grid.points()
        theta = self.tau_bar[jj, ii]
        n = len(theta)
        return KernelSet(
            layer=-1,
            grid=self.grid,
            omega=self.omega_bar,
            beta=self.omega_bar / self.grid.h,
            alpha=self.omega_bar / self.grid.h,
            x0=np.column_stack([X[jj, ii], Y[jj, ii]]) if n else np.zeros((0, 2)),
            d=direction(theta) if n else np.zeros((0, 2)),
            theta=theta,
            phi=self.phi_hat[jj, ii],
            elem=jj * self.grid.nx + ii,
            dkappa=np.zeros(n),
            r1=self.r1[jj, ii],
            r2=self.r2[jj, ii],
        )


@dataclass
class BoundaryFields:
    """Fine-grid outputs of the boundary stage."""

    g_bar: ComplexField  # boundary wave
    s_bar: ScalarField  # upsampled filtered indicator
    s_cut: ScalarField  # tanh cut-field
    s: ScalarField  # smoothed binary indicator
    ds: ScalarField  # binary boundary strip, subset of s
    mu_hat: ScalarField  # boundary thickness


def _edge_ring(shape) -> np.ndarray:
    edge = np.zeros(shape, dtype=bool)
    edge[0, :] = edge[-1, :] = True
    edge[:, 0] = edge[:, -1] = True
    return edge


def _smooth_orientation(tau, w_tilde, region, order):
    """One Gauss-Seidel pass of 3x3 orientation averaging, flips handled.

    Neighbour angles enter a complex average weighted by their blend
    confidence; a neighbour pointing against the centre's current direction is
    rotated by pi first. Near-zero averages keep the prior angle.
    """
    ny, nx = tau.shape
    tau_bar = tau.copy()
    weight = (w_tilde + 1.0) / 2.0
    for j, i in order:
        j0, j1 = max(0, j - 1), min(ny, j + 2)
        i0, i1 = max(0, i - 1), min(nx, i + 2)
        nb = region[j0:j1, i0:i1]
        if not nb.any():
            continue
        tm = tau_bar[j0:j1, i0:i1][nb]
        wm = weight[j0:j1, i0:i1][nb]
        de = direction(tau_bar[j, i])
        flip = (direction(tm) @ de) < 0.0
        z = np.sum(wm * np.exp(1j * (tm + np.pi * flip)))
        if abs(z) > ARG_GUARD:
            tau_bar[j, i] = np.angle(z)
    return tau_bar


def _neighbour_min_dot(tau_bar, region):
    """Per-element minimum direction dot over the 3x3 in-region neighbourhood."""
    ny, nx = tau_bar.shape
    out = np.ones((ny, nx))
    d = direction(tau_bar)
    for j, i in zip(*np.nonzero(region)):
        j0, j1 = max(0, j - 1), min(ny, j + 2)
        i0, i1 = max(0, i - 1), min(nx, i + 2)
        nb = region[j0:j1, i0:i1]
        dots = d[j0:j1, i0:i1][nb] @ d[j, i]
        out[j, i] = dots.min()
    return out


def build_boundary_kernels(
    sol: CoarseSolution,
    inds: IndicatorSet,
    omega: float,
    region_kind: str = "structure",
) -> BoundaryKernelSet:
    """Derive boundary kernel orientations, phase shifts and bandwidths.

    region_kind "structure" follows the material indicator; "solid" runs the
    same chain on the fully-solid indicator (lamination corrections off) for
    solid-region smoothing.
    """
    grid = sol.grid
    ny, nx = grid.shape
    omega_bar = min(1.0 / (4.0 * grid.h), omega / 2.0)
    sum_mu = inds.sum_mu

    if region_kind == "structure":
        s = inds.s
        s_tilde = inds.s_tilde
        s_hat_tilde = inds.s_hat_tilde
        s_bar = inds.s_bar
        thetas = [lay.theta for lay in sol.layers]
        s_tilde_layer = inds.s_tilde_layer
    elif region_kind == "solid":
        s = (sum_mu >= SOLID_THRESHOLD).astype(float)
        s_tilde = mean_filter_3x3(s, padding="zero")
        s_hat_tilde = s * s_tilde
        s_bar = mean_filter_3x3(s, padding="replicate")
        thetas = []
        s_tilde_layer = []
    else:
        raise ValueError(f"unknown region kind {region_kind!r}")

    gx, gy = sobel_gradient(s_hat_tilde)
    region = np.hypot(gx, gy) > 1e-12
    # the gradient points into the material; tau's direction vector matches it
    tau = np.where(region, np.arctan2(-gy, gx), 0.0)

    # blend towards the best-aligned lamination orientation where agreement is
    # strong; the signed dot w also orders the smoothing pass
    w = np.zeros((ny, nx))
    if thetas:
        dots = np.stack(
            [np.cos(tau) * np.cos(th) + np.sin(tau) * np.sin(th) for th in thetas]
        )
        best = np.argmax(np.abs(dots), axis=0)
        jj, ii = np.mgrid[0:ny, 0:nx]
        w = np.where(region, dots[best, jj, ii], 0.0)
        theta_best = np.choose(best, thetas)
        w_hat = heaviside(w, 0.0)
        w_tilde = np.maximum(np.abs(w) - BLEND_KNEE, 0.0) / BLEND_KNEE
        z = (1.0 - w_tilde) * np.exp(1j * tau) + w_tilde * np.exp(
            1j * (theta_best + w_hat * np.pi)
        )
        tau = np.where(region & (np.abs(z) > ARG_GUARD), np.angle(z), tau)
    w_tilde = np.maximum(np.abs(w) - BLEND_KNEE, 0.0) / BLEND_KNEE

    flat = np.flatnonzero(region)
    order_idx = flat[np.argsort(np.abs(w).ravel()[flat], kind="stable")]
    order = [(e // nx, e % nx) for e in order_idx]
    tau_bar = _smooth_orientation(tau, w_tilde, region, order)

    min_dot = _neighbour_min_dot(tau_bar, region)
    c1 = np.where(region, (min_dot + 1.0) / 2.0, 0.0)
    c2 = np.maximum(sum_mu, 0.5 * (1.0 - c1))
    if thetas:
        align = np.max(
            np.abs(
                np.stack(
                    [
                        np.cos(tau_bar) * np.cos(th) + np.sin(tau_bar) * np.sin(th)
                        for th in thetas
                    ]
                )
            ),
            axis=0,
        )
        delta_tau = (align > UNIFORM_DOT).astype(float)
        stl = np.stack(s_tilde_layer)
        c3 = np.where(
            inds.s_bar > 0.0,
            (stl.min(axis=0) < inds.s_bar) * (stl.sum(axis=0) > inds.s_bar),
            0.0,
        ).astype(float)
    else:
        delta_tau = np.zeros((ny, nx))
        c3 = np.zeros((ny, nx))
    c4 = delta_tau * sum_mu * c3
    delta_s = c2 * (1.0 - c4) - 0.5
    shallow = (sum_mu >= SOLID_THRESHOLD) | _edge_ring((ny, nx))
    phi_hat = np.where(shallow, np.pi / 8.0, (np.pi / 2.0) * (1.0 - delta_s))

    uniform = (min_dot >= UNIFORM_DOT).astype(float)
    r1 = 1.0 / (0.5 + uniform)
    r2 = np.minimum(1.0 / r1, 1.0)

    active = region & (s == 1.0) & (s_tilde < 1.0)
    return BoundaryKernelSet(
        grid=grid,
        omega=float(omega),
        omega_bar=float(omega_bar),
        region=region,
        active=active,
        tau=tau,
        w=w,
        tau_bar=tau_bar,
        c1=c1,
        c2=c2,
        c3=c3,
        c4=c4,
        delta_s=delta_s,
        phi_hat=phi_hat,
        r1=r1,
        r2=r2,
        s_bar=s_bar,
    )


def sample_boundary(
    bset: BoundaryKernelSet, grid: Grid, cfg: SampleConfig | None = None
) -> ComplexField:
    """Boundary wave on the target grid; no phase alignment, no orientation
    attenuation (every sample matches the kernel's own orientation)."""
    return sample_field(bset.kernels(), grid, None, cfg)


def upsample_indicator(values: np.ndarray, coarse: Grid, fine: Grid) -> ScalarField:
    """Bilinear upsample of a coarse per-element field onto a finer grid."""
    X, Y = fine.points()
    ix = (X - coarse.origin[0]) / coarse.h
    iy = (Y - coarse.origin[1]) / coarse.h
    return ScalarField(fine, bilinear_sample(values, ix, iy))


def boundary_thickness(sol: CoarseSolution, grid: Grid) -> ScalarField:
    """Desired strip thickness: the thickest local lamination, clamped."""
    mu = np.clip(np.max([lay.mu for lay in sol.layers], axis=0), sol.mu_min, 1.0)
    return upsample_indicator(mu, sol.grid, grid)


def cut_and_threshold(
    g_bar: ComplexField,
    s_bar: ScalarField,
    mu_hat: ScalarField,
    omega: float,
    omega_bar: float,
    cfg: SampleConfig | None = None,
) -> BoundaryFields:
    """Threshold the filtered indicator against the boundary wave.

    The cut-field raises the indicator on the material side of the wave's
    1-contour; it only acts where the filtered indicator is positive and the
    wave exists, so the periodic phase bands further out cannot create
    free-floating stripes. The strip is the phase band of the wave whose
    width matches the requested thickness, restricted to the smoothed solid.
    """
    cfg = cfg or SampleConfig()
    phase, singular = to_phase(g_bar, cfg)
    phi = phase.values
    sin_phi = np.sin(phi)
    present = ~singular & (s_bar.values > 0.0)

    s_cut = np.where(
        present & (sin_phi >= 0.0), 0.5 + 0.5 * np.tanh(np.sin(phi + np.pi / 2.0)), 0.0
    )
    s = heaviside(s_bar.values + s_cut, 0.5)
    threshold = 1.0 - 2.0 * omega_bar * mu_hat.values / omega
    # only the wave period adjacent to the void contour (or the domain edge)
    # forms the strip; later periods of the same wave must not
    grid = g_bar.grid
    void_or_edge = np.pad(s == 0.0, 1, constant_values=True)
    dist = ndimage.distance_transform_edt(~void_or_edge)[1:-1, 1:-1] * grid.h
    first_band = present & (dist <= 0.5 / omega_bar + grid.h)
    ds = (
        s
        * heaviside(s * to_triangular(phi), threshold)
        * heaviside(sin_phi, 0.0)
        * np.where(first_band, 1.0, 0.0)
    )
    return BoundaryFields(
        g_bar=g_bar,
        s_bar=s_bar,
        s_cut=ScalarField(grid, s_cut),
        s=ScalarField(grid, s),
        ds=ScalarField(grid, ds),
        mu_hat=mu_hat,
    )


def smooth_solid_regions(
    sol: CoarseSolution, inds: IndicatorSet, fine: Grid, omega: float
) -> ScalarField:
    """Smoothed binary mask of fully solid regions on the fine grid."""
    if not np.any(inds.sum_mu >= SOLID_THRESHOLD):
        return ScalarField(fine, np.zeros(fine.shape))
    bset = build_boundary_kernels(sol, inds, omega, region_kind="solid")
    g = sample_boundary(bset, fine)
    s_bar = upsample_indicator(bset.s_bar, sol.grid, fine)
    mu_hat = boundary_thickness(sol, fine)
    return cut_and_threshold(g, s_bar, mu_hat, omega, bset.omega_bar).s
