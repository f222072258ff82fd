"""End-to-end dehomogenisation pipeline and contour export.

Ties all stages together: resolution planning, per-layer phase alignment and
sampling, branch detection on the first intermediate grid, branch repair on
the second, thickness thresholding and layer union, boundary smoothing, and
marching-squares contour extraction of the final binary raster.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .core import (
    Anisotropy,
    ComplexField,
    Grid,
    ScalarField,
    bilinear_upsample,
    wrap_angle,
)
from .ingest import (
    SOLID_THRESHOLD,
    CoarseSolution,
    build_indicators,
    build_kernels,
)
from .align import AlignConfig, align, alignment_order, build_neighbourhoods, thin_member_blend
from .sample import sample_field, to_phase, upsample_orientations, upscale_complex
from .branches import BranchPoint, connect_branches, find_branch_points
from .boundary import (
    BoundaryFields,
    boundary_thickness,
    build_boundary_kernels,
    cut_and_threshold,
    sample_boundary,
    smooth_solid_regions,
    upsample_indicator,
)

ADVISORY_BAND = (24.0, 80.0)  # outside this frequency band periodicity may drift
DEFAULT_H_MIN = 3  # minimal feature size on the final raster, in pixels
DEFAULT_MAX_PIXELS = 10**8


@dataclass
class ResolutionPlan:
    """Integer upscaling factors between the coarse, intermediate and fine grids."""

    h_c: float
    omega: float
    mu_min: float
    h_min: int
    i_up1: int  # coarse -> first sampling grid
    i_up2: int  # coarse -> branch-repair grid (multiple of i_up1)
    f_up: int  # branch-repair grid -> final raster

    @property
    def full_factor(self) -> int:
        return self.f_up * self.i_up2

    @property
    def omega_hat_px(self) -> float:
        """Pixels per wavelength on the i_up2 grid."""
        return self.i_up2 / (self.h_c * self.omega)

    def as_dict(self) -> dict:
        return {
            "omega": self.omega,
            "i_up1": self.i_up1,
            "i_up2": self.i_up2,
            "f_up": self.f_up,
            "full_factor": self.full_factor,
            "h_min": self.h_min,
            "omega_hat_px": self.omega_hat_px,
        }


def plan_resolutions(
    h_c: float,
    omega: float,
    mu_min: float,
    h_min: int = DEFAULT_H_MIN,
    n_c: int | None = None,
    max_pixels: int = DEFAULT_MAX_PIXELS,
) -> ResolutionPlan:
    """Smallest integer factors resolving the wave and the thinnest members.

    The first grid needs i_up1 >= h_c*omega/0.1 samples per coarse element,
    the second at least 2*h_c*omega/mu_min (rounded up to a multiple of i_up1
    so the upscale nests), and the final factor gives the thinnest stripe
    h_min pixels.
    """
    if h_c <= 0 or omega <= 0 or not (0 < mu_min < 1) or h_min < 1:
        raise ValueError("resolution planning needs positive h_c, omega, h_min and mu_min in (0, 1)")
    eps = 1e-9  # float fuzz just above an integer must not bump the ceiling
    i_up1 = max(1, math.ceil(h_c * omega / 0.1 - eps))
    need2 = 2.0 * h_c * omega / mu_min
    i_up2 = i_up1 * max(1, math.ceil(need2 / i_up1 - eps))
    omega_hat = i_up2 / (h_c * omega)
    f_up = max(1, math.ceil(h_min / (omega_hat * mu_min) - eps))
    plan = ResolutionPlan(h_c, omega, mu_min, h_min, i_up1, i_up2, f_up)
    if n_c is not None and (n_c * plan.full_factor) ** 2 > max_pixels:
        raise ValueError(
            f"planned raster {n_c * plan.full_factor}^2 exceeds the "
            f"{max_pixels} pixel cap (factors {i_up1}/{i_up2}/{f_up})"
        )
    return plan


@dataclass
class PipelineConfig:
    omega: float
    iterations: int = 20  # phase-alignment sweeps
    h_min: int = DEFAULT_H_MIN
    boundary: bool = True
    branch_repair: bool = True
    k_max: int = 3
    phase_shift: float = 0.0  # global shift added to all aligned phases
    extended: bool = True  # opposing-direction flip rule in alignment
    max_pixels: int = DEFAULT_MAX_PIXELS


@dataclass
class DesignRaster:
    grid: Grid
    solid: np.ndarray  # bool (ny, nx)


@dataclass
class Diagnostics:
    plan: ResolutionPlan
    timings_ms: dict
    flags: dict
    branch_points: list  # per layer, list of BranchPoint
    boundary: BoundaryFields | None = None


def threshold_layer(rho: ScalarField, mu: ScalarField) -> np.ndarray:
    """Solid where the density reaches 1 - mu.

    Stripes taper to thickness mu times the wavelength; in the ramp where the
    upsampled mu decays towards void they thin out instead of being clipped,
    which lets them meet the boundary strip. The smoothed indicator applied
    afterwards trims anything left in the far exterior.
    """
    return rho.values >= 1.0 - mu.values


def _snap_points(
    points: list[BranchPoint], field: ComplexField, omega: float
) -> list[BranchPoint]:
    """Move branch points to the nearest field-magnitude minimum on this grid.

    Detection ran on a coarser grid; each point searches a half-wavelength
    disc for the deepest sample. Points landing on the same sample merge.
    """
    mag = np.abs(field.values)
    grid = field.grid
    r = (0.5 / omega) / grid.h
    out, seen = [], set()
    for bp in points:
        ic = (bp.gamma[0] - grid.origin[0]) / grid.h
        jc = (bp.gamma[1] - grid.origin[1]) / grid.h
        j0 = max(0, int(np.floor(jc - r)))
        j1 = min(grid.ny, int(np.ceil(jc + r)) + 1)
        i0 = max(0, int(np.floor(ic - r)))
        i1 = min(grid.nx, int(np.ceil(ic + r)) + 1)
        if j0 >= j1 or i0 >= i1:
            continue
        jj, ii = np.mgrid[j0:j1, i0:i1]
        disc = (ii - ic) ** 2 + (jj - jc) ** 2 <= r**2
        sub = np.where(disc, mag[j0:j1, i0:i1], np.inf)
        if not np.isfinite(sub).any():
            continue
        k = np.argmin(sub)
        j, i = j0 + k // sub.shape[1], i0 + k % sub.shape[1]
        if (j, i) in seen:
            continue
        seen.add((j, i))
        gamma = np.array([grid.origin[0] + i * grid.h, grid.origin[1] + j * grid.h])
        out.append(BranchPoint(gamma=gamma, ij=(j, i)))
    return out


def _block_upsample(mask: np.ndarray, factor: int) -> np.ndarray:
    return np.kron(mask, np.ones((factor, factor), dtype=bool))


def dehomogenise(sol: CoarseSolution, cfg: PipelineConfig) -> tuple[DesignRaster, Diagnostics]:
    """Run the full pipeline and return the binary raster plus diagnostics."""
    t_start = time.perf_counter()
    timings = {k: 0.0 for k in ("align", "sample", "branch", "boundary", "assemble")}
    grid = sol.grid
    plan = plan_resolutions(
        grid.h, cfg.omega, sol.mu_min, cfg.h_min,
        n_c=max(grid.nx, grid.ny), max_pixels=cfg.max_pixels,
    )
    fine = grid.refine(plan.full_factor)
    grid1 = grid.refine(plan.i_up1)
    inds = build_indicators(sol)
    flags = {
        "boundary": cfg.boundary,
        "branch_repair": cfg.branch_repair,
        "periodicity_advisory": not (ADVISORY_BAND[0] <= cfg.omega <= ADVISORY_BAND[1]),
    }

    # boundary wave, smoothed indicator and solid-region mask on the fine grid
    t0 = time.perf_counter()
    boundary_pos = boundary_tau = boundary_coh = None
    if cfg.boundary:
        bset = build_boundary_kernels(sol, inds, cfg.omega)
        g_bar = sample_boundary(bset, fine)
        s_bar = upsample_indicator(inds.s_bar, grid, fine)
        mu_hat = boundary_thickness(sol, fine)
        bfields = cut_and_threshold(g_bar, s_bar, mu_hat, cfg.omega, bset.omega_bar)
        solid_mask = smooth_solid_regions(sol, inds, fine, cfg.omega).values == 1.0
        jj, ii = np.nonzero(bset.active)
        if len(jj):
            X, Y = grid.points()
            boundary_pos = np.column_stack([X[jj, ii], Y[jj, ii]])
            boundary_tau = bset.tau_bar[jj, ii]
            boundary_coh = bset.w[jj, ii] >= 0.0
        indicator = bfields.s.values == 1.0
        strip = bfields.ds.values == 1.0
    else:
        bfields = None
        indicator = _block_upsample(inds.s == 1.0, plan.full_factor)
        strip = np.zeros(fine.shape, dtype=bool)
        solid_mask = _block_upsample(inds.sum_mu >= SOLID_THRESHOLD, plan.full_factor)
    timings["boundary"] += time.perf_counter() - t0

    union = np.zeros(fine.shape, dtype=bool)
    branch_points = []
    step2 = plan.i_up2 // plan.i_up1
    acfg = AlignConfig(iterations=cfg.iterations, extended=cfg.extended)
    for l, ks in enumerate(build_kernels(sol, inds, cfg.omega)):
        if len(ks) == 0:
            branch_points.append([])
            continue
        lay = sol.layers[l]

        t0 = time.perf_counter()
        thin_member_blend(ks, inds)
        nbhd = build_neighbourhoods(ks, acfg)
        order = alignment_order(ks, boundary_pos, boundary_tau, boundary_coh)
        align(ks, nbhd, order, acfg)
        timings["align"] += time.perf_counter() - t0

        t0 = time.perf_counter()
        theta_field = ScalarField(grid, lay.theta)
        orient1 = upsample_orientations(theta_field, grid1)
        g1 = sample_field(ks, grid1, orient1, aniso=Anisotropy())
        timings["sample"] += time.perf_counter() - t0

        t0 = time.perf_counter()
        active1 = _block_upsample(inds.z[l] > 0.0, plan.i_up1)
        points = find_branch_points(g1, active1)
        g2 = upscale_complex(g1, step2)
        phase2, _ = to_phase(g2)
        if cfg.phase_shift != 0.0:
            # shifting the sampled wave field, not the kernel phases, keeps the
            # branch-point set stationary under the shift
            phase2 = ScalarField(phase2.grid, wrap_angle(phase2.values + cfg.phase_shift))
        orient2 = upsample_orientations(theta_field, g2.grid)
        mu2 = upsample_indicator(lay.mu, grid, g2.grid)
        points = _snap_points(points, g2, cfg.omega)
        rho2, points = connect_branches(
            g2, phase2, orient2, mu2, cfg.omega,
            k_max=cfg.k_max, close=cfg.branch_repair, pinch=cfg.branch_repair,
            points=points,
        )
        branch_points.append(points)
        timings["branch"] += time.perf_counter() - t0

        t0 = time.perf_counter()
        rho_f = ScalarField(fine, bilinear_upsample(rho2.values, plan.f_up))
        mu_f = upsample_indicator(lay.mu, grid, fine)
        union |= threshold_layer(rho_f, mu_f)
        timings["assemble"] += time.perf_counter() - t0

    t0 = time.perf_counter()
    design = (union & indicator) | strip | solid_mask
    timings["assemble"] += time.perf_counter() - t0
    flags["empty"] = not design.any()

    total = time.perf_counter() - t_start
    timings_ms = {f"t_{k}_ms": v * 1000.0 for k, v in timings.items()}
    timings_ms["t_total_ms"] = total * 1000.0
    diag = Diagnostics(
        plan=plan,
        timings_ms=timings_ms,
        flags=flags,
        branch_points=branch_points,
        boundary=bfields,
    )
    return DesignRaster(grid=fine, solid=design), diag


# marching squares: per-cell directed segments (from-edge, to-edge) chosen so
# the solid region (value >= level) lies on the left of the travel direction
_MS_CASES = {
    1: [("B", "L")],
    2: [("R", "B")],
    3: [("R", "L")],
    4: [("T", "R")],
    6: [("T", "B")],
    7: [("T", "L")],
    8: [("L", "T")],
    9: [("B", "T")],
    11: [("R", "T")],
    12: [("L", "R")],
    13: [("B", "R")],
    14: [("L", "B")],
}


def extract_contours(rho: ScalarField, level: float) -> list[np.ndarray]:
    """Closed level-set polylines of the field, solid side on the left.

    Marching squares over sample centres with linear edge interpolation; the
    field is padded with a below-level ring so every contour closes. Saddle
    cells split according to the centre (corner-mean) value.
    """
    grid = rho.grid
    v = np.pad(rho.values, 1, mode="constant", constant_values=min(level - 1.0, 0.0))
    inside = v >= level
    ny, nx = v.shape

    def sample_pos(j, i):
        return (
            grid.origin[0] + (i - 1) * grid.h,
            grid.origin[1] + (j - 1) * grid.h,
        )

    crossings = {}

    def crossing(axis, j, i):
        key = (axis, j, i)
        if key not in crossings:
            j2, i2 = (j, i + 1) if axis == "h" else (j + 1, i)
            va, vb = v[j, i], v[j2, i2]
            t = (level - va) / (vb - va)
            xa, ya = sample_pos(j, i)
            xb, yb = sample_pos(j2, i2)
            crossings[key] = (xa + t * (xb - xa), ya + t * (yb - ya))
        return crossings[key]

    next_edge = {}
    for j in range(ny - 1):
        row0, row1 = inside[j], inside[j + 1]
        for i in np.nonzero(row0[:-1] | row0[1:] | row1[:-1] | row1[1:])[0]:
            code = (
                int(row0[i])
                | int(row0[i + 1]) << 1
                | int(row1[i + 1]) << 2
                | int(row1[i]) << 3
            )
            if code in (0, 15):
                continue
            if code == 5:
                centre = (v[j, i] + v[j, i + 1] + v[j + 1, i + 1] + v[j + 1, i]) / 4.0
                segs = [("B", "R"), ("T", "L")] if centre >= level else [("B", "L"), ("T", "R")]
            elif code == 10:
                centre = (v[j, i] + v[j, i + 1] + v[j + 1, i + 1] + v[j + 1, i]) / 4.0
                segs = [("L", "B"), ("R", "T")] if centre >= level else [("R", "B"), ("L", "T")]
            else:
                segs = _MS_CASES[code]
            edges = {
                "B": ("h", j, i),
                "T": ("h", j + 1, i),
                "L": ("v", j, i),
                "R": ("v", j, i + 1),
            }
            for a, b in segs:
                next_edge[edges[a]] = edges[b]

    contours = []
    while next_edge:
        start = next(iter(next_edge))
        loop = [start]
        key = next_edge.pop(start)
        while key != start:
            loop.append(key)
            key = next_edge.pop(key)
        pts = np.array([crossing(*k) for k in loop] + [crossing(*start)])
        contours.append(pts)
    return contours


def rasterise_contours(contours: list[np.ndarray], grid: Grid) -> np.ndarray:
    """Even-odd scanline fill of closed polylines, sampled at pixel centres."""
    out = np.zeros(grid.shape, dtype=bool)
    if not contours:
        return out
    segs = np.concatenate([np.stack([p[:-1], p[1:]], axis=1) for p in contours])
    x1, y1 = segs[:, 0, 0], segs[:, 0, 1]
    x2, y2 = segs[:, 1, 0], segs[:, 1, 1]
    keep = y1 != y2  # horizontal segments never cross a scanline
    x1, y1, x2, y2 = x1[keep], y1[keep], x2[keep], y2[keep]
    xs = grid.xs()
    for j, y in enumerate(grid.ys()):
        hit = ((y1 <= y) & (y2 > y)) | ((y2 <= y) & (y1 > y))
        if not hit.any():
            continue
        cx = x1[hit] + (y - y1[hit]) / (y2[hit] - y1[hit]) * (x2[hit] - x1[hit])
        cx.sort()
        out[j] = (np.searchsorted(cx, xs, side="right") % 2) == 1
    return out
