import numpy as np
import pytest

from phasor_dehom.core import ComplexField, Grid, ScalarField, bilinear_upsample, direction
from phasor_dehom.ingest import CoarseSolution, Layer, build_indicators
from phasor_dehom.boundary import (
    BoundaryFields,
    boundary_thickness,
    build_boundary_kernels,
    cut_and_threshold,
    sample_boundary,
    smooth_solid_regions,
)

CUT_AT_CONTOUR = 0.5 + 0.5 * np.tanh(1.0)  # cut-field value on the 1-contour


def slab_solution(nx=20, ny=20, h=0.05, mu=0.5, nlay=2, rows=(6, 14), theta=0.0):
    """Horizontal solid slab spanning all columns between the given rows."""
    layers = []
    for _ in range(nlay):
        m = np.zeros((ny, nx))
        m[rows[0] : rows[1], :] = mu / nlay
        layers.append(Layer(theta=np.full((ny, nx), theta), mu=m))
    return CoarseSolution(Grid(nx, ny, h), 0.05, layers)


class TestBuildBoundaryKernels:
    def test_region_and_active_sets(self):
        sol = slab_solution()
        inds = build_indicators(sol)
        bset = build_boundary_kernels(sol, inds, omega=24.0)
        assert bset.active[bset.region == 0].sum() == 0  # active subset of region
        # active kernels are material elements touching the indicator boundary
        assert bset.active[14, 10] == 0 and bset.active[13, 10] == 1
        assert bset.active[6, 10] == 1 and bset.active[10, 10] == 0

    def test_direction_is_inward_normal(self):
        sol = slab_solution()
        inds = build_indicators(sol)
        bset = build_boundary_kernels(sol, inds, omega=24.0)
        # top edge of the slab: inward means downward (-y)
        d_top = direction(np.array(bset.tau_bar[13, 10]))
        assert d_top @ np.array([0.0, -1.0]) > 0.9
        d_bot = direction(np.array(bset.tau_bar[6, 10]))
        assert d_bot @ np.array([0.0, 1.0]) > 0.9

    def test_omega_bar_formula(self):
        sol = slab_solution(nx=30, ny=30, h=1.0 / 30.0)
        inds = build_indicators(sol)
        bset = build_boundary_kernels(sol, inds, omega=48.0)
        assert bset.omega_bar == pytest.approx(min(30.0 / 4.0, 24.0))
        bset2 = build_boundary_kernels(sol, inds, omega=10.0)
        assert bset2.omega_bar == pytest.approx(5.0)

    @pytest.mark.parametrize(
        "total_mu,want",
        [(0.5, np.pi / 2), (0.2, 0.65 * np.pi)],
    )
    def test_phase_shift_chain_straight_edge(self, total_mu, want):
        sol = slab_solution(mu=total_mu)
        inds = build_indicators(sol)
        bset = build_boundary_kernels(sol, inds, omega=24.0)
        # mid-slab straight edge: uniform orientation (c1 = 1), both layers
        # active (c3 = 0), so phi_hat = (pi/2)(1.5 - sum_mu)
        assert bset.c1[13, 10] == pytest.approx(1.0, abs=1e-9)
        assert bset.c4[13, 10] == pytest.approx(0.0)
        assert bset.phi_hat[13, 10] == pytest.approx(want, abs=1e-9)

    def test_solid_element_gets_shallow_cut(self):
        sol = slab_solution(mu=1.0)
        inds = build_indicators(sol)
        bset = build_boundary_kernels(sol, inds, omega=24.0)
        assert bset.phi_hat[13, 10] == pytest.approx(np.pi / 8)

    def test_domain_edge_gets_shallow_cut(self):
        sol = slab_solution(rows=(0, 8))  # slab touches the bottom domain edge
        inds = build_indicators(sol)
        bset = build_boundary_kernels(sol, inds, omega=24.0)
        edge = bset.active & np.pad(
            np.zeros((18, 18), dtype=bool), 1, constant_values=True
        )
        assert edge.any()
        assert np.allclose(bset.phi_hat[edge], np.pi / 8)

    def test_phase_shift_monotone_in_material(self):
        prev = None
        for mu in (0.1, 0.3, 0.5, 0.7, 0.9):
            sol = slab_solution(mu=mu)
            inds = build_indicators(sol)
            bset = build_boundary_kernels(sol, inds, omega=24.0)
            val = bset.phi_hat[13, 10]
            if prev is not None:
                assert val < prev
            prev = val

    def test_anisotropy_straight_versus_corner(self):
        sol = slab_solution()
        inds = build_indicators(sol)
        bset = build_boundary_kernels(sol, inds, omega=24.0)
        assert bset.r1[13, 10] == pytest.approx(1.0 / 1.5)
        assert bset.r2[13, 10] == pytest.approx(1.0)
        # block corner: orientations swing ~90 degrees within the neighbourhood
        blocky = slab_solution()
        for lay in blocky.layers:
            lay.mu[:, :10] = 0.0  # slab becomes a block with a corner at (6..13, 10)
        binds = build_indicators(blocky)
        bb = build_boundary_kernels(blocky, binds, omega=24.0)
        assert bb.r1[13, 10] == pytest.approx(2.0)
        assert bb.r2[13, 10] == pytest.approx(0.5)

    def test_single_active_layer_correction_fires(self):
        # layer 0 active everywhere in the slab, layer 1 only in the left half:
        # near layer 1's boundary c3 = 1 on elements where only layer 0 is active
        sol = slab_solution(mu=0.5)
        sol.layers[1].mu[:, 10:] = 0.0
        inds = build_indicators(sol)
        bset = build_boundary_kernels(sol, inds, omega=24.0)
        assert bset.c3[13, 10] == 1.0  # just right of layer 1's edge
        assert bset.c3[13, 16] == 0.0  # far from it


def plane_wave_fields(n=128, omega_bar=6.0, s_bar_level=1.0):
    grid = Grid(n, n, 1.0 / n)
    X, Y = grid.points()
    g = np.exp(2j * np.pi * omega_bar * (0.5 - Y))  # phase 0 on y = 0.5
    return grid, ComplexField(grid, g), ScalarField(grid, np.full((n, n), s_bar_level))


class TestCutAndThreshold:
    def test_deep_interior(self):
        grid, g, s_bar = plane_wave_fields()
        mu_hat = ScalarField(grid, np.full(grid.shape, 0.3))
        out = cut_and_threshold(g, s_bar, mu_hat, omega=24.0, omega_bar=6.0)
        phase = np.angle(g.values)
        inside = np.sin(phase) < -1e-9
        assert np.all(out.s_cut.values[inside] == 0.0)
        assert np.all(out.s.values == 1.0)  # s_bar = 1 everywhere
        assert np.all(out.ds.values[inside] == 0.0)

    def test_value_on_contour(self):
        grid, g, s_bar = plane_wave_fields()
        mu_hat = ScalarField(grid, np.full(grid.shape, 0.3))
        out = cut_and_threshold(g, s_bar, mu_hat, omega=24.0, omega_bar=6.0)
        # nearest pixel to the 1-contour on its material side (phase >= 0)
        phase = np.angle(g.values[:, 0])
        jc = np.argmin(np.where(phase >= 0.0, np.abs(phase), np.inf))
        assert out.s_cut.values[jc, 0] == pytest.approx(
            0.5 + 0.5 * np.tanh(np.sin(phase[jc] + np.pi / 2)), abs=1e-12
        )
        assert abs(out.s_cut.values[jc, 0] - CUT_AT_CONTOUR) < 0.01

    def test_far_exterior_stays_void(self):
        grid = Grid(16, 16, 1.0 / 16)
        g = ComplexField(grid, np.zeros(grid.shape, dtype=complex))
        s_bar = ScalarField(grid, np.zeros(grid.shape))
        mu_hat = ScalarField(grid, np.full(grid.shape, 0.3))
        out = cut_and_threshold(g, s_bar, mu_hat, omega=24.0, omega_bar=6.0)
        assert np.all(out.s.values == 0.0)
        assert np.all(out.ds.values == 0.0)

    def test_strip_width_matches_threshold(self):
        # solid half-plane below y = 0.5, wave 1-contour on the interface: the
        # only surviving strip is the band touching the void, one per column
        omega, omega_bar, mu_val = 24.0, 6.0, 0.3
        n = 512
        grid, g, _ = plane_wave_fields(n=n, omega_bar=omega_bar)
        s_bar = ScalarField(grid, np.where(grid.points()[1] < 0.5, 1.0, 0.0))
        mu_hat = ScalarField(grid, np.full((n, n), mu_val))
        out = cut_and_threshold(g, s_bar, mu_hat, omega=omega, omega_bar=omega_bar)
        want = 2 * mu_val / omega  # strip thickness
        # interior columns: edge columns keep their bands (domain edge counts
        # as a boundary), interior columns keep only the contour band
        for i in (n // 3, n // 2, 2 * n // 3):
            col = out.ds.values[:, i]
            runs = np.diff(
                np.flatnonzero(np.diff(np.concatenate([[0], col, [0]]))).reshape(-1, 2)
            )
            assert runs.shape[0] == 1  # deeper wave periods form no strip
            assert abs(runs[0, 0] / n - want) <= 1.5 / n

    def test_strip_inside_structure(self):
        grid, g, _ = plane_wave_fields()
        s_bar = ScalarField(grid, np.where(grid.points()[1] < 0.5, 1.0, 0.0))
        mu_hat = ScalarField(grid, np.full(grid.shape, 0.4))
        out = cut_and_threshold(g, s_bar, mu_hat, omega=24.0, omega_bar=6.0)
        assert np.all(out.s.values[out.ds.values == 1.0] == 1.0)
        assert set(np.unique(out.s.values)) <= {0.0, 1.0}
        assert set(np.unique(out.ds.values)) <= {0.0, 1.0}


class TestBoundarySampling:
    def test_empty_active_set_zero_field(self):
        sol = slab_solution(mu=0.0)  # void everywhere
        inds = build_indicators(sol)
        bset = build_boundary_kernels(sol, inds, omega=24.0)
        fine = Grid(40, 40, 0.025)
        field = sample_boundary(bset, fine)
        assert np.all(field.values == 0.0)

    def test_wave_positive_inside_straight_edge(self):
        sol = slab_solution(mu=0.5)
        inds = build_indicators(sol)
        bset = build_boundary_kernels(sol, inds, omega=24.0)
        fine = sol.grid.refine(4)
        field = sample_boundary(bset, fine)
        phase = np.angle(field.values)
        # just inside the slab's top edge the sine of the wave is positive
        j_in = int(13.5 * 4)  # fine row inside element row 13
        assert np.median(np.sin(phase[j_in, 20:60])) > 0.0


class TestBoundaryThickness:
    def test_clamped_max_thickness(self):
        sol = slab_solution(mu=0.5)
        sol.layers[0].mu[8, :] = 0.01
        sol.layers[1].mu[8, :] = 0.01
        fine = sol.grid.refine(2)
        mu_hat = boundary_thickness(sol, fine)
        assert mu_hat.values.max() <= 1.0
        assert mu_hat.values.min() >= sol.mu_min - 1e-12


class TestSmoothSolidRegions:
    def test_no_solid_region(self):
        sol = slab_solution(mu=0.5)
        inds = build_indicators(sol)
        fine = sol.grid.refine(4)
        out = smooth_solid_regions(sol, inds, fine, omega=24.0)
        assert np.all(out.values == 0.0)

    def test_block_containment(self):
        sol = slab_solution(nx=20, ny=20, mu=0.0)
        for lay in sol.layers:
            lay.mu[7:13, 7:13] = 0.5  # 6x6 fully solid block (sum = 1.0)
        inds = build_indicators(sol)
        fine = sol.grid.refine(8)
        out = smooth_solid_regions(sol, inds, fine, omega=24.0)
        vals = out.values
        assert set(np.unique(vals)) <= {0.0, 1.0}
        # deep interior of the block stays solid
        assert np.all(vals[9 * 8 : 11 * 8, 9 * 8 : 11 * 8] == 1.0)
        # far outside stays void (more than one element beyond the filtered band)
        assert np.all(vals[: 5 * 8, :] == 0.0)
        assert np.all(vals[:, : 5 * 8] == 0.0)
        # the mask covers at least the block interior and at most the filtered band
        area = vals.mean() * 400  # in coarse-element units
        assert 6 * 6 * 0.5 <= area <= 8 * 8 * 1.5

    def test_full_solid_domain(self):
        sol = slab_solution(nx=12, ny=12, mu=1.0, rows=(0, 12))
        inds = build_indicators(sol)
        fine = sol.grid.refine(6)
        out = smooth_solid_regions(sol, inds, fine, omega=24.0)
        inner = out.values[3 * 6 : 9 * 6, 3 * 6 : 9 * 6]
        assert np.all(inner == 1.0)
