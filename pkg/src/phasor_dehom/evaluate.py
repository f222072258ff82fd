"""Design evaluation: plane-stress compliance, connectivity, periodicity.

A regular bilinear-quad FE model on the raster grid gives compliance and
volume; flood-fill connectivity and scanline wavelength statistics quantify
the structural integrity and stripe regularity of dehomogenised designs.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse import linalg as sla

from .core import Grid, ScalarField, direction

SOLID_EPS = 1e-3  # densities above this count as material for connectivity
CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


class EvaluationError(RuntimeError):
    pass


@dataclass
class Material:
    e: float = 1.0
    nu: float = 0.3
    e_void: float = 1e-9


@dataclass
class BCSpec:
    """Fixture regions and loads, as carried by a case file's "bc" block."""

    fixed: list
    loads: list
    material: Material

    @classmethod
    def from_dict(cls, bc: dict | None) -> "BCSpec":
        if not bc:
            raise EvaluationError("no boundary conditions given")
        mat = Material(
            e=float(bc.get("E", 1.0)),
            nu=float(bc.get("nu", 0.3)),
            e_void=float(bc.get("E_void", 1e-9 * float(bc.get("E", 1.0)))),
        )
        fixed = bc.get("fixed", [])
        loads = bc.get("loads", [])
        if not fixed or not loads:
            raise EvaluationError("bc needs at least one fixed region and one load")
        return cls(fixed=fixed, loads=loads, material=mat)


@dataclass
class Metrics:
    c: float
    v: float
    r: float | None = None
    components: int | None = None
    load_connected: bool | None = None
    wavelength_median_ratio: float | None = None

    @property
    def s(self) -> float:
        return self.c * self.v


def element_stiffness(e: float = 1.0, nu: float = 0.3) -> np.ndarray:
    """Plane-stress bilinear quad stiffness, nodes counterclockwise from the
    bottom-left corner, (x, y) dofs per node; independent of element size."""
    D = e / (1 - nu**2) * np.array([[1, nu, 0], [nu, 1, 0], [0, 0, (1 - nu) / 2]])
    g = 1.0 / np.sqrt(3.0)
    signs = [(-1, -1), (1, -1), (1, 1), (-1, 1)]
    ke = np.zeros((8, 8))
    for xi in (-g, g):
        for eta in (-g, g):
            B = np.zeros((3, 8))
            for k, (sx, sy) in enumerate(signs):
                dn_dx = 0.5 * sx * (1 + sy * eta)  # includes the 2/h jacobian at h=1
                dn_dy = 0.5 * sy * (1 + sx * xi)
                B[0, 2 * k] = dn_dx
                B[1, 2 * k + 1] = dn_dy
                B[2, 2 * k] = dn_dy
                B[2, 2 * k + 1] = dn_dx
            ke += 0.25 * (B.T @ D @ B)
    return ke


def _element_dofs(nx: int, ny: int) -> np.ndarray:
    """(nel, 8) dof indices per element, elements and nodes row-major."""
    jj, ii = np.mgrid[0:ny, 0:nx]
    n1 = (jj * (nx + 1) + ii).ravel()
    nodes = np.stack([n1, n1 + 1, n1 + nx + 2, n1 + nx + 1], axis=1)
    return np.repeat(2 * nodes, 2, axis=1) + np.tile([0, 1], 4)


def assemble_stiffness(density: np.ndarray, mat: Material) -> sparse.csr_matrix:
    """Global stiffness with density-scaled modulus, E_e = max(rho E, E_void)."""
    ny, nx = density.shape
    ke = element_stiffness(1.0, mat.nu)
    edof = _element_dofs(nx, ny)
    scale = np.maximum(density.ravel() * mat.e, mat.e_void)
    rows = np.repeat(edof, 8, axis=1).ravel().astype(np.int32)
    cols = np.tile(edof, (1, 8)).ravel().astype(np.int32)
    data = (scale[:, None] * ke.ravel()[None, :]).ravel()
    ndof = 2 * (nx + 1) * (ny + 1)
    return sparse.coo_matrix((data, (rows, cols)), shape=(ndof, ndof)).tocsr()


def _node_coords(grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    xs = grid.origin[0] - grid.h / 2 + grid.h * np.arange(grid.nx + 1)
    ys = grid.origin[1] - grid.h / 2 + grid.h * np.arange(grid.ny + 1)
    return xs, ys


def _select_nodes(sel: dict, grid: Grid) -> np.ndarray:
    """Node indices matched by an edge or box selector."""
    nx, ny = grid.nx, grid.ny
    xs, ys = _node_coords(grid)
    X, Y = np.meshgrid(xs, ys)
    if "edge" in sel:
        edge = sel["edge"]
        mask = np.zeros((ny + 1, nx + 1), dtype=bool)
        if edge == "left":
            mask[:, 0] = True
        elif edge == "right":
            mask[:, -1] = True
        elif edge == "bottom":
            mask[0, :] = True
        elif edge == "top":
            mask[-1, :] = True
        else:
            raise EvaluationError(f"unknown edge selector {edge!r}")
    elif "box" in sel:
        x0, y0, x1, y1 = sel["box"]
        mask = (X >= x0) & (X <= x1) & (Y >= y0) & (Y <= y1)
    else:
        raise EvaluationError(f"selector needs 'edge' or 'box': {sel}")
    return np.flatnonzero(mask.ravel())


def fixed_dofs(bc: BCSpec, grid: Grid) -> np.ndarray:
    dofs = []
    for sel in bc.fixed:
        nodes = _select_nodes(sel, grid)
        which = sel.get("dofs", "both")
        if which in ("x", "both"):
            dofs.append(2 * nodes)
        if which in ("y", "both"):
            dofs.append(2 * nodes + 1)
    if not dofs:
        raise EvaluationError("no fixed degrees of freedom")
    out = np.unique(np.concatenate(dofs))
    if out.size < 3:
        raise EvaluationError("need at least 3 fixed degrees of freedom")
    return out


def _solid_nodes(solid: np.ndarray) -> np.ndarray:
    """Boolean (ny+1, nx+1) mask of nodes touching at least one solid pixel."""
    ny, nx = solid.shape
    mask = np.zeros((ny + 1, nx + 1), dtype=bool)
    mask[:-1, :-1] |= solid
    mask[:-1, 1:] |= solid
    mask[1:, :-1] |= solid
    mask[1:, 1:] |= solid
    return mask


def load_vector(bc: BCSpec, grid: Grid, solid: np.ndarray | None = None) -> np.ndarray:
    """Nodal force vector; with a solid mask, loads attach to material nodes
    only (edge loads split over the material-adjacent edge nodes)."""
    f = np.zeros(2 * (grid.nx + 1) * (grid.ny + 1))
    xs, ys = _node_coords(grid)
    node_ok = None if solid is None else _solid_nodes(solid).ravel()
    for load in bc.loads:
        fx, fy = load["f"]
        if "at" in load:
            x, y = load["at"]
            nx1 = grid.nx + 1
            nodes = np.arange(nx1 * (grid.ny + 1))
            if node_ok is not None:
                nodes = nodes[node_ok]
            if nodes.size == 0:
                raise EvaluationError("insufficient constraints or disconnected load")
            d2 = (xs[nodes % nx1] - x) ** 2 + (ys[nodes // nx1] - y) ** 2
            n = nodes[np.argmin(d2)]
            f[2 * n] += fx
            f[2 * n + 1] += fy
        elif "edge" in load:
            nodes = _select_nodes({"edge": load["edge"]}, grid)
            if node_ok is not None:
                nodes = nodes[node_ok[nodes]]
            if nodes.size == 0:
                raise EvaluationError("insufficient constraints or disconnected load")
            f[2 * nodes] += fx / nodes.size
            f[2 * nodes + 1] += fy / nodes.size
        else:
            raise EvaluationError(f"load needs 'at' or 'edge': {load}")
    return f


def _load_pixels(bc: BCSpec, grid: Grid, solid: np.ndarray) -> list[tuple[int, int]]:
    """Solid pixel carrying each load; None entries mean the load sits on void."""
    out = []
    for load in bc.loads:
        if "at" in load:
            x, y = load["at"]
            i = int(np.clip(round((x - grid.origin[0]) / grid.h - 0.5), 0, grid.nx - 1))
            j = int(np.clip(round((y - grid.origin[1]) / grid.h - 0.5), 0, grid.ny - 1))
            cand = [
                (jj, ii)
                for jj in range(max(j - 1, 0), min(j + 2, grid.ny))
                for ii in range(max(i - 1, 0), min(i + 2, grid.nx))
            ]
        else:
            edge = load["edge"]
            if edge == "left":
                cand = [(jj, 0) for jj in range(grid.ny)]
            elif edge == "right":
                cand = [(jj, grid.nx - 1) for jj in range(grid.ny)]
            elif edge == "bottom":
                cand = [(0, ii) for ii in range(grid.nx)]
            elif edge == "top":
                cand = [(grid.ny - 1, ii) for ii in range(grid.nx)]
            else:
                raise EvaluationError(f"unknown edge selector {edge!r}")
        cand = [p for p in cand if solid[p]]
        out.append(cand[0] if cand else None)
    return out


def _anchored_labels(solid: np.ndarray, labels: np.ndarray, grid: Grid, bc: BCSpec) -> set:
    """Component labels that contain a pixel adjacent to a fixed node."""
    anchored = set()
    xs, ys = _node_coords(grid)
    nx1 = grid.nx + 1
    for sel in bc.fixed:
        for node in _select_nodes(sel, grid):
            x, y = xs[node % nx1], ys[node // nx1]
            i = int(np.clip(round((x - grid.origin[0]) / grid.h), 0, grid.nx - 1))
            j = int(np.clip(round((y - grid.origin[1]) / grid.h), 0, grid.ny - 1))
            for dj in (-1, 0):
                for di in (-1, 0):
                    jj = int(np.clip(j + dj, 0, grid.ny - 1))
                    ii = int(np.clip(i + di, 0, grid.nx - 1))
                    if solid[jj, ii]:
                        anchored.add(int(labels[jj, ii]))
    return anchored


def connectivity(solid: np.ndarray, grid: Grid, bc: BCSpec) -> tuple[int, bool]:
    """4-connected component count and whether every load reaches a support."""
    labels, n = ndimage.label(solid, structure=CROSS)
    if n == 0:
        return 0, False
    anchored = _anchored_labels(solid, labels, grid, bc)
    ok = True
    for px in _load_pixels(bc, grid, solid):
        if px is None or int(labels[px]) not in anchored:
            ok = False
    return int(n), ok


def _solve(K: sparse.csr_matrix, f: np.ndarray) -> np.ndarray:
    """Direct sparse solve of the reduced SPD system."""
    try:
        from cvxopt import cholmod, matrix, spmatrix
    except ImportError:
        return sla.spsolve(K, f)
    Kc = K.tocoo()
    A = spmatrix(Kc.data, Kc.row.astype(int), Kc.col.astype(int), Kc.shape)
    b = matrix(f)
    try:
        cholmod.linsolve(A, b)
    except ArithmeticError as exc:
        raise EvaluationError("stiffness system is singular") from exc
    return np.asarray(b).ravel()


def compliance(density: ScalarField, bc: BCSpec) -> tuple[float, float]:
    """FE compliance f.u and volume fraction of a density field in [0, 1]."""
    grid = density.grid
    vals = density.values
    solid = vals > SOLID_EPS
    if not solid.any():
        raise EvaluationError("insufficient constraints or disconnected load: no material")
    labels, _ = ndimage.label(solid, structure=CROSS)
    anchored = _anchored_labels(solid, labels, grid, bc)
    keep = solid & np.isin(labels, sorted(anchored))
    _, ok = connectivity(solid, grid, bc)
    if not ok:
        raise EvaluationError("insufficient constraints or disconnected load")

    # the solve runs on material-adjacent dofs only: soft-void dofs carry no
    # load and excluding them removes the 1e9 contrast from the system
    K = assemble_stiffness(vals, bc.material)
    f = load_vector(bc, grid, keep)
    fix = fixed_dofs(bc, grid)
    active = np.flatnonzero(np.repeat(_solid_nodes(keep).ravel(), 2))
    free = np.setdiff1d(active, fix)
    u = np.zeros(K.shape[0])
    u[free] = _solve(K[free][:, free].tocsr(), f[free])
    if not np.isfinite(u).all():
        raise EvaluationError("insufficient constraints or disconnected load")
    return float(f @ u), float(vals.mean())


def ratio(metrics: Metrics, reference: Metrics) -> float:
    """Compliance-volume ratio against a reference design."""
    if reference.s <= 0.0:
        raise EvaluationError("reference compliance-volume measure must be positive")
    return metrics.s / reference.s


def periodicity_estimate(
    solid: np.ndarray,
    grid: Grid,
    theta: ScalarField,
    omega: float,
    border_elements: int = 2,
    exclude: list[np.ndarray] | None = None,
    exclude_radius: float | None = None,
) -> dict:
    """Local stripe-wavelength statistics normalised by the target wavelength.

    Short segments along the local wave direction (orthogonal to the stripes)
    count solid-void transitions; each valid segment yields one wavelength
    sample. Segments near the domain border or the given exclusion points
    (e.g. branch windows) are skipped.
    """
    coarse = theta.grid
    seg_len = 4.0 / omega
    step = grid.h / 2.0
    n_steps = max(2, int(np.ceil(seg_len / step)))
    exclude_pts = np.array(exclude) if exclude else np.zeros((0, 2))
    r_excl = exclude_radius if exclude_radius is not None else 1.5 / omega

    ratios = []
    b = border_elements
    for j in range(b, coarse.ny - b):
        for i in range(b, coarse.nx - b):
            cx = coarse.origin[0] + i * coarse.h
            cy = coarse.origin[1] + j * coarse.h
            d = direction(theta.values[j, i])
            t = (np.arange(n_steps + 1) - n_steps / 2.0) * step
            px = cx + t * d[0]
            py = cy + t * d[1]
            ix = np.rint((px - grid.origin[0]) / grid.h).astype(int)
            iy = np.rint((py - grid.origin[1]) / grid.h).astype(int)
            if ix.min() < 0 or iy.min() < 0 or ix.max() >= grid.nx or iy.max() >= grid.ny:
                continue
            if len(exclude_pts) and np.min(
                (exclude_pts[:, 0] - cx) ** 2 + (exclude_pts[:, 1] - cy) ** 2
            ) < r_excl**2:
                continue
            line = solid[iy, ix]
            edges = np.flatnonzero(line[1:] != line[:-1])
            if edges.size < 4:
                continue
            # half-wavelength per transition gap; span over n-1 gaps avoids the
            # window-phase bias of counting transitions in a fixed length
            wavelength = 2.0 * (edges[-1] - edges[0]) * step / (edges.size - 1)
            ratios.append(wavelength * omega)

    ratios = np.array(ratios)
    if ratios.size == 0:
        return {"median_ratio": float("nan"), "iqr_ratio": float("nan"),
                "n_segments": 0, "reliable": False}
    q1, q3 = np.percentile(ratios, [25, 75])
    return {
        "median_ratio": float(np.median(ratios)),
        "iqr_ratio": float(q3 - q1),
        "n_segments": int(ratios.size),
        "reliable": bool(ratios.size >= 10),
    }
