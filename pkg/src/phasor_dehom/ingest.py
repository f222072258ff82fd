"""Case-file parsing, indicator fields and phasor kernel construction.

A case file is a single JSON document describing a rank-N laminate solution on
a regular coarse grid: per-layer relative thickness and orientation fields,
the void threshold mu_min, and an optional boundary-condition block used by
the evaluation module.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import Grid, direction, mean_filter_3x3, wrap_angle

SOLID_THRESHOLD = 0.99  # elements with total thickness above this carry no kernels


class CaseError(ValueError):
    """Raised for malformed case files; message carries a JSON field path."""


@dataclass
class Layer:
    theta: np.ndarray  # orientation per element, (ny, nx), in (-pi, pi]
    mu: np.ndarray  # relative thickness per element, (ny, nx), in [0, 1]


@dataclass
class CoarseSolution:
    grid: Grid
    mu_min: float
    layers: list[Layer]
    bc: dict | None = None

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def sum_mu(self) -> np.ndarray:
        return np.sum([lay.mu for lay in self.layers], axis=0)


@dataclass
class IndicatorSet:
    """Coarse-grid indicator fields shared by alignment and boundary handling."""

    s: np.ndarray  # 1 where any layer has mu >= mu_min
    s_tilde: np.ndarray  # 3x3 mean of s, zero padding
    s_hat_tilde: np.ndarray  # s * s_tilde
    s_bar: np.ndarray  # elementwise max over layers of replicate-padded 3x3 means
    z: list[np.ndarray]  # per-layer active-kernel indicator
    z_tilde: list[np.ndarray]  # 3x3 mean of z, replicate padding
    s_layer: list[np.ndarray]  # per-layer material indicator (mu >= mu_min)
    s_tilde_layer: list[np.ndarray]  # 3x3 mean of s_layer, replicate padding
    sum_mu: np.ndarray


@dataclass
class KernelSet:
    """All phasor kernels of one lamination layer, stored as flat arrays.

    Kernels are ordered row-major by their coarse element. phi, dkappa, r1 and
    r2 are mutable state updated by the alignment stage.
    """

    layer: int
    grid: Grid
    omega: float
    beta: float
    alpha: float
    x0: np.ndarray  # (n, 2) physical element-centre positions
    d: np.ndarray  # (n, 2) unit directions (cos theta, -sin theta)
    theta: np.ndarray  # (n,)
    phi: np.ndarray  # (n,) phase shifts
    elem: np.ndarray  # (n,) linear element index j*nx + i
    dkappa: np.ndarray  # (n,) thin-member isotropy blend in [0, 1]
    r1: np.ndarray  # (n,) anisotropy weight along stripes
    r2: np.ndarray  # (n,) anisotropy weight across stripes

    def __len__(self) -> int:
        return len(self.theta)

    @property
    def ij(self) -> tuple[np.ndarray, np.ndarray]:
        nx = self.grid.nx
        return self.elem % nx, self.elem // nx


def _require(cond: bool, path: str, msg: str):
    if not cond:
        raise CaseError(f"{path}: {msg}")


def _field_array(obj: dict, key: str, path: str, nx: int, ny: int) -> np.ndarray:
    _require(key in obj, path, f"missing '{key}'")
    vals = obj[key]
    _require(isinstance(vals, list), f"{path}.{key}", "must be a list of floats")
    _require(
        len(vals) == nx * ny,
        f"{path}.{key}",
        f"expected {nx * ny} values (nx*ny), got {len(vals)}",
    )
    arr = np.asarray(vals, dtype=float)
    bad = np.flatnonzero(~np.isfinite(arr))
    _require(bad.size == 0, f"{path}.{key}[{bad[0] if bad.size else 0}]", "non-finite value")
    return arr.reshape(ny, nx)


def parse_case(content: bytes | str | dict) -> CoarseSolution:
    """Parse and validate a JSON case file into a CoarseSolution.

    Accepts raw bytes/str or an already-decoded dict. Orientation angles are
    normalised into (-pi, pi]. Raises CaseError with a field path on any
    schema, range or dimension violation.
    """
    if isinstance(content, (bytes, str)):
        try:
            doc = json.loads(content)
        except json.JSONDecodeError as e:
            raise CaseError(f"$: invalid JSON ({e})") from e
    else:
        doc = content
    _require(isinstance(doc, dict), "$", "top level must be an object")

    for key in ("nx", "ny", "h", "mu_min", "layers"):
        _require(key in doc, "$", f"missing '{key}'")
    nx, ny = doc["nx"], doc["ny"]
    _require(isinstance(nx, int) and nx > 0, "$.nx", "must be a positive integer")
    _require(isinstance(ny, int) and ny > 0, "$.ny", "must be a positive integer")
    h = doc["h"]
    _require(isinstance(h, (int, float)) and math.isfinite(h) and h > 0, "$.h", "must be > 0")
    mu_min = doc["mu_min"]
    _require(
        isinstance(mu_min, (int, float)) and 0.0 < mu_min < 1.0,
        "$.mu_min",
        "must lie strictly inside (0, 1)",
    )
    _require(isinstance(doc["layers"], list) and len(doc["layers"]) > 0, "$.layers", "need at least one layer")

    layers = []
    for l, lay in enumerate(doc["layers"]):
        path = f"$.layers[{l}]"
        _require(isinstance(lay, dict), path, "must be an object")
        theta = _field_array(lay, "theta", path, nx, ny)
        mu = _field_array(lay, "mu", path, nx, ny)
        bad = np.flatnonzero((mu.ravel() < 0.0) | (mu.ravel() > 1.0))
        _require(bad.size == 0, f"{path}.mu[{bad[0] if bad.size else 0}]", "thickness outside [0, 1]")
        # wrap only out-of-range angles so in-range values stay bit-exact
        in_range = (theta > -np.pi) & (theta <= np.pi)
        layers.append(Layer(theta=np.where(in_range, theta, wrap_angle(theta)), mu=mu))

    bc = doc.get("bc")
    if bc is not None:
        _require(isinstance(bc, dict), "$.bc", "must be an object")
    return CoarseSolution(grid=Grid(nx, ny, float(h)), mu_min=float(mu_min), layers=layers, bc=bc)


def serialise_case(sol: CoarseSolution) -> str:
    """Canonical JSON writer; parse_case(serialise_case(sol)) round-trips exactly."""
    doc = {
        "nx": sol.grid.nx,
        "ny": sol.grid.ny,
        "h": sol.grid.h,
        "mu_min": sol.mu_min,
        "layers": [
            {"theta": lay.theta.ravel().tolist(), "mu": lay.mu.ravel().tolist()}
            for lay in sol.layers
        ],
    }
    if sol.bc is not None:
        doc["bc"] = sol.bc
    return json.dumps(doc)


def build_indicators(sol: CoarseSolution) -> IndicatorSet:
    """Derive all coarse indicator fields from the layer thicknesses."""
    mu_min = sol.mu_min
    sum_mu = sol.sum_mu()
    s = (np.max([lay.mu for lay in sol.layers], axis=0) >= mu_min).astype(float)
    s_tilde = mean_filter_3x3(s, padding="zero")
    s_hat_tilde = s * s_tilde

    z, z_tilde, s_layer, s_tilde_layer = [], [], [], []
    not_solid = sum_mu <= SOLID_THRESHOLD
    for lay in sol.layers:
        sl = (lay.mu >= mu_min).astype(float)
        zl = sl * not_solid
        s_layer.append(sl)
        s_tilde_layer.append(mean_filter_3x3(sl, padding="replicate"))
        z.append(zl)
        z_tilde.append(mean_filter_3x3(zl, padding="replicate"))
    s_bar = np.max(s_tilde_layer, axis=0)

    return IndicatorSet(
        s=s,
        s_tilde=s_tilde,
        s_hat_tilde=s_hat_tilde,
        s_bar=s_bar,
        z=z,
        z_tilde=z_tilde,
        s_layer=s_layer,
        s_tilde_layer=s_tilde_layer,
        sum_mu=sum_mu,
    )


def build_kernels(sol: CoarseSolution, inds: IndicatorSet, omega: float) -> list[KernelSet]:
    """One kernel per active element and layer, phases initialised to zero.

    Layers without active kernels produce an empty set (skipped downstream).
    """
    if omega <= 0:
        raise ValueError(f"frequency must be positive, got {omega}")
    grid = sol.grid
    beta = omega / grid.h
    X, Y = grid.points()
    sets = []
    for l, lay in enumerate(sol.layers):
        jj, ii = np.nonzero(inds.z[l] > 0)
        theta = lay.theta[jj, ii]
        n = len(theta)
        sets.append(
            KernelSet(
                layer=l,
                grid=grid,
                omega=float(omega),
                beta=float(beta),
                alpha=float(beta),
                x0=np.column_stack([X[jj, ii], Y[jj, ii]]) if n else np.zeros((0, 2)),
                d=direction(theta) if n else np.zeros((0, 2)),
                theta=theta,
                phi=np.zeros(n),
                elem=jj * grid.nx + ii,
                dkappa=np.zeros(n),
                r1=np.full(n, 1.0 / np.pi),
                r2=np.full(n, np.pi),
            )
        )
    return sets
