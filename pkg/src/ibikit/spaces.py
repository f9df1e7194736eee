"""Radial grids, tabulated radial functions, and the weighted norms used throughout.

Grids are hybrid: geometrically refined inside the repulsive core (to resolve
the Boltzmann factor) and uniform beyond it (to resolve the power-law tail).
Functions carry a tail exponent so that integrals and suprema can be extended
analytically past the last grid node.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.integrate import quad


@dataclass(frozen=True, eq=False)
class RadialGrid:
    """Strictly increasing positive radii covering (0, r_max]."""

    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("grid needs at least two nodes")
        if nodes[0] <= 0.0 or np.any(np.diff(nodes) <= 0.0):
            raise ValueError("grid nodes must be positive and strictly increasing")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def hybrid(cls, r0, r_max=None, r_min_factor=1e-3, core_ratio=1.05, dr_factor=0.005):
        """Geometric spacing on (r_min_factor*r0, r0], uniform dr_factor*r0 on [r0, r_max]."""
        if r0 <= 0.0:
            raise ValueError("r0 must be positive")
        if r_max is None:
            r_max = 20.0 * r0
        if r_max <= r0:
            raise ValueError("r_max must exceed r0")
        r_min = r_min_factor * r0
        n_core = max(2, math.ceil(math.log(r0 / r_min) / math.log(core_ratio)))
        core = r_min * (r0 / r_min) ** (np.arange(n_core + 1) / n_core)
        n_tail = max(2, math.ceil((r_max - r0) / (dr_factor * r0)))
        tail = np.linspace(r0, r_max, n_tail + 1)[1:]
        return cls(np.concatenate([core, tail]))

    @property
    def r_max(self):
        return float(self.nodes[-1])

    @property
    def n(self):
        return int(self.nodes.size)

    def midpoints(self):
        return 0.5 * (self.nodes[:-1] + self.nodes[1:])

    def refine(self):
        """Grid with the midpoints of every interval inserted (2x resolution)."""
        merged = np.sort(np.concatenate([self.nodes, self.midpoints()]))
        return RadialGrid(merged)


@dataclass(frozen=True, eq=False)
class RadialFunction:
    """Tabulated radially symmetric function with an analytic power-law tail.

    ``tail_exponent`` p means the function continues as ``values[-1]*(r/r_max)**-p``
    for r > r_max.  ``None`` marks data without a usable tail model (norms and
    integrals that need one will refuse); ``inf`` means the function vanishes
    beyond the grid.
    """

    grid: RadialGrid
    values: np.ndarray
    tail_exponent: float | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.grid.nodes.shape:
            raise ValueError("values must match the grid")
        if not np.all(np.isfinite(values)):
            raise ValueError("values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        nodes = self.grid.nodes
        out = np.interp(r, nodes, self.values, left=self.values[0])
        beyond = r > nodes[-1]
        if np.any(beyond):
            out = np.where(beyond, self.tail_values(r), out)
        if out.ndim == 0:
            return float(out)
        return out

    def tail_values(self, r):
        r = np.asarray(r, dtype=float)
        p = self.tail_exponent
        if p is None:
            return np.full_like(r, self.values[-1])
        if math.isinf(p):
            return np.zeros_like(r)
        return self.values[-1] * (np.maximum(r, self.grid.r_max) / self.grid.r_max) ** (-p)

    def with_values(self, values, tail_exponent="keep"):
        tail = self.tail_exponent if tail_exponent == "keep" else tail_exponent
        return RadialFunction(self.grid, values, tail)

    @classmethod
    def from_callable(cls, grid, fn, tail_exponent=None):
        return cls(grid, np.asarray(fn(grid.nodes), dtype=float), tail_exponent)

    @classmethod
    def zero(cls, grid):
        return cls(grid, np.zeros(grid.n), tail_exponent=math.inf)


def weight(r, alpha):
    """Polynomial weight (1 + r^2)^(alpha/2) attached to tail decay rate alpha."""
    if alpha <= 3.0:
        raise ValueError("weight exponent must exceed 3")
    r = np.asarray(r, dtype=float)
    out = (1.0 + r * r) ** (alpha / 2.0)
    if out.ndim == 0:
        return float(out)
    return out


def _require_tail(w, context):
    if w.tail_exponent is None:
        raise ValueError(f"{context} needs a tail exponent on the radial function")
    return w.tail_exponent


def volume_integral(w: RadialFunction):
    """Integral of w over R^3 (4*pi radial reduction plus analytic tail)."""
    p = _require_tail(w, "volume integral")
    r = w.grid.nodes
    body = np.trapezoid(
        np.concatenate([[0.0], r * r * w.values]), np.concatenate([[0.0], r])
    )
    if math.isinf(p):
        tail = 0.0
    elif p <= 3.0:
        raise ValueError("tail exponent <= 3: integral over R^3 diverges")
    else:
        tail = w.values[-1] * w.grid.r_max**3 / (p - 3.0)
    return 4.0 * math.pi * (body + tail)


def l1_norm(w: RadialFunction):
    """L1 norm of w over R^3."""
    return volume_integral(w.with_values(np.abs(w.values)))


def weighted_sup_norm(w: RadialFunction, alpha):
    """sup of (1+r^2)^(alpha/2) |w(r)| over nodes, midpoints, and the analytic tail.

    Returns +inf when the tail exponent is below alpha (the supremum diverges).
    """
    p = _require_tail(w, "weighted sup norm")
    if not math.isinf(p) and p < alpha:
        return math.inf
    nodes = w.grid.nodes
    mids = w.grid.midpoints()
    best = max(
        float(np.max(weight(nodes, alpha) * np.abs(w.values))),
        float(np.max(weight(mids, alpha) * np.abs(w(mids)))),
    )
    # For p >= alpha the weighted tail model is monotone decreasing past r_max,
    # so the grid already dominates it; nothing extra to scan.
    return best


def perturbation_norm(v: RadialFunction, u):
    """Norm of a perturbation relative to a potential u.

    Core branch: sup |v/u| on (0, r0]; tail branch: weighted sup of |v| on
    [r0, infinity), extended past the grid via tail exponents.  The potential
    provides r0 and the weight exponent through its family parameters.
    """
    params = u.params
    if params is None:
        raise ValueError("potential carries no family parameters")
    alpha, r0 = params.alpha, params.r0
    nodes = v.grid.nodes
    mids = v.grid.midpoints()

    core_best = 0.0
    for rs in (nodes[nodes <= r0], mids[mids <= r0]):
        if rs.size == 0:
            continue
        uvals = np.asarray(u(rs), dtype=float)
        bad = np.nonzero(uvals == 0.0)[0]
        if bad.size:
            raise ZeroDivisionError(
                f"potential vanishes at core radius r={rs[bad[0]]:.6g}; "
                "core branch of the perturbation norm is undefined"
            )
        core_best = max(core_best, float(np.max(np.abs(np.asarray(v(rs)) / uvals))))

    tail_best = 0.0
    for rs in (nodes[nodes >= r0], mids[mids >= r0]):
        if rs.size == 0:
            continue
        tail_best = max(tail_best, float(np.max(weight(rs, alpha) * np.abs(np.asarray(v(rs))))))
    p = _require_tail(v, "perturbation norm tail branch")
    if not math.isinf(p) and p < alpha:
        tail_best = math.inf
    return max(core_best, tail_best)


def embedding_constant(alpha):
    """Constant c with ||w||_L1 <= c * ||w||_(weighted sup), i.e. the integral of 1/weight."""
    if alpha <= 3.0:
        raise ValueError("embedding constant diverges for alpha <= 3")
    val, _ = quad(lambda r: 4.0 * math.pi * r * r * (1.0 + r * r) ** (-alpha / 2.0), 0.0, np.inf)
    return val


def save_radial_function(path, w: RadialFunction, alpha=None):
    """Write r,value CSV plus a JSON sidecar {alpha, tail_exponent, r_max}."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["r", "value"])
        for r, val in zip(w.grid.nodes, w.values):
            writer.writerow([f"{r:.17g}", f"{val:.17g}"])
    sidecar = {
        "alpha": alpha,
        "tail_exponent": None
        if w.tail_exponent is None
        else ("inf" if math.isinf(w.tail_exponent) else w.tail_exponent),
        "r_max": w.grid.r_max,
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n")


def load_radial_function(path):
    """Inverse of save_radial_function; returns (function, alpha)."""
    path = Path(path)
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    sidecar = json.loads(path.with_suffix(".json").read_text())
    tail = sidecar.get("tail_exponent")
    if tail == "inf":
        tail = math.inf
    fn = RadialFunction(RadialGrid(rows[:, 0]), rows[:, 1], tail)
    return fn, sidecar.get("alpha")
