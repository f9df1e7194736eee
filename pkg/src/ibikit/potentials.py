"""Admissible pair potentials, stability/integrability constants, and the gas-phase window.

The admissible family is the Lennard-Jones type class: a repulsive core bounded
below by c*r^-alpha and a tail bounded above by C*r^-alpha with alpha > 3.
Everything downstream (Mayer function, activity window, perturbation radius)
is computed per potential from numerically certified constants.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.spatial.distance import pdist

from .reports import CertificationError, CertificationReport
from .spaces import RadialFunction, RadialGrid, embedding_constant, l1_norm, weight


@dataclass(frozen=True)
class LJTypeParams:
    """Family constants (alpha, r0, c0, C0) plus optional per-potential (c, C)."""

    alpha: float
    r0: float
    c0: float
    C0: float
    c: float | None = None
    C: float | None = None

    def __post_init__(self):
        if self.alpha <= 3.0:
            raise ValueError("alpha must exceed 3")
        if self.r0 <= 0.0:
            raise ValueError("r0 must be positive")
        if not 0.0 < self.c0 < self.C0:
            raise ValueError("need 0 < c0 < C0")
        if self.c is not None and self.C is not None:
            if not self.c0 < self.c < self.C < self.C0:
                raise ValueError("need c0 < c < C < C0")

    def with_certified(self, c, C):
        return LJTypeParams(self.alpha, self.r0, self.c0, self.C0, c, C)


class Potential:
    """Radial pair potential, either analytic or tabulated.

    Tabulated potentials continue below the first grid node with the power law
    matched there (exponent alpha from the family) and above the last node with
    their recorded tail exponent, so certification and energies are defined on
    all of r > 0.
    """

    def __init__(self, fn=None, table=None, tail_exponent=None, params=None, label=""):
        if (fn is None) == (table is None):
            raise ValueError("provide exactly one of fn or table")
        self.fn = fn
        self.table = table
        if table is not None and tail_exponent is None:
            tail_exponent = table.tail_exponent
        if tail_exponent is None:
            raise ValueError("tail exponent is required")
        self.tail_exponent = float(tail_exponent)
        self.params = params
        self.label = label

    @classmethod
    def lennard_jones(cls, epsilon=1.0, sigma=1.0, params=None):
        def fn(r):
            r = np.asarray(r, dtype=float)
            sr6 = (sigma / r) ** 6
            return 4.0 * epsilon * (sr6 * sr6 - sr6)

        return cls(fn=fn, tail_exponent=6.0, params=params,
                   label=f"lj12-6(eps={epsilon:g},sigma={sigma:g})")

    @classmethod
    def inverse_power(cls, exponent, prefactor=1.0, params=None):
        return cls(fn=lambda r: prefactor * np.asarray(r, dtype=float) ** (-exponent),
                   tail_exponent=float(exponent), params=params,
                   label=f"r^-{exponent:g}")

    @classmethod
    def zero(cls, params=None):
        return cls(fn=lambda r: np.zeros_like(np.asarray(r, dtype=float)),
                   tail_exponent=math.inf, params=params, label="zero")

    @classmethod
    def from_table(cls, table: RadialFunction, params=None, label="tabulated"):
        return cls(table=table, params=params, label=label)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self.fn is not None:
            out = self.fn(r)
        else:
            nodes = self.table.grid.nodes
            out = np.interp(r, nodes, self.table.values)
            below = r < nodes[0]
            if np.any(below):
                core_p = self.params.alpha if self.params is not None else self.tail_exponent
                out = np.where(below, self.table.values[0] * (r / nodes[0]) ** (-core_p), out)
            beyond = r > nodes[-1]
            if np.any(beyond):
                out = np.where(beyond, self.table.tail_values(r), out)
        out = np.asarray(out, dtype=float)
        if out.ndim == 0:
            return float(out)
        return out

    def tabulate(self, grid: RadialGrid) -> RadialFunction:
        return RadialFunction(grid, self(grid.nodes), tail_exponent=self.tail_exponent)

    def default_grid(self, **kwargs) -> RadialGrid:
        if self.table is not None:
            return self.table.grid
        if self.params is None:
            raise ValueError("analytic potential without family parameters has no default grid")
        return RadialGrid.hybrid(self.params.r0, **kwargs)


@dataclass(frozen=True, eq=False)
class Configuration:
    """N particle coordinates inside a cubical box of the given half width."""

    coordinates: np.ndarray
    box_half_width: float

    def __post_init__(self):
        coords = np.atleast_2d(np.asarray(self.coordinates, dtype=float))
        if coords.shape[1] != 3:
            raise ValueError("coordinates must be (N, 3)")
        if np.any(np.abs(coords) > self.box_half_width + 1e-12):
            raise ValueError("coordinates must lie inside the box")
        coords.setflags(write=False)
        object.__setattr__(self, "coordinates", coords)

    @property
    def n(self):
        return int(self.coordinates.shape[0])


def certify_lj_type(u: Potential, p: LJTypeParams, grid: RadialGrid) -> CertificationReport:
    """Check both branches of the admissibility envelope on the grid.

    Core branch on (0, r0]: u(r) >= c * r^-alpha with the tightest observed c.
    Tail branch on [r0, infinity): |u(r)| <= C * r^-alpha with the tightest
    observed C, extended past the grid by the analytic tail.  Passes iff
    c > c0 and C < C0.
    """
    if grid.nodes[0] > 0.01 * p.r0:
        raise ValueError("grid does not cover the core region: first node too large")
    if grid.r_max < 10.0 * p.r0:
        raise ValueError("grid must extend to at least 10*r0")

    rs = np.sort(np.concatenate([grid.nodes, grid.midpoints()]))
    core = rs[rs <= p.r0]
    tail = rs[rs >= p.r0]
    notes = []

    core_ratio = np.asarray(u(core)) * core**p.alpha
    c_obs = float(np.min(core_ratio))
    core_ok = c_obs > p.c0
    if not core_ok:
        r_bad = core[int(np.argmin(core_ratio))]
        notes.append(f"core branch fails near r={r_bad:.4g}: tightest c={c_obs:.4g} <= c0={p.c0:g}")

    tail_ratio = np.abs(np.asarray(u(tail))) * tail**p.alpha
    C_obs = float(np.max(tail_ratio))
    if u.tail_exponent < p.alpha:
        C_obs = math.inf
        notes.append("tail exponent below alpha: upper envelope unbounded")
    tail_ok = C_obs < p.C0
    if not tail_ok and math.isfinite(C_obs):
        r_bad = tail[int(np.argmax(tail_ratio))]
        notes.append(f"tail branch fails near r={r_bad:.4g}: tightest C={C_obs:.4g} >= C0={p.C0:g}")

    return CertificationReport(passed=core_ok and tail_ok, core_ok=core_ok,
                               tail_ok=tail_ok, c_observed=c_obs, C_observed=C_obs,
                               notes=notes)


def require_certified(u: Potential, grid: RadialGrid | None = None) -> CertificationReport:
    if u.params is None:
        raise CertificationError("potential has no family parameters to certify against")
    grid = grid or u.default_grid()
    report = certify_lj_type(u, u.params, grid)
    if not report.passed:
        raise CertificationError("potential is not admissible: " + "; ".join(report.notes), report)
    return report


def total_energy(u: Potential, cfg: Configuration):
    """Sum of u over all particle pairs; +inf if any pair coincides."""
    if cfg.n < 2:
        return 0.0
    d = pdist(cfg.coordinates)
    if np.any(d == 0.0):
        return math.inf
    return float(np.sum(u(d)))


def pair_minimum_distance(u: Potential, r_lo, r_hi):
    """Distance minimizing u on [r_lo, r_hi] (bracketing scan plus local refine)."""
    rs = np.linspace(r_lo, r_hi, 512)
    r_best = rs[int(np.argmin(u(rs)))]
    res = minimize_scalar(lambda r: float(u(r)),
                          bounds=(max(r_lo, 0.8 * r_best), min(r_hi, 1.2 * r_best)),
                          method="bounded", options={"xatol": 1e-12})
    return float(res.x) if res.fun <= float(u(r_best)) else float(r_best)


@dataclass(frozen=True)
class StabilitySearchConfig:
    """Search budget for the stability-constant estimate.

    The estimate is a lower bound of the true constant: it is the best
    -U_N/N found over simplex-collapse, lattice, and random configurations
    with N up to n_max.
    """

    n_max: int = 4
    n_random: int = 200
    n_scales: int = 48
    seed: int = 0


@dataclass
class StabilityEstimate:
    B_hat: float
    best_config: Configuration | None
    n_evaluated: int


def _simplex(n, d):
    # regular simplex with pairwise distance d, n <= 4
    base = {
        2: [[0, 0, 0], [1, 0, 0]],
        3: [[0, 0, 0], [1, 0, 0], [0.5, math.sqrt(3) / 2, 0]],
        4: [[0, 0, 0], [1, 0, 0], [0.5, math.sqrt(3) / 2, 0],
            [0.5, math.sqrt(3) / 6, math.sqrt(6) / 3]],
    }[n]
    return d * np.asarray(base, dtype=float)


def _fcc_cluster(n_cells, a):
    cell = np.asarray([[0, 0, 0], [0.5, 0.5, 0], [0.5, 0, 0.5], [0, 0.5, 0.5]])
    pts = []
    for i in range(n_cells):
        for j in range(n_cells):
            for k in range(n_cells):
                pts.append(cell + np.asarray([i, j, k], dtype=float))
    return a * np.concatenate(pts, axis=0)


def estimate_stability_constant(u: Potential, config: StabilitySearchConfig | None = None) -> StabilityEstimate:
    """Lower estimate of the stability constant B with U_N >= -B*N.

    Scans structured collapse configurations (regular simplices and fcc
    clusters swept through a range of scales around the pair-potential
    minimum) plus random packings.  Deterministic for a fixed seed.
    """
    config = config or StabilitySearchConfig()
    rng = np.random.default_rng(config.seed)
    r0 = u.params.r0 if u.params is not None else 1.0
    d_star = pair_minimum_distance(u, 0.3 * r0, 5.0 * r0)

    best = 0.0
    best_cfg = None
    count = 0

    def consider(coords):
        nonlocal best, best_cfg, count
        count += 1
        coords = np.asarray(coords, dtype=float)
        half = float(np.max(np.abs(coords))) + 1e-9
        cfg = Configuration(coords, half)
        e = total_energy(u, cfg)
        score = -e / cfg.n
        if score > best:
            best = score
            best_cfg = cfg

    scales = np.unique(np.concatenate([[1.0], np.linspace(0.75, 1.5, config.n_scales)]))
    for n in range(2, min(4, config.n_max) + 1):
        for s in scales:
            consider(_simplex(n, s * d_star))

    m = 1
    while 4 * m**3 <= config.n_max:
        pts = _fcc_cluster(m, 1.0)
        for s in scales:
            # fcc nearest-neighbor distance is a/sqrt(2)
            consider(pts * (s * d_star * math.sqrt(2.0)))
        m += 1

    for _ in range(config.n_random):
        n = int(rng.integers(2, config.n_max + 1))
        side = d_star * n ** (1.0 / 3.0) * rng.uniform(0.9, 1.8)
        consider(rng.uniform(-side / 2, side / 2, size=(n, 3)))

    return StabilityEstimate(B_hat=max(0.0, best), best_config=best_cfg, n_evaluated=count)


def mayer_function(u: Potential, beta, grid: RadialGrid | None = None) -> RadialFunction:
    """exp(-beta*u) - 1 on the grid; identically -1 wherever the core diverges."""
    if beta <= 0.0:
        raise ValueError("beta must be positive")
    grid = grid or u.default_grid()
    with np.errstate(over="ignore"):
        vals = np.expm1(-beta * np.asarray(u(grid.nodes), dtype=float))
    return RadialFunction(grid, vals, tail_exponent=u.tail_exponent)


def mayer_integral_bound(f: RadialFunction, margin=0.01):
    """Strict upper bound for the absolute integral of the Mayer function.

    Quadrature value of the 3d integral of |f| (analytic tail included)
    inflated by the margin, so the bound strictly exceeds the integral.
    """
    if f.tail_exponent is not None and f.tail_exponent <= 3.0 and np.any(f.values != 0.0):
        raise ValueError("tail exponent <= 3: Mayer function is not absolutely integrable")
    val = l1_norm(f)
    if val == 0.0:
        warnings.warn("Mayer function vanishes identically; integrability bound degenerates to 0")
        return 0.0
    return (1.0 + margin) * val


def gas_phase_bounds(c_beta, B, beta):
    """Activity thresholds (z_max_gas, z_max_strict) for the gas-phase window."""
    if c_beta <= 0.0 or B < 0.0 or beta <= 0.0:
        raise ValueError("need c_beta > 0, B >= 0, beta > 0")
    z_max_gas = 1.0 / (c_beta * math.exp(2.0 * beta * B + 1.0))
    return z_max_gas, z_max_gas / (1.0 + math.e)


@dataclass(frozen=True)
class EnsembleParams:
    """Inverse temperature, activity, and the derived gas-phase constants."""

    beta: float
    z: float
    c_beta: float
    B: float
    z_max_gas: float = 0.0
    z_max_strict: float = 0.0

    def __post_init__(self):
        if self.beta <= 0.0 or self.z <= 0.0:
            raise ValueError("beta and z must be positive")
        z_gas, z_strict = gas_phase_bounds(self.c_beta, self.B, self.beta)
        object.__setattr__(self, "z_max_gas", z_gas)
        object.__setattr__(self, "z_max_strict", z_strict)

    @property
    def in_gas_phase(self):
        return 0.0 < self.z < self.z_max_gas

    def to_json(self, path):
        Path(path).write_text(json.dumps({
            "beta": self.beta, "z": self.z, "c_beta": self.c_beta, "B": self.B,
            "z_max_gas": self.z_max_gas, "z_max_strict": self.z_max_strict,
        }, indent=2) + "\n")

    @classmethod
    def from_json(cls, path):
        d = json.loads(Path(path).read_text())
        return cls(beta=d["beta"], z=d["z"], c_beta=d["c_beta"], B=d["B"])


@dataclass
class PerturbationRadius:
    """Largest admissible perturbation size and the constants fixing it."""

    delta0: float
    C_beta: float
    q: float
    f_l1_ratio: float          # quadrature integral of |f| divided by c_beta
    rho_inv_integral: float    # integral of 1/weight over R^3
    family_cap: float          # largest delta keeping extreme perturbations admissible
    q_curve: list


def _c_beta_envelope_constant(beta, B, c_beta, alpha, r0, delta, margin=0.01):
    # envelope constant making the perturbed-Mayer bound hold on both r ranges
    return max(beta * math.exp(2.0 * beta * B),
               weight(r0, alpha) / (math.e * (1.0 - delta) * c_beta)) * (1.0 + margin)


def perturbation_radius(u: Potential, beta, c_beta, B,
                        grid: RadialGrid | None = None, rel_tol=1e-3) -> PerturbationRadius:
    """Bisect for the largest delta0 in (0, 1) with an admissible neighborhood.

    Requires (i) the extreme perturbations of size delta0 to stay in the
    admissible family, and (ii) the comparison function |f|/c_beta +
    C_beta*delta0/weight to have total mass q < 1.
    """
    grid = grid or u.default_grid()
    report = require_certified(u, grid)
    alpha, r0 = u.params.alpha, u.params.r0
    f = mayer_function(u, beta, grid)
    f_l1 = l1_norm(f)
    rho_inv = embedding_constant(alpha)
    family_cap = min(1.0 - u.params.c0 / report.c_observed,
                     u.params.C0 - report.C_observed, 1.0)

    def q_of(delta):
        cb = _c_beta_envelope_constant(beta, B, c_beta, alpha, r0, delta)
        return f_l1 / c_beta + cb * delta * rho_inv, cb

    def feasible(delta):
        return delta < family_cap and q_of(delta)[0] < 1.0

    curve = []
    lo, hi = 0.0, 1.0 - 1e-12
    probe = min(1e-8, family_cap / 2)
    if not feasible(probe):
        q_probe, _ = q_of(probe)
        curve.append((probe, q_probe))
        raise ValueError(f"no admissible perturbation radius: q({probe:g})={q_probe:g}, "
                         f"family cap {family_cap:g}; diagnostic curve: {curve}")
    lo = probe
    while hi - lo > rel_tol * max(lo, 1e-300):
        mid = 0.5 * (lo + hi)
        q_mid, _ = q_of(mid)
        curve.append((mid, q_mid))
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    q_final, cb_final = q_of(lo)
    return PerturbationRadius(delta0=lo, C_beta=cb_final, q=q_final,
                              f_l1_ratio=f_l1 / c_beta, rho_inv_integral=rho_inv,
                              family_cap=family_cap, q_curve=curve)


def save_potential(path, u: Potential, grid: RadialGrid | None = None):
    """Write r,u CSV plus a JSON sidecar with the family parameters and tail exponent."""
    path = Path(path)
    grid = grid or u.default_grid()
    table = u.tabulate(grid)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["r", "u"])
        for r, val in zip(table.grid.nodes, table.values):
            writer.writerow([f"{r:.17g}", f"{val:.17g}"])
    params = None
    if u.params is not None:
        params = {"alpha": u.params.alpha, "r0": u.params.r0,
                  "c0": u.params.c0, "C0": u.params.C0,
                  "c": u.params.c, "C": u.params.C}
    sidecar = {"form": "tabulated", "tail_exponent": u.tail_exponent,
               "params": params, "label": u.label}
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n")


def _params_from_dict(d):
    if d is None:
        return None
    return LJTypeParams(alpha=d["alpha"], r0=d["r0"], c0=d["c0"], C0=d["C0"],
                        c=d.get("c"), C=d.get("C"))


def load_potential(path) -> Potential:
    """Load a potential from a CSV+sidecar pair or a parametric JSON spec."""
    path = Path(path)
    if path.suffix == ".json":
        spec = json.loads(path.read_text())
        form = spec.get("form", "tabulated")
        params = _params_from_dict(spec.get("params"))
        if form == "lennard_jones":
            return Potential.lennard_jones(spec.get("epsilon", 1.0), spec.get("sigma", 1.0), params)
        if form == "tabulated":
            csv_path = Path(spec.get("csv", path.with_suffix(".csv")))
            if not csv_path.is_absolute():
                csv_path = path.parent / csv_path
            return _load_potential_csv(csv_path, spec)
        raise ValueError(f"unknown potential form {form!r}")
    sidecar = json.loads(path.with_suffix(".json").read_text())
    return _load_potential_csv(path, sidecar)


def _load_potential_csv(csv_path, sidecar):
    rows = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
    table = RadialFunction(RadialGrid(rows[:, 0]), rows[:, 1],
                           tail_exponent=sidecar.get("tail_exponent"))
    return Potential.from_table(table, params=_params_from_dict(sidecar.get("params")),
                                label=sidecar.get("label", "tabulated"))
