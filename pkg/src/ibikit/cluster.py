"""Cluster expansion of the pair correlation: graphs, coefficients, and bounds.

The expansion coefficients are integrals of bond-product sums over connected
labeled graphs.  Order 2 is the Mayer function itself, order 3 reduces to
convolutions, order 4 is estimated by importance-sampled Monte Carlo.
"""

from __future__ import annotations

import itertools
import math
import weakref
from dataclasses import dataclass, field

import numpy as np

from .convolution import REL_TOL, radial_convolve
from .potentials import EnsembleParams, Potential, mayer_function
from .reports import GasPhaseError, InequalityReport
from .spaces import RadialFunction, RadialGrid, perturbation_norm, volume_integral, weighted_sup_norm


@dataclass(frozen=True)
class LabeledGraph:
    """Graph on vertices 1..n with bonds (i, j), i < j."""

    n: int
    edges: frozenset

    def __post_init__(self):
        for i, j in self.edges:
            if not (1 <= i < j <= self.n):
                raise ValueError(f"bond ({i},{j}) out of range for n={self.n}")

    @property
    def is_connected(self):
        parent = list(range(self.n + 1))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for i, j in self.edges:
            parent[find(i)] = find(j)
        roots = {find(v) for v in range(1, self.n + 1)}
        return len(roots) == 1

    def adjacency(self):
        adj = {v: [] for v in range(1, self.n + 1)}
        for i, j in sorted(self.edges):
            adj[i].append(j)
            adj[j].append(i)
        return adj


def all_pairs(n):
    return [(i, j) for i in range(1, n + 1) for j in range(i + 1, n + 1)]


def enumerate_connected_graphs(n):
    """All connected labeled graphs on n vertices, by brute force over edge subsets."""
    if not 2 <= n <= 5:
        raise ValueError("connected-graph enumeration supported for 2 <= n <= 5 only")
    pairs = all_pairs(n)
    out = []
    for mask in range(1, 1 << len(pairs)):
        edges = frozenset(p for k, p in enumerate(pairs) if mask >> k & 1)
        g = LabeledGraph(n, edges)
        if g.is_connected:
            out.append(g)
    return out


def enumerate_trees(n):
    """All labeled trees on n vertices via Pruefer sequences (count n^(n-2))."""
    if not 2 <= n <= 6:
        raise ValueError("tree enumeration supported for 2 <= n <= 6 only")
    if n == 2:
        return [LabeledGraph(2, frozenset({(1, 2)}))]
    trees = []
    for seq in itertools.product(range(1, n + 1), repeat=n - 2):
        degree = {v: 1 for v in range(1, n + 1)}
        for v in seq:
            degree[v] += 1
        edges = []
        seq_list = list(seq)
        for v in seq_list:
            leaf = min(w for w in range(1, n + 1) if degree[w] == 1)
            edges.append((min(leaf, v), max(leaf, v)))
            degree[leaf] -= 1
            degree[v] -= 1
        last = [w for w in range(1, n + 1) if degree[w] == 1]
        edges.append((min(last), max(last)))
        trees.append(LabeledGraph(n, frozenset(edges)))
    return trees


def a3_analytic(f: RadialFunction, ff: RadialFunction | None = None) -> RadialFunction:
    """Order-3 coefficient from the four connected graphs on three vertices.

    Integrating the third vertex over all space: the two trees through it give
    f * (integral of f) each, the remaining tree gives the convolution f*f,
    and the triangle gives f*(f*f), i.e. 2*f*I1 + (f conv f)*(1 + f).
    """
    i1 = volume_integral(f)
    if ff is None:
        ff = radial_convolve(f, f)
    vals = 2.0 * f.values * i1 + ff.values * (1.0 + f.values)
    return RadialFunction(f.grid, vals, tail_exponent=f.tail_exponent)


@dataclass
class MayerContext:
    """Per-(potential, beta, grid) cache of the Mayer function and derived pieces."""

    f: RadialFunction
    ff: RadialFunction           # f convolved with itself
    a3: RadialFunction
    i1: float                    # integral of f over R^3
    t3: float                    # integral of f * (f conv f)
    extras: dict = field(default_factory=dict)


_CTX_CACHE = weakref.WeakKeyDictionary()


def mayer_context(u: Potential, beta, grid: RadialGrid | None = None) -> MayerContext:
    """Build (or fetch) the cached Mayer-function context; write-once per key."""
    grid = grid or u.default_grid()
    per_u = _CTX_CACHE.setdefault(u, {})
    key = (beta, grid.nodes[0], grid.r_max, grid.n)
    if key not in per_u:
        f = mayer_function(u, beta, grid)
        ff = radial_convolve(f, f)
        per_u[key] = MayerContext(
            f=f, ff=ff, a3=a3_analytic(f, ff), i1=volume_integral(f),
            t3=volume_integral(f.with_values(f.values * ff.values)))
    return per_u[key]


# ---------------------------------------------------------------------------
# Monte Carlo machinery for orders beyond 3


@dataclass
class MCEstimate:
    radii: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    budget: int
    seed: int
    details: dict = field(default_factory=dict)


class _MayerProposal:
    """Samples vertex positions from |f| mixed with a uniform ball.

    The uniform component keeps the importance weights square-integrable
    where f crosses zero; the proposal is truncated at the grid end, whose
    missing mass is negligible for tail exponents above 3.
    """

    def __init__(self, f: RadialFunction, uniform_mix=0.1, ball_radius=None):
        self.f = f
        self.mix = uniform_mix
        r = f.grid.nodes
        dens = r * r * np.abs(f.values)
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(r))])
        self.mass = cum[-1]
        self.cdf = cum / cum[-1]
        self.r_nodes = r
        self.ball_radius = ball_radius if ball_radius is not None else min(6.0, r[-1])
        self.ball_density = 3.0 / (4.0 * math.pi * self.ball_radius**3)

    def sample(self, rng, size):
        use_ball = rng.uniform(size=size) < self.mix
        r = np.empty(size)
        r[use_ball] = self.ball_radius * rng.uniform(size=int(use_ball.sum())) ** (1.0 / 3.0)
        r[~use_ball] = np.interp(rng.uniform(size=int((~use_ball).sum())), self.cdf, self.r_nodes)
        costh = rng.uniform(-1.0, 1.0, size=size)
        phi = rng.uniform(0.0, 2.0 * math.pi, size=size)
        sinth = np.sqrt(1.0 - costh**2)
        return r[:, None] * np.stack([sinth * np.cos(phi), sinth * np.sin(phi), costh], axis=1)

    def density(self, points):
        r = np.linalg.norm(points, axis=-1)
        f_part = np.abs(np.asarray(self.f(r))) / (4.0 * math.pi * self.mass)
        ball_part = np.where(r <= self.ball_radius, self.ball_density, 0.0)
        return (1.0 - self.mix) * f_part + self.mix * ball_part


def _pair_table(n):
    pairs = all_pairs(n)
    index = {p: k for k, p in enumerate(pairs)}
    return pairs, index


def _graph_sum(f, positions, graphs, pair_index, pairs, absolute=False):
    # positions: (n_samples, n_vertices, 3); vertex 1 at positions[:, 0], etc.
    n_samples = positions.shape[0]
    fvals = np.empty((len(pairs), n_samples))
    for k, (i, j) in enumerate(pairs):
        d = np.linalg.norm(positions[:, i - 1, :] - positions[:, j - 1, :], axis=1)
        fvals[k] = np.asarray(f(d))
    total = np.zeros(n_samples)
    for g in graphs:
        prod = np.ones(n_samples)
        for e in g.edges:
            prod *= fvals[pair_index[e]]
        total += prod
    return np.abs(total) if absolute else total


def _mc_integral(f, n, radii, graphs, budget, seed, n_chains=4, absolute=False,
                 uniform_mix=0.1):
    """MC estimate of the graph-sum integral over the free vertices 3..n.

    Root vertices sit at (R,0,0) and the origin; each free vertex is drawn
    from the Mayer-shaped proposal.  Chains are merged by inverse-variance
    weighting.
    """
    proposal = _MayerProposal(f, uniform_mix=uniform_mix)
    pairs, pair_index = _pair_table(n)
    radii = np.atleast_1d(np.asarray(radii, dtype=float))
    per_chain = max(1, budget // n_chains)
    n_free = n - 2

    means = np.zeros((n_chains, radii.size))
    variances = np.zeros((n_chains, radii.size))
    for chain in range(n_chains):
        rng = np.random.default_rng([seed, chain])
        free = proposal.sample(rng, per_chain * n_free).reshape(per_chain, n_free, 3)
        inv_weight = np.prod(proposal.density(free), axis=1)
        positions = np.zeros((per_chain, n, 3))
        positions[:, 2:, :] = free
        for ir, r in enumerate(radii):
            positions[:, 0, 0] = r
            vals = _graph_sum(f, positions, graphs, pair_index, pairs, absolute=absolute)
            est = vals / inv_weight
            means[chain, ir] = est.mean()
            variances[chain, ir] = est.var(ddof=1) / per_chain

    inv_var = 1.0 / np.maximum(variances, 1e-300)
    mean = (means * inv_var).sum(axis=0) / inv_var.sum(axis=0)
    stderr = np.sqrt(1.0 / inv_var.sum(axis=0))
    return mean, stderr, per_chain * n_chains


def a_n_monte_carlo(n, f: RadialFunction, radii, mc_budget=200_000, seed=0,
                    n_chains=4, uniform_mix=0.1) -> MCEstimate:
    """Monte Carlo estimate of the order-n coefficient at the given radii."""
    if not 3 <= n <= 4:
        raise ValueError("Monte Carlo coefficients supported for n in {3, 4}")
    if f.tail_exponent is None or f.tail_exponent <= 3.0:
        raise ValueError("need tail exponent > 3")
    graphs = enumerate_connected_graphs(n)
    mean, stderr, used = _mc_integral(f, n, radii, graphs, mc_budget, seed,
                                      n_chains=n_chains, uniform_mix=uniform_mix)
    fact = math.factorial(n - 2)
    return MCEstimate(radii=np.atleast_1d(np.asarray(radii, dtype=float)),
                      mean=mean / fact, stderr=stderr / fact, budget=used, seed=seed,
                      details={"n": n, "n_chains": n_chains, "uniform_mix": uniform_mix})


def a4_interpolated(f: RadialFunction, mc_budget=400_000, seed=0, n_radii=24) -> RadialFunction:
    """Order-4 coefficient sampled by MC on a coarse radius set and interpolated.

    The values beyond the last sampled radius are scaled down with the Mayer
    tail, which dominates the large-distance behavior of every coefficient.
    """
    from scipy.interpolate import PchipInterpolator

    grid = f.grid
    r_lo = grid.nodes[0]
    radii = np.unique(np.concatenate([
        np.linspace(r_lo, 2.0, n_radii // 2),
        np.geomspace(2.0, min(8.0, grid.r_max), n_radii - n_radii // 2),
    ]))
    est = a_n_monte_carlo(4, f, radii, mc_budget=mc_budget, seed=seed)
    interp = PchipInterpolator(radii, est.mean, extrapolate=False)
    vals = interp(grid.nodes)
    inside = ~np.isnan(vals)
    vals[~inside] = 0.0
    last_r = radii[-1]
    beyond = grid.nodes > last_r
    anchor = est.mean[-1]
    f_anchor = f(last_r)
    if f_anchor != 0.0:
        vals[beyond] = anchor * np.asarray(f(grid.nodes[beyond])) / f_anchor
    return RadialFunction(grid, vals, tail_exponent=f.tail_exponent)


# ---------------------------------------------------------------------------
# Assembled truncated expansion


@dataclass
class ClusterExpansion:
    """Truncated activity expansion of the pair correlation decay."""

    n_max: int
    z: float
    coeffs: dict
    omega: RadialFunction
    details: dict = field(default_factory=dict)


def ursell_truncated(u: Potential, beta, z, n_max=3, grid: RadialGrid | None = None,
                     ens: EnsembleParams | None = None, force=False,
                     mc_budget=400_000, seed=0) -> ClusterExpansion:
    """Assemble the truncated correlation decay: sum of a_N z^N for N = 2..n_max."""
    if n_max not in (2, 3, 4):
        raise ValueError("truncation order must be 2, 3, or 4")
    if ens is not None and not force and not (0.0 < z < ens.z_max_gas):
        raise GasPhaseError(
            f"activity z={z:g} outside the gas-phase window (0, {ens.z_max_gas:g}); "
            "pass force=True to proceed anyway")
    grid = grid or u.default_grid()
    ctx = mayer_context(u, beta, grid)
    f = ctx.f
    coeffs = {2: f}
    if n_max >= 3:
        coeffs[3] = ctx.a3
    if n_max >= 4:
        a4_key = ("a4", mc_budget, seed)
        if a4_key not in ctx.extras:
            ctx.extras[a4_key] = a4_interpolated(f, mc_budget=mc_budget, seed=seed)
        coeffs[4] = ctx.extras[a4_key]
    vals = np.zeros(grid.n)
    for order, coeff in coeffs.items():
        vals += coeff.values * z**order
    omega = RadialFunction(grid, vals, tail_exponent=f.tail_exponent)
    return ClusterExpansion(n_max=n_max, z=z, coeffs=coeffs, omega=omega,
                            details={"beta": beta, "seed": seed})


def ursell_derivative(u: Potential, v: RadialFunction, beta, z, n_max=3,
                      grid: RadialGrid | None = None, delta0=None) -> RadialFunction:
    """Directional derivative of the truncated correlation decay along v.

    Differentiates each bond factor (df = -beta * exp(-beta*u) * v) through the
    truncated coefficients; supported at orders 2 and 3 where the coefficients
    are in closed form.
    """
    if n_max not in (2, 3):
        raise ValueError("derivative implemented for truncation orders 2 and 3")
    grid = grid or u.default_grid()
    if delta0 is not None:
        nv = perturbation_norm(v, u)
        if nv > 0.5 * delta0:
            raise ValueError(f"perturbation too large: norm {nv:g} > delta0/2 = {0.5 * delta0:g}")
    ctx = mayer_context(u, beta, grid)
    f = ctx.f
    df_vals = -beta * (1.0 + f.values) * np.asarray(v(grid.nodes))
    df = RadialFunction(grid, df_vals, tail_exponent=f.tail_exponent)
    out = z**2 * df.values
    if n_max >= 3:
        di1 = volume_integral(df)
        fdf = radial_convolve(f, df)
        da3 = (2.0 * df.values * ctx.i1 + 2.0 * f.values * di1
               + 2.0 * fdf.values * (1.0 + f.values) + ctx.ff.values * df.values)
        out = out + z**3 * da3
    return RadialFunction(grid, out, tail_exponent=f.tail_exponent)


def check_tree_graph_bound(u: Potential, beta, n, radii, ens: EnsembleParams,
                           w_sigma: RadialFunction, grid: RadialGrid | None = None,
                           mc_budget=200_000, seed=0) -> InequalityReport:
    """MC check of the absolute graph-sum integral against the tree-graph bound.

    The bound is exp(n*beta*B) * n^(n-2) * c_beta^(n-1) * W_sigma(R); the check
    passes where the MC estimate stays below it within three standard errors.
    """
    if n not in (3, 4):
        raise ValueError("tree-graph check supported for n in {3, 4}")
    grid = grid or u.default_grid()
    f = mayer_context(u, beta, grid).f
    graphs = enumerate_connected_graphs(n)
    radii = np.atleast_1d(np.asarray(radii, dtype=float))
    mean, stderr, used = _mc_integral(f, n, radii, graphs, mc_budget, seed, absolute=True)
    rhs = (math.exp(n * beta * ens.B) * n ** (n - 2)
           * ens.c_beta ** (n - 1) * np.asarray(w_sigma(radii)))
    ok = mean <= rhs + 3.0 * stderr
    worst = int(np.argmin(rhs + 3.0 * stderr - mean))
    return InequalityReport(
        inequality=f"tree-graph bound (n={n})",
        lhs=float(mean[worst]), rhs=float(rhs[worst]), passed=bool(np.all(ok)),
        details={"radii": radii.tolist(), "mc_mean": mean.tolist(),
                 "mc_stderr": stderr.tolist(), "rhs": rhs.tolist(),
                 "budget": used, "seed": seed},
    )


def check_ursell_decay(expansion: ClusterExpansion, alpha, ens: EnsembleParams,
                       w_sigma: RadialFunction) -> InequalityReport:
    """Weighted-decay estimate for the truncated correlation plus its explicit envelope.

    Reports the measured weighted sup (finite iff the decay rate holds) and
    verifies pointwise |omega(r)| <= z^2 * c_beta * e^(2(beta*B+1)) /
    (1 - z*c_beta*e^(beta*B+1)) * W_sigma(r) on the grid.
    """
    omega = expansion.omega
    z = expansion.z
    c_omega_hat = weighted_sup_norm(omega, alpha)
    denom = 1.0 - z * ens.c_beta * math.exp(ens.beta * ens.B + 1.0)
    if denom <= 0.0:
        raise GasPhaseError("activity too large for the decay envelope")
    const = z**2 * ens.c_beta * math.exp(2.0 * (ens.beta * ens.B + 1.0)) / denom
    rhs_vals = const * np.asarray(w_sigma(omega.grid.nodes))
    lhs_vals = np.abs(omega.values)
    ok = lhs_vals <= rhs_vals * (1.0 + REL_TOL)
    worst = int(np.argmin(rhs_vals - lhs_vals))
    return InequalityReport(
        inequality="correlation decay envelope",
        lhs=float(lhs_vals[worst]), rhs=float(rhs_vals[worst]),
        passed=bool(np.all(ok)) and math.isfinite(c_omega_hat),
        details={"weighted_sup": c_omega_hat, "envelope_constant": const,
                 "worst_radius": float(omega.grid.nodes[worst])},
    )
