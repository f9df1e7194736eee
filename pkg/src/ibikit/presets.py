"""Reference setup: the 12-6 potential and its certified ensemble constants.

The family constants place the core boundary at r0 = 0.9*sigma (the core
envelope degenerates exactly at r = sigma, so the boundary must sit strictly
inside).  The stability search runs with the default budget (N <= 4), whose
optimum is the regular tetrahedron at the pair-minimum distance: B = 3/2 for
the unit 12-6 potential.  All gas-phase claims are relative to this estimate.
"""

from __future__ import annotations

from dataclasses import dataclass

from .cluster import mayer_context
from .potentials import (EnsembleParams, LJTypeParams, Potential,
                         estimate_stability_constant, mayer_integral_bound,
                         perturbation_radius, require_certified)
from .spaces import RadialFunction, RadialGrid


def reference_family() -> LJTypeParams:
    return LJTypeParams(alpha=6.0, r0=0.9, c0=0.1, C0=100.0)


def reference_potential() -> Potential:
    return Potential.lennard_jones(1.0, 1.0, params=reference_family())


def reference_grid(dr_factor=0.005, r_max=None) -> RadialGrid:
    return RadialGrid.hybrid(reference_family().r0, r_max=r_max, dr_factor=dr_factor)


@dataclass
class ReferenceSetup:
    """Everything the acceptance runs share for the reference potential."""

    u: Potential
    grid: RadialGrid
    beta: float
    f: RadialFunction
    c_beta: float
    B: float
    z_max_gas: float
    z_max_strict: float
    delta0: float
    C_beta_envelope: float
    q: float

    def ensemble(self, z) -> EnsembleParams:
        return EnsembleParams(beta=self.beta, z=z, c_beta=self.c_beta, B=self.B)

    def comparison_function(self) -> RadialFunction:
        """The positive comparison profile |f|/c_beta + C_beta*delta0/weight."""
        import numpy as np

        from .spaces import weight
        r = self.grid.nodes
        vals = (np.abs(self.f.values) / self.c_beta
                + self.C_beta_envelope * self.delta0 / weight(r, 6.0))
        return RadialFunction(self.grid, vals, tail_exponent=6.0)


_SETUP_CACHE = {}


def reference_setup(beta=1.0, dr_factor=0.005) -> ReferenceSetup:
    key = (beta, dr_factor)
    if key not in _SETUP_CACHE:
        u = reference_potential()
        grid = reference_grid(dr_factor=dr_factor)
        require_certified(u, grid)
        ctx = mayer_context(u, beta, grid)
        c_beta = mayer_integral_bound(ctx.f)
        b_hat = estimate_stability_constant(u).B_hat
        pr = perturbation_radius(u, beta, c_beta, b_hat, grid)
        ens = EnsembleParams(beta=beta, z=pr.delta0 + 1e-300, c_beta=c_beta, B=b_hat)
        _SETUP_CACHE[key] = ReferenceSetup(
            u=u, grid=grid, beta=beta, f=ctx.f, c_beta=c_beta, B=b_hat,
            z_max_gas=ens.z_max_gas, z_max_strict=ens.z_max_strict,
            delta0=pr.delta0, C_beta_envelope=pr.C_beta, q=pr.q)
    return _SETUP_CACHE[key]
