"""Numerical toolkit for iterative Boltzmann inversion in the gas phase.

Recovers a Lennard-Jones type pair potential from a radial distribution
function via the fixed-point update u + gamma*log(F(u)/g_target), with a
cluster-expansion forward model, a grand canonical Monte Carlo oracle, and
executable versions of the supporting convolution and decay inequalities.
"""

__version__ = "0.1.0"

from .cluster import (ClusterExpansion, LabeledGraph, a3_analytic, a_n_monte_carlo,
                      check_tree_graph_bound, check_ursell_decay,
                      enumerate_connected_graphs, enumerate_trees, ursell_derivative,
                      ursell_truncated)
from .convolution import (AutoconvolutionLadder, build_ladder, check_banach_algebra,
                          check_geometric_decay, convolve_at_zero, radial_convolve,
                          series_w_sigma)
from .forward import (ForwardResult, check_cavity_lower_bound, density_rho0,
                      rdf_derivative, rdf_expansion)
from .gcmc import GCMCConfig, GCMCResult, estimate_cavity, run_gcmc
from .ibi import (IBIConfig, IBITrace, ibi_step, lipschitz_probe, phi_derivative,
                  pmf_initial_guess, run_ibi)
from .potentials import (Configuration, EnsembleParams, LJTypeParams, Potential,
                         certify_lj_type, estimate_stability_constant, gas_phase_bounds,
                         mayer_function, mayer_integral_bound, perturbation_radius,
                         total_energy)
from .reports import (CertificationError, CertificationReport, ExpansionValidityError,
                      GasPhaseError, InequalityReport)
from .spaces import (RadialFunction, RadialGrid, embedding_constant, l1_norm,
                     perturbation_norm, volume_integral, weight, weighted_sup_norm)
