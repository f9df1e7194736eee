"""Grand canonical Monte Carlo: the sampling oracle for the forward map.

Metropolis insertions, deletions, and displacements in a periodic cubic box
with minimum-image distances and a plain cutoff (no shift; the induced bias
is documented, not corrected).  Chains are independent, seeded from the
master seed by a counter, and merged deterministically, so results do not
depend on how chains are scheduled.
"""

from __future__ import annotations

import json
import math
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .potentials import EnsembleParams, Potential
from .spaces import RadialFunction, RadialGrid


@dataclass(frozen=True)
class GCMCConfig:
    box_side: float
    beta: float
    z: float
    move_mix: tuple = (0.35, 0.35, 0.30)   # insert, delete, displace
    n_equilibrate: int = 20_000
    n_sample: int = 200_000
    bin_width: float = 0.05
    seed: int = 0
    n_chains: int = 8
    r_cut: float | None = None             # default min(5, box/2)
    r_hist_max: float | None = None        # default min(4, box/2)
    max_displacement: float = 0.5
    sample_every: int = 5

    def __post_init__(self):
        if self.box_side <= 0.0:
            raise ValueError("box side must be positive")
        if abs(sum(self.move_mix) - 1.0) > 1e-12:
            raise ValueError("move probabilities must sum to 1")
        if abs(self.move_mix[0] - self.move_mix[1]) > 1e-12:
            raise ValueError("insert and delete probabilities must match")
        if self.bin_width > self.box_side / 50.0:
            raise ValueError("bin width must be at most box_side/50")
        if self.r_cut is not None and self.r_cut > self.box_side / 2.0:
            raise ValueError("cutoff exceeds half the box")
        if self.n_chains < 1:
            raise ValueError("need at least one chain")

    @property
    def volume(self):
        return self.box_side**3

    def resolved_r_cut(self):
        return self.r_cut if self.r_cut is not None else min(5.0, self.box_side / 2.0)

    def resolved_r_hist_max(self):
        return self.r_hist_max if self.r_hist_max is not None else min(4.0, self.box_side / 2.0)


def insertion_ratio(z, volume, n_before, beta, delta_u):
    return z * volume / (n_before + 1) * math.exp(-beta * delta_u)


def deletion_ratio(z, volume, n_before, beta, delta_u):
    return n_before / (z * volume) * math.exp(-beta * delta_u)


def displacement_ratio(beta, delta_u):
    return math.exp(-beta * delta_u)


def _interaction(u: Potential, x, pos, n, box, r_cut, skip=-1):
    """Energy of a particle at x against the current configuration (minimum image)."""
    if n == 0 or (n == 1 and skip == 0):
        return 0.0
    d = pos[:n] - x
    d -= box * np.rint(d / box)
    r2 = np.einsum("ij,ij->i", d, d)
    if skip >= 0:
        r2[skip] = math.inf
    mask = r2 < r_cut * r_cut
    if not mask.any():
        return 0.0
    return float(np.sum(u(np.sqrt(r2[mask]))))


_N_HIST_CAP = 4096


def _run_chain(u, cfg: GCMCConfig, chain_idx, bin_edges):
    rng = np.random.default_rng([cfg.seed, chain_idx])
    box, beta, z = cfg.box_side, cfg.beta, cfg.z
    volume = cfg.volume
    r_cut = cfg.resolved_r_cut()
    r_hist_max = cfg.resolved_r_hist_max()
    p_ins, p_del, _ = cfg.move_mix

    cap = 128
    pos = np.empty((cap, 3))
    n = 0
    counts = np.zeros(bin_edges.size - 1)
    n_hist = np.zeros(_N_HIST_CAP, dtype=np.int64)
    sum_n = 0.0
    sum_n2 = 0.0
    snapshots = 0
    attempts = np.zeros(3, dtype=np.int64)
    accepts = np.zeros(3, dtype=np.int64)

    total = cfg.n_equilibrate + cfg.n_sample
    for step in range(total):
        pick = rng.random()
        if pick < p_ins:
            attempts[0] += 1
            x = rng.random(3) * box
            du = _interaction(u, x, pos, n, box, r_cut)
            if rng.random() < min(1.0, insertion_ratio(z, volume, n, beta, du)):
                accepts[0] += 1
                if n == cap:
                    cap *= 2
                    grown = np.empty((cap, 3))
                    grown[:n] = pos[:n]
                    pos = grown
                pos[n] = x
                n += 1
        elif pick < p_ins + p_del:
            attempts[1] += 1
            if n > 0:
                i = int(rng.integers(n))
                du = -_interaction(u, pos[i], pos, n, box, r_cut, skip=i)
                if rng.random() < min(1.0, deletion_ratio(z, volume, n, beta, du)):
                    accepts[1] += 1
                    pos[i] = pos[n - 1]
                    n -= 1
        else:
            attempts[2] += 1
            if n > 0:
                i = int(rng.integers(n))
                old = pos[i].copy()
                new = (old + rng.uniform(-cfg.max_displacement, cfg.max_displacement, 3)) % box
                e_old = _interaction(u, old, pos, n, box, r_cut, skip=i)
                e_new = _interaction(u, new, pos, n, box, r_cut, skip=i)
                if rng.random() < min(1.0, displacement_ratio(beta, e_new - e_old)):
                    accepts[2] += 1
                    pos[i] = new

        if step >= cfg.n_equilibrate and (step - cfg.n_equilibrate) % cfg.sample_every == 0:
            snapshots += 1
            sum_n += n
            sum_n2 += n * n
            n_hist[min(n, _N_HIST_CAP - 1)] += 1
            if n >= 2:
                d = pos[:n, None, :] - pos[None, :n, :]
                d -= box * np.rint(d / box)
                iu = np.triu_indices(n, k=1)
                r = np.sqrt(np.einsum("ij,ij->i", d[iu], d[iu]))
                counts += np.histogram(r[r < r_hist_max], bins=bin_edges)[0]

    return {
        "counts": counts, "n_hist": n_hist, "sum_n": sum_n, "sum_n2": sum_n2,
        "snapshots": snapshots, "attempts": attempts, "accepts": accepts,
        "final_positions": pos[:n].copy(),
    }


@dataclass
class GCMCResult:
    """Merged estimates from all chains, with per-bin standard errors.

    Standard errors combine the inter-chain spread with a Poisson floor
    sqrt(total counts + 1), which keeps empty and nearly empty bins from
    reporting spuriously tight errors.
    """

    g_hist: RadialFunction
    g_err: np.ndarray
    counts: np.ndarray
    bin_edges: np.ndarray
    rho0_mean: float
    rho0_err: float
    n_mean: float
    n_var: float
    n_distribution: np.ndarray
    acceptance_rates: dict
    diagnostics: dict = field(default_factory=dict)

    @property
    def radii(self):
        return self.g_hist.grid.nodes

    def missing_bins(self):
        return self.counts == 0


def run_gcmc(u: Potential, cfg: GCMCConfig, ens: EnsembleParams | None = None) -> GCMCResult:
    """Sample the grand canonical ensemble and estimate g(r) and the density."""
    if ens is not None and not (0.0 < cfg.z < ens.z_max_gas):
        warnings.warn(
            f"activity z={cfg.z:g} outside the certified gas-phase window "
            f"(0, {ens.z_max_gas:g}); simulating anyway", stacklevel=2)
    r_hist_max = cfg.resolved_r_hist_max()
    n_bins = int(round(r_hist_max / cfg.bin_width))
    bin_edges = cfg.bin_width * np.arange(n_bins + 1)
    chains = [_run_chain(u, cfg, k, bin_edges) for k in range(cfg.n_chains)]

    snaps = np.array([c["snapshots"] for c in chains], dtype=float)
    sum_n = np.array([c["sum_n"] for c in chains])
    rho_chain = (sum_n / snaps) / cfg.volume
    rho0_mean = float(np.mean(rho_chain))
    rho0_err = float(np.std(rho_chain, ddof=1) / math.sqrt(cfg.n_chains)) if cfg.n_chains > 1 else math.inf

    snaps_total = float(snaps.sum())
    n_mean = float(sum_n.sum() / snaps_total)
    n_var = float(np.array([c["sum_n2"] for c in chains]).sum() / snaps_total - n_mean**2)

    centers = 0.5 * (bin_edges[1:] + bin_edges[:-1])
    shell = 4.0 / 3.0 * math.pi * (bin_edges[1:] ** 3 - bin_edges[:-1] ** 3)
    # expected counts per snapshot for g == 1, using the pooled mean particle number
    norm_per_snap = shell * n_mean**2 / (2.0 * cfg.volume)
    counts_total = np.sum([c["counts"] for c in chains], axis=0)

    g_chain = np.stack([c["counts"] / (norm_per_snap * s) for c, s in zip(chains, snaps)])
    g_mean = g_chain.mean(axis=0)
    if cfg.n_chains > 1:
        g_sem = g_chain.std(axis=0, ddof=1) / math.sqrt(cfg.n_chains)
    else:
        g_sem = np.zeros_like(g_mean)
    poisson_floor = np.sqrt(counts_total + 1.0) / (norm_per_snap * snaps_total)
    g_err = np.maximum(g_sem, poisson_floor)

    attempts = np.sum([c["attempts"] for c in chains], axis=0)
    accepts = np.sum([c["accepts"] for c in chains], axis=0)
    rates = {name: (float(a / max(t, 1)))
             for name, a, t in zip(("insert", "delete", "displace"), accepts, attempts)}

    n_distribution = np.sum([c["n_hist"] for c in chains], axis=0)
    g_hist = RadialFunction(RadialGrid(centers), g_mean, tail_exponent=None)
    return GCMCResult(
        g_hist=g_hist, g_err=g_err, counts=counts_total, bin_edges=bin_edges,
        rho0_mean=rho0_mean, rho0_err=rho0_err, n_mean=n_mean, n_var=n_var,
        n_distribution=n_distribution, acceptance_rates=rates,
        diagnostics={"snapshots": snaps_total, "n_chains": cfg.n_chains,
                     "r_cut": cfg.resolved_r_cut(), "box_side": cfg.box_side,
                     "z": cfg.z, "beta": cfg.beta, "seed": cfg.seed},
    )


@dataclass
class CavityEstimate:
    """Cavity function per histogram bin; bins with no pair counts are missing."""

    radii: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    missing: np.ndarray


def estimate_cavity(result: GCMCResult, u: Potential, beta) -> CavityEstimate:
    """y = exp(beta*u) * g per bin; zero-count bins are flagged, not zeroed.

    The exponential amplifies statistical noise in the core, so bins without
    any pair events carry no cavity information and must not masquerade as 0.
    """
    radii = result.radii
    missing = result.missing_bins()
    with np.errstate(over="ignore"):
        boltz = np.exp(beta * np.asarray(u(radii)))
    values = np.where(missing, np.nan, boltz * result.g_hist.values)
    stderr = np.where(missing, np.nan, boltz * result.g_err)
    return CavityEstimate(radii=radii, values=values, stderr=stderr, missing=missing)


# ---------------------------------------------------------------------------
# Binary checkpoint: magic, version, thermodynamic state, positions, RNG state.
# All scalars little-endian; field order as written below.

_CHECKPOINT_MAGIC = b"IBIGCMC1"
_CHECKPOINT_VERSION = 1


def save_checkpoint(path, positions, rng: np.random.Generator, beta, z, box_side):
    positions = np.ascontiguousarray(positions, dtype="<f8")
    rng_blob = json.dumps(rng.bit_generator.state).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", _CHECKPOINT_VERSION))
        fh.write(struct.pack("<ddd", beta, z, box_side))
        fh.write(struct.pack("<Q", positions.shape[0]))
        fh.write(positions.tobytes())
        fh.write(struct.pack("<Q", len(rng_blob)))
        fh.write(rng_blob)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _CHECKPOINT_MAGIC:
            raise ValueError("not a chain checkpoint file")
        version = struct.unpack("<I", fh.read(4))[0]
        if version != _CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        beta, z, box_side = struct.unpack("<ddd", fh.read(24))
        n = struct.unpack("<Q", fh.read(8))[0]
        positions = np.frombuffer(fh.read(24 * n), dtype="<f8").reshape(n, 3).copy()
        blob_len = struct.unpack("<Q", fh.read(8))[0]
        state = json.loads(fh.read(blob_len).decode("utf-8"))
    rng = np.random.default_rng()
    rng.bit_generator.state = state
    return {"positions": positions, "rng": rng, "beta": beta, "z": z, "box_side": box_side}
