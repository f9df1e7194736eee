"""Radial 3d convolutions, autoconvolution ladders, and their norm inequalities.

The 3d convolution of radially symmetric functions reduces to
(w*w')(r) = (2*pi/r) * int_0^inf s*w(s) [ int_{|r-s|}^{r+s} t*w'(t) dt ] ds,
which is evaluated with trapezoid quadrature on a shared grid extended
geometrically past the last node using the analytic power-law tails.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .reports import InequalityReport
from .spaces import (RadialFunction, RadialGrid, embedding_constant, l1_norm,
                     weighted_sup_norm)

REL_TOL = 1e-6  # quadrature slack absorbed by every inequality check

_TAIL_FACTOR = 40.0
_TAIL_NODES = 96


def _check_tail(w):
    if w.tail_exponent is None:
        raise ValueError("convolution needs tail exponents on both inputs")
    if w.tail_exponent <= 3.0:
        raise ValueError("tail exponent <= 3: convolution integral diverges")


def _quadrature_nodes(w: RadialFunction, w2: RadialFunction):
    base = np.union1d(w.grid.nodes, w2.grid.nodes)
    r_end = base[-1]
    if math.isinf(w.tail_exponent) and math.isinf(w2.tail_exponent):
        return base, base
    ext = r_end * (_TAIL_FACTOR ** (np.arange(1, _TAIL_NODES + 1) / _TAIL_NODES))
    return base, np.concatenate([base, ext])


def radial_convolve(w: RadialFunction, w2: RadialFunction) -> RadialFunction:
    """3d convolution of two radial profiles, tabulated on their shared grid."""
    _check_tail(w)
    _check_tail(w2)
    base, s = _quadrature_nodes(w, w2)
    wa = np.asarray(w(s))
    wb = np.asarray(w2(s))

    xs = np.concatenate([[0.0], s])
    integrand = np.concatenate([[0.0], s * wb])
    inner = np.concatenate([[0.0], np.cumsum(0.5 * (integrand[1:] + integrand[:-1]) * np.diff(xs))])
    p2 = w2.tail_exponent
    if math.isinf(p2):
        inner_total = inner[-1]
    else:
        inner_total = inner[-1] + wb[-1] * s[-1] ** 2 / (p2 - 2.0)

    out = np.empty_like(base)
    outer_weight = s * wa
    chunk = max(1, int(2_000_000 / s.size))
    for start in range(0, base.size, chunk):
        r = base[start:start + chunk, None]
        hi = np.interp(r + s[None, :], xs, inner, right=inner_total)
        lo = np.interp(np.abs(r - s[None, :]), xs, inner, right=inner_total)
        vals = np.trapezoid(outer_weight[None, :] * (hi - lo), s, axis=1)
        out[start:start + chunk] = 2.0 * math.pi * vals / base[start:start + chunk]

    tail = min(w.tail_exponent, w2.tail_exponent)
    return RadialFunction(RadialGrid(base), out, tail_exponent=tail)


def convolve_at_zero(w: RadialFunction, w2: RadialFunction):
    """Limit value of the 3d convolution at the origin: 4*pi int s^2 w(s) w'(s) ds."""
    _check_tail(w)
    _check_tail(w2)
    _, s = _quadrature_nodes(w, w2)
    integrand = s * s * np.asarray(w(s)) * np.asarray(w2(s))
    body = np.trapezoid(np.concatenate([[0.0], integrand]), np.concatenate([[0.0], s]))
    p = w.tail_exponent + w2.tail_exponent
    tail = 0.0
    if not math.isinf(p):
        tail = w(s[-1]) * w2(s[-1]) * s[-1] ** 3 / (p - 3.0)
    return 4.0 * math.pi * (body + tail)


@dataclass
class AutoconvolutionLadder:
    """w and its repeated self-convolutions with their recorded norms."""

    w: RadialFunction
    alpha: float
    terms: list            # terms[k] is the (k+1)-fold autoconvolution
    q: float               # L1 mass of w
    q_bar: float           # chosen geometric rate in (q, 1)
    l1_norms: list = field(default_factory=list)
    sup_norms: list = field(default_factory=list)

    @property
    def n_max(self):
        return len(self.terms)


def build_ladder(w: RadialFunction, alpha, n_max=10, q_bar=None) -> AutoconvolutionLadder:
    """Autoconvolutions W_1..W_n_max of w; requires total mass q < 1."""
    q = l1_norm(w)
    if q >= 1.0:
        raise ValueError(
            f"total mass q={q:.6g} >= 1; the comparison function must have mass "
            "below one (shrink the perturbation radius)")
    if q_bar is None:
        q_bar = 0.5 * (1.0 + q)
    if not q < q_bar < 1.0:
        raise ValueError("need q < q_bar < 1")
    terms = [w]
    for _ in range(1, n_max):
        terms.append(radial_convolve(w, terms[-1]))
    ladder = AutoconvolutionLadder(w=w, alpha=alpha, terms=terms, q=q, q_bar=q_bar)
    ladder.l1_norms = [l1_norm(t) for t in terms]
    ladder.sup_norms = [weighted_sup_norm(t, alpha) for t in terms]
    return ladder


@dataclass
class AutoconvolutionSeries:
    """Partial sum of the autoconvolution series with certified remainder bounds."""

    fn: RadialFunction
    n_terms: int
    remainder_sup: float        # pointwise bound on the dropped tail of the series
    remainder_l1: float
    remainder_envelope: float   # geometric-envelope bound (loose but principled)


def series_w_sigma(ladder: AutoconvolutionLadder, tol=1e-8) -> AutoconvolutionSeries:
    """Sum of all autoconvolutions, truncated once the weighted norm of the
    current term drops below tol*(1 - q_bar).

    Uses the reassociation W_{m+k} = W_m * W_k to double the number of summed
    terms per convolution pair, which keeps slowly decaying ladders (q close
    to 1) affordable.  The dropped tail equals W_m * (full series), bounded
    pointwise by sup|W_m| * q/(1-q).
    """
    q, q_bar, alpha = ladder.q, ladder.q_bar, ladder.alpha
    w = ladder.w
    if q >= 1.0:
        raise ValueError("series diverges for q >= 1")

    current = w                      # W_{n}
    partial = w                      # sum of W_1..W_n
    n = 1
    threshold = tol * (1.0 - q_bar)
    max_doublings = 64
    for _ in range(max_doublings):
        if weighted_sup_norm(current, alpha) < threshold:
            break
        partial = partial.with_values(partial.values + radial_convolve(current, partial).values)
        current = radial_convolve(current, current)
        n *= 2
    sup_cur = float(np.max(np.abs(current.values)))
    remainder_sup = sup_cur * q / (1.0 - q)
    remainder_l1 = q ** (n + 1) / (1.0 - q)
    eps = 1.0 - (q / q_bar) ** (1.0 / alpha)
    c_star = eps ** (-alpha) / (q_bar - q)
    remainder_envelope = (c_star * weighted_sup_norm(w, alpha)
                          * q_bar ** (n + 1) / (1.0 - q_bar))
    return AutoconvolutionSeries(fn=partial, n_terms=n, remainder_sup=remainder_sup,
                                 remainder_l1=remainder_l1,
                                 remainder_envelope=remainder_envelope)


def check_banach_algebra(w: RadialFunction, w2: RadialFunction, alpha) -> InequalityReport:
    """Weighted norm of a convolution against its algebra bound."""
    lhs = weighted_sup_norm(radial_convolve(w, w2), alpha)
    nw = weighted_sup_norm(w, alpha)
    nw2 = weighted_sup_norm(w2, alpha)
    rhs = embedding_constant(alpha) * 2.0 ** (alpha + 1.0) * nw * nw2
    return InequalityReport(
        inequality="convolution algebra bound",
        lhs=lhs, rhs=rhs, passed=lhs <= rhs * (1.0 + REL_TOL),
        details={"alpha": alpha, "norm_w": nw, "norm_w2": nw2},
    )


def check_geometric_decay(ladder: AutoconvolutionLadder) -> InequalityReport:
    """Per-level geometric envelopes for the autoconvolution norms.

    Checks the sharp envelope
        ||W_n|| <= eps^-alpha * ||w|| * (1-(q/q_bar)^n)/(1-q/q_bar) * q_bar^(n-1)
    with eps = 1 - (q/q_bar)^(1/alpha), and the weaker C* q_bar^n envelope.
    """
    q, q_bar, alpha = ladder.q, ladder.q_bar, ladder.alpha
    eps = 1.0 - (q / q_bar) ** (1.0 / alpha)
    norm_w = ladder.sup_norms[0]
    c_star = eps ** (-alpha) / (q_bar - q)
    rows = []
    ok = True
    worst = (0.0, math.inf)
    for idx, norm_n in enumerate(ladder.sup_norms):
        n = idx + 1
        ratio = q / q_bar
        env_sharp = eps ** (-alpha) * norm_w * (1.0 - ratio**n) / (1.0 - ratio) * q_bar ** (n - 1)
        env_weak = c_star * q_bar**n * norm_w
        passed = (norm_n <= env_sharp * (1.0 + REL_TOL)) and (norm_n <= env_weak * (1.0 + REL_TOL))
        ok = ok and passed
        if norm_n > worst[0]:
            worst = (norm_n, env_sharp)
        rows.append({"n": n, "norm": norm_n, "envelope_sharp": env_sharp,
                     "envelope_weak": env_weak, "pass": passed})
    return InequalityReport(
        inequality="autoconvolution geometric decay",
        lhs=worst[0], rhs=worst[1], passed=ok,
        details={"eps": eps, "q": q, "q_bar": q_bar, "C_star": c_star, "levels": rows},
    )
