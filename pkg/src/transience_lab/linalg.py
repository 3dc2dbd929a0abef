"""Window solves and radius-ladder bracketing.

A window solve computes the harmonic extension of absorbing data into
``D = Gamma ∩ B(0, r)``: in matrix form ``(diag(sigma) - mu_DD) u = b``
where ``b`` collects conductance-weighted absorbing values on K and on the
complement of D (the rim convention).  The matrix is symmetric positive
definite, so CG applies; pyamg accelerates the large windows.

Bracketing an infinite-graph quantity works on a ladder of sub-radii.
With rim value 0 the solve is a rigorous lower bound that increases with
the radius; with rim value 1 it is a rigorous upper bound that decreases.
The limit is estimated by fitting the tail of the monotone sequence with
two decay models (power law in the radius, and the reciprocal-log law that
appears in two-dimensional recurrent situations); the model with the
smaller residual supplies the extrapolated value and an uncertainty
margin.  The reported bracket is the intersection of the rigorous
endpoints with the extrapolated ones, so it is never worse than the plain
policy bracket.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .graph import SubgraphView, GraphError

_PYAMG_MIN_N = 50_000
_DIRECT_MAX_N = 50_000


def spd_solve(M: sp.csr_matrix, b: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    """Solve the SPD system M u = b to the requested relative residual."""
    n = M.shape[0]
    if b.ndim == 1:
        bs = [b]
    else:
        bs = [b[:, j] for j in range(b.shape[1])]
    outs = []
    solver = None
    if n >= _PYAMG_MIN_N:
        import pyamg

        solver = pyamg.smoothed_aggregation_solver(M.tocsr(), max_coarse=500)
    lu = None
    if solver is None and n <= _DIRECT_MAX_N:
        lu = spla.splu(M.tocsc())
    for rhs in bs:
        bnorm = np.linalg.norm(rhs)
        if bnorm == 0:
            outs.append(np.zeros(n))
            continue
        if lu is not None:
            u = lu.solve(rhs)
        elif solver is not None:
            u = solver.solve(rhs, tol=rtol * 1e-2, accel="cg", maxiter=400)
        else:
            diag = M.diagonal()
            pre = spla.LinearOperator(M.shape, matvec=lambda v: v / diag)
            u, info = spla.cg(M, rhs, rtol=rtol * 1e-2, maxiter=20 * int(math.isqrt(n) + 100), M=pre)
        res = np.linalg.norm(M @ u - rhs) / bnorm
        if res > rtol:
            # polish with CG from the current iterate
            diag = M.diagonal()
            pre = spla.LinearOperator(M.shape, matvec=lambda v: v / diag)
            u, _ = spla.cg(M, rhs, x0=u, rtol=rtol * 1e-2, maxiter=200_000, M=pre)
            res = np.linalg.norm(M @ u - rhs) / bnorm
            if res > rtol:
                raise GraphError(f"linear solve stagnated at relative residual {res:.3e}")
        outs.append(u)
    return outs[0] if b.ndim == 1 else np.column_stack(outs)


@dataclass
class WindowOperator:
    """Factor-free representation of one ladder rung's absorbing problem."""

    view: SubgraphView
    sub_radius: int
    d_idx: np.ndarray          # window indices of the unknowns D
    M: sp.csr_matrix           # diag(sigma_D) - mu_DD
    k_load: sp.csr_matrix      # mu rows from D into K ∩ window (window-K local cols)
    k_cols: np.ndarray         # window indices of K ∩ window
    rim_load: np.ndarray       # conductance from D to everything outside D and K

    def solve(self, k_values, rim_value: float, rtol: float = 1e-10) -> np.ndarray:
        """Harmonic extension; returns values over D (aligned with d_idx)."""
        if np.isscalar(k_values):
            kv = np.full(len(self.k_cols), float(k_values))
        else:
            kv = np.asarray(k_values, dtype=np.float64)
            if kv.shape[0] == self.view.parent.n:
                kv = kv[self.k_cols]
        b = self.k_load @ kv + rim_value * self.rim_load
        if rim_value != 0 and np.isscalar(k_values) and float(k_values) == rim_value:
            return np.full(len(self.d_idx), rim_value)  # constant data: exact solution
        return spd_solve(self.M, b, rtol=rtol)


def window_operator(view: SubgraphView, sub_radius: Optional[int] = None) -> WindowOperator:
    """Assemble the SPD operator for D = Gamma ∩ B(0, sub_radius)."""
    g = view.parent
    r = g.radius if sub_radius is None else int(sub_radius)
    dmask = view.gamma_mask & (g.origin_distance <= r)
    d_idx = np.flatnonzero(dmask)
    if len(d_idx) == 0:
        raise GraphError(f"no Gamma vertices inside radius {r}")
    k_cols = np.flatnonzero(view.removed_mask)
    rows = g.mu[d_idx]
    mu_dd = rows[:, d_idx].tocsr()
    k_load = rows[:, k_cols].tocsr() if len(k_cols) else sp.csr_matrix((len(d_idx), 0))
    sigma_d = g.sigma[d_idx]
    M = (sp.diags(sigma_d) - mu_dd).tocsr()
    in_dk = np.asarray(mu_dd.sum(axis=1)).ravel() + (
        np.asarray(k_load.sum(axis=1)).ravel() if k_load.shape[1] else 0.0)
    rim_load = np.maximum(sigma_d - in_dk, 0.0)
    return WindowOperator(view=view, sub_radius=r, d_idx=d_idx, M=M,
                          k_load=k_load, k_cols=k_cols, rim_load=rim_load)


def ladder_radii(radius: int, min_radius: int = 6, max_rungs: int = 8) -> list:
    """Geometric (factor sqrt 2) radius schedule ending at the full window."""
    out = [int(radius)]
    r = float(radius)
    while len(out) < max_rungs:
        r /= math.sqrt(2.0)
        ri = int(round(r))
        if ri < min_radius or ri >= out[-1]:
            break
        out.append(ri)
    return sorted(out)


# ---------------------------------------------------------------------------
# tail extrapolation


@dataclass
class TailFit:
    """Extrapolated limit of a monotone ladder sequence with a margin."""

    limit: float
    margin: float
    model: str
    ok: bool


def _fit_power(radii, errs_rel):
    # errs_rel[j] = e(r_j) - e(r_last) >= 0 with e(r) = c r^-beta
    r = np.asarray(radii, dtype=np.float64)
    d = np.asarray(errs_rel, dtype=np.float64)
    mask = d > 0
    if mask.sum() < 2:
        return None
    r, d = r[mask], d[mask]
    rl = radii[-1]

    def model_err(beta):
        # relative error profile for exponent beta, normalised at r_last
        return r ** (-beta) - rl ** (-beta)

    best = None
    for beta in np.linspace(0.1, 4.0, 79):
        prof = model_err(beta)
        c = float(np.dot(prof, d) / np.dot(prof, prof))
        if c <= 0:
            continue
        resid = float(np.linalg.norm(c * prof - d) / (np.linalg.norm(d) + 1e-300))
        if best is None or resid < best[0]:
            best = (resid, beta, c)
    if best is None:
        return None
    resid, beta, c = best
    tail = c * rl ** (-beta)
    return resid, tail, f"power(beta={beta:.2f})"


def _fit_log(radii, errs_rel):
    # e(r) = c / (A + ln r)
    r = np.asarray(radii, dtype=np.float64)
    d = np.asarray(errs_rel, dtype=np.float64)
    mask = d > 0
    if mask.sum() < 2:
        return None
    r, d = r[mask], d[mask]
    rl = radii[-1]
    best = None
    for A in np.linspace(-1.0, 6.0, 71):
        if A + math.log(min(r.min(), rl)) <= 0.05:
            continue
        prof = 1.0 / (A + np.log(r)) - 1.0 / (A + math.log(rl))
        c = float(np.dot(prof, d) / np.dot(prof, prof))
        if c <= 0:
            continue
        resid = float(np.linalg.norm(c * prof - d) / (np.linalg.norm(d) + 1e-300))
        if best is None or resid < best[0]:
            best = (resid, A, c)
    if best is None:
        return None
    resid, A, c = best
    tail = c / (A + math.log(rl))
    return resid, tail, f"log(A={A:.2f})"


def fit_tail(radii: Sequence[float], values: Sequence[float], increasing: bool,
             resid_tol: float = 0.12) -> TailFit:
    """Estimate the limit of a monotone sequence of window values.

    The fit uses the gaps ``|v_last - v_j|`` as samples of the truncation
    error above the last rung.  A successful fit (small relative residual)
    yields ``limit = v_last +/- tail`` with a margin combining the residual
    and the disagreement between the two models.
    """
    v = np.asarray(values, dtype=np.float64)
    r = np.asarray(radii, dtype=np.float64)
    if len(v) < 3:
        return TailFit(limit=float(v[-1]), margin=float("inf"), model="none", ok=False)
    sign = 1.0 if increasing else -1.0
    gaps = sign * (v[-1] - v[:-1])
    if np.any(gaps < -1e-12):
        return TailFit(limit=float(v[-1]), margin=float("inf"), model="nonmonotone", ok=False)
    gaps = np.maximum(gaps, 0.0)
    if gaps[-1] < 1e-12:
        return TailFit(limit=float(v[-1]), margin=1e-10, model="flat", ok=True)
    fits = [f for f in (_fit_power(r[:-1], gaps), _fit_log(r[:-1], gaps)) if f is not None]
    if not fits:
        return TailFit(limit=float(v[-1]), margin=float("inf"), model="nofit", ok=False)
    fits.sort(key=lambda t: t[0])
    resid, tail, name = fits[0]
    spread = abs(fits[0][1] - fits[1][1]) if len(fits) > 1 else tail
    if resid > resid_tol:
        return TailFit(limit=float(v[-1] + sign * tail), margin=float("inf"),
                       model=name, ok=False)
    margin = max(0.5 * spread, resid * tail * 3.0, 0.05 * tail, 1e-9)
    return TailFit(limit=float(v[-1] + sign * tail), margin=float(margin),
                   model=name, ok=True)


def extrapolate_bracket(radii, lower_seq, upper_seq, rig_lower, rig_upper,
                        resid_tol: float = 0.12):
    """Bracket from monotone lower/upper ladder sequences.

    ``lower_seq`` increases, ``upper_seq`` decreases (either may be None).
    ``rig_lower``/``rig_upper`` are the always-valid endpoints (last rung
    values and/or trivial 0/1 bounds).  Returns (lower, upper, method).
    """
    lo, hi = rig_lower, rig_upper
    method = "policy"
    if lower_seq is not None and len(lower_seq) >= 3:
        f = fit_tail(radii, lower_seq, increasing=True, resid_tol=resid_tol)
        if f.ok:
            lo = max(lo, f.limit - f.margin)
            hi = min(hi, max(lo, f.limit + f.margin))
            method = f"ladder-{f.model}"
    if upper_seq is not None and len(upper_seq) >= 3:
        f = fit_tail(radii, upper_seq, increasing=False, resid_tol=resid_tol)
        if f.ok:
            hi = min(hi, f.limit + f.margin)
            lo = max(lo, min(hi, f.limit - f.margin))
            method = method if method.startswith("ladder") else f"ladder-{f.model}"
    if hi < lo:  # conflicting fits: fall back to the rigorous endpoints
        return rig_lower, rig_upper, "policy(conflict)"
    return lo, hi, method
