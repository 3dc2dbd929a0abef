"""Core graph types: finite windows of infinite weighted graphs.

A :class:`WeightedGraph` is the finite truncation of an infinite weighted
graph to the l1 ball of a given radius around the origin.  Vertices carry a
measure ``pi`` and edges a symmetric conductance ``mu`` with
``sum_y mu(x,y) <= pi(x)`` (subordination); the Markov kernel is
``K(x,y) = mu(x,y)/pi(x)`` off the diagonal with the deficit on the
diagonal.  The truncation also records, per vertex, the *total* ambient
conductance ``sigma(x) = sum over all neighbours in the infinite graph``,
so the substochastic window operator and the leakage through the window
rim are exact even though out-of-window vertices are never materialised.

A :class:`SubgraphView` selects ``Gamma = window \\ K`` together with its
exterior boundary (vertices of K adjacent to Gamma), inner boundary
(vertices of Gamma adjacent to K) and intrinsic metric.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

Vertex = tuple  # integer coordinate tuple

NEUMANN = "neumann"
DIRICHLET = "dirichlet"
H_TRANSFORM = "h_transform"

_KERNEL_MODES = (NEUMANN, DIRICHLET, H_TRANSFORM)


class GraphError(ValueError):
    """Invalid graph construction or query."""


class DisconnectedError(GraphError):
    """The selected subgraph is empty or not connected."""

    def __init__(self, msg, component_sizes=None):
        super().__init__(msg)
        self.component_sizes = component_sizes


# ---------------------------------------------------------------------------
# coordinate packing and window enumeration


def _bits_per_coord(dim: int) -> int:
    return 63 // dim


def pack_coords(coords: np.ndarray, dim: int) -> np.ndarray:
    """Pack integer coordinate rows into sortable int64 keys."""
    bits = _bits_per_coord(dim)
    half = 1 << (bits - 1)
    c = np.asarray(coords, dtype=np.int64)
    if c.ndim == 1:
        c = c[None, :]
    if np.any(np.abs(c) >= half):
        raise GraphError(f"coordinate magnitude exceeds packing range 2^{bits - 1}")
    key = np.zeros(len(c), dtype=np.int64)
    for i in range(dim):
        key = (key << bits) | (c[:, i] + half)
    return key


def l1_ball(dim: int, radius: int) -> np.ndarray:
    """All integer points with l1 norm <= radius, as an (n, dim) int32 array."""
    if radius < 0:
        raise GraphError("radius must be >= 0")
    cur = np.zeros((1, 0), dtype=np.int32)
    used = np.zeros(1, dtype=np.int64)
    for i in range(dim):
        rem = radius - used
        reps = 2 * rem + 1
        total = int(reps.sum())
        row = np.repeat(np.arange(len(cur)), reps)
        starts = np.cumsum(reps) - reps
        within = np.arange(total, dtype=np.int64) - np.repeat(starts, reps)
        vals = (within - np.repeat(rem, reps)).astype(np.int32)
        cur = np.concatenate([cur[row], vals[:, None]], axis=1)
        used = used[row] + np.abs(vals.astype(np.int64))
    return cur


@dataclass(frozen=True)
class WeightedGraph:
    """Finite l1-ball truncation of an infinite weighted graph.

    Attributes
    ----------
    coords : (n, dim) int32 array
        Vertex coordinates; row order is fixed and used everywhere.
    pi : (n,) float array
        Vertex measure.
    mu : (n, n) csr matrix
        Symmetric edge conductances restricted to the window.
    sigma : (n,) float array
        Total conductance to *all* ambient neighbours (including those
        outside the window).  ``sigma - mu.sum(axis=1)`` is the leakage.
    radius : int
        Truncation radius R; the window is ``{x : |x|_1 <= R}`` intersected
        with the ambient vertex set.
    ambient : object
        Generator-provided descriptor of the infinite graph (see
        :mod:`transience_lab.generators`).
    """

    coords: np.ndarray
    pi: np.ndarray
    mu: sp.csr_matrix
    sigma: np.ndarray
    radius: int
    ambient: object = None
    _keys: np.ndarray = field(default=None, repr=False)
    _order: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        keys = pack_coords(self.coords, self.dim)
        order = np.argsort(keys, kind="stable")
        object.__setattr__(self, "_keys", keys[order])
        object.__setattr__(self, "_order", order)

    @property
    def n(self) -> int:
        return len(self.coords)

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    def index_of(self, coords, missing="raise") -> np.ndarray:
        """Row indices of the given coordinate rows (-1 for absent if allowed)."""
        c = np.atleast_2d(np.asarray(coords, dtype=np.int64))
        keys = pack_coords(c, self.dim)
        pos = np.searchsorted(self._keys, keys)
        pos = np.clip(pos, 0, len(self._keys) - 1)
        hit = self._keys[pos] == keys
        out = np.where(hit, self._order[pos], -1)
        if missing == "raise" and np.any(out < 0):
            bad = c[out < 0][0]
            raise GraphError(f"vertex {tuple(int(v) for v in bad)} not in window")
        return out

    def index(self, vertex: Vertex) -> int:
        return int(self.index_of(np.asarray(vertex, dtype=np.int64)[None, :])[0])

    def vertex(self, i: int) -> Vertex:
        return tuple(int(v) for v in self.coords[i])

    @property
    def origin_distance(self) -> np.ndarray:
        return np.abs(self.coords.astype(np.int64)).sum(axis=1)

    @property
    def leakage(self) -> np.ndarray:
        """Per-vertex conductance to ambient neighbours outside the window."""
        inside = np.asarray(self.mu.sum(axis=1)).ravel()
        return np.maximum(self.sigma - inside, 0.0)

    def l1_to(self, vertex_index: int) -> np.ndarray:
        """Ambient (l1) distance from every window vertex to one vertex."""
        d = np.abs(self.coords.astype(np.int64) - self.coords[vertex_index].astype(np.int64))
        return d.sum(axis=1)

    def validate(self, atol: float = 1e-12) -> None:
        """Check symmetry, subordination, no self-loops, connectivity."""
        asym = abs(self.mu - self.mu.T)
        if asym.nnz and asym.max() > atol:
            raise GraphError("mu is not symmetric")
        if self.mu.diagonal().any():
            raise GraphError("self-loops are not allowed")
        inside = np.asarray(self.mu.sum(axis=1)).ravel()
        if np.any(inside > self.pi * (1 + 1e-12)):
            raise GraphError("edge weights are not subordinate to pi")
        if np.any(inside > self.sigma * (1 + 1e-12)):
            raise GraphError("sigma is smaller than the in-window conductance")
        ncomp, _ = csgraph.connected_components(self.mu, directed=False)
        if ncomp != 1:
            raise DisconnectedError(f"window graph has {ncomp} components")


def check_controlled_weights(g: WeightedGraph) -> float:
    """Best controlled-weights constant: max over edges of pi(x)/mu(x,y)."""
    coo = g.mu.tocoo()
    if coo.nnz == 0:
        return 1.0
    return float(np.max(g.pi[coo.row] / coo.data))


# ---------------------------------------------------------------------------
# subgraph views


@dataclass(frozen=True)
class SubgraphView:
    """The subgraph ``Gamma = window \\ K`` with boundary bookkeeping.

    ``removed_mask`` marks K within the window.  The exterior boundary is
    the set of K vertices with a neighbour in Gamma; the inner boundary is
    the set of Gamma vertices with a neighbour in K.  Rim vertices (window
    vertices with ambient neighbours beyond the window) are tracked
    separately: they belong to the truncation, not to the geometry of K.
    """

    parent: WeightedGraph
    removed_mask: np.ndarray
    metric_mode: str = "intrinsic"

    gamma_mask: np.ndarray = field(default=None, repr=False)
    gamma_idx: np.ndarray = field(default=None, repr=False)
    gamma_pos: np.ndarray = field(default=None, repr=False)
    exterior_boundary_idx: np.ndarray = field(default=None, repr=False)
    inner_boundary_idx: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        g = self.parent
        removed = np.asarray(self.removed_mask, dtype=bool)
        gamma = ~removed
        if not gamma.any():
            raise DisconnectedError("Gamma is empty")
        adj = g.mu
        # neighbour counts across the K/Gamma cut
        gamma_f = gamma.astype(np.float64)
        n_gamma_nbrs = adj @ gamma_f
        ext = removed & (n_gamma_nbrs > 0)
        inner = gamma & ((adj @ removed.astype(np.float64)) > 0)
        gidx = np.flatnonzero(gamma)
        pos = np.full(g.n, -1, dtype=np.int64)
        pos[gidx] = np.arange(len(gidx))
        object.__setattr__(self, "removed_mask", removed)
        object.__setattr__(self, "gamma_mask", gamma)
        object.__setattr__(self, "gamma_idx", gidx)
        object.__setattr__(self, "gamma_pos", pos)
        object.__setattr__(self, "exterior_boundary_idx", np.flatnonzero(ext))
        object.__setattr__(self, "inner_boundary_idx", np.flatnonzero(inner))

    @property
    def n_gamma(self) -> int:
        return len(self.gamma_idx)

    @property
    def mu_gamma(self) -> sp.csr_matrix:
        """Conductances restricted to Gamma, in Gamma-local indexing."""
        return self.parent.mu[self.gamma_idx][:, self.gamma_idx].tocsr()

    def check_connected(self) -> None:
        sub = self.mu_gamma
        ncomp, labels = csgraph.connected_components(sub, directed=False)
        if ncomp != 1:
            sizes = np.bincount(labels)
            raise DisconnectedError(
                f"Gamma has {ncomp} components (sizes {sorted(sizes, reverse=True)[:5]}...)",
                component_sizes=sizes,
            )

    # -- distances ---------------------------------------------------------

    def gamma_bfs(self, sources) -> np.ndarray:
        """Intrinsic (within-Gamma) distances from source set to all of Gamma.

        Returns a float array over Gamma-local indices; unreachable is +inf.
        ``sources`` are Gamma-local indices.
        """
        sources = np.atleast_1d(np.asarray(sources, dtype=np.int64))
        if len(sources) == 0:
            return np.full(self.n_gamma, np.inf)
        d = csgraph.dijkstra(self.mu_gamma, directed=False, indices=sources,
                             unweighted=True, min_only=len(sources) > 1)
        if d.ndim > 1:
            d = d[0] if len(sources) == 1 else d.min(axis=0)
        return d

    def clearance(self) -> np.ndarray:
        """d_Gamma(x, exterior boundary) for every Gamma vertex.

        Uses the extension of the intrinsic metric to the exterior
        boundary, i.e. 1 + distance to the inner boundary.
        """
        ib = self.gamma_pos[self.inner_boundary_idx]
        if len(ib) == 0:
            return np.full(self.n_gamma, np.inf)
        return 1.0 + self.gamma_bfs(ib)

    def distance_to_removed(self) -> np.ndarray:
        """Ambient-metric distance from every window vertex to K (exact l1 scan)."""
        g = self.parent
        rem = g.coords[self.removed_mask].astype(np.int64)
        if len(rem) == 0:
            return np.full(g.n, np.inf)
        # chunked to keep the (n_window x n_K) distance matrix in memory
        out = np.empty(g.n, dtype=np.float64)
        step = max(1, int(4e7) // max(len(rem), 1))
        for s in range(0, g.n, step):
            blk = g.coords[s:s + step].astype(np.int64)
            d = np.abs(blk[:, None, :] - rem[None, :, :]).sum(axis=2)
            out[s:s + step] = d.min(axis=1)
        return out


def subgraph(g: WeightedGraph, removed, metric_mode: str = "intrinsic",
             require_connected: bool = True) -> SubgraphView:
    """Construct ``Gamma = window \\ K``.

    Parameters
    ----------
    removed : callable, mask, or sequence of vertices
        The set K.  A callable receives the (n, dim) coordinate array and
        returns a boolean mask.  ``None`` means K is empty (full graph,
        empty boundaries).
    """
    if removed is None:
        mask = np.zeros(g.n, dtype=bool)
    elif callable(removed):
        mask = np.asarray(removed(g.coords), dtype=bool)
    elif isinstance(removed, np.ndarray) and removed.dtype == bool:
        mask = removed
    else:
        verts = np.asarray(list(removed), dtype=np.int64)
        mask = np.zeros(g.n, dtype=bool)
        if len(verts):
            idx = g.index_of(verts, missing="ignore")
            mask[idx[idx >= 0]] = True
    view = SubgraphView(parent=g, removed_mask=mask, metric_mode=metric_mode)
    if require_connected:
        view.check_connected()
    return view


def intrinsic_distance(view: SubgraphView, x: Vertex, y: Vertex) -> int:
    """Shortest-path distance within Gamma, extended to the exterior boundary.

    For ``y`` in the exterior boundary the extension
    ``d_Gamma(x, y) = 1 + min over Gamma-neighbours z of y of d_Gamma(x, z)``
    is used.  Raises if ``y`` is unreachable inside the truncation.
    """
    g = view.parent
    xi = g.index(x)
    yi = g.index(y)
    if not view.gamma_mask[xi]:
        raise GraphError(f"x={x} is not in Gamma")
    dist = view.gamma_bfs(view.gamma_pos[xi])
    if view.gamma_mask[yi]:
        d = dist[view.gamma_pos[yi]]
    else:
        if yi not in set(view.exterior_boundary_idx.tolist()):
            raise GraphError(f"y={y} is neither in Gamma nor on its exterior boundary")
        row = g.mu.indices[g.mu.indptr[yi]:g.mu.indptr[yi + 1]]
        nbrs = row[view.gamma_mask[row]]
        d = 1.0 + min(dist[view.gamma_pos[z]] for z in nbrs)
    if not np.isfinite(d):
        raise GraphError(f"{y} is unreachable from {x} within the truncation")
    return int(d)


# ---------------------------------------------------------------------------
# kernels


@dataclass(frozen=True)
class KernelSpec:
    """A materialised transition kernel over Gamma (local indexing).

    ``matrix`` holds the full rows including diagonal.  Row-sum behaviour:

    * Neumann: rows sum to 1 exactly (deficit folded into the diagonal,
      which reflects both at K and at the window rim).
    * Dirichlet: diagonal is the ambient one, so rows sum to < 1 exactly at
      inner-boundary and rim vertices (killing at K and at the truncation).
    * h-transform: rows sum to 1 up to float error wherever the profile is
      numerically harmonic and the vertex carries no rim leakage.
    """

    mode: str
    view: SubgraphView
    matrix: sp.csr_matrix
    pi: np.ndarray
    laziness: float
    profile: Optional[np.ndarray] = None

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()

    def heat_row(self, x_local: int, n: int) -> np.ndarray:
        """Transition density row p(n, x, .) = K^n(x, .)/pi(.)."""
        v = np.zeros(self.matrix.shape[0])
        v[x_local] = 1.0
        mt = self.matrix.T.tocsr()
        for _ in range(n):
            v = mt @ v
        return v / self.pi


def make_kernel(view: SubgraphView, mode: str, laziness: float = 0.5,
                profile: Optional[np.ndarray] = None) -> KernelSpec:
    """Materialise the Neumann, Dirichlet, or h-transform kernel on Gamma.

    ``profile`` (required for the h-transform) is a value per window vertex,
    positive on Gamma; values off Gamma are ignored.
    """
    if mode not in _KERNEL_MODES:
        raise GraphError(f"unknown kernel mode {mode!r}")
    g = view.parent
    gidx = view.gamma_idx
    sub = view.mu_gamma.tocoo()
    pi_g = g.pi[gidx]
    off = sp.csr_matrix((sub.data / pi_g[sub.row], (sub.row, sub.col)),
                        shape=(view.n_gamma, view.n_gamma))
    if mode == NEUMANN:
        diag = 1.0 - np.asarray(off.sum(axis=1)).ravel()
        mat = off + sp.diags(diag)
        pi_k = pi_g
        prof = None
    elif mode == DIRICHLET:
        diag = 1.0 - g.sigma[gidx] / pi_g
        mat = off + sp.diags(diag)
        pi_k = pi_g
        prof = None
    else:
        if profile is None:
            raise GraphError("h-transform requires a profile")
        h = np.asarray(profile, dtype=np.float64)
        if h.shape[0] == g.n:
            h = h[gidx]
        if np.any(h <= 0):
            raise GraphError("profile must be positive on Gamma")
        diag = 1.0 - g.sigma[gidx] / pi_g
        mat = sp.diags(1.0 / h) @ (off + sp.diags(diag)) @ sp.diags(h)
        pi_k = h * h * pi_g
        prof = h
    mat = mat.tocsr()
    dmin = mat.diagonal().min() if mat.shape[0] else 1.0
    if dmin < laziness - 1e-12:
        raise GraphError(f"kernel diagonal {dmin:.6g} below laziness floor {laziness}")
    return KernelSpec(mode=mode, view=view, matrix=mat, pi=pi_k,
                      laziness=laziness, profile=prof)


# ---------------------------------------------------------------------------
# scalar fields and sandwich estimates


@dataclass
class ScalarField:
    """Vertex-indexed values over a window with provenance metadata.

    ``values`` is aligned with the parent window's vertex order.  ``kind``
    is one of ``psi``, ``profile``, ``heat``, ``equilibrium``, ``other``.
    """

    view: SubgraphView
    values: np.ndarray
    kind: str = "other"
    normalization: Optional[tuple] = None  # (vertex, value)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape[0] != self.view.parent.n:
            raise GraphError("field length does not match the window")
        if self.kind == "psi":
            v = self.values[np.isfinite(self.values)]
            if len(v) and (v.min() < -1e-9 or v.max() > 1 + 1e-9):
                raise GraphError("psi field values must lie in [0, 1]")
        if self.kind == "profile":
            on_gamma = self.values[self.view.gamma_idx]
            if np.any(on_gamma[np.isfinite(on_gamma)] <= 0):
                raise GraphError("profile must be positive on Gamma")

    def at(self, vertex: Vertex) -> float:
        return float(self.values[self.view.parent.index(vertex)])

    def gamma_values(self) -> np.ndarray:
        return self.values[self.view.gamma_idx]


@dataclass
class SandwichEstimate:
    """Bracket [lower, upper] of a quantity defined on the infinite graph.

    ``lower``/``upper`` come from opposite absorbing conventions at the
    window's edge, sharpened where possible by tail extrapolation across a
    radius ladder (``method`` records which).  ``converged`` means the
    bracket width met the requested gap.
    """

    lower: float
    upper: float
    truncation_radius: int
    converged: bool
    method: str = "policy"

    def __post_init__(self):
        if self.lower > self.upper + 1e-12:
            raise GraphError(f"invalid bracket [{self.lower}, {self.upper}]")

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lower + self.upper)

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def combine_tighter(self, other: "SandwichEstimate") -> "SandwichEstimate":
        """Intersect two valid brackets of the same quantity."""
        lo = max(self.lower, other.lower)
        hi = min(self.upper, other.upper)
        return SandwichEstimate(lo, hi, max(self.truncation_radius, other.truncation_radius),
                                self.converged or other.converged,
                                method=f"{self.method}+{other.method}")
