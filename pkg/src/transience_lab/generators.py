"""Example geometries: lattices, half-spaces, sparse lines, cones, parabolas.

Each generator describes an infinite weighted graph (the *ambient* model)
together with the removed set K.  The ambient model knows, at any vertex,
its measure, its conductances, and the total conductance to all ambient
neighbours, so finite windows of any radius can be cut out exactly and
random walks can be simulated without a window at all.

Weight convention: every generator emits the lazy walk with hold
probability exactly 1/2 at full-degree vertices, realised by setting
``pi = 2 * sum_y mu(x,y)`` there.  The weighted half-space instead fixes
``pi = (1 + x_m)^alpha`` and uses Metropolis conductances
``mu(x,y) = min(pi(x), pi(y)) / (4m)``; vertices on the wall then hold
with probability > 1/2 (the diagonal absorbs the deficit).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np

from .graph import GraphError, WeightedGraph, SubgraphView, l1_ball, pack_coords
import scipy.sparse as sp

GENERATOR_NAMES = (
    "lattice",
    "lattice_minus_sublattice",
    "half_space",
    "weighted_half_space",
    "sparse_dyadic_line",
    "cone2d",
    "cylinder_complement",
    "parabola4d",
)

# removed-set codes shared with the Monte Carlo kernels
K_NONE = 0
K_SUBLATTICE = 1
K_LOWER_HALFSPACE = 2
K_SPARSE_DYADIC = 3
K_CYLINDER = 4
K_PARABOLA = 5
K_CONE_COMPLEMENT = 6
K_WALL = 7  # {x_m = 0} inside the weighted half-space


def round_half_up(x):
    """Deterministic rounding for discrete curve membership."""
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5).astype(np.int64)


@dataclass(frozen=True)
class GeneratorDescriptor:
    """Validated (name, params) pair identifying one example geometry."""

    name: str
    params: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        if self.name not in GENERATOR_NAMES:
            raise GraphError(f"unknown generator {self.name!r}")
        p = dict(self.params)
        m = int(p.get("m", {"cone2d": 2, "parabola4d": 4, "sparse_dyadic_line": 3}.get(self.name, 0)))
        if self.name in ("lattice", "half_space", "cylinder_complement") and m < 1:
            raise GraphError(f"{self.name} requires m >= 1")
        if self.name == "lattice_minus_sublattice":
            k = int(p.get("k", -1))
            if m < 1 or k < 0 or k > m:
                raise GraphError("lattice_minus_sublattice requires 0 <= k <= m")
        if self.name == "weighted_half_space":
            alpha = float(p.get("alpha", 0.0))
            if m < 1:
                raise GraphError("weighted_half_space requires m >= 1")
            if alpha <= -m:
                raise GraphError(f"weighted_half_space requires alpha > -m (got {alpha})")
        if self.name == "cone2d":
            ap = float(p.get("aperture", 0.0))
            if not (0.0 < ap < 2 * math.pi):
                raise GraphError("cone2d aperture must lie in (0, 2*pi)")
        if self.name == "cylinder_complement":
            if int(p.get("r", -1)) < 0:
                raise GraphError("cylinder_complement requires r >= 0")
        if self.name == "parabola4d":
            alpha = float(p.get("alpha", 0.0))
            if not (0.0 < alpha < 1.0):
                raise GraphError("parabola4d requires alpha in (0, 1)")

    @classmethod
    def from_json(cls, obj) -> "GeneratorDescriptor":
        if isinstance(obj, str):
            obj = json.loads(obj)
        return cls(name=obj["generator"], params=dict(obj.get("params", {})))

    def to_json(self, radius: Optional[int] = None) -> dict:
        out = {"generator": self.name, "params": dict(self.params)}
        if radius is not None:
            out["radius"] = int(radius)
        return out


# ---------------------------------------------------------------------------
# ambient models


class SimpleLattice:
    """Z^m (optionally nothing removed) with simple weights made lazy.

    mu = 1 on every edge and pi = 2 * deg = 4m, giving hold probability 1/2
    everywhere and controlled-weights constant 4m.
    """

    def __init__(self, m: int):
        self.dim = m

    def contains(self, coords) -> np.ndarray:
        return np.ones(len(np.atleast_2d(coords)), dtype=bool)

    def pi(self, coords) -> np.ndarray:
        return np.full(len(np.atleast_2d(coords)), 4.0 * self.dim)

    def edge_mu(self, a, b) -> np.ndarray:
        return np.ones(len(np.atleast_2d(a)))

    def sigma(self, coords) -> np.ndarray:
        return np.full(len(np.atleast_2d(coords)), 2.0 * self.dim)

    def mc_family(self):
        return 0, np.array([self.dim], dtype=np.float64)


class WeightedHalfSpace:
    """{x_m >= 0} with pi = (1+x_m)^alpha and Metropolis conductances."""

    def __init__(self, m: int, alpha: float):
        self.dim = m
        self.alpha = alpha

    def contains(self, coords) -> np.ndarray:
        c = np.atleast_2d(coords)
        return c[:, -1] >= 0

    def pi(self, coords) -> np.ndarray:
        c = np.atleast_2d(coords)
        return (1.0 + c[:, -1].astype(np.float64)) ** self.alpha

    def edge_mu(self, a, b) -> np.ndarray:
        return np.minimum(self.pi(a), self.pi(b)) / (4.0 * self.dim)

    def sigma(self, coords) -> np.ndarray:
        c = np.atleast_2d(coords)
        m = self.dim
        p = self.pi(c)
        up = (1.0 + c[:, -1].astype(np.float64) + 1.0) ** self.alpha
        down = np.where(c[:, -1] >= 1,
                        (c[:, -1].astype(np.float64)) ** self.alpha, 0.0)
        total = 2.0 * (m - 1) * p + np.minimum(p, up)
        total = total + np.where(c[:, -1] >= 1, np.minimum(p, down), 0.0)
        return total / (4.0 * m)

    def mc_family(self):
        return 1, np.array([self.dim, self.alpha], dtype=np.float64)


# ---------------------------------------------------------------------------
# removed-set predicates


def _k_predicate(code: int, params: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    def pred(coords: np.ndarray) -> np.ndarray:
        c = np.atleast_2d(np.asarray(coords, dtype=np.int64))
        if code == K_NONE:
            return np.zeros(len(c), dtype=bool)
        if code == K_SUBLATTICE:
            k = int(params[0])
            return (c[:, k:] == 0).all(axis=1)
        if code == K_LOWER_HALFSPACE:
            return c[:, -1] <= 0
        if code == K_WALL:
            return c[:, -1] == 0
        if code == K_SPARSE_DYADIC:
            on_axis = (c[:, 1:] == 0).all(axis=1)
            x1 = c[:, 0]
            pow2 = (x1 > 0) & ((x1 & (x1 - 1)) == 0)
            return on_axis & pow2
        if code == K_CYLINDER:
            r = int(params[0])
            return np.abs(c[:, :-1]).sum(axis=1) <= r
        if code == K_PARABOLA:
            alpha = float(params[0])
            on_plane = (c[:, 2:] == 0).all(axis=1)
            x1 = c[:, 0]
            inside = np.zeros(len(c), dtype=bool)
            ok = on_plane & (x1 >= 0)
            width = round_half_up(np.where(ok, x1, 0).astype(np.float64) ** alpha)
            inside[ok] = np.abs(c[ok, 1]) <= width[ok]
            return inside
        if code == K_CONE_COMPLEMENT:
            aperture = float(params[0])
            theta = np.arctan2(c[:, 1].astype(np.float64), c[:, 0].astype(np.float64))
            theta = np.where(theta < 0, theta + 2 * math.pi, theta)
            interior = (theta > 0) & (theta < aperture) & ~((c == 0).all(axis=1))
            return ~interior
        raise GraphError(f"unknown removed-set code {code}")

    return pred


def _descriptor_model(desc: GeneratorDescriptor):
    """Ambient model, removed-set code, and code params for a descriptor."""
    p = desc.params
    name = desc.name
    if name == "lattice":
        m = int(p["m"])
        return SimpleLattice(m), K_NONE, np.zeros(1)
    if name == "lattice_minus_sublattice":
        m, k = int(p["m"]), int(p["k"])
        return SimpleLattice(m), K_SUBLATTICE, np.array([float(k)])
    if name == "half_space":
        m = int(p["m"])
        return SimpleLattice(m), K_LOWER_HALFSPACE, np.zeros(1)
    if name == "weighted_half_space":
        m, alpha = int(p["m"]), float(p["alpha"])
        return WeightedHalfSpace(m, alpha), K_WALL, np.zeros(1)
    if name == "sparse_dyadic_line":
        return SimpleLattice(3), K_SPARSE_DYADIC, np.zeros(1)
    if name == "cone2d":
        return SimpleLattice(2), K_CONE_COMPLEMENT, np.array([float(p["aperture"])])
    if name == "cylinder_complement":
        m = int(p["m"])
        return SimpleLattice(m), K_CYLINDER, np.array([float(p["r"])])
    if name == "parabola4d":
        return SimpleLattice(4), K_PARABOLA, np.array([float(p["alpha"])])
    raise GraphError(f"unknown generator {name!r}")


# ---------------------------------------------------------------------------
# window construction


def build_graph(desc, radius: int) -> WeightedGraph:
    """Cut the l1 window of the given radius out of the named infinite graph."""
    if not isinstance(desc, GeneratorDescriptor):
        desc = GeneratorDescriptor.from_json(desc) if isinstance(desc, (str, dict)) else GeneratorDescriptor(*desc)
    if radius < 1:
        raise GraphError("radius must be >= 1")
    ambient, _, _ = _descriptor_model(desc)
    m = ambient.dim
    pts = l1_ball(m, radius)
    pts = pts[ambient.contains(pts)]
    order = np.argsort(pack_coords(pts, m), kind="stable")
    pts = np.ascontiguousarray(pts[order])
    keys = pack_coords(pts, m)

    rows, cols, vals = [], [], []
    for i in range(m):
        nb = pts.copy()
        nb[:, i] += 1
        inside = ambient.contains(nb)
        # neighbours beyond the l1 ball are simply absent from the key table
        nkeys = pack_coords(nb[inside], m)
        pos = np.searchsorted(keys, nkeys)
        pos = np.clip(pos, 0, len(keys) - 1)
        hit = keys[pos] == nkeys
        src = np.flatnonzero(inside)[hit]
        dst = pos[hit]
        w = ambient.edge_mu(pts[src], pts[dst])
        rows.append(src)
        cols.append(dst)
        vals.append(w)
    row = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    col = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
    val = np.concatenate(vals) if vals else np.zeros(0)
    mu = sp.coo_matrix((np.concatenate([val, val]),
                        (np.concatenate([row, col]), np.concatenate([col, row]))),
                       shape=(len(pts), len(pts))).tocsr()
    g = WeightedGraph(coords=pts, pi=ambient.pi(pts), mu=mu,
                      sigma=ambient.sigma(pts), radius=radius, ambient=(desc, ambient))
    return g


def generate(desc, radius: int):
    """Window plus removed-set predicate for the descriptor.

    Returns ``(graph, k_predicate)`` where the predicate maps an (n, dim)
    coordinate array to a boolean membership mask for K.
    """
    if not isinstance(desc, GeneratorDescriptor):
        desc = GeneratorDescriptor.from_json(desc) if isinstance(desc, (str, dict)) else GeneratorDescriptor(*desc)
    g = build_graph(desc, radius)
    _, code, params = _descriptor_model(desc)
    return g, _k_predicate(code, params)


def generate_view(desc, radius: int, require_connected: bool = True) -> SubgraphView:
    """Convenience: window + K assembled into a SubgraphView."""
    from .graph import subgraph

    g, pred = generate(desc, radius)
    return subgraph(g, pred, require_connected=require_connected)


def mc_spec(desc) -> tuple:
    """(family, family_params, k_code, k_params) for the Monte Carlo kernels."""
    if not isinstance(desc, GeneratorDescriptor):
        desc = GeneratorDescriptor.from_json(desc) if isinstance(desc, (str, dict)) else GeneratorDescriptor(*desc)
    ambient, code, params = _descriptor_model(desc)
    fam, fam_params = ambient.mc_family()
    return fam, fam_params, code, params


# ---------------------------------------------------------------------------
# boundary volumes


def boundary_volume(view: SubgraphView, center, r: int) -> float:
    """pi-volume of the exterior-boundary trace of the ambient ball B(center, r).

    Refuses to answer when the ball is not fully contained in the window.
    """
    g = view.parent
    ci = g.index(center) if not isinstance(center, (int, np.integer)) else int(center)
    c0 = int(np.abs(g.coords[ci].astype(np.int64)).sum())
    if r > g.radius - c0:
        raise GraphError(
            f"ball of radius {r} around a point at distance {c0} exits the window (R={g.radius})")
    ext = view.exterior_boundary_idx
    if len(ext) == 0:
        return 0.0
    d = np.abs(g.coords[ext].astype(np.int64) - g.coords[ci].astype(np.int64)).sum(axis=1)
    return float(g.pi[ext[d <= r]].sum())


def ambient_ball_volume(g: WeightedGraph, center_index: int, r: int,
                        check: bool = True) -> float:
    """pi-volume of the ambient ball B(center, r) inside the window."""
    c0 = int(np.abs(g.coords[center_index].astype(np.int64)).sum())
    if check and r > g.radius - c0:
        raise GraphError(
            f"ball of radius {r} around a point at distance {c0} exits the window (R={g.radius})")
    d = g.l1_to(center_index)
    return float(g.pi[d <= r].sum())
