"""Ramified (branched) transport cost of an atomic measure from the origin.

A transport plan is restricted to a finite embedded tree rooted at the
origin.  The flux on an edge is the mass of the atoms below it, and the
plan costs ``sum(length * flux**alpha)`` over edges (the Gilbert energy).
For a fixed topology the cost is convex in the Steiner node positions and
is minimized by a weighted-Fermat (Weiszfeld) majorize-minimize iteration;
topologies are either enumerated exhaustively or searched heuristically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .measure import Atom, DiscreteMeasure, total_mass

__all__ = [
    "TreeError",
    "IrrigationTree",
    "FluxTree",
    "IrrigationResult",
    "compute_fluxes",
    "gilbert_cost",
    "relax_steiner_points",
    "irrigation_cost",
    "lower_bound",
    "star_tree",
    "enumerate_topologies",
    "MAX_EXHAUSTIVE_ATOMS",
]

MAX_EXHAUSTIVE_ATOMS = 7
EPS = 1e-12
ROOT, STEINER, LEAF = "root", "steiner", "leaf"


class TreeError(ValueError):
    """Malformed irrigation tree."""


@dataclass(frozen=True)
class IrrigationTree:
    """Rooted tree embedded in R^d.

    Node ``i`` sits at ``positions[i]`` and hangs below ``parent[i]``; the
    single root has parent -1.  ``leaf_atom`` maps every leaf id to the
    atom it delivers.
    """

    positions: np.ndarray = field(repr=False)
    kinds: tuple[str, ...]
    parent: tuple[int, ...]
    leaf_atom: Mapping[int, Atom]

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "kinds", tuple(self.kinds))
        object.__setattr__(self, "parent", tuple(int(p) for p in self.parent))
        object.__setattr__(self, "leaf_atom", dict(self.leaf_atom))
        self.validate()

    @property
    def d(self) -> int:
        return self.positions.shape[1]

    @property
    def n_nodes(self) -> int:
        return len(self.kinds)

    @property
    def root(self) -> int:
        return self.kinds.index(ROOT)

    @property
    def edges(self) -> list[tuple[int, int]]:
        return [(p, c) for c, p in enumerate(self.parent) if p >= 0]

    def children(self) -> list[list[int]]:
        ch = [[] for _ in self.kinds]
        for c, p in enumerate(self.parent):
            if p >= 0:
                ch[p].append(c)
        return ch

    def order(self) -> list[int]:
        """Nodes in breadth-first order from the root (parents first)."""
        ch = self.children()
        out = [self.root]
        for v in out:
            out.extend(ch[v])
        return out

    def validate(self):
        n = len(self.kinds)
        if self.positions.shape[0] != n or len(self.parent) != n:
            raise TreeError("positions, kinds and parent differ in length")
        if self.positions.ndim != 2 or not np.all(np.isfinite(self.positions)):
            raise TreeError("node positions must be a finite (n, d) array")
        if any(k not in (ROOT, STEINER, LEAF) for k in self.kinds):
            raise TreeError(f"unknown node kind in {set(self.kinds)}")
        roots = [i for i, k in enumerate(self.kinds) if k == ROOT]
        if len(roots) != 1:
            raise TreeError(f"expected exactly one root, found {len(roots)}")
        r = roots[0]
        if self.parent[r] != -1:
            raise TreeError("root must not have a parent")
        if np.any(np.abs(self.positions[r]) > 1e-12):
            raise TreeError("root must sit at the origin")
        for i, p in enumerate(self.parent):
            if i != r and not (0 <= p < n and p != i):
                raise TreeError(f"node {i} has invalid parent {p}")
        if len(self.order()) != n:
            raise TreeError("edges contain a cycle or a node unreachable from the root")
        ch = self.children()
        leaves = {i for i, k in enumerate(self.kinds) if k == LEAF}
        for i in leaves:
            if ch[i]:
                raise TreeError(f"leaf {i} has children")
        if set(self.leaf_atom) != leaves:
            raise TreeError("every leaf needs exactly one atom and vice versa")
        for i, k in enumerate(self.kinds):
            if k == STEINER and len(ch[i]) < 2:
                raise TreeError(f"steiner node {i} has fewer than two children")
            if k == LEAF and np.any(np.abs(self.positions[i] - self.leaf_atom[i].position) > 1e-12):
                raise TreeError(f"leaf {i} is not at its atom")

    def with_positions(self, positions: np.ndarray) -> "IrrigationTree":
        return IrrigationTree(positions, self.kinds, self.parent, self.leaf_atom)

    def measure(self) -> DiscreteMeasure:
        return DiscreteMeasure(self.d, tuple(self.leaf_atom[i] for i in sorted(self.leaf_atom)))


@dataclass(frozen=True)
class FluxTree:
    """An :class:`IrrigationTree` with the flux through the edge above each node.

    ``flux[root]`` is the total mass leaving the root.
    """

    tree: IrrigationTree
    flux: np.ndarray = field(repr=False)

    @property
    def edge_flux(self) -> list[tuple[int, int, float]]:
        return [(p, c, float(self.flux[c])) for p, c in self.tree.edges]

    def to_json(self, alpha: Optional[float] = None) -> dict:
        t = self.tree
        out = {
            "d": t.d,
            "nodes": [{"id": i, "x": t.positions[i].tolist(), "kind": k}
                      for i, k in enumerate(t.kinds)],
            "edges": [{"parent": p, "child": c, "flux": f} for p, c, f in self.edge_flux],
            "leaf_atoms": {str(i): {"x": list(a.position), "m": a.mass}
                           for i, a in sorted(t.leaf_atom.items())},
        }
        if alpha is not None:
            out["alpha"] = alpha
            out["cost"] = gilbert_cost(self, alpha)
        return out

    @classmethod
    def from_json(cls, data: dict) -> "FluxTree":
        nodes = sorted(data["nodes"], key=lambda n: n["id"])
        parent = [-1] * len(nodes)
        for e in data["edges"]:
            parent[e["child"]] = e["parent"]
        atoms = {int(k): Atom(tuple(v["x"]), v["m"]) for k, v in data["leaf_atoms"].items()}
        tree = IrrigationTree(np.array([n["x"] for n in nodes], dtype=float),
                              tuple(n["kind"] for n in nodes), tuple(parent), atoms)
        return compute_fluxes(tree)


def compute_fluxes(tree: IrrigationTree) -> FluxTree:
    tree.validate()
    flux = np.zeros(tree.n_nodes)
    for i, a in tree.leaf_atom.items():
        flux[i] = a.mass
    for v in reversed(tree.order()):
        p = tree.parent[v]
        if p >= 0 and tree.kinds[p] != LEAF:
            flux[p] += flux[v]
    return FluxTree(tree, flux)


def _check_alpha(alpha: float):
    if not (0 < alpha <= 1):
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")


def gilbert_cost(ft: FluxTree, alpha: float) -> float:
    _check_alpha(alpha)
    t = ft.tree
    if t.n_nodes == 1:
        return 0.0
    child = np.array([c for _, c in t.edges])
    par = np.array([p for p, _ in t.edges])
    lengths = np.linalg.norm(t.positions[child] - t.positions[par], axis=1)
    return float(np.sum(lengths * ft.flux[child] ** alpha))


def lower_bound(mu: DiscreteMeasure, alpha: float) -> float:
    """mass**(alpha-1) * sum(m_i |x_i|), a lower bound on the irrigation cost."""
    _check_alpha(alpha)
    if len(mu) == 0:
        return 0.0
    m = mu.masses
    return float(total_mass(mu) ** (alpha - 1) * np.sum(m * np.linalg.norm(mu.positions, axis=1)))


# ---------------------------------------------------------------------------
# fixed-topology relaxation, batched over topologies sharing the node layout

# iterations between collapse attempts in the batched relaxation
_SNAP_EVERY = 25


def _cost(X, parent, w):
    P = np.take_along_axis(X, np.maximum(parent, 0)[..., None], axis=1)
    L = np.linalg.norm(X - P, axis=2)
    L[parent < 0] = 0.0
    return np.sum(L * w, axis=1), L


def _mm_step(X, L, parent, w, fidx, slot, floor):
    """One majorize-minimize step for a batch of trees.

    Every edge term w|x_a - x_b| is replaced by its quadratic majorizer
    w|x_a - x_b|^2 / (2 l) + w l / 2 at the current length l; minimizing
    the sum over the free nodes is a weighted Laplacian solve (each free
    node moves to the weighted-Fermat average of its neighbours).
    """
    T, N, d = X.shape
    S = fidx.size
    rows = np.arange(T)
    k = w[:, 1:] / np.maximum(L[:, 1:], floor)
    cs = slot[1:]
    ps = slot[np.maximum(parent[:, 1:], 0)]
    ps[parent[:, 1:] < 0] = -1
    xp = np.take_along_axis(X, np.maximum(parent[:, 1:], 0)[..., None], axis=1)
    A = np.zeros((T, S, S))
    b = np.zeros((T, S, d))
    for j in range(N - 1):
        kj, c, p = k[:, j], cs[j], ps[:, j]
        pf = p >= 0
        if c >= 0:
            A[:, c, c] += kj
            A[rows[pf], c, p[pf]] -= kj[pf]
            b[~pf, c, :] += kj[~pf, None] * xp[~pf, j, :]
        sel = rows[pf]
        if sel.size:
            A[sel, p[sel], p[sel]] += kj[sel]
            if c >= 0:
                A[sel, p[sel], c] -= kj[sel]
            else:
                b[sel, p[sel], :] += kj[sel, None] * X[sel, j + 1, :]
    Xn = X.copy()
    Xn[:, fidx, :] = np.linalg.solve(A, b)
    return Xn


def _extrapolate(X, Xn, parent, w, factors=(2.0, 4.0, 8.0, 16.0, 64.0, 256.0, 1024.0)):
    """Line search along the MM step; keeps the cheapest of the plain step
    and its stretched versions.  Cuts the linear crawl toward collapsed
    (degenerate) optima down to a handful of iterations."""
    best_X = Xn
    best_c, best_L = _cost(Xn, parent, w)
    step = Xn - X
    for f in factors:
        Xt = X + f * step
        ct, Lt = _cost(Xt, parent, w)
        better = ct < best_c
        if not better.any():
            break
        best_X = np.where(better[:, None, None], Xt, best_X)
        best_L = np.where(better[:, None], Lt, best_L)
        best_c = np.where(better, ct, best_c)
    return best_X, best_c, best_L


def _snap(X, cost, L, parent, w, fidx):
    """Try moving each free node onto its parent or one of its children.

    The MM iteration approaches optima where a Steiner node sits exactly
    on a neighbour only linearly; trying the collapsed positions directly
    finishes those in one step.  Keeps any candidate that lowers the cost.
    """
    T, N, _ = X.shape
    rows = np.arange(T)
    for c in range(1, N):
        p = parent[:, c]
        for v, u in ((p, c), (np.full(T, c), p)):
            movable = np.isin(v, fidx) & (p >= 0)
            if not movable.any():
                continue
            Xt = X.copy()
            Xt[rows, v] = np.where(movable[:, None], X[rows, u], X[rows, v])
            ct, Lt = _cost(Xt, parent, w)
            better = movable & (ct < cost)
            if better.any():
                X = np.where(better[:, None, None], Xt, X)
                L = np.where(better[:, None], Lt, L)
                cost = np.where(better, ct, cost)
    return X, cost, L


def _ancestry(parent, leaves):
    """anc[t, v, l] = 1 when leaf ``leaves[l]`` lies in the subtree of node v."""
    T, N = parent.shape
    anc = np.zeros((T, N, len(leaves)))
    rows = np.arange(T)
    for li, leaf in enumerate(leaves):
        v = np.full(T, leaf)
        alive = np.ones(T, dtype=bool)
        while alive.any():
            anc[rows[alive], v[alive], li] = 1.0
            nxt = parent[rows, v]
            alive &= nxt >= 0
            v = np.where(alive, nxt, v)
    return anc


def _dual_bound(X, parent, w, anc, leaves):
    """Weak-duality lower bound on the optimal cost of each topology.

    Any leaf forces u_l whose subtree sums satisfy |sum u_l| <= w_e on every
    edge give sum_l u_l . x_l <= optimal cost.  The forces are read off the
    current leaf edge directions and scaled into feasibility; at the
    optimum the bound is tight.
    """
    T = X.shape[0]
    rows = np.arange(T)[:, None]
    xl = X[:, leaves, :]
    xpar = X[rows, parent[:, leaves], :]
    diff = xl - xpar
    nrm = np.linalg.norm(diff, axis=2, keepdims=True)
    u = np.divide(diff, nrm, out=np.zeros_like(diff), where=nrm > 0)
    u *= w[:, leaves, None]
    U = np.linalg.norm(anc @ u, axis=2)[:, 1:]
    ratio = np.divide(w[:, 1:], U, out=np.full_like(U, np.inf), where=U > 0)
    scale = np.minimum(1.0, ratio.min(axis=1))
    return scale * np.einsum("tld,tld->t", u, xl)


def _relax_batch(X, parent, w, free, tol, max_iter, trace=None,
                 leaves=None, gap_tol=0.0, prune=False):
    """Relax a batch of trees that share a node layout.

    X: (T, N, d) initial positions (fixed nodes already placed)
    parent: (T, N) parent index, -1 at the root (node 0)
    w: (T, N) flux**alpha of the edge above each node, 0 at the root
    free: (N,) boolean mask of movable nodes

    A tree stops when no node moves by ``tol`` or more.  With ``leaves``
    given, a tree also stops once its duality gap falls below ``gap_tol``,
    and with ``prune`` it is dropped as soon as its lower bound exceeds
    the best cost in the batch.  A step that would raise the cost through
    rounding is discarded and the tree frozen, so costs never increase.
    Returns positions, costs, lower bounds and iterations run.
    """
    X = np.array(X, dtype=float)
    T, N, d = X.shape
    fidx = np.flatnonzero(free)
    cost, L = _cost(X, parent, w)
    lb = np.full(T, -np.inf)
    if fidx.size == 0:
        return X, cost, cost.copy(), 0
    slot = -np.ones(N, dtype=int)
    slot[fidx] = np.arange(fidx.size)
    floor = EPS * max(1.0, float(np.abs(X).max()))
    anc = _ancestry(parent, leaves) if leaves is not None else None
    active = np.arange(T)
    it = 0
    for it in range(1, max_iter + 1):
        Xa, pa, wa = X[active], parent[active], w[active]
        Xn = _mm_step(Xa, L[active], pa, wa, fidx, slot, floor)
        Xn, cn, Ln = _extrapolate(Xa, Xn, pa, wa)
        ok = cn <= cost[active]
        step = np.max(np.abs(Xn[:, fidx, :] - Xa[:, fidx, :]), axis=(1, 2))
        if trace is not None:
            trace.append(cost.copy())
        upd = active[ok]
        X[upd], L[upd], cost[upd] = Xn[ok], Ln[ok], cn[ok]
        if it % _SNAP_EVERY == 0:
            X[active], cost[active], L[active] = _snap(
                X[active], cost[active], L[active], pa, wa, fidx)
        keep = ok & (step >= tol)
        if anc is not None:
            lb[active] = np.maximum(lb[active], _dual_bound(
                X[active], pa, wa, anc[active], leaves))
            keep &= cost[active] - lb[active] > gap_tol
            if prune:
                keep &= lb[active] <= cost.min() + gap_tol
        active = active[keep]
        if active.size == 0:
            break
    return X, cost, lb, it


def relax_steiner_points(ft: FluxTree, alpha: float, tol: float = 1e-10,
                         max_iter: int = 10000, trace: Optional[list] = None) -> FluxTree:
    """Move Steiner nodes to the cost-minimizing positions for this topology.

    Stops once no node moves more than ``tol`` in an iteration.  Edges that
    shrink below ``tol`` are collapsed Steiner points (a sign the topology
    degenerates).  If ``trace`` is given, the cost before every iteration is
    appended to it.
    """
    _check_alpha(alpha)
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    t = ft.tree
    order = t.order()
    # relabel so the root is node 0, as the batched solver expects
    perm = np.array(order)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    parent = np.array([inv[t.parent[v]] if t.parent[v] >= 0 else -1 for v in perm])
    w = ft.flux[perm] ** alpha
    w[0] = 0.0
    free = np.array([t.kinds[v] == STEINER for v in perm])
    X = t.positions[perm][None]
    steps: list = []
    X, cost, _, _ = _relax_batch(X, parent[None], w[None], free, tol, max_iter, steps)
    if trace is not None:
        trace.extend(float(c[0]) for c in steps)
        trace.append(float(cost[0]))
    pos = np.empty_like(t.positions)
    pos[perm] = X[0]
    new = t.with_positions(pos)
    return FluxTree(new, ft.flux)


# ---------------------------------------------------------------------------
# topologies

def enumerate_topologies(n: int):
    """All rooted full binary topologies over ``n`` labelled leaves.

    Node 0 is the root (one child), nodes 1..n are leaves, nodes
    n+1..2n-1 are Steiner nodes.  Yields parent arrays of length 2n; there
    are (2n-3)!! of them.  Leaf k+1 is inserted on every edge of each tree
    over leaves 1..k.
    """
    if n < 1:
        return
    if n == 1:
        yield np.array([-1, 0])
        return
    N = 2 * n

    def rec(par, k, next_s):
        if k > n:
            yield par.copy()
            return
        # edges are (par[v], v) for every placed non-root node v
        placed = [v for v in range(1, N) if par[v] != -2]
        for v in placed:
            s = next_s
            par[s] = par[v]
            par[v] = s
            par[k] = s
            yield from rec(par, k + 1, next_s + 1)
            par[v] = par[s]
            par[s] = -2
            par[k] = -2

    par = np.full(N, -2)
    par[0] = -1
    par[1] = 0
    yield from rec(par, 2, n + 1)


def _tree_from_parent(parent, mu: DiscreteMeasure, steiner_pos) -> IrrigationTree:
    n = len(mu)
    N = len(parent)
    pos = np.zeros((N, mu.d))
    pos[1:n + 1] = mu.positions
    pos[n + 1:] = steiner_pos
    kinds = (ROOT,) + (LEAF,) * n + (STEINER,) * (N - n - 1)
    return IrrigationTree(pos, kinds, tuple(int(p) for p in parent),
                          {i + 1: a for i, a in enumerate(mu.atoms)})


def _flux_batch(parent, masses):
    T, N = parent.shape
    n = masses.size
    flux = np.zeros((T, N))
    for leaf in range(1, n + 1):
        v = np.full(T, leaf)
        alive = np.ones(T, dtype=bool)
        while alive.any():
            flux[np.flatnonzero(alive), v[alive]] += masses[leaf - 1]
            nxt = parent[np.arange(T), v]
            alive &= nxt >= 0
            v = np.where(alive, nxt, v)
    return flux


def _initial_steiner(parent, mu: DiscreteMeasure, flux):
    """Seed each Steiner node at the flux-weighted centroid of its leaves, shrunk toward the root."""
    T, N = parent.shape
    n = len(mu)
    X = np.zeros((T, N, mu.d))
    X[:, 1:n + 1] = mu.positions
    m = mu.masses
    acc = np.zeros((T, N, mu.d))
    for leaf in range(1, n + 1):
        v = parent[:, leaf].copy()
        rows = np.arange(T)
        while True:
            mask = v > 0
            if not mask.any():
                break
            acc[rows[mask], v[mask]] += m[leaf - 1] * mu.positions[leaf - 1]
            v = np.where(mask, parent[rows, np.maximum(v, 0)], v)
    with np.errstate(invalid="ignore", divide="ignore"):
        cent = acc / flux[..., None]
    X[:, n + 1:] = 0.5 * np.nan_to_num(cent[:, n + 1:])
    return X


@dataclass(frozen=True)
class IrrigationResult:
    cost: float
    tree: FluxTree
    lower_bound: float
    mode: str
    topologies: int = 1

    def __iter__(self):
        # allows ``cost, tree = irrigation_cost(...)``
        return iter((self.cost, self.tree))


def star_tree(mu: DiscreteMeasure) -> FluxTree:
    """Every atom wired straight to the origin."""
    n = len(mu)
    pos = np.vstack([np.zeros((1, mu.d)), mu.positions]) if n else np.zeros((1, mu.d))
    tree = IrrigationTree(pos, (ROOT,) + (LEAF,) * n, (-1,) + (0,) * n,
                          {i + 1: a for i, a in enumerate(mu.atoms)})
    return compute_fluxes(tree)


def _exhaustive(mu: DiscreteMeasure, alpha: float, tol: float, max_iter: int):
    """Branch and bound over all topologies: relax them together, dropping
    any whose duality bound already exceeds the best cost seen."""
    n = len(mu)
    parents = np.array(list(enumerate_topologies(n)))
    flux = _flux_batch(parents, mu.masses)
    w = flux ** alpha
    w[:, 0] = 0.0
    free = np.zeros(2 * n, dtype=bool)
    free[n + 1:] = True
    X0 = _initial_steiner(parents, mu, flux)
    leaves = np.arange(1, n + 1)
    gap = tol * max(1.0, lower_bound(mu, alpha))
    X, costs, _, _ = _relax_batch(X0, parents, w, free, tol, max_iter,
                                  leaves=leaves, gap_tol=gap, prune=True)
    best = int(np.argmin(costs))   # lowest index wins ties
    tree = _tree_from_parent(parents[best], mu, X[best, n + 1:])
    return FluxTree(tree, flux[best]), len(parents)


def irrigation_cost(mu: DiscreteMeasure, alpha: float, mode: str = "exhaustive",
                    seed: int = 0, tol: float = 1e-10, max_iter: int = 20000,
                    moves: Optional[int] = None) -> IrrigationResult:
    """Cheapest tree found for irrigating ``mu`` from the origin.

    ``mode="exhaustive"`` relaxes every full binary topology (at most
    ``MAX_EXHAUSTIVE_ATOMS`` atoms) and is exact up to the relaxation
    tolerance.  ``mode="heuristic"`` builds a greedy merge tree and improves
    it with seeded subtree-reattachment moves; its result is an upper bound
    on the true infimum, not a certified optimum.
    """
    _check_alpha(alpha)
    lb = lower_bound(mu, alpha)
    n = len(mu)
    if n == 0:
        return IrrigationResult(0.0, star_tree(mu), 0.0, mode, 0)
    if mode == "exhaustive":
        if n > MAX_EXHAUSTIVE_ATOMS:
            raise ValueError(
                f"exhaustive mode handles at most {MAX_EXHAUSTIVE_ATOMS} atoms, got {n}")
        if n == 1:
            ft, count = star_tree(mu), 1
        else:
            ft, count = _exhaustive(mu, alpha, tol, max_iter)
    elif mode == "heuristic":
        from .topology_search import heuristic_tree
        ft, count = heuristic_tree(mu, alpha, seed=seed, tol=tol,
                                   max_iter=max_iter, moves=moves)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    cost = gilbert_cost(ft, alpha)
    # the bound holds for every tree, so a violation is a bug, not bad luck
    assert cost >= lb - 1e-9 * max(1.0, lb), (cost, lb)
    return IrrigationResult(cost, ft, lb, mode, count)
