"""Heuristic topology search for irrigation trees with many atoms.

Greedy pairwise merging builds a first tree; seeded subtree-reattachment
moves then try to improve it.  The result is an upper bound on the
irrigation cost, never a certified optimum.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .irrigation import (LEAF, ROOT, STEINER, FluxTree, IrrigationTree,
                         compute_fluxes, gilbert_cost, relax_steiner_points)
from .measure import DiscreteMeasure

__all__ = ["heuristic_tree", "greedy_tree", "reattach_moves"]

_WEISZFELD_STEPS = 40


def _junctions(pa, pb, ma, mb, alpha):
    """Best branching point for every pair (a, b) joined to the origin.

    Arrays of shape (P, d) and (P,).  Returns junction positions and the
    three-edge cost at the junction.  A few Weiszfeld steps from the
    weighted mean, then the three vertex candidates are compared, since
    the optimum often sits exactly on a vertex.
    """
    pts = np.stack([np.zeros_like(pa), pa, pb], axis=1)               # (P, 3, d)
    w = np.stack([(ma + mb) ** alpha, ma ** alpha, mb ** alpha], axis=1)  # (P, 3)

    def cost(s):
        return np.sum(w * np.linalg.norm(pts - s[:, None, :], axis=2), axis=1)

    s = np.sum(w[..., None] * pts, axis=1) / w.sum(axis=1)[:, None]
    for _ in range(_WEISZFELD_STEPS):
        dist = np.maximum(np.linalg.norm(pts - s[:, None, :], axis=2), 1e-12)
        k = w / dist
        s = np.sum(k[..., None] * pts, axis=1) / k.sum(axis=1)[:, None]
    best, bc = s, cost(s)
    for j in range(3):
        c = cost(pts[:, j])
        better = c < bc
        best = np.where(better[:, None], pts[:, j], best)
        bc = np.where(better, c, bc)
    return best, bc


def greedy_tree(mu: DiscreteMeasure, alpha: float) -> IrrigationTree:
    """Merge clusters pairwise while merging saves cost.

    Each cluster is a subtree hanging from the root by a straight edge.
    Merging clusters a and b replaces their two root edges by a junction
    carrying their combined mass; the pair with the largest saving goes
    first (lowest index pair on ties).  Clusters left over hang from the root.
    """
    n = len(mu)
    pos = [np.zeros(mu.d)] + [np.asarray(a.position, float) for a in mu.atoms]
    kinds = [ROOT] + [LEAF] * n
    parent = [-1] + [0] * n
    clusters = list(range(1, n + 1))
    mass = {i + 1: a.mass for i, a in enumerate(mu.atoms)}
    while len(clusters) > 1:
        ia, ib = np.triu_indices(len(clusters), k=1)
        ca = np.array(clusters)[ia]
        cb = np.array(clusters)[ib]
        pa = np.array([pos[c] for c in ca])
        pb = np.array([pos[c] for c in cb])
        ma = np.array([mass[c] for c in ca])
        mb = np.array([mass[c] for c in cb])
        s, joined = _junctions(pa, pb, ma, mb, alpha)
        apart = ma ** alpha * np.linalg.norm(pa, axis=1) + mb ** alpha * np.linalg.norm(pb, axis=1)
        saving = apart - joined
        k = int(np.argmax(saving))     # first maximum = lowest index pair
        if not saving[k] > 1e-12 * max(1.0, apart[k]):
            break
        a, b = int(ca[k]), int(cb[k])
        j = len(pos)
        pos.append(s[k])
        kinds.append(STEINER)
        parent.append(0)
        parent[a] = parent[b] = j
        mass[j] = mass[a] + mass[b]
        clusters = [c for c in clusters if c not in (a, b)] + [j]
    return IrrigationTree(np.array(pos), tuple(kinds), tuple(parent),
                          {i + 1: a for i, a in enumerate(mu.atoms)})


def _subtree(parent, v):
    out = {v}
    changed = True
    while changed:
        changed = False
        for c, p in enumerate(parent):
            if p in out and c not in out:
                out.add(c)
                changed = True
    return out


def _compact(pos, kinds, parent, alive):
    keep = [i for i in range(len(kinds)) if alive[i]]
    new = {old: i for i, old in enumerate(keep)}
    return (np.array([pos[i] for i in keep]), tuple(kinds[i] for i in keep),
            tuple(new[parent[i]] if parent[i] >= 0 else -1 for i in keep), new)


def _reattach(tree: IrrigationTree, v: int, target: int) -> IrrigationTree:
    """Cut the subtree under ``v`` and hang it on the edge above ``target``
    (through a new Steiner node), or directly on the root when ``target``
    is the root.  A Steiner node left with one child is spliced out."""
    pos = [p.copy() for p in tree.positions]
    kinds = list(tree.kinds)
    parent = list(tree.parent)
    alive = [True] * len(kinds)
    old = parent[v]
    if target == tree.root:
        parent[v] = target
    else:
        s = len(kinds)
        up = parent[target]
        pos.append((pos[up] + pos[target] + pos[v]) / 3.0)
        kinds.append(STEINER)
        parent.append(up)
        alive.append(True)
        parent[target] = s
        parent[v] = s
    if kinds[old] == STEINER:
        rest = [c for c, p in enumerate(parent) if p == old]
        if len(rest) == 1:
            parent[rest[0]] = parent[old]
            alive[old] = False
    P, K, Q, new = _compact(pos, kinds, parent, alive)
    atoms = {new[i]: a for i, a in tree.leaf_atom.items()}
    return IrrigationTree(P, K, Q, atoms)


def reattach_moves(ft: FluxTree, alpha: float, rng: np.random.Generator, moves: int,
                   tol: float = 1e-10, max_iter: int = 20000):
    """Random subtree-reattachment local search; keeps strict improvements only.

    Returns the best tree and the number of topologies relaxed.
    """
    best, best_cost = ft, gilbert_cost(ft, alpha)
    tried = 0
    for _ in range(moves):
        t = best.tree
        nodes = [i for i in range(t.n_nodes) if i != t.root]
        if len(nodes) < 2:
            break
        v = nodes[int(rng.integers(len(nodes)))]
        below = _subtree(t.parent, v)
        targets = [t.root] + [c for c in nodes if c not in below]
        target = targets[int(rng.integers(len(targets)))]
        if target == t.parent[v] or (target != t.root and t.parent[target] == t.parent[v]
                                     and t.kinds[t.parent[v]] == STEINER):
            continue   # same topology
        cand = relax_steiner_points(compute_fluxes(_reattach(t, v, target)), alpha,
                                    tol=tol, max_iter=max_iter)
        tried += 1
        c = gilbert_cost(cand, alpha)
        if c < best_cost - 1e-12 * max(1.0, best_cost):
            best, best_cost = cand, c
    return best, tried


def heuristic_tree(mu: DiscreteMeasure, alpha: float, seed: int = 0, tol: float = 1e-10,
                   max_iter: int = 20000, moves: Optional[int] = None):
    """Greedy merge tree, relaxed, then improved by ``moves`` seeded
    reattachment moves (default 4 per atom).  Returns (tree, topologies tried)."""
    if moves is None:
        moves = 4 * len(mu)
    if moves < 0:
        raise ValueError("moves must be >= 0")
    ft = relax_steiner_points(compute_fluxes(greedy_tree(mu, alpha)), alpha,
                              tol=tol, max_iter=max_iter)
    rng = np.random.default_rng(seed)
    ft, tried = reattach_moves(ft, alpha, rng, moves, tol=tol, max_iter=max_iter)
    return ft, tried + 1
