import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize

from treeshape.irrigation import (LEAF, MAX_EXHAUSTIVE_ATOMS, ROOT, STEINER, FluxTree,
                                  IrrigationTree, TreeError, compute_fluxes,
                                  enumerate_topologies, gilbert_cost, irrigation_cost,
                                  lower_bound, relax_steiner_points, star_tree)
from treeshape.measure import Atom, DiscreteMeasure, add, dilate, scale_mass


def random_measure(rng, n, d=2):
    return DiscreteMeasure.from_arrays(rng.uniform(-1, 1, (n, d)), rng.uniform(0.1, 1.0, n))


def topology_cost(parent, mu, alpha, steiner_flat):
    """Gilbert energy of a parent array from enumerate_topologies."""
    n, d = len(mu), mu.d
    X = np.vstack([np.zeros((1, d)), mu.positions, steiner_flat.reshape(-1, d)])
    flux = np.zeros(2 * n)
    flux[1:n + 1] = mu.masses
    # walk every leaf up to the root, adding its mass on the way
    for leaf in range(1, n + 1):
        v = parent[leaf]
        while v > 0:
            flux[v] += mu.masses[leaf - 1]
            v = parent[v]
    return sum(np.linalg.norm(X[v] - X[parent[v]]) * flux[v] ** alpha for v in range(1, 2 * n))


def nelder_mead_oracle(mu, alpha, restarts=4, seed=0):
    """Independent optimum: Nelder-Mead over Steiner positions for every topology."""
    rng = np.random.default_rng(seed)
    best = math.inf
    n = len(mu)
    for parent in enumerate_topologies(n):
        for r in range(restarts):
            x0 = rng.uniform(-1, 1, (n - 1) * mu.d) if r else np.tile(mu.positions.mean(0) / 2, n - 1)
            res = minimize(lambda s: topology_cost(parent, mu, alpha, s), x0, method="Nelder-Mead",
                           options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 20000,
                                    "maxfev": 40000})
            best = min(best, res.fun)
    return best


def symmetric_pair_oracle(h, m, alpha):
    """Two atoms at (1, +-h): the junction balances flux-weighted unit vectors,
    which gives cos(theta) = 2**(alpha - 1) for the half angle."""
    theta = math.acos(2 ** (alpha - 1))
    x = 1 - h / math.tan(theta) if theta > 0 else 1.0
    if x <= 0:
        return 2 * m ** alpha * math.hypot(1, h)
    return x * (2 * m) ** alpha + 2 * m ** alpha * h / math.sin(theta)


# ---------------------------------------------------------------------------
# tree structure

def test_topology_counts():
    counts = [sum(1 for _ in enumerate_topologies(n)) for n in range(1, 7)]
    assert counts == [1, 1, 3, 15, 105, 945]


def test_topologies_are_distinct_valid_trees(rng):
    mu = random_measure(rng, 4)
    seen = set()
    for parent in enumerate_topologies(4):
        seen.add(tuple(parent))
        pos = np.vstack([np.zeros((1, 2)), mu.positions, np.zeros((3, 2))])
        kinds = (ROOT,) + (LEAF,) * 4 + (STEINER,) * 3
        compute_fluxes(IrrigationTree(pos, kinds, tuple(parent),
                                      {i + 1: a for i, a in enumerate(mu.atoms)}))
    assert len(seen) == 15


def test_tree_validation():
    atom = Atom((1.0, 0.0), 1.0)
    pos = np.array([[0.0, 0.0], [1.0, 0.0]])
    IrrigationTree(pos, (ROOT, LEAF), (-1, 0), {1: atom})
    with pytest.raises(TreeError):
        IrrigationTree(pos + 0.1, (ROOT, LEAF), (-1, 0), {1: atom})        # root off origin
    with pytest.raises(TreeError):
        IrrigationTree(pos, (ROOT, LEAF), (-1, 0), {})                     # leaf without atom
    with pytest.raises(TreeError):
        IrrigationTree(np.array([[0, 0], [0.5, 0], [1, 0]]), (ROOT, STEINER, LEAF), (-1, 0, 1),
                       {2: atom})                                          # steiner with one child
    with pytest.raises(TreeError):
        IrrigationTree(pos, (ROOT, LEAF), (-1, 1), {1: atom})              # self loop


def test_fluxes_and_json_round_trip():
    mu = DiscreteMeasure.from_arrays([[1.0, 0.5], [1.0, -0.5]], [0.5, 0.5])
    ft = irrigation_cost(mu, 0.5).tree
    steiner = ft.tree.kinds.index(STEINER)
    assert ft.flux[steiner] == pytest.approx(1.0)
    back = FluxTree.from_json(ft.to_json(0.5))
    np.testing.assert_allclose(back.tree.positions, ft.tree.positions)
    np.testing.assert_allclose(back.flux, ft.flux)
    assert ft.to_json(0.5)["cost"] == pytest.approx(1.5, abs=1e-8)


def test_alpha_validation():
    mu = DiscreteMeasure.from_arrays([[1.0, 0.0]], [1.0])
    for a in (0.0, -0.5, 1.5):
        with pytest.raises(ValueError):
            irrigation_cost(mu, a)


# ---------------------------------------------------------------------------
# closed forms and oracles

def test_empty_and_single_atom():
    assert irrigation_cost(DiscreteMeasure.empty(2), 0.5).cost == 0.0
    mu = DiscreteMeasure.from_arrays([[3.0, 4.0]], [2.0])
    assert irrigation_cost(mu, 0.7).cost == pytest.approx(5 * 2 ** 0.7)


@given(st.integers(1, 5), st.integers(0, 10 ** 6), st.sampled_from([2, 3]))
def test_alpha_one_is_straight_lines(n, seed, d):
    mu = random_measure(np.random.default_rng(seed), n, d)
    exact = float(np.sum(mu.masses * np.linalg.norm(mu.positions, axis=1)))
    assert irrigation_cost(mu, 1.0).cost == pytest.approx(exact, abs=1e-6)


@given(st.floats(0.05, 2.0), st.floats(0.1, 2.0), st.floats(0.2, 0.99))
def test_symmetric_pair_closed_form(h, m, alpha):
    mu = DiscreteMeasure.from_arrays([[1.0, h], [1.0, -h]], [m, m])
    assert irrigation_cost(mu, alpha).cost == pytest.approx(symmetric_pair_oracle(h, m, alpha),
                                                            rel=1e-7)


def test_collinear_atoms_share_the_trunk():
    mu = DiscreteMeasure.from_arrays([[1.0, 0.0], [2.0, 0.0]], [0.3, 0.7])
    alpha = 0.5
    assert irrigation_cost(mu, alpha).cost == pytest.approx(1.0 ** 0.5 + 0.7 ** 0.5, abs=1e-7)


@pytest.mark.parametrize("n,alpha,seed", [(2, 0.3, 1), (3, 0.5, 2), (3, 0.8, 3), (3, 0.2, 4)])
def test_exhaustive_matches_nelder_mead(n, alpha, seed):
    mu = random_measure(np.random.default_rng(seed), n)
    ours = irrigation_cost(mu, alpha).cost
    oracle = nelder_mead_oracle(mu, alpha)
    assert ours <= oracle + 1e-8
    assert ours == pytest.approx(oracle, abs=1e-6)


# ---------------------------------------------------------------------------
# bounds and invariances

@given(st.integers(1, 5), st.integers(0, 10 ** 6), st.floats(0.1, 1.0))
def test_lower_bound_and_star_upper_bound(n, seed, alpha):
    mu = random_measure(np.random.default_rng(seed), n)
    cost = irrigation_cost(mu, alpha).cost
    assert cost >= lower_bound(mu, alpha) - 1e-9
    assert cost <= gilbert_cost(star_tree(mu), alpha) + 1e-9


@given(st.integers(1, 3), st.integers(1, 3), st.integers(0, 10 ** 6), st.floats(0.1, 1.0))
def test_subadditive(n1, n2, seed, alpha):
    rng = np.random.default_rng(seed)
    m1, m2 = random_measure(rng, n1), random_measure(rng, n2)
    c12 = irrigation_cost(add(m1, m2), alpha).cost
    assert c12 <= irrigation_cost(m1, alpha).cost + irrigation_cost(m2, alpha).cost + 1e-6


@given(st.integers(1, 4), st.integers(0, 10 ** 6), st.floats(0.2, 1.0), st.floats(0.2, 5.0))
def test_scaling_laws(n, seed, alpha, lam):
    mu = random_measure(np.random.default_rng(seed), n)
    base = irrigation_cost(mu, alpha).cost
    assert irrigation_cost(dilate(mu, lam), alpha).cost == pytest.approx(lam * base, rel=1e-6)
    assert irrigation_cost(scale_mass(mu, lam), alpha).cost == pytest.approx(lam ** alpha * base,
                                                                             rel=1e-6)


def test_rotation_invariance(rng):
    mu = random_measure(rng, 4)
    t = 0.7
    R = np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
    rot = DiscreteMeasure.from_arrays(mu.positions @ R.T, mu.masses)
    assert irrigation_cost(rot, 0.6).cost == pytest.approx(irrigation_cost(mu, 0.6).cost, rel=1e-7)


def test_atom_order_does_not_matter(rng):
    mu = random_measure(rng, 5)
    perm = rng.permutation(5)
    shuffled = DiscreteMeasure.from_arrays(mu.positions[perm], mu.masses[perm])
    assert irrigation_cost(shuffled, 0.4).cost == pytest.approx(irrigation_cost(mu, 0.4).cost,
                                                                rel=1e-7)


def test_concavity_rewards_merging():
    # two atoms in nearly the same direction share a trunk
    mu = DiscreteMeasure.from_arrays([[1.0, 0.1], [1.0, -0.1]], [0.5, 0.5])
    star = gilbert_cost(star_tree(mu), 0.5)
    assert irrigation_cost(mu, 0.5).cost < star - 0.1


def test_monotone_in_alpha_for_unit_mass(rng):
    # with masses summing to 1, every flux is <= 1, so flux**alpha grows as alpha falls
    mu = DiscreteMeasure.from_arrays(rng.uniform(-1, 1, (4, 2)), np.full(4, 0.25))
    costs = [irrigation_cost(mu, a).cost for a in (0.3, 0.5, 0.7, 0.9, 1.0)]
    assert all(a >= b - 1e-9 for a, b in zip(costs, costs[1:]))


# ---------------------------------------------------------------------------
# relaxation

def test_relaxation_is_monotone(rng):
    mu = random_measure(rng, 5)
    ft = irrigation_cost(mu, 0.5, mode="heuristic", moves=0, max_iter=1).tree
    trace = []
    out = relax_steiner_points(ft, 0.5, tol=1e-12, max_iter=500, trace=trace)
    assert all(b <= a + 1e-12 for a, b in zip(trace, trace[1:]))
    assert gilbert_cost(out, 0.5) == pytest.approx(trace[-1])
    assert gilbert_cost(out, 0.5) <= gilbert_cost(ft, 0.5) + 1e-12


def test_relaxation_keeps_topology(rng):
    mu = random_measure(rng, 3)
    ft = irrigation_cost(mu, 0.5).tree
    out = relax_steiner_points(ft, 0.5)
    assert out.tree.parent == ft.tree.parent
    assert out.tree.kinds == ft.tree.kinds
    with pytest.raises(ValueError):
        relax_steiner_points(ft, 0.5, max_iter=0)


def test_exhaustive_cap():
    mu = random_measure(np.random.default_rng(0), MAX_EXHAUSTIVE_ATOMS + 1)
    with pytest.raises(ValueError):
        irrigation_cost(mu, 0.5, mode="exhaustive")
    with pytest.raises(ValueError):
        irrigation_cost(mu, 0.5, mode="bogus")


def test_three_dimensional_pair():
    mu = DiscreteMeasure.from_arrays([[1.0, 0.5, 0.0], [1.0, -0.5, 0.0]], [0.5, 0.5])
    r = irrigation_cost(mu, 0.5)
    assert r.cost == pytest.approx(1.5, abs=1e-7)
    s = r.tree.tree.positions[r.tree.tree.kinds.index(STEINER)]
    np.testing.assert_allclose(s, [0.5, 0.0, 0.0], atol=1e-4)


def test_result_unpacks():
    mu = DiscreteMeasure.from_arrays([[1.0, 0.0]], [1.0])
    cost, tree = irrigation_cost(mu, 0.5)
    assert cost == 1.0 and isinstance(tree, FluxTree)
