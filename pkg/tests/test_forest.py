import numpy as np
import pytest

from mtcpp.errors import GuardError, SchemaError
from mtcpp.forest import (
    CoalescentRecord,
    PlanarTree,
    ancestor_index,
    ancestral_subtree,
    coalescence_times,
    dump_tree,
    pairwise_coalescence,
    records_to_csv,
    sametype_times,
    simulate_forward,
    simulate_standing,
    standing_population,
)
from mtcpp.lf import lf_coalescence_law, lf_to_modelspec, two_type_models
from mtcpp.model import ModelSpec, mean_matrix, survival_vector
from mtcpp.rng import stream


def f1_tree() -> PlanarTree:
    # root at generation -1 (type 1); standing children typed 1 then 2
    return PlanarTree(
        root_generation=-1,
        types=(np.array([1]), np.array([1, 2])),
        parents=(np.array([0]), np.array([1, 1])),
    )


def nested_tree() -> PlanarTree:
    # depth-3 root with three surviving child blocks; the middle block is
    # two standing siblings, so the pair A sequence is (3, 1, 3)
    return PlanarTree(
        root_generation=-3,
        types=(
            np.array([1]),
            np.array([1, 1, 1]),
            np.array([1, 2, 1]),
            np.array([2, 1, 1, 2]),
        ),
        parents=(
            np.array([0]),
            np.array([1, 1, 1]),
            np.array([1, 2, 3]),
            np.array([1, 2, 2, 3]),
        ),
    )


def sibling_then_deep_tree() -> PlanarTree:
    # standing types (1, 2, 1) with A = (1, 3)
    return PlanarTree(
        root_generation=-3,
        types=(
            np.array([1]),
            np.array([1, 2]),
            np.array([2, 1]),
            np.array([1, 2, 1]),
        ),
        parents=(
            np.array([0]),
            np.array([1, 1]),
            np.array([1, 2]),
            np.array([1, 1, 2]),
        ),
    )


def _ks_distance(xs, ys):
    xs = np.sort(np.asarray(xs))
    ys = np.sort(np.asarray(ys))
    grid = np.union1d(xs, ys)
    fx = np.searchsorted(xs, grid, side="right") / len(xs)
    fy = np.searchsorted(ys, grid, side="right") / len(ys)
    return float(np.max(np.abs(fx - fy)))


# -- tree structure ---------------------------------------------------------


def test_tree_validation():
    with pytest.raises(SchemaError, match="planar"):
        PlanarTree(
            root_generation=-1,
            types=(np.array([1, 1]), np.array([1, 1])),
            parents=(np.array([0, 0]), np.array([2, 1])),
        )
    with pytest.raises(SchemaError, match="parent 0"):
        PlanarTree(
            root_generation=-1,
            types=(np.array([1]), np.array([1])),
            parents=(np.array([1]), np.array([1])),
        )
    with pytest.raises(SchemaError, match="layers"):
        PlanarTree(
            root_generation=-2,
            types=(np.array([1]), np.array([1])),
            parents=(np.array([0]), np.array([1])),
        )


def test_node_accessors():
    tree = nested_tree()
    assert tree.horizon == 3
    assert tree.width == 4
    assert tree.node_type(0, 2) == 1
    assert tree.node_parent(0, 3) == 2
    assert list(tree.node_children(-2, 2)) == [2]
    assert list(tree.node_children(-1, 2)) == [2, 3]
    assert list(tree.node_children(0, 1)) == []
    recs = list(tree.nodes())
    assert recs[0].generation == -3 and recs[0].parent == 0
    assert len(recs) == 11


def test_dump_tree_golden():
    assert dump_tree(f1_tree()) == "-1\t1\t1\t0\n0\t1\t1\t1\n0\t2\t2\t1\n"


# -- simulate_forward -------------------------------------------------------


def test_immediate_death_single_root():
    spec = ModelSpec.from_pmf({1: {(0,): 1.0}}, allow_singular=True)
    # every individual dies childless; only the root remains
    dead = ModelSpec.from_pmf({1: {(0, 0): 1.0}, 2: {(0, 0): 1.0}})
    tree = simulate_forward(dead, "uniform", 1, 4, stream(0, "dead"))
    assert [len(t) for t in tree.types] == [1, 0, 0, 0, 0]
    assert standing_population(tree).width == 0
    del spec


def test_simulate_rejects_bad_args(e1, lf1):
    rng = stream(0, "args")
    with pytest.raises(SchemaError):
        simulate_forward(e1, "uniform", 3, 2, rng)
    with pytest.raises(SchemaError):
        simulate_forward(e1, "uniform", 1, 0, rng)
    with pytest.raises(SchemaError, match="linear-fractional"):
        simulate_forward(e1, "lf_first", 1, 2, rng)
    with pytest.raises(SchemaError, match="ordering"):
        simulate_forward(lf1, "sorted", 1, 2, rng)


def test_node_cap_guard(lf1):
    with pytest.raises(GuardError, match="node cap"):
        simulate_forward(lf1, "lf_first", 1, 30, stream(5, "cap"), node_cap=500)


def test_e1_depth1_offspring_split(e1):
    rng = stream(11, "binomial")
    n = 100_000
    two = 0
    for _ in range(n):
        tree = simulate_forward(e1, "uniform", 2, 1, rng)
        total = sum(len(t) for t in tree.types)
        assert total in (1, 2)
        two += total == 2
    se = np.sqrt(0.25 / n)
    assert abs(two / n - 0.5) <= 3 * se


def test_generation_means_match_mean_matrix(e1):
    rng = stream(13, "means")
    M = mean_matrix(e1)
    reps = 10_000
    counts = np.zeros((3, 2))
    sq = np.zeros((3, 2))
    for _ in range(reps):
        tree = simulate_forward(e1, "uniform", 1, 3, rng)
        for n in range(1, 4):
            c = np.array(
                [np.sum(tree.types[n] == 1), np.sum(tree.types[n] == 2)], dtype=float
            )
            counts[n - 1] += c
            sq[n - 1] += c * c
    for n in range(1, 4):
        mean = counts[n - 1] / reps
        var = sq[n - 1] / reps - mean**2
        se = np.sqrt(np.maximum(var, 1e-12) / reps)
        expect = np.linalg.matrix_power(M, n)[0]
        assert np.all(np.abs(mean - expect) <= 3 * se)


# -- simulate_standing ------------------------------------------------------


def test_standing_always_nonempty(e1):
    rng = stream(17, "nonempty")
    for _ in range(50):
        tree = simulate_standing(e1, 4, 1, rng)
        assert tree.width >= 1


def test_standing_survival_rate(e1):
    rng = stream(19, "survival")
    p = survival_vector(e1, 10)[0]
    n = 20_000
    hits = sum(simulate_forward(e1, "uniform", 1, 10, rng).width > 0 for _ in range(n))
    se = np.sqrt(p * (1 - p) / n)
    assert abs(hits / n - p) <= 3 * se


def test_supercritical_acceptance_rate(lf1):
    rng = stream(23, "accept")
    spec = lf_to_modelspec(lf1, truncate_at=60)
    p = survival_vector(spec, 6)[0]
    n = 2_000
    rejected = 0
    for _ in range(n):
        tree = simulate_standing(lf1, 6, 1, rng, ordering="lf_first")
        rejected += tree.rejections
    rate = n / (n + rejected)
    se = np.sqrt(p * (1 - p) / (n + rejected))
    assert abs(rate - p) <= 3 * se


def test_standing_concat_mode(e1):
    rng = stream(29, "concat")
    tree = simulate_standing(e1, 5, 30, rng, mode="concat")
    assert tree.width >= 30
    assert len(tree.types[0]) > 1
    assert np.all(tree.parents[0] == 0)
    # pairs spanning different roots stay censored
    recs = coalescence_times(tree)
    assert sum(r.censored for r in recs) >= len(tree.types[0]) - 1


def test_standing_rejection_cap(e1):
    with pytest.raises(GuardError, match="attempts"):
        simulate_standing(e1, 25, 1, stream(31, "cap"), rejection_cap=3)


# -- extraction -------------------------------------------------------------


def test_standing_population_examples(e1):
    dead_tree = simulate_forward(
        ModelSpec.from_pmf({1: {(0, 0): 1.0}, 2: {(0, 0): 1.0}}),
        "uniform",
        1,
        3,
        stream(1, "sp"),
    )
    assert standing_population(dead_tree).individuals == ()
    sp = standing_population(f1_tree())
    assert sp.individuals == ((1, 1), (2, 2))
    assert sp.types() == (1, 2)
    tree = nested_tree()
    assert standing_population(tree).width == len(tree.types[-1])


def test_ancestor_index_basics():
    tree = nested_tree()
    for i in range(1, 5):
        assert ancestor_index(tree, i, 0) == i
    assert ancestor_index(f1_tree(), 1, 1) == 1
    assert ancestor_index(f1_tree(), 2, 1) == 1
    with pytest.raises(SchemaError):
        ancestor_index(tree, 1, 4)
    with pytest.raises(SchemaError):
        ancestor_index(tree, 5, 1)


def test_ancestor_index_monotone(e1):
    rng = stream(37, "monotone")
    for _ in range(50):
        tree = simulate_standing(e1, 5, 1, rng)
        w = tree.width
        for n in range(tree.horizon + 1):
            idx = [ancestor_index(tree, i, n) for i in range(1, w + 1)]
            assert idx == sorted(idx)


def test_coalescence_small_cases():
    one_wide = PlanarTree(
        root_generation=-1,
        types=(np.array([1]), np.array([2])),
        parents=(np.array([0]), np.array([1])),
    )
    assert coalescence_times(one_wide) == []
    recs = coalescence_times(f1_tree())
    assert len(recs) == 1
    r = recs[0]
    assert (r.i, r.a, r.mass, r.lineage) == (1, 1, 1, (2,))
    assert not r.censored


def test_three_child_mass():
    tree = PlanarTree(
        root_generation=-1,
        types=(np.array([1]), np.array([1, 2, 1])),
        parents=(np.array([0]), np.array([1, 1, 1])),
    )
    recs = coalescence_times(tree)
    assert [(r.a, r.mass) for r in recs] == [(1, 2), (1, 1)]


def test_interleaved_mass_grouping():
    recs = coalescence_times(nested_tree())
    assert [r.a for r in recs] == [3, 1, 3]
    # pairs 1 and 3 share the depth-3 ancestor across the middle block
    assert [r.mass for r in recs] == [2, 1, 1]


def test_lineage_entries():
    recs = coalescence_times(nested_tree())
    tree = nested_tree()
    sp = standing_population(tree).types()
    for r in recs:
        assert len(r.lineage) == r.a
        assert r.lineage[0] == sp[r.i]
        assert len(r.lineage_inf) == tree.horizon
        assert r.lineage == r.lineage_inf[: r.a]
        for n, t in enumerate(r.lineage_inf):
            a = ancestor_index(tree, r.i + 1, n)
            assert tree.node_type(-n, a) == t


def test_censored_records():
    # two roots, never coalesce within the window
    tree = PlanarTree(
        root_generation=-2,
        types=(np.array([1, 1]), np.array([1, 2]), np.array([1, 1])),
        parents=(np.array([0, 0]), np.array([1, 2]), np.array([1, 2])),
    )
    recs = coalescence_times(tree)
    assert len(recs) == 1
    assert recs[0].censored and recs[0].a is None
    assert recs[0].lineage == ()
    assert len(recs[0].lineage_inf) == 2
    assert recs[0].mass == 1


def test_records_csv():
    text = records_to_csv(coalescence_times(nested_tree()))
    lines = text.strip().split("\n")
    assert lines[0] == "i,A,mass,censored,lineage"
    assert lines[1] == "1,3,2,0,1-2-1"
    censored = CoalescentRecord(i=4, a=None, mass=1, lineage=(), lineage_inf=(1, 1))
    row = records_to_csv([censored]).strip().split("\n")[1]
    assert row == "4,,1,1,"


def test_pairwise_examples():
    assert pairwise_coalescence([1, 2, 1], 1, 2) == 1
    assert pairwise_coalescence([1, 2, 1], 1, 4) == 2
    assert pairwise_coalescence([1, None, 2], 1, 4) is None
    recs = coalescence_times(nested_tree())
    assert pairwise_coalescence(recs, 2, 3) == 1
    with pytest.raises(SchemaError):
        pairwise_coalescence([1, 2], 2, 2)
    with pytest.raises(SchemaError):
        pairwise_coalescence([1, 2], 1, 5)


def test_pairwise_dual_path(e1):
    rng = stream(41, "dualpath")
    trees = 0
    while trees < 200:
        tree = simulate_standing(e1, 6, 1, rng)
        if tree.width < 2:
            continue
        trees += 1
        recs = coalescence_times(tree)
        w = tree.width
        for i in range(1, w + 1):
            for j in range(i + 1, w + 1):
                c = pairwise_coalescence(recs, i, j)
                walk = next(
                    n
                    for n in range(1, tree.horizon + 1)
                    if ancestor_index(tree, i, n) == ancestor_index(tree, j, n)
                )
                assert c == walk


def test_sametype_examples():
    recs = coalescence_times(sibling_then_deep_tree())
    assert [r.a for r in recs] == [1, 3]
    types = standing_population(sibling_then_deep_tree()).types()
    assert types == (1, 2, 1)
    assert sametype_times(recs, types, 1) == [3]
    assert sametype_times(recs, types, 2) == []
    all_same = coalescence_times(nested_tree())
    tree_types = (1, 1, 1, 1)
    with pytest.raises(SchemaError):
        sametype_times(all_same, (1, 1), 1)
    assert sametype_times(all_same, tree_types, 1) == [r.a for r in all_same]
    assert sametype_times(all_same, tree_types, 2) == []


def test_ancestral_subtree_preserves_coalescence(lf1, e1):
    rng = stream(43, "subtree")
    for model, ordering in ((lf1, "lf_first"), (e1, "uniform")):
        for _ in range(20):
            tree = simulate_standing(model, 5, 1, rng, ordering=ordering)
            sub = ancestral_subtree(tree)
            assert sub.width == tree.width
            assert standing_population(sub).types() == standing_population(tree).types()
            if tree.width >= 2:
                ra = coalescence_times(tree)
                rb = coalescence_times(sub)
                assert [r.a for r in ra] == [r.a for r in rb]
                assert [r.lineage for r in ra] == [r.lineage for r in rb]
                assert [r.mass for r in ra] == [r.mass for r in rb]
            # every kept node's parent is kept and planar order holds
            for j in range(1, len(sub.types)):
                if len(sub.parents[j]):
                    assert np.all(np.diff(sub.parents[j]) >= 0)


# -- distributional invariants ---------------------------------------------


def _pooled_a_samples(model, ordering, T, rng, min_pairs):
    vals = []
    consecutive = []
    while len(vals) < min_pairs:
        tree = simulate_standing(model, T, 1, rng, ordering=ordering)
        if tree.width < 2:
            continue
        a = [r.a for r in coalescence_times(tree) if r.a is not None]
        vals.extend(a)
        consecutive.extend(zip(a, a[1:]))
    return vals, consecutive


def test_lf_first_tail_matches_law(lf1):
    rng = stream(47, "lftail")
    T = 8
    vals, _ = _pooled_a_samples(lf1, "lf_first", T, rng, 100_000)
    vals = np.asarray(vals)
    n_tot = len(vals)
    pT = lf_coalescence_law(lf1, T)
    for n in range(1, 7):
        # tree pairs observe the law conditioned on coalescing within T
        expect = (lf_coalescence_law(lf1, n) - pT) / (1.0 - pT)
        emp = float(np.mean(vals > n))
        se = np.sqrt(expect * (1 - expect) / n_tot)
        assert abs(emp - expect) <= 3 * se, (n, emp, expect)


def test_lag1_autocorrelation_near_zero(lf1):
    rng = stream(53, "autocorr")
    _, pairs = _pooled_a_samples(lf1, "lf_first", 8, rng, 100_000)
    x = np.array([p[0] for p in pairs], dtype=float)
    y = np.array([p[1] for p in pairs], dtype=float)
    r = np.corrcoef(x, y)[0, 1]
    assert abs(r) <= 3.0 / np.sqrt(len(pairs))


def test_reversal_symmetry_two_type():
    sym, _ = two_type_models(0.5, 0.7, 0.8, 1.0)
    rng = stream(59, "reversal")
    a1, _ = _pooled_a_samples(sym, "lf_first", 6, rng, 20_000)
    rng2 = stream(61, "reversal-swapped")
    # label swap maps root type 1 to 2 in the symmetric model
    vals2 = []
    while len(vals2) < 20_000:
        tree = simulate_standing(sym, 6, 1, rng2, ordering="lf_first", root_type=2)
        if tree.width < 2:
            continue
        vals2.extend(r.a for r in coalescence_times(tree) if r.a is not None)
    d = _ks_distance(a1, vals2)
    n, m = len(a1), len(vals2)
    assert d <= 1.628 * np.sqrt((n + m) / (n * m))
