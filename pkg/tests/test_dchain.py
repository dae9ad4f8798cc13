from itertools import product

import numpy as np
import pytest
from scipy import stats

from mtcpp.analytics import joint_A1_law
from mtcpp.dchain import (
    DState,
    dchain_step,
    extract_dstates,
    init_quasistationary,
    reconstruct_tree,
    sample_eta,
    sample_zeta,
)
from mtcpp.errors import (
    CensoredError,
    ImpossibleConditioningError,
    InconsistentStateError,
    SchemaError,
)
from mtcpp.forest import (
    ancestral_subtree,
    coalescence_times,
    simulate_standing,
)
from mtcpp.lf import lf_coalescence_law
from mtcpp.model import ModelSpec, mean_matrix, survival_vector
from mtcpp.rng import stream


@pytest.fixture
def rich2() -> ModelSpec:
    return ModelSpec.from_pmf(
        {
            1: {(0, 0): 0.3, (2, 0): 0.25, (0, 1): 0.25, (1, 1): 0.2},
            2: {(0, 0): 0.4, (1, 0): 0.3, (0, 2): 0.3},
        }
    )


def _ks_distance(xs, ys):
    xs = np.sort(np.asarray(xs))
    ys = np.sort(np.asarray(ys))
    grid = np.union1d(xs, ys)
    fx = np.searchsorted(xs, grid, side="right") / len(xs)
    fy = np.searchsorted(ys, grid, side="right") / len(ys)
    return float(np.max(np.abs(fx - fy)))


def _ks_passes(xs, ys):
    n, m = len(xs), len(ys)
    return _ks_distance(xs, ys) <= 1.628 * np.sqrt((n + m) / (n * m))


# -- zeta -------------------------------------------------------------------


def test_zeta_depth1_is_conditioned_offspring(rich2):
    rng = stream(3, "zeta1")
    n = 50_000
    seen: dict[tuple[int, int], int] = {}
    for _ in range(n):
        z = sample_zeta(rich2, 1, 1, rng)
        key = (int(z.counts[0]), int(z.counts[1]))
        seen[key] = seen.get(key, 0) + 1
    # depth 1 survival is certain, so this is xi conditioned on nonzero
    expected = {(2, 0): 0.25 / 0.7, (0, 1): 0.25 / 0.7, (1, 1): 0.2 / 0.7}
    assert set(seen) == set(expected)
    chi2 = sum(
        (seen[k] - n * p) ** 2 / (n * p) for k, p in expected.items()
    )
    assert chi2 < stats.chi2.ppf(0.99, df=2)


def test_zeta_e1_forced_configuration(e1):
    rng = stream(5, "zeta-forced")
    for _ in range(300):
        z = sample_zeta(e1, 2, 2, rng)
        assert tuple(z.counts) == (1, 0)
        assert z.ordered == (1,)


def test_zeta_mean_matches_pgf(rich2):
    rng = stream(7, "zeta-mean")
    n_draw = 30_000
    depth = 3
    p = survival_vector(rich2, depth - 1)
    M = mean_matrix(rich2)
    # E[total survivors | at least one] = sum_l M[0,l] p_l / P(any)
    p_any = survival_vector(rich2, depth)[0]
    expect = float(M[0] @ p) / p_any
    totals = np.array(
        [len(sample_zeta(rich2, depth, 1, rng).ordered) for _ in range(n_draw)],
        dtype=float,
    )
    se = totals.std(ddof=1) / np.sqrt(n_draw)
    assert abs(totals.mean() - expect) <= 3 * se


def test_zeta_invariants(rich2):
    rng = stream(11, "zeta-inv")
    for _ in range(500):
        z = sample_zeta(rich2, 2, 1, rng)
        assert int(z.counts.sum()) >= 1
        assert len(z.ordered) == int(z.counts.sum())
        multiset = np.zeros(2, dtype=np.int64)
        for t in z.ordered:
            multiset[t - 1] += 1
        assert np.array_equal(multiset, z.counts)


def test_zeta_impossible_conditioning():
    spec = ModelSpec.from_pmf(
        {1: {(0, 2): 0.5, (0, 0): 0.5}, 2: {(0, 0): 1.0}}
    )
    with pytest.raises(ImpossibleConditioningError):
        sample_zeta(spec, 2, 1, stream(0, "imp"))
    # depth 1 is still fine: the children just die later
    z = sample_zeta(spec, 1, 1, stream(0, "imp2"))
    assert tuple(z.counts) == (0, 2)


def test_zeta_rejects_bad_args(e1):
    rng = stream(0, "zeta-args")
    with pytest.raises(SchemaError):
        sample_zeta(e1, 0, 1, rng)
    with pytest.raises(SchemaError):
        sample_zeta(e1, 1, 3, rng)


# -- eta --------------------------------------------------------------------


def test_eta_depth1_matches_zeta(rich2):
    rng_a = stream(13, "eta-a")
    rng_b = stream(13, "eta-a")
    for _ in range(100):
        eta = sample_eta(rich2, 1, 1, rng_a)
        z = sample_zeta(rich2, 1, 1, rng_b)
        assert eta.levels == (z.ordered,)


def test_eta_structure(rich2):
    rng = stream(17, "eta-struct")
    for _ in range(2_000):
        eta = sample_eta(rich2, 4, 1, rng)
        assert len(eta.levels) == 4
        for lvl in eta.levels:
            assert len(lvl) >= 1
            assert all(1 <= t <= 2 for t in lvl)
    assert sample_eta(rich2, 0, 1, rng).levels == ()


def test_eta_matches_leftmost_standing_lineage(e1):
    """Level sizes of the spine sample against the leftmost standing
    individual of survival-conditioned trees (same law by construction)."""
    rng = stream(19, "eta-forward")
    n_draw = 10_000
    depth = 3
    eta_keys = []
    for _ in range(n_draw):
        eta = sample_eta(e1, depth, 1, rng)
        eta_keys.append(tuple(len(l) for l in eta.levels))
    tree_keys = []
    for _ in range(n_draw):
        tree = simulate_standing(e1, depth, 1, rng, root_type=1)
        state = extract_dstates(tree)[0]
        tree_keys.append(tuple(len(l) for l in state.levels))
    cats = sorted(set(eta_keys) | set(tree_keys))
    table = np.array(
        [
            [sum(k == c for k in eta_keys) for c in cats],
            [sum(k == c for k in tree_keys) for c in cats],
        ]
    )
    keep = table.sum(axis=0) >= 10
    if (~keep).any():
        table = np.column_stack([table[:, keep], table[:, ~keep].sum(axis=1)])
    _, pval, _, _ = stats.chi2_contingency(table)
    assert pval > 0.01


# -- chain steps ------------------------------------------------------------


def test_step_boundary_branch(e1):
    state = DState(i=1, levels=((1, 2), (1,), (2,)), horizon=3)
    nxt, a, lineage = dchain_step(e1, state, stream(23, "step"))
    assert a == 1
    assert lineage == (2,)
    assert nxt.levels[0] == (2,)
    assert nxt.levels[1:] == state.levels[1:]
    assert nxt.i == 2


def test_step_censored(e1):
    state = DState(i=1, levels=((1,), (2,), (1,)), horizon=3)
    with pytest.raises(CensoredError):
        dchain_step(e1, state, stream(29, "censored"))


def test_step_preserves_upper_levels(e1):
    rng = stream(31, "steps")
    state = init_quasistationary(e1, 8, "rejection", rng)
    for _ in range(500):
        a = state.coalescence_level()
        if a is None:
            state = init_quasistationary(e1, 8, "rejection", rng)
            continue
        nxt, a_ret, lineage = dchain_step(e1, state, rng)
        assert a_ret == a
        assert nxt.levels[a:] == state.levels[a:]
        assert nxt.levels[a - 1] == state.levels[a - 1][1:]
        assert len(lineage) == a
        assert lineage == tuple(nxt.levels[j][0] for j in range(a))
        state = nxt


def test_state_json_round_trip():
    s = DState(i=4, levels=((2, 1), (1,), (1, 1, 2)), horizon=3)
    back = DState.from_json(s.to_json())
    assert back.levels == s.levels and back.i == s.i and back.horizon == s.horizon
    with pytest.raises(SchemaError):
        DState.from_json("{nope")


def test_state_validation():
    with pytest.raises(SchemaError, match="empty"):
        DState(i=1, levels=((1,), ()), horizon=2)
    with pytest.raises(SchemaError, match="levels"):
        DState(i=1, levels=((1,),), horizon=2)


# -- chain vs forest (central equivalence) ----------------------------------


def _chain_a_samples(model, T, rng, count, ordering=None, root_type=1):
    vals = []
    state = init_quasistationary(
        model, T, "rejection", rng, ordering=ordering, root_type=root_type
    )
    while len(vals) < count:
        if state.coalescence_level() is None:
            state = init_quasistationary(
                model, T, "rejection", rng, ordering=ordering, root_type=root_type
            )
            continue
        state, a, _ = dchain_step(model, state, rng, ordering=ordering)
        vals.append(a)
    return vals


def _forest_a_samples(model, T, rng, count, ordering="uniform", root_type=1):
    vals = []
    while len(vals) < count:
        tree = simulate_standing(
            model, T, 1, rng, ordering=ordering, root_type=root_type
        )
        if tree.width < 2:
            continue
        vals.extend(r.a for r in coalescence_times(tree) if r.a is not None)
    return vals


def test_chain_matches_forest_e1(e1):
    T = 12
    chain = _chain_a_samples(e1, T, stream(37, "chain-e1"), 20_000)
    woods = _forest_a_samples(e1, T, stream(41, "forest-e1"), 20_000)
    assert _ks_passes(chain, woods)


def test_chain_matches_lf_law(lf1):
    rng = stream(43, "chain-lf")
    T = 10
    vals = np.array(_chain_a_samples(lf1, T, rng, 30_000, ordering="lf_first"))
    pT = lf_coalescence_law(lf1, T)
    for n in range(1, 6):
        expect = (lf_coalescence_law(lf1, n) - pT) / (1.0 - pT)
        emp = float(np.mean(vals > n))
        se = np.sqrt(expect * (1 - expect) / len(vals))
        assert abs(emp - expect) <= 3 * se, (n, emp, expect)


def test_chain_joint_law_matches_closed_form(e1):
    # the initial state reads off the standing individual's ancestral types:
    # levels[j][0] is the depth-j ancestor, levels[0][0] the individual itself
    rng = stream(59, "joint-law")
    T = 6
    states = [init_quasistationary(e1, T, "rejection", rng) for _ in range(25_000)]
    for n in range(1, 4):
        for a in product((1, 2), repeat=n + 1):
            want = joint_A1_law(e1, a)
            hits = 0
            denom = 0
            for s in states:
                if s.levels[n][0] != a[n]:
                    continue
                denom += 1
                if all(
                    len(s.levels[j]) == 1 and s.levels[j][0] == a[j]
                    for j in range(n)
                ):
                    hits += 1
            assert denom > 1_000, (n, a)
            se = np.sqrt(want * (1.0 - want) / denom)
            assert abs(hits / denom - want) <= 3 * se, (a, hits / denom, want)


def _exact_leftmost_a1_cdf(T: int) -> float:
    """P(A1 = 1 | horizon T, root type 1) for the e1 model, by exact
    recursion over ordered offspring of the leftmost surviving lineage.

    q_n(l): survival to depth n from type l.  r_n(l): probability of
    surviving n generations with the standing-leftmost individual's
    parent of type 1 (only type-1 parents have two children, so this is
    exactly the A1 = 1 event at the root of the state)."""
    pmf_ordered = {
        1: [((), 0.5), ((1, 2), 0.25), ((2, 1), 0.25)],
        2: [((), 0.5), ((1,), 0.5)],
    }
    q = [np.array([1.0, 1.0])]
    for _ in range(T):
        prev = q[-1]
        q.append(
            np.array(
                [
                    sum(
                        pw * (1.0 - np.prod([1.0 - prev[t - 1] for t in w]))
                        for w, pw in pmf_ordered[l]
                    )
                    for l in (1, 2)
                ]
            )
        )
    r = np.array([q[1][0], 0.0])
    for n in range(2, T + 1):
        prev_q = q[n - 1]
        nxt = []
        for l in (1, 2):
            tot = 0.0
            for w, pw in pmf_ordered[l]:
                for j, t in enumerate(w):
                    pre = np.prod([1.0 - prev_q[w[i] - 1] for i in range(j)])
                    tot += pw * pre * r[t - 1]
            nxt.append(tot)
        r = np.array(nxt)
    return float(r[0] / q[T][0])


def test_rejection_init_matches_exact_recursion(e1):
    T = 6
    rng = stream(89, "exact-rej")
    count = 12_000
    hits = 0
    for _ in range(count):
        if init_quasistationary(e1, T, "rejection", rng).coalescence_level() == 1:
            hits += 1
    expect = _exact_leftmost_a1_cdf(T)
    se = np.sqrt(expect * (1 - expect) / count)
    assert abs(hits / count - expect) <= 3 * se


def test_rejection_fast_path_matches_literal_extraction(e1):
    """The spine sampler used by rejection init against states read off
    full survival-conditioned trees (same law, radically cheaper)."""
    T = 6
    count = 6_000
    lit = []
    rng = stream(97, "literal")
    for _ in range(count):
        tree = simulate_standing(e1, T, 1, rng, root_type=1)
        a = extract_dstates(tree)[0].coalescence_level()
        lit.append(T + 1 if a is None else a)
    fast = []
    rng = stream(97, "fastpath")
    for _ in range(count):
        a = init_quasistationary(e1, T, "rejection", rng).coalescence_level()
        fast.append(T + 1 if a is None else a)
    assert _ks_passes(lit, fast)


@pytest.mark.xfail(
    strict=True,
    reason=(
        "the two initialization modes approximate different laws: the "
        "size-biased spine fixes the stationary type mix at every level, "
        "while the conditioned-tree law has shallow-level boundary effects "
        "(measured KS distance ~0.1 at this fixture, far beyond sampling "
        "noise); kept faithful to both constructions rather than tuned "
        "to agree"
    ),
)
def test_init_modes_agree(e1):
    T = 15
    count = 15_000
    rng_a = stream(47, "mode-a")
    rng_b = stream(53, "mode-b")
    a_rej = []
    for _ in range(count):
        s = init_quasistationary(e1, T, "rejection", rng_a)
        a = s.coalescence_level()
        a_rej.append(T + 1 if a is None else a)
    a_sb = []
    for _ in range(count):
        s = init_quasistationary(e1, T, "sizebiased_spine", rng_b)
        a = s.coalescence_level()
        a_sb.append(T + 1 if a is None else a)
    assert _ks_passes(a_rej, a_sb)


def test_init_mode_guards(e1, lf1):
    rng = stream(59, "init-guard")
    with pytest.raises(SchemaError, match="mode"):
        init_quasistationary(e1, 5, "exact", rng)
    with pytest.raises(SchemaError, match="finite-support"):
        init_quasistationary(lf1, 5, "sizebiased_spine", rng)
    # supercritical finite-support model cannot use the spine mode
    spec = ModelSpec.from_pmf(
        {1: {(0, 0): 0.2, (2, 0): 0.4, (1, 1): 0.4}, 2: {(0, 0): 0.2, (1, 1): 0.8}}
    )
    with pytest.raises(SchemaError, match="rho"):
        init_quasistationary(spec, 5, "sizebiased_spine", rng)


def test_sizebiased_normalization(e1):
    from mtcpp.dchain import _sizebiased_tables

    # second fixture sits exactly at criticality (rho = 1)
    crit2 = ModelSpec.from_pmf(
        {
            1: {(0, 0): 0.4, (2, 0): 0.2, (0, 1): 0.2, (1, 1): 0.2},
            2: {(0, 0): 0.5, (1, 0): 0.2, (0, 2): 0.3},
        }
    )
    for spec in (e1, crit2):
        _, tables = _sizebiased_tables(spec)
        for cum in tables:
            assert abs(cum[-1] - 1.0) <= 1e-12


# -- Markov property surrogate ----------------------------------------------


def test_next_level_independent_of_preprevious(e1):
    rng = stream(61, "markov")
    T = 4
    state = init_quasistationary(e1, T, "rejection", rng)
    prev = None
    triples = []
    while len(triples) < 40_000:
        a = state.coalescence_level()
        if a is None:
            state = init_quasistationary(e1, T, "rejection", rng)
            prev = None
            continue
        nxt, _, _ = dchain_step(e1, state, rng)
        if prev is not None:
            triples.append((prev.levels, state.levels, nxt.levels[0]))
        prev = state
        state = nxt
    by_mid: dict = {}
    for p, mid, nxt1 in triples:
        by_mid.setdefault(mid, []).append((p, nxt1))
    mid, rows = max(by_mid.items(), key=lambda kv: len(kv[1]))
    pred_counts: dict = {}
    for p, _ in rows:
        pred_counts[p] = pred_counts.get(p, 0) + 1
    top_preds = sorted(pred_counts, key=pred_counts.get, reverse=True)[:2]
    outcomes = sorted({n for _, n in rows})
    table = np.array(
        [
            [sum(1 for p, n in rows if p == tp and n == o) for o in outcomes]
            for tp in top_preds
        ]
    )
    keep = table.sum(axis=0) >= 10
    if (~keep).any():
        table = np.column_stack([table[:, keep], table[:, ~keep].sum(axis=1)])
    _, pval, _, _ = stats.chi2_contingency(table)
    assert pval > 0.01


# -- extraction and reconstruction ------------------------------------------


def test_extract_dstates_spine_consistency(e1):
    rng = stream(67, "extract")
    for _ in range(100):
        tree = simulate_standing(e1, 5, 1, rng)
        states = extract_dstates(tree)
        assert len(states) == tree.width
        for i, s in enumerate(states, 1):
            assert s.i == i
            assert s.levels[0][0] == int(tree.types[-1][i - 1])


def test_extract_matches_step_linkage(e1):
    rng = stream(71, "linkage")
    found = 0
    while found < 50:
        tree = simulate_standing(e1, 6, 1, rng)
        if tree.width < 3:
            continue
        found += 1
        states = extract_dstates(tree)
        recs = coalescence_times(tree)
        for s, nxt, rec in zip(states, states[1:], recs):
            assert s.coalescence_level() == rec.a
            assert nxt.levels[rec.a:] == s.levels[rec.a:]
            assert nxt.levels[rec.a - 1] == s.levels[rec.a - 1][1:]
            lineage = tuple(nxt.levels[j][0] for j in range(rec.a))
            assert lineage == rec.lineage


def test_single_state_reconstructs_path(e1):
    rng = stream(73, "path")
    tree = simulate_standing(e1, 6, 1, rng)
    states = extract_dstates(tree)[:1]
    rec = reconstruct_tree(states, root_type=int(tree.types[0][0]))
    assert all(len(t) == 1 for t in rec.types)
    assert rec.width == 1


def test_round_trip_exact(e1, rich2, lf1):
    cases = [(e1, "uniform"), (rich2, "uniform"), (lf1, "lf_first")]
    trial = 0
    for model, ordering in cases:
        done = 0
        while done < 100:
            trial += 1
            tree = simulate_standing(
                model, 5, 1, stream(trial, "roundtrip"), ordering=ordering
            )
            done += 1
            sub = ancestral_subtree(tree)
            rec = reconstruct_tree(
                extract_dstates(tree), root_type=int(tree.types[0][0])
            )
            assert all(np.array_equal(a, b) for a, b in zip(rec.types, sub.types))
            assert all(
                np.array_equal(a, b) for a, b in zip(rec.parents, sub.parents)
            )


def test_reconstruct_reproduces_chain_output(e1):
    rng = stream(79, "chain-recon")
    state = init_quasistationary(e1, 8, "rejection", rng)
    while state.coalescence_level() is None:
        state = init_quasistationary(e1, 8, "rejection", rng)
    states = [state]
    a_seq = []
    lineages = []
    for _ in range(30):
        try:
            nxt, a, lin = dchain_step(e1, states[-1], rng)
        except CensoredError:
            break
        states.append(nxt)
        a_seq.append(a)
        lineages.append(lin)
    tree = reconstruct_tree(states)
    recs = coalescence_times(tree)
    assert [r.a for r in recs] == a_seq
    assert [r.lineage for r in recs] == lineages
    # max rule on the reconstruction
    from mtcpp.forest import ancestor_index, pairwise_coalescence

    w = tree.width
    for i in range(1, w + 1):
        for j in range(i + 1, w + 1):
            c = pairwise_coalescence(recs, i, j)
            assert ancestor_index(tree, i, c) == ancestor_index(tree, j, c)
            assert ancestor_index(tree, i, c - 1) != ancestor_index(tree, j, c - 1)


def test_reconstruct_rejects_inconsistent(e1):
    rng = stream(83, "inconsistent")
    tree = simulate_standing(e1, 5, 1, rng)
    while tree.width < 3:
        tree = simulate_standing(e1, 5, 1, rng)
    states = extract_dstates(tree)
    bad = list(states)
    s = bad[1]
    tampered = tuple(
        tuple(3 - t for t in lvl) if j == len(s.levels) - 1 else lvl
        for j, lvl in enumerate(s.levels)
    )
    bad[1] = DState(i=s.i, levels=tampered, horizon=s.horizon)
    with pytest.raises(InconsistentStateError):
        reconstruct_tree(bad)
    with pytest.raises(SchemaError):
        reconstruct_tree([])
