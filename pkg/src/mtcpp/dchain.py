"""Auxiliary coalescent chain over surviving-offspring type vectors.

State i holds, for each lookback level n = 1..T, the ordered types of the
surviving offspring of standing individual i's generation-(-n) ancestor,
restricted to those at or right of the lineage.  Level n's first entry is
therefore always the type of the lineage representative one generation
below the ancestor.  A_i is the first level with two or more entries, and
one chain step rebuilds levels below A_i from a fresh spine sample.

Level index convention, used everywhere in this module: a levels tuple
stores level n at position n-1, and level n describes offspring living in
generation -(n-1).  Survival always means having standing (generation-0)
progeny.
"""

from __future__ import annotations

import json
import weakref
from dataclasses import dataclass

import numpy as np

from .errors import (
    CensoredError,
    GuardError,
    ImpossibleConditioningError,
    InconsistentStateError,
    SchemaError,
)
from .forest import PlanarTree, _offspring_sampler
from .lf import LFParams, lf_pgf
from .model import ModelSpec, perron, mean_matrix, pgf_eval_all
from . import forest as _forest

__all__ = [
    "ZetaSample",
    "EtaSample",
    "DState",
    "sample_zeta",
    "sample_eta",
    "dchain_step",
    "init_quasistationary",
    "extract_dstates",
    "reconstruct_tree",
]

DEFAULT_REJECTION_CAP = 10**6


@dataclass(frozen=True, eq=False)
class ZetaSample:
    """Surviving offspring of one ancestor, conditioned on at least one."""

    counts: np.ndarray
    ordered: tuple[int, ...]

    def __post_init__(self) -> None:
        if int(self.counts.sum()) < 1:
            raise SchemaError("conditioned offspring sample cannot be empty")
        if len(self.ordered) != int(self.counts.sum()):
            raise SchemaError("ordered list length does not match counts")


@dataclass(frozen=True, eq=False)
class EtaSample:
    """Spine construction below one ancestor: levels[j] is level j+1.

    Level n (the deepest) is the conditioned surviving offspring of the
    initiating ancestor; each level below is the surviving offspring of
    the previous level's first (leftmost surviving) entry.
    """

    levels: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        for j, lvl in enumerate(self.levels):
            if len(lvl) < 1:
                raise SchemaError(f"eta level {j + 1} is empty")


@dataclass(frozen=True, eq=False)
class DState:
    """Chain state: levels[j] holds level j+1, exactly horizon levels."""

    i: int
    levels: tuple[tuple[int, ...], ...]
    horizon: int

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise SchemaError(f"horizon must be >= 1, got {self.horizon}")
        if len(self.levels) != self.horizon:
            raise SchemaError(
                f"state has {len(self.levels)} levels, expected {self.horizon}"
            )
        for j, lvl in enumerate(self.levels):
            if len(lvl) < 1:
                raise SchemaError(f"level {j + 1} is empty")
            if any(t < 1 for t in lvl):
                raise SchemaError(f"level {j + 1} holds a type index < 1")

    def coalescence_level(self) -> int | None:
        """First level with >= 2 entries, or None when all are singletons."""
        for j, lvl in enumerate(self.levels):
            if len(lvl) >= 2:
                return j + 1
        return None

    def to_json(self) -> str:
        return json.dumps(
            {"i": self.i, "T": self.horizon, "levels": [list(l) for l in self.levels]},
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "DState":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"state is not valid JSON: {exc}") from exc
        for key in ("i", "T", "levels"):
            if key not in doc:
                raise SchemaError(f"state JSON needs field {key!r}")
        return cls(
            i=int(doc["i"]),
            levels=tuple(tuple(int(t) for t in lvl) for lvl in doc["levels"]),
            horizon=int(doc["T"]),
        )


_SURVIVAL_CACHE: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def _survival_seq(model, n: int) -> list[np.ndarray]:
    """[p_0, ..., p_n]: per-type survival probabilities by generation.

    Memoized per model instance; the sequence sits in every zeta draw's
    inner loop and is a pure function of the offspring law.
    """
    k = model.k
    out = _SURVIVAL_CACHE.get(model)
    if out is None:
        out = [np.ones(k)]
        _SURVIVAL_CACHE[model] = out
    while len(out) <= n:
        s = 1.0 - out[-1]
        if isinstance(model, ModelSpec):
            s = np.clip(pgf_eval_all(model, s), 0.0, 1.0)
        else:
            s = np.clip(
                np.array([lf_pgf(model, ell, s) for ell in range(1, k + 1)]), 0.0, 1.0
            )
        out.append(1.0 - s)
    return out[: n + 1]


def _default_ordering(model) -> str:
    return "lf_first" if isinstance(model, LFParams) else "uniform"


def _kept_offspring(sampler, p_prev, ell: int, rng, cap: int) -> list[int]:
    """Offspring of a type-ell parent thinned by p_prev, conditioned nonzero."""
    random = rng.random
    for _ in range(cap):
        kept = [t for t in sampler(ell, rng) if random() < p_prev[t - 1]]
        if kept:
            return kept
    raise GuardError(
        f"no surviving offspring of type {ell} within {cap} conditioning attempts"
    )


def _zeta_with_p(
    sampler, p_prev, ell: int, rng, k: int, cap: int
) -> ZetaSample:
    kept = _kept_offspring(sampler, p_prev, ell, rng, cap)
    counts = np.zeros(k, dtype=np.int64)
    for t in kept:
        counts[t - 1] += 1
    return ZetaSample(counts=counts, ordered=tuple(kept))


def sample_zeta(
    model,
    n: int,
    ell: int,
    rng,
    ordering: str | None = None,
    rejection_cap: int = DEFAULT_REJECTION_CAP,
) -> ZetaSample:
    """Offspring of a type-ell ancestor n generations back, kept if their
    progeny reaches generation 0, conditioned on at least one survivor."""
    if n < 1:
        raise SchemaError(f"lookback depth must be >= 1, got {n}")
    k = model.k
    if not 1 <= ell <= k:
        raise SchemaError(f"type {ell} outside 1..{k}")
    p = _survival_seq(model, n)
    if p[n][ell - 1] <= 0.0:
        raise ImpossibleConditioningError(
            f"type {ell} cannot have surviving progeny {n} generations on"
        )
    sampler = _offspring_sampler(model, ordering or _default_ordering(model))
    return _zeta_with_p(sampler, p[n - 1].tolist(), ell, rng, k, rejection_cap)


def sample_eta(
    model,
    n: int,
    ell: int,
    rng,
    ordering: str | None = None,
    rejection_cap: int = DEFAULT_REJECTION_CAP,
) -> EtaSample:
    """Spine sample below a type-ell ancestor n generations back.

    Level n is the conditioned surviving offspring of the ancestor; the
    type of each level's first entry parents the level below it.
    """
    if n < 0:
        raise SchemaError(f"spine depth must be >= 0, got {n}")
    if n == 0:
        return EtaSample(levels=())
    k = model.k
    if not 1 <= ell <= k:
        raise SchemaError(f"type {ell} outside 1..{k}")
    p = _survival_seq(model, n)
    if p[n][ell - 1] <= 0.0:
        raise ImpossibleConditioningError(
            f"type {ell} cannot have surviving progeny {n} generations on"
        )
    sampler = _offspring_sampler(model, ordering or _default_ordering(model))
    p_rows = [row.tolist() for row in p]
    levels: list[tuple[int, ...] | None] = [None] * n
    parent_type = ell
    for level in range(n, 0, -1):
        kept = _kept_offspring(sampler, p_rows[level - 1], parent_type, rng, rejection_cap)
        levels[level - 1] = tuple(kept)
        parent_type = kept[0]
    return EtaSample(levels=tuple(levels))


def dchain_step(
    model,
    state: DState,
    rng,
    ordering: str | None = None,
    rejection_cap: int = DEFAULT_REJECTION_CAP,
) -> tuple[DState, int, tuple[int, ...]]:
    """One chain transition; returns (next state, A_i, lineage types).

    Levels above A_i carry over unchanged, level A_i loses its first
    entry, and levels below A_i come from a fresh spine sample initiated
    by the new lineage representative (the old level-A_i second entry).
    A state of all-singleton levels cannot step and raises CensoredError.
    """
    a = state.coalescence_level()
    if a is None:
        raise CensoredError(
            f"no coalescence within horizon {state.horizon}; widen the horizon"
        )
    shifted = state.levels[a - 1][1:]
    new_spine_type = shifted[0]
    eta = sample_eta(
        model, a - 1, new_spine_type, rng, ordering=ordering, rejection_cap=rejection_cap
    )
    new_levels = eta.levels + (shifted,) + state.levels[a:]
    nxt = DState(i=state.i + 1, levels=new_levels, horizon=state.horizon)
    lineage = tuple(nxt.levels[j][0] for j in range(a))
    return nxt, a, lineage


def _sizebiased_tables(spec: ModelSpec):
    """Per-type size-biased offspring pmf using the right Perron eigenvector.

    Row weights P(z) (z . v) / (rho v_ell) sum to one because M v = rho v.
    """
    info = perron(mean_matrix(spec))
    if info.rho > 1.0 + 1e-9:
        raise SchemaError(
            "size-biased spine initialization requires rho <= 1 "
            f"(got rho={info.rho!r})"
        )
    v = info.v
    tables = []
    for ell in range(spec.k):
        zv = spec.counts[ell] @ v
        w = spec.probs[ell] * zv / (info.rho * v[ell])
        total = float(w.sum())
        if abs(total - 1.0) > 1e-9:
            raise InconsistentStateError(
                f"size-biased weights for parent type {ell + 1} sum to {total!r}"
            )
        tables.append(np.cumsum(w / total))
    return info, tables


def _init_sizebiased(spec: ModelSpec, T: int, rng) -> DState:
    info, tables = _sizebiased_tables(spec)
    v = info.v
    pi = info.u * v
    pi = pi / pi.sum()
    p = _survival_seq(spec, T)
    # spine type at the deepest generation from the stationary spine law
    r = rng.random()
    spine = int(np.searchsorted(np.cumsum(pi), r)) + 1
    spine = min(spine, spec.k)
    levels: list[tuple[int, ...]] = []
    for n in range(T, 0, -1):
        row = int(np.searchsorted(tables[spine - 1], rng.random()))
        row = min(row, len(tables[spine - 1]) - 1)
        z = spec.counts[spine - 1][row]
        expanded = []
        for lp in range(spec.k):
            expanded.extend([lp + 1] * int(z[lp]))
        rng.shuffle(expanded)
        # the spine child is v-weighted among the offspring slots
        weights = np.array([v[t - 1] for t in expanded])
        cum = np.cumsum(weights / weights.sum())
        pos = int(np.searchsorted(cum, rng.random()))
        pos = min(pos, len(expanded) - 1)
        child = expanded.pop(pos)
        # the spine representative survives by construction and is listed
        # first; every other child is kept iff it has standing progeny
        level = [child]
        for t in expanded:
            if rng.random() < p[n - 1][t - 1]:
                level.append(t)
        levels.append(tuple(level))
        spine = child
    levels.reverse()
    return DState(i=1, levels=tuple(levels), horizon=T)


def init_quasistationary(
    model,
    T: int,
    mode: str,
    rng,
    ordering: str | None = None,
    root_type: int = 1,
    rejection_cap: int = DEFAULT_REJECTION_CAP,
) -> DState:
    """Approximate stationary starting state at horizon T.

    mode='rejection' draws the state of the leftmost standing individual
    of a depth-T tree conditioned on survival, which coincides in law
    with the spine sample below a depth-T ancestor of the root type and
    is generated that way (no full tree is built, so supercritical
    models stay tractable).  mode='sizebiased_spine' builds the spine
    top-down from the size-biased offspring law, spine child chosen
    v-proportionally, and thins right-of-spine offspring by survival;
    it requires rho <= 1 and an explicit finite-support model.  Both
    modes are finite-horizon approximations of the infinitely-old
    population.
    """
    if T < 1:
        raise SchemaError(f"horizon must be >= 1, got {T}")
    if mode == "rejection":
        eta = sample_eta(
            model, T, root_type, rng, ordering=ordering, rejection_cap=rejection_cap
        )
        return DState(i=1, levels=eta.levels, horizon=T)
    if mode == "sizebiased_spine":
        if not isinstance(model, ModelSpec):
            raise SchemaError(
                "size-biased spine initialization needs a finite-support model"
            )
        return _init_sizebiased(model, T, rng)
    raise SchemaError(f"unknown initialization mode {mode!r}")


def extract_dstates(tree: PlanarTree) -> list[DState]:
    """Per-standing-individual chain states read off a simulated tree."""
    w = tree.width
    if w < 1:
        raise SchemaError("standing population is empty")
    T = tree.horizon
    # survival flags per layer: a node survives iff it has standing progeny
    surviving: list[np.ndarray] = [None] * (T + 1)
    surviving[T] = np.ones(w, dtype=bool)
    for j in range(T, 0, -1):
        flags = np.zeros(len(tree.types[j - 1]), dtype=bool)
        p = tree.parents[j]
        if len(p):
            flags[np.unique(p[surviving[j]]) - 1] = True
        surviving[j - 1] = flags
    anc = _forest._ancestor_levels(tree)
    states = []
    for i in range(1, w + 1):
        levels = []
        for n in range(1, T + 1):
            node = int(anc[n][i - 1])
            rep = int(anc[n - 1][i - 1])
            layer = T - n + 1
            children = tree.parents[layer] == node
            idx = np.flatnonzero(children) + 1
            keep = idx[(idx >= rep) & surviving[layer][idx - 1]]
            levels.append(tuple(int(tree.types[layer][c - 1]) for c in keep))
        states.append(DState(i=i, levels=tuple(levels), horizon=T))
    return states


def _check_linkage(states: list[DState]) -> list[int]:
    """Verify consecutive states are step-consistent; return the A values."""
    a_vals = []
    for s, nxt in zip(states, states[1:]):
        a = s.coalescence_level()
        if a is None:
            raise InconsistentStateError(
                f"state {s.i} has no coalescence within its horizon"
            )
        if nxt.levels[a:] != s.levels[a:]:
            raise InconsistentStateError(
                f"states {s.i} and {nxt.i} differ above the coalescence level"
            )
        if nxt.levels[a - 1] != s.levels[a - 1][1:]:
            raise InconsistentStateError(
                f"state {nxt.i} level {a} is not the left shift of its predecessor"
            )
        a_vals.append(a)
    return a_vals


def reconstruct_tree(states: list[DState], root_type: int = 1) -> PlanarTree:
    """Ancestral tree of the standing individuals behind a state sequence.

    The states determine every node type except the deepest (generation
    -T) ancestor, whose offspring but not own type appear in the levels;
    root_type fills it in.  Output coalescence times reproduce the A and
    lineage values of the originating steps exactly.
    """
    if not states:
        raise SchemaError("need at least one state")
    T = states[0].horizon
    if any(s.horizon != T for s in states):
        raise InconsistentStateError("states disagree on the horizon")
    n_ind = len(states)
    a_vals = _check_linkage(states)
    # block structure: individuals i and i+1 share the gen -n ancestor
    # iff A_i <= n; blocks are consecutive runs under that relation
    types_layers: list[np.ndarray] = []
    parent_layers: list[np.ndarray] = []
    prev_block_of: np.ndarray | None = None
    for n in range(T, -1, -1):
        block_of = np.zeros(n_ind, dtype=np.int64)
        b = 0
        for i in range(1, n_ind):
            if a_vals[i - 1] > n:
                b += 1
            block_of[i] = b
        n_blocks = b + 1
        types = np.zeros(n_blocks, dtype=np.int64)
        for blk in range(n_blocks):
            members = np.flatnonzero(block_of == blk)
            if n == T:
                types[blk] = root_type
                continue
            vals = {states[i].levels[n][0] for i in members}
            if len(vals) != 1:
                raise InconsistentStateError(
                    f"states disagree on the generation {-n} ancestor type"
                )
            types[blk] = vals.pop()
        if prev_block_of is None:
            parents = np.zeros(n_blocks, dtype=np.int64)
        else:
            parents = np.zeros(n_blocks, dtype=np.int64)
            for blk in range(n_blocks):
                member = int(np.flatnonzero(block_of == blk)[0])
                parents[blk] = prev_block_of[member] + 1
        types_layers.append(types)
        parent_layers.append(parents)
        prev_block_of = block_of
    return PlanarTree(
        root_generation=-T,
        types=tuple(types_layers),
        parents=tuple(parent_layers),
    )
