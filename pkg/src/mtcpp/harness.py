"""Monte Carlo drivers, statistical validation, and file emission.

Tasks are dispatched by `run(config)` and write a fixed set of files into
the output directory: laws.csv (closed-form tables), estimates.csv
(Monte Carlo tails with standard errors), compare.csv (two-sample or
two-family comparisons), tree.tsv (planar tree dump), report.json
(machine-readable pass/fail).  Everything emitted is a deterministic
function of (config, seed): replicate streams are derived by hashing the
master seed with the task id and replicate index, and replicate results
merge in index order, so the bytes do not depend on scheduling.

Validation uses |z| <= 4 per row (about 6e-5 two-sided each).  A single
breached row in an otherwise healthy run is expected roughly once per
10^4 rows; rerun with a fresh seed to tell a flake from a bug.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import dchain, forest
from .analytics import A1_tail, B1_tail, LawRow, LawTable, _popsize_with_budget
from .errors import (
    CensoredError,
    GuardError,
    ImpossibleConditioningError,
    InconsistentStateError,
    NumericConsistencyError,
    SchemaError,
    ValidationFailure,
)
from .lf import (
    LFParams,
    lf_coalescence_law,
    lf_sametype_law,
    two_type_compare,
)
from .model import ModelSpec
from .rng import stream

__all__ = [
    "RunConfig",
    "EstimateRow",
    "KSResult",
    "mc_estimate",
    "ks_compare",
    "run",
]

TASKS = ("simulate", "laws", "validate", "compare-two-type", "dchain")

#: Conservative two-sample Kolmogorov-Smirnov coefficient at the 1% level.
KS_COEFF_1PCT = 1.628

#: Per-row z threshold for the validate task.
Z_LIMIT = 4.0

#: Replicate count for Monte Carlo work; fixed so that emitted bytes do
#: not depend on how many threads actually run.
REPLICATES = 8


@dataclass(frozen=True)
class RunConfig:
    """Executable description of one harness invocation.

    Exactly one model source must be set: a finite-support spec, LF
    parameters, or the (g, p, h1, m) tuple of the two-type comparison
    families.  `samples` counts independent replications for first-pair
    statistics and chain transitions for stationary ones.
    """

    task: str
    seed: int
    out_dir: str
    samples: int = 10_000
    horizon: int = 20
    model_spec: ModelSpec | None = None
    lf_params: LFParams | None = None
    two_type: tuple[float, float, float, float] | None = None
    ordering: str | None = None
    init_mode: str = "rejection"
    root_type: int = 1
    n_max: int = 5
    threads: int = 1

    def __post_init__(self) -> None:
        if self.task not in TASKS:
            raise SchemaError(f"unknown task {self.task!r}; choose from {TASKS}")
        if not 0 <= int(self.seed) < 2**64:
            raise SchemaError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.samples < 1:
            raise SchemaError(f"samples must be >= 1, got {self.samples}")
        if self.horizon < 1:
            raise SchemaError(f"horizon must be >= 1, got {self.horizon}")
        if self.n_max < 0:
            raise SchemaError(f"n_max must be >= 0, got {self.n_max}")
        if self.threads < 1:
            raise SchemaError(f"threads must be >= 1, got {self.threads}")
        sources = [
            s for s in (self.model_spec, self.lf_params, self.two_type) if s is not None
        ]
        if len(sources) != 1:
            raise SchemaError(
                f"exactly one model source required, got {len(sources)}"
            )
        if self.task == "compare-two-type":
            if self.two_type is None:
                raise SchemaError(
                    "compare-two-type needs the two_type parameter block (g, p, h1, m)"
                )
        elif self.two_type is not None:
            raise SchemaError(f"task {self.task!r} needs a model spec or LF parameters")

    @property
    def model(self):
        return self.model_spec if self.model_spec is not None else self.lf_params

    @property
    def model_label(self) -> str:
        return "spec" if self.model_spec is not None else "lf"


@dataclass(frozen=True)
class EstimateRow:
    """One empirical tail estimate, optionally against an analytic value.

    at_risk counts the observations whose indicator at depth n is known;
    censored counts observations excluded from that set (possible only
    for rows deeper than the working horizon).
    """

    statistic: str
    n: int
    estimate: float
    std_error: float
    analytic_value: float | None = None
    z_score: float | None = None
    at_risk: int = 0
    censored: int = 0

    def __post_init__(self) -> None:
        if self.std_error < 0:
            raise SchemaError(f"standard error must be >= 0, got {self.std_error}")
        if self.n < 0:
            raise SchemaError(f"row depth must be >= 0, got {self.n}")
        if self.analytic_value is not None and self.std_error > 0:
            want = (self.estimate - self.analytic_value) / self.std_error
            if self.z_score is None or abs(self.z_score - want) > 1e-9:
                raise SchemaError(
                    f"z_score {self.z_score!r} inconsistent with "
                    f"(estimate - analytic) / std_error = {want!r}"
                )


def _make_row(statistic, n, hits, at_risk, censored, analytic) -> EstimateRow:
    est = hits / at_risk
    se = math.sqrt(est * (1.0 - est) / at_risk)
    z = None
    if analytic is not None and se > 0:
        z = (est - analytic) / se
    return EstimateRow(
        statistic=statistic,
        n=n,
        estimate=est,
        std_error=se,
        analytic_value=analytic,
        z_score=z,
        at_risk=at_risk,
        censored=censored,
    )


def estimates_to_csv(rows) -> str:
    lines = ["statistic,n,estimate,std_error,analytic_value,z_score,at_risk,censored"]
    for r in rows:
        analytic = "" if r.analytic_value is None else repr(r.analytic_value)
        z = "" if r.z_score is None else repr(r.z_score)
        lines.append(
            f"{r.statistic},{r.n},{r.estimate!r},{r.std_error!r},"
            f"{analytic},{z},{r.at_risk},{r.censored}"
        )
    return "\n".join(lines) + "\n"


# -- Monte Carlo engine ------------------------------------------------------


def _split_samples(samples: int) -> list[int]:
    reps = min(REPLICATES, samples)
    base, extra = divmod(samples, reps)
    return [base + (1 if r < extra else 0) for r in range(reps)]


def _run_replicates(worker, seed, statistic, samples, threads):
    """Run `worker(r, count, rng)` per replicate; results in index order."""
    shares = _split_samples(samples)
    rngs = [stream(seed, "mc", statistic, r) for r in range(len(shares))]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [
                pool.submit(worker, r, shares[r], rngs[r]) for r in range(len(shares))
            ]
            return [f.result() for f in futures]
    return [worker(r, shares[r], rngs[r]) for r in range(len(shares))]


def _first_pair_tallies(model, T, count, rng, ordering, init_mode, root_type, n_max):
    """Per (n, top-type) conditioning cells from independent initial states.

    cells[(n, t)] = [at_risk, hits]; a state is at risk for (n, t) when its
    depth-n ancestor has type t, and a hit when additionally no coalescence
    occurs at depth <= n.
    """
    k = model.k
    cells = {(n, t): [0, 0] for n in range(n_max + 1) for t in range(1, k + 1)}
    for _ in range(count):
        state = dchain.init_quasistationary(
            model, T, init_mode, rng, ordering=ordering, root_type=root_type
        )
        singleton_until = 0
        for j in range(T):
            if len(state.levels[j]) != 1:
                break
            singleton_until = j + 1
        for n in range(n_max + 1):
            t = state.levels[n][0]
            cell = cells[(n, t)]
            cell[0] += 1
            if singleton_until >= n:
                cell[1] += 1
    return cells


def _stationary_tallies(model, T, count, rng, ordering, root_type, b_types):
    """Tail counts from one censored-restart chain segment sequence.

    Returns (a_values, a_censored, b_values, b_censored) where values are
    observed times in 1..T and censored counts observations known only to
    exceed T.  b_* are dicts keyed by standing type.
    """
    a_values: list[int] = []
    a_censored = 0
    b_values = {ell: [] for ell in b_types}
    b_censored = {ell: 0 for ell in b_types}
    open_gap = {ell: None for ell in b_types}
    state = None
    for _ in range(count):
        if state is None:
            state = dchain.init_quasistationary(
                model, T, "rejection", rng, ordering=ordering, root_type=root_type
            )
        standing = state.levels[0][0]
        for ell in b_types:
            if standing == ell:
                if open_gap[ell] is not None:
                    b_values[ell].append(open_gap[ell])
                open_gap[ell] = 0
        if state.coalescence_level() is None:
            # the next pair coalesces beyond the horizon; any open same-type
            # gap is censored with it, and the chain restarts on a new tree
            a_censored += 1
            for ell in b_types:
                if open_gap[ell] is not None:
                    b_censored[ell] += 1
                    open_gap[ell] = None
            state = None
            continue
        state, a, _ = dchain.dchain_step(model, state, rng, ordering=ordering)
        a_values.append(a)
        for ell in b_types:
            if open_gap[ell] is not None and a > open_gap[ell]:
                open_gap[ell] = a
    return a_values, a_censored, b_values, b_censored


def _tail_rows(statistic, values, censored, T, n_max, analytic_fn):
    values = np.asarray(values, dtype=np.int64)
    total = len(values) + censored
    rows = []
    for n in range(n_max + 1):
        analytic = None if analytic_fn is None else analytic_fn(n)
        if n <= T:
            # censored observations still resolve the indicator at depth n
            at_risk = total
            hits = int((values > n).sum()) + censored
            excluded = 0
        else:
            at_risk = len(values)
            hits = int((values > n).sum())
            excluded = censored
        if at_risk == 0:
            raise ValidationFailure(
                f"zero at-risk count for {statistic} at depth {n}"
            )
        rows.append(_make_row(statistic, n, hits, at_risk, excluded, analytic))
    return rows


def mc_estimate(
    statistic: str,
    model,
    T: int,
    samples: int,
    seed: int,
    *,
    ordering: str | None = None,
    init_mode: str = "rejection",
    root_type: int = 1,
    n_max: int = 5,
    threads: int = 1,
) -> list[EstimateRow]:
    """Empirical tail estimates with binomial standard errors.

    Statistics:
      - "a_first": first-pair coalescence depth from independent initial
        states, one row per (depth n, ancestor type) conditioning cell,
        against the exact conditioned law.  Finite-support models only;
        `samples` counts independent states.
      - "a_stationary": pair coalescence depths along one censored-restart
        chain; `samples` counts chain transitions.  Analytic column filled
        for LF models.
      - "b_stationary:<ell>": same-type coalescence depths for standing
        type ell along the same kind of chain run.

    Censored observations (deeper than T) stay in the at-risk set for
    rows with n <= T, where their indicator is known; for deeper rows
    they are excluded and the exclusion count is reported per row.
    """
    if samples < 1:
        raise SchemaError(f"samples must be >= 1, got {samples}")
    if T < 1:
        raise SchemaError(f"horizon must be >= 1, got {T}")
    if n_max < 0:
        raise SchemaError(f"n_max must be >= 0, got {n_max}")
    is_lf = isinstance(model, LFParams)

    if statistic == "a_first":
        if is_lf:
            raise SchemaError(
                "a_first needs the exact conditioned law, which is computed "
                "for finite-support models; convert LF parameters first"
            )
        if n_max > T - 1:
            raise SchemaError(
                f"a_first needs n_max <= horizon - 1, got n_max={n_max}, T={T}"
            )
        parts = _run_replicates(
            lambda r, count, rng: _first_pair_tallies(
                model, T, count, rng, ordering, init_mode, root_type, n_max
            ),
            seed,
            statistic,
            samples,
            threads,
        )
        rows = []
        for n in range(n_max + 1):
            for t in range(1, model.k + 1):
                at_risk = sum(p[(n, t)][0] for p in parts)
                hits = sum(p[(n, t)][1] for p in parts)
                if at_risk == 0:
                    continue
                try:
                    analytic = A1_tail(model, t, n)
                except ImpossibleConditioningError:
                    analytic = None
                rows.append(
                    _make_row(f"a_first[top={t}]", n, hits, at_risk, 0, analytic)
                )
        if not rows:
            raise ValidationFailure("zero at-risk count in every conditioning cell")
        return rows

    if statistic == "a_stationary" or statistic.startswith("b_stationary:"):
        b_types = []
        if statistic.startswith("b_stationary:"):
            try:
                ell = int(statistic.split(":", 1)[1])
            except ValueError as exc:
                raise SchemaError(f"bad statistic id {statistic!r}") from exc
            if not 1 <= ell <= model.k:
                raise SchemaError(f"type index {ell} out of range 1..{model.k}")
            b_types = [ell]
        parts = _run_replicates(
            lambda r, count, rng: _stationary_tallies(
                model, T, count, rng, ordering, root_type, b_types
            ),
            seed,
            statistic,
            samples,
            threads,
        )
        if b_types:
            ell = b_types[0]
            values = [v for p in parts for v in p[2][ell]]
            censored = sum(p[3][ell] for p in parts)
            analytic_fn = (
                (lambda n: lf_sametype_law(model, ell, n)) if is_lf else None
            )
            return _tail_rows(statistic, values, censored, T, n_max, analytic_fn)
        values = [v for p in parts for v in p[0]]
        censored = sum(p[1] for p in parts)
        analytic_fn = (lambda n: lf_coalescence_law(model, n)) if is_lf else None
        return _tail_rows(statistic, values, censored, T, n_max, analytic_fn)

    raise SchemaError(f"unknown statistic {statistic!r}")


# -- two-sample comparison ---------------------------------------------------


@dataclass(frozen=True)
class KSResult:
    distance: float
    critical: float
    passed: bool
    n_a: int
    n_b: int


def ks_compare(sample_a, sample_b) -> KSResult:
    """Two-sample Kolmogorov-Smirnov test at the 1% level.

    Integer-valued samples; the continuous critical value is used, which
    is conservative for discrete data.
    """
    a = np.asarray(sample_a, dtype=np.int64)
    b = np.asarray(sample_b, dtype=np.int64)
    if a.size == 0 or b.size == 0:
        raise SchemaError("both samples must be nonempty")
    support = np.union1d(a, b)
    cdf_a = np.searchsorted(np.sort(a), support, side="right") / a.size
    cdf_b = np.searchsorted(np.sort(b), support, side="right") / b.size
    distance = float(np.max(np.abs(cdf_a - cdf_b)))
    critical = KS_COEFF_1PCT * math.sqrt((a.size + b.size) / (a.size * b.size))
    return KSResult(
        distance=distance,
        critical=critical,
        passed=distance <= critical,
        n_a=int(a.size),
        n_b=int(b.size),
    )


def ks_to_csv(results: dict[str, KSResult]) -> str:
    lines = ["comparison,n_a,n_b,distance,critical,passed"]
    for name in sorted(results):
        r = results[name]
        lines.append(
            f"{name},{r.n_a},{r.n_b},{r.distance!r},{r.critical!r},{int(r.passed)}"
        )
    return "\n".join(lines) + "\n"


# -- task implementations ----------------------------------------------------


def _law_table(cfg: RunConfig) -> LawTable:
    rows = []
    label = cfg.model_label
    if cfg.lf_params is not None:
        params = cfg.lf_params
        for n in range(cfg.n_max + 1):
            rows.append(
                LawRow(
                    formula="a_tail",
                    model=label,
                    n=n,
                    conditioning="",
                    value=lf_coalescence_law(params, n),
                )
            )
        for ell in range(1, params.k + 1):
            for n in range(cfg.n_max + 1):
                rows.append(
                    LawRow(
                        formula="b_tail",
                        model=label,
                        n=n,
                        conditioning=f"ell={ell}",
                        value=lf_sametype_law(params, ell, n),
                    )
                )
        table = LawTable(rows=tuple(rows))
        table.check_tails_monotone()
        return table
    spec = cfg.model_spec
    deficits: dict[tuple[int, int], float] = {}

    def deficit(n, top):
        if (n, top) not in deficits:
            deficits[(n, top)] = (
                0.0 if n == 0 else _popsize_with_budget(spec, n, top).deficit
            )
        return deficits[(n, top)]

    for n in range(cfg.n_max + 1):
        for top in range(1, spec.k + 1):
            # the conditioning event names the ancestor depth: rows with
            # different n condition on different events and do not form a
            # tail sequence of any one law
            try:
                value = A1_tail(spec, top, n)
            except ImpossibleConditioningError:
                continue
            rows.append(
                LawRow(
                    formula="a_tail",
                    model=label,
                    n=n,
                    conditioning=f"anc@{n}={top}",
                    value=value,
                    mass_deficit=deficit(n, top),
                )
            )
    for ell in range(1, spec.k + 1):
        for n in range(cfg.n_max + 1):
            for top in range(1, spec.k + 1):
                try:
                    value = B1_tail(spec, ell, top, n)
                except ImpossibleConditioningError:
                    continue
                rows.append(
                    LawRow(
                        formula="b_tail",
                        model=label,
                        n=n,
                        conditioning=f"ell={ell},anc@{n}={top}",
                        value=value,
                        mass_deficit=deficit(n, top),
                    )
                )
    return LawTable(rows=tuple(rows))


def _task_laws(cfg: RunConfig, out: dict) -> list[dict]:
    table = _law_table(cfg)
    out["laws.csv"] = table.to_csv()
    return [
        {
            "name": "laws_emitted",
            "passed": True,
            "detail": f"{len(table.rows)} rows",
        }
    ]


def _task_validate(cfg: RunConfig, out: dict) -> list[dict]:
    checks = _task_laws(cfg, out)
    rows: list[EstimateRow] = []
    if cfg.lf_params is not None:
        statistics = ["a_stationary"] + [
            f"b_stationary:{ell}" for ell in range(1, cfg.lf_params.k + 1)
        ]
    else:
        statistics = ["a_first"]
    for statistic in statistics:
        rows.extend(
            mc_estimate(
                statistic,
                cfg.model,
                cfg.horizon,
                cfg.samples,
                cfg.seed,
                ordering=cfg.ordering,
                init_mode=cfg.init_mode,
                root_type=cfg.root_type,
                n_max=cfg.n_max,
                threads=cfg.threads,
            )
        )
    out["estimates.csv"] = estimates_to_csv(rows)
    scored = [r for r in rows if r.z_score is not None]
    worst = max((abs(r.z_score) for r in scored), default=0.0)
    ok = all(abs(r.z_score) <= Z_LIMIT for r in scored)
    # a degenerate row (empirical rate exactly 0 or 1) has no standard
    # error; it may only pass by agreeing with the analytic value exactly
    degenerate_ok = all(
        r.estimate == r.analytic_value
        for r in rows
        if r.analytic_value is not None and r.std_error == 0.0
    )
    checks.append(
        {
            "name": "z_scores_within_4",
            "passed": ok and degenerate_ok,
            "detail": f"{len(scored)} scored rows, max |z| = {worst:.3f}",
        }
    )
    if not (ok and degenerate_ok):
        raise ValidationFailure(
            f"validation failed: max |z| = {worst:.3f} over {len(scored)} rows"
            + ("" if degenerate_ok else "; degenerate row off its exact value")
        )
    return checks


def _task_simulate(cfg: RunConfig, out: dict) -> list[dict]:
    rng = stream(cfg.seed, "simulate", 0)
    mode = "concat" if cfg.samples > 1 else "retry"
    tree = forest.simulate_standing(
        cfg.model,
        cfg.horizon,
        cfg.samples,
        rng,
        mode=mode,
        ordering=cfg.ordering or ("lf_first" if cfg.lf_params is not None else "uniform"),
        root_type=cfg.root_type,
    )
    records = forest.coalescence_times(tree)
    out["tree.tsv"] = forest.dump_tree(tree)
    out["records.csv"] = forest.records_to_csv(records)
    return [
        {
            "name": "standing_population",
            "passed": tree.width >= 1,
            "detail": f"width {tree.width}, {len(records)} consecutive pairs",
        }
    ]


def _task_compare_two_type(cfg: RunConfig, out: dict) -> list[dict]:
    g, p, h1, m = cfg.two_type
    comparison = two_type_compare(g, p, h1, m, max(cfg.n_max, 1))
    out["compare.csv"] = comparison.to_csv()
    checks = []
    tol = 1e-12
    dom1 = all(b1a >= b1s - tol for _, _, b1s, b1a, _, _ in comparison.rows)
    dom2 = all(b2a <= b2s + tol for _, _, _, _, b2s, b2a in comparison.rows)
    checks.append(
        {
            "name": "same_type_dominance",
            "passed": dom1 and dom2,
            "detail": "asymmetric B1 tail above symmetric, B2 tail below",
        }
    )
    if p >= 0.5:
        within = all(b1s >= b2s - tol for _, _, b1s, _, b2s, _ in comparison.rows)
        checks.append(
            {
                "name": "symmetric_internal_order",
                "passed": within,
                "detail": "B1 tail above B2 tail when p >= 1/2",
            }
        )
    if not all(c["passed"] for c in checks):
        raise ValidationFailure("two-type dominance ordering violated")
    return checks


def _task_dchain(cfg: RunConfig, out: dict) -> list[dict]:
    rows = mc_estimate(
        "a_stationary",
        cfg.model,
        cfg.horizon,
        cfg.samples,
        cfg.seed,
        ordering=cfg.ordering,
        root_type=cfg.root_type,
        n_max=cfg.n_max,
        threads=cfg.threads,
    )
    out["estimates.csv"] = estimates_to_csv(rows)

    chain_vals: list[int] = []
    rng = stream(cfg.seed, "dchain", "chain-sample")
    state = None
    while len(chain_vals) < cfg.samples:
        if state is None:
            state = dchain.init_quasistationary(
                cfg.model, cfg.horizon, cfg.init_mode, rng,
                ordering=cfg.ordering, root_type=cfg.root_type,
            )
        if state.coalescence_level() is None:
            state = None
            continue
        state, a, _ = dchain.dchain_step(cfg.model, state, rng, ordering=cfg.ordering)
        chain_vals.append(a)

    forest_vals: list[int] = []
    rng = stream(cfg.seed, "dchain", "forest-sample")
    ordering = cfg.ordering or ("lf_first" if cfg.lf_params is not None else "uniform")
    while len(forest_vals) < cfg.samples:
        tree = forest.simulate_standing(
            cfg.model, cfg.horizon, 1, rng, ordering=ordering, root_type=cfg.root_type
        )
        if tree.width < 2:
            continue
        forest_vals.extend(
            r.a for r in forest.coalescence_times(tree) if r.a is not None
        )
    forest_vals = forest_vals[: cfg.samples]

    result = ks_compare(chain_vals, forest_vals)
    out["compare.csv"] = ks_to_csv({"chain_vs_forest_A": result})
    checks = [
        {
            "name": "chain_matches_forest",
            "passed": result.passed,
            "detail": (
                f"KS distance {result.distance:.5f}, "
                f"critical {result.critical:.5f} at 1%"
            ),
        }
    ]
    if not result.passed:
        raise ValidationFailure(
            f"chain and forest coalescence samples diverge: "
            f"KS {result.distance:.5f} > {result.critical:.5f}"
        )
    return checks


_TASK_FN = {
    "simulate": _task_simulate,
    "laws": _task_laws,
    "validate": _task_validate,
    "compare-two-type": _task_compare_two_type,
    "dchain": _task_dchain,
}


def _report(cfg: RunConfig, checks: list[dict], outputs: list[str]) -> str:
    doc = {
        "task": cfg.task,
        "model": cfg.model_label if cfg.two_type is None else "two-type",
        "seed": cfg.seed,
        "samples": cfg.samples,
        "horizon": cfg.horizon,
        "outputs": sorted(outputs),
        "checks": checks,
        "passed": all(c["passed"] for c in checks),
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def _write_outputs(cfg: RunConfig, out: dict) -> None:
    os.makedirs(cfg.out_dir, exist_ok=True)
    for name, text in out.items():
        with open(os.path.join(cfg.out_dir, name), "w") as fh:
            fh.write(text)


def run(config: RunConfig) -> int:
    """Execute one task; returns the process exit status.

    0 success, 1 schema/input errors, 2 resource-guard breaches,
    3 statistical validation failures, 4 I/O errors.  report.json is
    written whenever the task got far enough to produce checks, including
    on validation failure.
    """
    out: dict[str, str] = {}
    try:
        try:
            checks = _TASK_FN[config.task](config, out)
        except ValidationFailure as exc:
            checks = [{"name": "validation", "passed": False, "detail": str(exc)}]
            out["report.json"] = _report(
                config, checks, list(out.keys()) + ["report.json"]
            )
            _write_outputs(config, out)
            return 3
        out["report.json"] = _report(config, checks, list(out.keys()) + ["report.json"])
        _write_outputs(config, out)
        return 0
    except (SchemaError, ImpossibleConditioningError, InconsistentStateError):
        return 1
    except (GuardError, CensoredError):
        return 2
    except NumericConsistencyError:
        return 3
    except OSError:
        return 4
