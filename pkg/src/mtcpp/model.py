"""Finite-support multi-type offspring distributions.

A `ModelSpec` holds, for each parent type, a finite pmf over offspring
count-vectors.  Everything downstream (generating functions, iterates,
survival vectors, mean matrix, Perron spectral data) is an exact finite
sum over that support, which is what makes the analytic cross-checks in
`analytics` trustworthy.

Type indices are 1-based everywhere in the public API, matching the tree
dump and CSV formats; the arrays underneath are 0-based.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import GuardError, SchemaError

__all__ = [
    "ModelSpec",
    "SpectralInfo",
    "NotPositiveRegularError",
    "pgf_eval",
    "pgf_eval_all",
    "pgf_iterate",
    "pgf_partial",
    "mean_matrix",
    "perron",
    "is_positive_regular",
    "survival_vector",
    "type_survival_vector",
]

#: Tolerance band around rho = 1 inside which a model is called critical.
CRITICAL_BAND = 1e-9

#: Convergence threshold on successive Rayleigh quotients in `perron`.
RAYLEIGH_TOL = 1e-13

#: Iteration cap for the power method.
POWER_ITER_CAP = 10**6


class NotPositiveRegularError(ValueError):
    """Mean matrix has no entrywise-positive power up to exponent k**2."""


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Multi-type offspring law with finite support.

    Attributes
    ----------
    k : int
        Number of types; types are labelled 1..k.
    counts : tuple of (rows, k) int arrays
        counts[ell-1] lists the offspring count-vectors of parent type ell.
    probs : tuple of (rows,) float arrays
        probs[ell-1][r] is the probability of count-vector counts[ell-1][r].
    names : tuple of str
        Display names, one per type.
    """

    k: int
    counts: tuple[np.ndarray, ...]
    probs: tuple[np.ndarray, ...]
    names: tuple[str, ...]
    #: Escape hatch for matrix-only tests; singular laws (every parent always
    #: has exactly one child) break the coalescent machinery downstream.
    allow_singular: bool = False

    def __post_init__(self) -> None:
        if self.k < 1:
            raise SchemaError(f"k must be >= 1, got {self.k}")
        if len(self.counts) != self.k or len(self.probs) != self.k:
            raise SchemaError("need one pmf per parent type")
        if len(self.names) != self.k:
            raise SchemaError("need one name per type")
        singular = True
        for ell in range(1, self.k + 1):
            z = self.counts[ell - 1]
            p = self.probs[ell - 1]
            if z.ndim != 2 or z.shape[1] != self.k:
                raise SchemaError(f"parent type {ell}: count-vectors must have length k={self.k}")
            if z.shape[0] != p.shape[0] or p.ndim != 1:
                raise SchemaError(f"parent type {ell}: counts/probs row mismatch")
            if z.shape[0] == 0:
                raise SchemaError(f"parent type {ell}: empty pmf")
            if np.any(z < 0) or not np.issubdtype(z.dtype, np.integer):
                raise SchemaError(f"parent type {ell}: count-vectors must be nonnegative integers")
            bad = np.flatnonzero(p < 0)
            if bad.size:
                raise SchemaError(f"parent type {ell}, row {bad[0]}: negative probability")
            if abs(p.sum() - 1.0) > 1e-12:
                raise SchemaError(
                    f"parent type {ell}: probabilities sum to {p.sum()!r}, not 1 within 1e-12"
                )
            totals = z.sum(axis=1)
            if np.any((totals != 1) & (p > 0)):
                singular = False
        if singular and not self.allow_singular:
            raise SchemaError("singular model: every parent type always has exactly one child")

    @property
    def max_support(self) -> int:
        """Largest total offspring count |z| in any parent type's support."""
        return int(max(z.sum(axis=1).max() for z in self.counts))

    @classmethod
    def from_pmf(
        cls,
        pmf: dict[int, dict[tuple[int, ...], float]],
        k: int | None = None,
        names: tuple[str, ...] | None = None,
        allow_singular: bool = False,
    ) -> "ModelSpec":
        """Build a spec from {parent type: {count-vector: probability}}."""
        if k is None:
            k = max(pmf)
        counts, probs = [], []
        for ell in range(1, k + 1):
            if ell not in pmf:
                raise SchemaError(f"parent type {ell}: missing pmf")
            rows = sorted(pmf[ell].items())
            counts.append(np.array([r[0] for r in rows], dtype=np.int64).reshape(len(rows), k))
            probs.append(np.array([r[1] for r in rows], dtype=np.float64))
        if names is None:
            names = tuple(str(ell) for ell in range(1, k + 1))
        return cls(
            k=k,
            counts=tuple(counts),
            probs=tuple(probs),
            names=tuple(names),
            allow_singular=allow_singular,
        )

    def pmf_dict(self, ell: int) -> dict[tuple[int, ...], float]:
        """Offspring pmf of parent type ell as a plain dict."""
        _check_type(self, ell)
        z = self.counts[ell - 1]
        p = self.probs[ell - 1]
        return {tuple(int(c) for c in row): float(q) for row, q in zip(z, p)}

    # -- JSON round trip ---------------------------------------------------

    def to_json(self) -> str:
        doc = {
            "k": self.k,
            "types": list(self.names),
            "pmf": {
                str(ell): [
                    {"counts": [int(c) for c in row], "p": float(q)}
                    for row, q in zip(self.counts[ell - 1], self.probs[ell - 1])
                ]
                for ell in range(1, self.k + 1)
            },
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"model spec is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict) or "k" not in doc or "pmf" not in doc:
            raise SchemaError("model spec JSON needs 'k' and 'pmf' fields")
        k = doc["k"]
        if not isinstance(k, int) or k < 1:
            raise SchemaError(f"'k' must be a positive integer, got {k!r}")
        names = tuple(str(n) for n in doc.get("types", range(1, k + 1)))
        counts, probs = [], []
        for ell in range(1, k + 1):
            rows = doc["pmf"].get(str(ell))
            if rows is None:
                raise SchemaError(f"parent type {ell}: missing from 'pmf'")
            cs, ps = [], []
            for r, row in enumerate(rows):
                if "counts" not in row or "p" not in row:
                    raise SchemaError(f"parent type {ell}, row {r}: needs 'counts' and 'p'")
                c = row["counts"]
                if len(c) != k or any((not isinstance(x, int)) or x < 0 for x in c):
                    raise SchemaError(
                        f"parent type {ell}, row {r}: 'counts' must be {k} nonnegative integers"
                    )
                cs.append(c)
                ps.append(float(row["p"]))
            counts.append(np.array(cs, dtype=np.int64).reshape(len(cs), k))
            probs.append(np.array(ps, dtype=np.float64))
        return cls(k=k, counts=tuple(counts), probs=tuple(probs), names=names)


@dataclass(frozen=True)
class SpectralInfo:
    """Perron data of a mean matrix.

    `v` is the right eigenvector (M v = rho v), `u` the left one
    (u M = rho u), normalized so that u . 1 = 1 and u . v = 1.
    """

    rho: float
    u: np.ndarray
    v: np.ndarray
    criticality: str  # "sub" | "critical" | "super"


def _check_type(spec: ModelSpec, ell: int) -> None:
    if not 1 <= ell <= spec.k:
        raise SchemaError(f"type index {ell} out of range 1..{spec.k}")


def _check_s(spec: ModelSpec, s) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.shape != (spec.k,):
        raise SchemaError(f"argument vector has shape {s.shape}, expected ({spec.k},)")
    if np.any(s < 0) or np.any(s > 1):
        raise SchemaError("generating functions are evaluated on [0,1]^k only")
    return s


def pgf_eval(spec: ModelSpec, ell: int, s) -> float:
    """Evaluate the offspring generating function f_ell(s) = E[s^xi_ell]."""
    _check_type(spec, ell)
    s = _check_s(spec, s)
    z = spec.counts[ell - 1]
    return float(spec.probs[ell - 1] @ np.prod(s[None, :] ** z, axis=1))


def pgf_eval_all(spec: ModelSpec, s) -> np.ndarray:
    """Vector (f_1(s), ..., f_k(s))."""
    s = _check_s(spec, s)
    return np.array(
        [spec.probs[ell] @ np.prod(s[None, :] ** spec.counts[ell], axis=1) for ell in range(spec.k)]
    )


def pgf_iterate(spec: ModelSpec, n: int, s) -> np.ndarray:
    """n-fold composition f^(n)(s); f^(0)(s) = s."""
    if n < 0:
        raise SchemaError(f"iteration count must be >= 0, got {n}")
    out = _check_s(spec, s)
    for _ in range(n):
        # rounding can push a coordinate to 1 + O(eps); clip to stay in domain
        out = np.clip(pgf_eval_all(spec, out), 0.0, 1.0)
    return out


def pgf_partial(spec: ModelSpec, ell: int, wrt: int, s) -> float:
    """Partial derivative of f_ell with respect to s_wrt, with 0**0 = 1."""
    _check_type(spec, ell)
    _check_type(spec, wrt)
    s = _check_s(spec, s)
    z = spec.counts[ell - 1]
    p = spec.probs[ell - 1]
    keep = z[:, wrt - 1] >= 1
    if not np.any(keep):
        return 0.0
    zk = z[keep].copy()
    zk[:, wrt - 1] -= 1
    terms = z[keep, wrt - 1] * np.prod(s[None, :] ** zk, axis=1)
    return float(p[keep] @ terms)


def mean_matrix(spec: ModelSpec) -> np.ndarray:
    """Matrix M with M[l, l'] = expected type-l' offspring of a type-l parent."""
    return np.vstack([spec.probs[ell] @ spec.counts[ell] for ell in range(spec.k)]).astype(float)


def is_positive_regular(M: np.ndarray) -> bool:
    """True iff some power M^n, n <= k**2, is entrywise positive."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise SchemaError("matrix must be square")
    if np.any(M < 0):
        raise SchemaError("matrix must be nonnegative")
    k = M.shape[0]
    B = M > 0
    P = B.copy()
    for _ in range(k * k):
        if P.all():
            return True
        P = P @ B
    return False


def _power_iterate(M: np.ndarray) -> tuple[float, np.ndarray]:
    """Dominant eigenpair by power iteration from the all-ones start vector.

    Stops once successive Rayleigh quotients differ by < 1e-13 and the
    eigenvector residual is small too; the Rayleigh quotient converges
    twice as fast as the vector, so the quotient test alone can stop with
    residuals far above the promised 1e-9.
    """
    v = np.ones(M.shape[0])
    rayleigh = np.inf
    for _ in range(POWER_ITER_CAP):
        w = M @ v
        v = w / np.linalg.norm(w)
        Mv = M @ v
        r = float(v @ Mv)
        residual = float(np.max(np.abs(Mv - r * v)))
        if abs(r - rayleigh) < RAYLEIGH_TOL and residual <= 1e-12 * max(1.0, abs(r)):
            return r, v
        rayleigh = r
    raise GuardError("power iteration did not converge within the iteration cap")


def perron(M: np.ndarray) -> SpectralInfo:
    """Perron eigenvalue and eigenvectors of a positive-regular matrix."""
    M = np.asarray(M, dtype=float)
    if not is_positive_regular(M):
        raise NotPositiveRegularError("matrix is not positive regular (no positive power up to k^2)")
    rho, v = _power_iterate(M)
    _, u = _power_iterate(M.T)
    u = u / u.sum()
    v = v / (u @ v)
    if abs(rho - 1.0) <= CRITICAL_BAND:
        crit = "critical"
    elif rho < 1.0:
        crit = "sub"
    else:
        crit = "super"
    return SpectralInfo(rho=rho, u=u, v=v, criticality=crit)


def survival_vector(spec: ModelSpec, n: int) -> np.ndarray:
    """Probability that one individual of each type has descendants n generations on."""
    if n < 0:
        raise SchemaError(f"generation count must be >= 0, got {n}")
    return 1.0 - pgf_iterate(spec, n, np.zeros(spec.k))


def type_survival_vector(spec: ModelSpec, n: int, ell: int) -> np.ndarray:
    """Probability of having at least one type-ell descendant n generations on."""
    if n < 0:
        raise SchemaError(f"generation count must be >= 0, got {n}")
    _check_type(spec, ell)
    e_hat = np.ones(spec.k)
    e_hat[ell - 1] = 0.0
    return 1.0 - pgf_iterate(spec, n, e_hat)
