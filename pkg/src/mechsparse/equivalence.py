"""Model-equivalence relations between two latent representations.

Three nested relations over pairs (z, zhat) evaluated on the same samples:
linear (z = L zhat + b for invertible L), consistency (L = C P^T with C
respecting the reference graph's consistency masks and the two graphs equal
up to the same permutation), and permutation (L = D P^T, diagonal D). The
axiom suite exercises reflexivity, symmetry, and transitivity of the
consistency relation constructively.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import RankDeficientError, ValidationError
from .graph_algebra import (
    DEFAULT_TOL,
    BinaryGraph,
    Permutation,
    combined_mask,
    consistency_mask,
    permutation_in_support,
    pattern_inverse,
    random_matrix_in_pattern,
)


@dataclass(frozen=True)
class LinearWitness:
    """Least-squares affine map z ~= L zhat + b with fit diagnostics."""

    L: np.ndarray
    b: np.ndarray
    residual: float
    cond: float = float("nan")
    c: np.ndarray = None

    def to_json(self):
        return {
            "L": self.L.tolist(),
            "b": self.b.tolist(),
            "residual": self.residual,
            "cond": self.cond,
            "c": None if self.c is None else self.c.tolist(),
        }


@dataclass(frozen=True)
class ConsistencyWitness:
    """Decomposition L = C P^T with C respecting the reference graph's masks."""

    P: Permutation
    C: np.ndarray
    b: np.ndarray
    masks_checked: dict = field(default_factory=dict)

    def to_json(self):
        return {
            "sigma": self.P.sigma.tolist(),
            "C": self.C.tolist(),
            "b": self.b.tolist(),
            "masks_checked": dict(self.masks_checked),
        }


def fit_linear_witness(z, zhat):
    """(L, b) = argmin sum ||z_n - L zhat_n - b||^2 by QR least squares.

    An exactly rank-deficient design (collapsed representation) raises
    RankDeficientError; mere ill-conditioning is reported via the witness's
    condition number.
    """
    from scipy.linalg import lstsq

    z = np.asarray(z, dtype=np.float64)
    zhat = np.asarray(zhat, dtype=np.float64)
    if z.ndim != 2 or zhat.ndim != 2 or z.shape != zhat.shape:
        raise ValidationError(
            f"z and zhat must be equal-shape N x d arrays, got {z.shape} vs {zhat.shape}"
        )
    n, d = z.shape
    if n < d + 1:
        raise ValidationError(f"need at least d+1 = {d + 1} samples, got {n}")
    design = np.hstack([zhat, np.ones((n, 1))])
    coef, _, rank, _ = lstsq(design, z, lapack_driver="gelsy")
    if rank < d + 1:
        raise RankDeficientError(
            f"representation collapsed: design rank {rank} < {d + 1}"
        )
    L = coef[:d].T
    b = coef[d]
    pred = design @ coef
    residual = float(np.sqrt(np.mean((z - pred) ** 2)))
    cond = float(np.linalg.cond(L))
    return LinearWitness(L=L, b=b, residual=residual, cond=cond)


def check_perm_equivalence(w, tol=DEFAULT_TOL):
    """(P, diagonal of D) iff w.L = D P^T within tol, else None.

    Operationally: exactly one above-tol entry per row and per column; row
    i's entry sits at column sigma(i) with value D_ii.
    """
    L = np.asarray(w.L, dtype=np.float64)
    above = np.abs(L) > tol
    if not (np.all(above.sum(axis=0) == 1) and np.all(above.sum(axis=1) == 1)):
        return None
    sigma = np.argmax(above, axis=1)
    d_vals = L[np.arange(L.shape[0]), sigma]
    return Permutation(sigma), d_vals


def consistency_equivalence_report(w, G, Ghat, tol=DEFAULT_TOL):
    """Full diagnostics for the consistency-equivalence check.

    Decomposes L = C P^T with P the dominant permutation in L's support,
    then records (a) whether the learned graph equals the reference graph
    under that permutation and (b) the worst entry of C on positions each
    of the three reference masks forbids.
    """
    if not isinstance(G, BinaryGraph) or not isinstance(Ghat, BinaryGraph):
        raise ValidationError("graphs must be BinaryGraph instances")
    if G.d_z != Ghat.d_z or G.d_a != Ghat.d_a:
        raise ValidationError(
            f"graph dimensions differ: ({G.d_z},{G.d_a}) vs ({Ghat.d_z},{Ghat.d_a})"
        )
    P = permutation_in_support(w.L, tol)
    sigma = P.sigma
    C = np.asarray(w.L, dtype=np.float64) @ P.matrix
    graphs_match = bool(
        np.array_equal(G.gz, Ghat.gz[np.ix_(sigma, sigma)])
        and np.array_equal(G.ga, Ghat.ga[sigma])
    )
    masks_checked = {}
    consistent = True
    for name, template in (("gz", G.gz), ("gzT", G.gz.T), ("ga", G.ga)):
        mask = consistency_mask(template).mask
        viol = np.abs(C) * (mask == 0)
        worst = float(viol.max()) if viol.size else 0.0
        masks_checked[name] = worst
        if worst > tol:
            consistent = False
    return {
        "P": P,
        "C": C,
        "graphs_match": graphs_match,
        "consistent": consistent,
        "masks_checked": masks_checked,
    }


def check_consistency_equivalence(w, G, Ghat, tol=DEFAULT_TOL):
    """ConsistencyWitness iff graphs match under P and C passes all masks, else None."""
    report = consistency_equivalence_report(w, G, Ghat, tol)
    if not (report["graphs_match"] and report["consistent"]):
        return None
    return ConsistencyWitness(
        P=report["P"],
        C=report["C"],
        b=np.asarray(w.b, dtype=np.float64),
        masks_checked=report["masks_checked"],
    )


def permute_graph(G, P):
    """The graph as seen by a P-relabelled model: (P gz P^T, P ga)."""
    if not isinstance(P, Permutation):
        P = Permutation(np.asarray(P))
    inv = P.inverse().sigma
    return BinaryGraph(gz=G.gz[np.ix_(inv, inv)], ga=G.ga[inv])


def sample_witness_pair(rng, d_z=None, d_a=None, density=0.4):
    """A random (G, Ghat, LinearWitness, expected C, P) quintuple.

    Ghat is a random relabelling of G; C is a random invertible matrix
    respecting G's combined mask; L = C P^T is then a valid consistency
    witness by construction.
    """
    if d_z is None:
        d_z = int(rng.integers(2, 7))
    if d_a is None:
        d_a = int(rng.integers(1, 4))
    while True:
        gz = (rng.random((d_z, d_z)) < density).astype(np.uint8)
        ga = (rng.random((d_z, d_a)) < density).astype(np.uint8)
        G = BinaryGraph(gz=gz, ga=ga)
        S_C = combined_mask(G)
        C = random_matrix_in_pattern(S_C, rng)
        if np.linalg.matrix_rank(C) == d_z:
            break
    P = Permutation(rng.permutation(d_z))
    Ghat = permute_graph(G, P)
    L = C @ P.matrix.T
    b = rng.standard_normal(d_z)
    w = LinearWitness(L=L, b=b, residual=0.0, cond=float(np.linalg.cond(L)))
    return G, Ghat, w, C, P


def relation_axiom_suite(seed, n_triples=500, tol=1e-6):
    """Constructive check of reflexivity, symmetry, and transitivity.

    For each trial: an identity witness must verify against (G, G); the
    inverse of a random witness must verify in the reversed direction; and
    the composition of two chained witnesses must verify end-to-end.
    Returns counts and the worst mask violation seen across all passes.
    """
    rng = np.random.default_rng(seed)
    failures = []
    max_violation = 0.0
    for trial in range(n_triples):
        G, G2, w12, C1, P1 = sample_witness_pair(rng)
        d_z = G.d_z

        identity_w = LinearWitness(
            L=np.eye(d_z), b=np.zeros(d_z), residual=0.0, cond=1.0
        )
        if check_consistency_equivalence(identity_w, G, G, tol) is None:
            failures.append((trial, "reflexivity"))

        S_C = combined_mask(G)
        C1_inv = pattern_inverse(C1, S_C, tol)
        L_back = P1.matrix @ C1_inv
        w21 = LinearWitness(
            L=L_back,
            b=-(L_back @ w12.b),
            residual=0.0,
            cond=float(np.linalg.cond(L_back)),
        )
        back = check_consistency_equivalence(w21, G2, G, tol)
        if back is None:
            failures.append((trial, "symmetry"))
        else:
            max_violation = max(max_violation, *back.masks_checked.values())

        S_C2 = combined_mask(G2)
        while True:
            C2 = random_matrix_in_pattern(S_C2, rng)
            if np.linalg.matrix_rank(C2) == d_z:
                break
        P2 = Permutation(rng.permutation(d_z))
        G3 = permute_graph(G2, P2)
        L23 = C2 @ P2.matrix.T
        b23 = rng.standard_normal(d_z)
        w23 = LinearWitness(
            L=L23, b=b23, residual=0.0, cond=float(np.linalg.cond(L23))
        )
        if check_consistency_equivalence(w23, G2, G3, tol) is None:
            failures.append((trial, "link-2"))
        L13 = w12.L @ L23
        w13 = LinearWitness(
            L=L13, b=w12.L @ b23 + w12.b, residual=0.0, cond=float(np.linalg.cond(L13))
        )
        composed = check_consistency_equivalence(w13, G, G3, tol)
        if composed is None:
            failures.append((trial, "transitivity"))
        else:
            max_violation = max(max_violation, *composed.masks_checked.values())
    if failures:
        warnings.warn(f"axiom suite failures: {failures[:10]}", RuntimeWarning)
    return {
        "n_triples": n_triples,
        "failures": failures,
        "n_failures": len(failures),
        "max_violation": max_violation,
    }
