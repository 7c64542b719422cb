"""Binary-graph and masked-matrix algebra.

The central object is the consistency mask of a binary sparsity template S:
``M = [1 - S(1-S)^T]^+`` elementwise, so ``M[i, j] = 1`` exactly when the
support of row i of S is contained in the support of row j. A real square
matrix C is "S-consistent" when it vanishes (within tolerance) wherever the
mask does; such invertible matrices are closed under products and inverses,
and `sconsistent_product` / `sconsistent_inverse` compute inside that class
and enforce it.
"""

from dataclasses import dataclass

import numpy as np

from ._core import gj_inverse
from .errors import NumericalError, ValidationError

#: an entry counts as zero when |x| <= DEFAULT_TOL (absolute, float64)
DEFAULT_TOL = 1e-7


def as_binary(S, name="S"):
    """Validate and return a 2-D {0,1} array as uint8."""
    arr = np.asarray(S)
    if arr.ndim != 2:
        raise ValidationError(f"{name} must be 2-D, got shape {arr.shape}")
    vals = np.unique(arr)
    if not np.all(np.isin(vals, (0, 1))):
        raise ValidationError(f"{name} must be binary, found values {vals[:5]}")
    return arr.astype(np.uint8)


@dataclass(frozen=True, eq=False)
class BinaryGraph:
    """Adjacency pair over latent and action parents.

    gz[i, j] = 1 iff latent j at the previous step is a parent of latent i;
    ga[i, l] = 1 iff action coordinate l is a parent of latent i.
    """

    gz: np.ndarray
    ga: np.ndarray

    def __post_init__(self):
        gz = as_binary(self.gz, "gz")
        ga = as_binary(self.ga, "ga")
        if gz.shape[0] != gz.shape[1]:
            raise ValidationError(f"gz must be square, got {gz.shape}")
        if ga.shape[0] != gz.shape[0]:
            raise ValidationError(
                f"gz and ga row counts differ: {gz.shape[0]} vs {ga.shape[0]}"
            )
        if ga.shape[1] < 1:
            raise ValidationError("ga must have at least one column")
        gz.setflags(write=False)
        ga.setflags(write=False)
        object.__setattr__(self, "gz", gz)
        object.__setattr__(self, "ga", ga)

    @property
    def d_z(self):
        return self.gz.shape[0]

    @property
    def d_a(self):
        return self.ga.shape[1]

    @property
    def n_edges(self):
        """Total edge count over both blocks."""
        return int(self.gz.sum()) + int(self.ga.sum())

    def __eq__(self, other):
        if not isinstance(other, BinaryGraph):
            return NotImplemented
        return np.array_equal(self.gz, other.gz) and np.array_equal(self.ga, other.ga)

    def to_json(self):
        return {
            "d_z": self.d_z,
            "d_a": self.d_a,
            "gz": self.gz.astype(int).tolist(),
            "ga": self.ga.astype(int).tolist(),
        }

    @classmethod
    def from_json(cls, obj):
        try:
            gz = np.asarray(obj["gz"])
            ga = np.asarray(obj["ga"])
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"graph object missing field: {exc}") from exc
        graph = cls(gz=gz, ga=ga)
        for field in ("d_z", "d_a"):
            if field in obj and int(obj[field]) != getattr(graph, field):
                raise ValidationError(
                    f"declared {field}={obj[field]} does not match matrix shape"
                )
        return graph


@dataclass(frozen=True, eq=False)
class ConsistencyMask:
    """Binary matrix of allowed positions, plus the template it came from."""

    mask: np.ndarray
    source: np.ndarray

    @property
    def m(self):
        return self.mask.shape[0]

    def __eq__(self, other):
        if not isinstance(other, ConsistencyMask):
            return NotImplemented
        return np.array_equal(self.mask, other.mask) and np.array_equal(
            self.source, other.source
        )


@dataclass(frozen=True, eq=False)
class Permutation:
    """A bijection sigma on {0..m-1}; its matrix P has P[:, i] = e_{sigma(i)}."""

    sigma: np.ndarray

    def __post_init__(self):
        sig = np.asarray(self.sigma, dtype=np.intp)
        if sig.ndim != 1 or not np.array_equal(np.sort(sig), np.arange(sig.size)):
            raise ValidationError(f"not a permutation of 0..{sig.size - 1}: {sig}")
        sig.setflags(write=False)
        object.__setattr__(self, "sigma", sig)

    @property
    def m(self):
        return self.sigma.size

    @property
    def matrix(self):
        return np.eye(self.m)[:, self.sigma]

    def inverse(self):
        inv = np.empty(self.m, dtype=np.intp)
        inv[self.sigma] = np.arange(self.m)
        return Permutation(inv)

    def __eq__(self, other):
        if not isinstance(other, Permutation):
            return NotImplemented
        return np.array_equal(self.sigma, other.sigma)

    @classmethod
    def identity(cls, m):
        return cls(np.arange(m))

    @classmethod
    def from_matrix(cls, P, tol=DEFAULT_TOL):
        P = np.asarray(P, dtype=np.float64)
        sigma = np.argmax(P, axis=0)
        if not np.allclose(P, np.eye(P.shape[0])[:, sigma], atol=tol):
            raise ValidationError("matrix is not a permutation matrix")
        return cls(sigma)


def consistency_mask(S):
    """Allowed-position mask of a binary template: max(0, 1 - S(1-S)^T) in {0,1}.

    Entry (i, j) is 0 exactly when some column k has S[i, k] = 1 and
    S[j, k] = 0; the diagonal is always 1.
    """
    S = as_binary(S)
    counts = S.astype(np.int64) @ (1 - S.astype(np.int64)).T
    mask = (counts == 0).astype(np.uint8)
    mask.setflags(write=False)
    return ConsistencyMask(mask=mask, source=S)


def consistent_row_support(S, i):
    """Row i's allowed support: the intersection of its parents' child columns.

    By convention the intersection over an empty family (row i all zero) is
    the all-ones vector.
    """
    S = as_binary(S)
    m = S.shape[0]
    if not 0 <= i < m:
        raise ValidationError(f"row index {i} out of range for {m} rows")
    cols = np.flatnonzero(S[i])
    if cols.size == 0:
        return np.ones(m, dtype=np.uint8)
    return np.all(S[:, cols] == 1, axis=1).astype(np.uint8)


def is_s_consistent(C, S, tol=DEFAULT_TOL):
    """True iff |C[i, j]| <= tol wherever the consistency mask of S is zero."""
    C = np.asarray(C, dtype=np.float64)
    S = as_binary(S)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValidationError(f"C must be square, got shape {C.shape}")
    if C.shape[0] != S.shape[0]:
        raise ValidationError(
            f"C is {C.shape[0]}x{C.shape[1]} but S has {S.shape[0]} rows"
        )
    mask = consistency_mask(S).mask
    forbidden = mask == 0
    if not forbidden.any():
        return True
    return bool(np.max(np.abs(C[forbidden])) <= tol)


def _max_violation(C, mask):
    """(magnitude, (i, j)) of the largest entry on a forbidden position."""
    viol = np.abs(C) * (mask == 0)
    idx = np.unravel_index(np.argmax(viol), viol.shape)
    return float(viol[idx]), (int(idx[0]), int(idx[1]))


def _require_consistent(C, S, tol, name):
    mask = consistency_mask(S).mask
    mag, (i, j) = _max_violation(np.asarray(C, dtype=np.float64), mask)
    if mag > tol:
        raise ValidationError(
            f"{name} is not consistent with the template: |{name}[{i},{j}]| = "
            f"{mag:.3e} > tol {tol:.1e} on a forbidden position"
        )
    return mask


def _require_invertible(C, name):
    m = C.shape[0]
    if np.linalg.matrix_rank(C) < m:
        raise NumericalError(f"{name} is singular")


def sconsistent_product(C1, C2, S, tol=DEFAULT_TOL):
    """Product of two invertible template-respecting matrices.

    The class is closed under multiplication, so the result is asserted to
    respect the template too (at a tolerance relaxed for accumulated
    sub-tolerance inputs); a failure here is an internal-invariant error.
    """
    C1 = np.asarray(C1, dtype=np.float64)
    C2 = np.asarray(C2, dtype=np.float64)
    if C1.shape != C2.shape:
        raise ValidationError(f"shape mismatch: {C1.shape} vs {C2.shape}")
    _require_consistent(C1, S, tol, "C1")
    _require_consistent(C2, S, tol, "C2")
    _require_invertible(C1, "C1")
    _require_invertible(C2, "C2")
    out = C1 @ C2
    m = C1.shape[0]
    relaxed = 2.0 * m * tol * max(1.0, np.abs(C1).max(), np.abs(C2).max())
    if not is_s_consistent(out, S, relaxed):
        raise NumericalError(
            "internal invariant violated: product left the consistent class"
        )
    return out


def _masked_inverse(C, allowed, tol):
    """Shared kernel: invert C after projecting it onto the allowed pattern.

    Entries within tol of zero on forbidden positions are projected to
    exactly zero first; the elimination then preserves those zeros, and the
    result is asserted to stay on the pattern and to be a true inverse.
    """
    work = C * (allowed != 0)
    scale = max(1.0, float(np.abs(work).max()))
    inv = gj_inverse(work, pivot_tol=1e-12 * scale)
    mag, _ = _max_violation(inv, allowed)
    if mag > tol:
        raise NumericalError(
            "internal invariant violated: inverse left the allowed pattern"
        )
    residual = np.max(np.abs(work @ inv - np.eye(C.shape[0])))
    bound = 1e-8 * max(1.0, np.abs(work).max() * np.abs(inv).max())
    if residual > bound:
        raise NumericalError(
            f"internal invariant violated: ||C C^-1 - I|| = {residual:.3e}"
        )
    return inv


def sconsistent_inverse(C, S, tol=DEFAULT_TOL):
    """Inverse computed by Gauss-Jordan steps restricted to the template's mask.

    Row scalings are always allowed; a multiple of the pivot row is only ever
    added to rows whose pivot-column entry is nonzero (which the mask then
    permits); zero pivots are repaired by a permutation of the trailing
    block, itself guaranteed to respect the mask.
    """
    C = np.asarray(C, dtype=np.float64)
    mask = _require_consistent(C, S, tol, "C")
    return _masked_inverse(C, mask, tol)


def pattern_inverse(C, pattern, tol=DEFAULT_TOL):
    """Inverse restricted to an explicitly given allowed-position pattern.

    Unlike sconsistent_inverse, the ones of `pattern` ARE the allowed
    positions; no mask is derived from it. The pattern must be reflexive and
    transitive as a relation (consistency masks and their intersections,
    e.g. a graph's combined mask, always are) so that the restricted
    elimination stays closed.
    """
    C = np.asarray(C, dtype=np.float64)
    allowed = _require_pattern(pattern)
    if C.ndim != 2 or C.shape != allowed.shape:
        raise ValidationError(
            f"C has shape {C.shape} but the pattern is {allowed.shape}"
        )
    mag, (i, j) = _max_violation(C, allowed)
    if mag > tol:
        raise ValidationError(
            f"C is not supported on the pattern: |C[{i},{j}]| = "
            f"{mag:.3e} > tol {tol:.1e} on a forbidden position"
        )
    return _masked_inverse(C, allowed, tol)


def permutation_in_support(L, tol=DEFAULT_TOL):
    """A permutation sigma with |L[i, sigma(i)]| > tol for every i.

    Exists for every invertible L (expand the determinant); chosen as the
    max-weight matching on |L| so the dominant alignment wins.
    """
    from scipy.optimize import linear_sum_assignment

    L = np.asarray(L, dtype=np.float64)
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise ValidationError(f"L must be square, got {L.shape}")
    mags = np.abs(L)
    cost = np.where(mags > tol, -mags, np.inf)
    try:
        _, cols = linear_sum_assignment(cost)
    except ValueError as exc:
        raise NumericalError(
            f"no permutation found in the support of L at tol {tol:.1e} "
            "(singular matrix or tolerance too large)"
        ) from exc
    return Permutation(cols)


def conjugate_mask(S, P, Q=None):
    """Transport a template across permuted models: P S, or P S Q^T with Q.

    Row permutations conjugate the consistency mask (mask(PS) = P mask(S) P^T)
    while column permutations leave it unchanged.
    """
    S = as_binary(S)
    if not isinstance(P, Permutation):
        P = Permutation(np.asarray(P))
    if P.m != S.shape[0]:
        raise ValidationError(f"P acts on {P.m} rows but S has {S.shape[0]}")
    out = P.matrix.astype(np.uint8) @ S
    if Q is not None:
        if not isinstance(Q, Permutation):
            Q = Permutation(np.asarray(Q))
        if Q.m != S.shape[1]:
            raise ValidationError(f"Q acts on {Q.m} columns but S has {S.shape[1]}")
        out = out @ Q.matrix.astype(np.uint8).T
    return out.astype(np.uint8)


def combined_mask(G):
    """Allowed-entanglement pattern of a model with graph G.

    Elementwise AND of the consistency masks of gz, gz^T and ga: the pattern
    a mixing matrix must respect to count as equivalent-up-to-consistency.
    """
    if not isinstance(G, BinaryGraph):
        raise ValidationError("combined_mask expects a BinaryGraph")
    mz = consistency_mask(G.gz).mask
    mzt = consistency_mask(G.gz.T).mask
    ma = consistency_mask(G.ga).mask
    return (mz & mzt & ma).astype(np.uint8)


def _require_pattern(pattern):
    """Validate an explicit allowed-position pattern: binary, square, diag ones."""
    allowed = as_binary(pattern)
    if allowed.shape[0] != allowed.shape[1]:
        raise ValidationError(f"pattern must be square, got shape {allowed.shape}")
    if not np.all(np.diagonal(allowed) == 1):
        raise ValidationError("pattern must allow every diagonal position")
    return allowed


def random_matrix_in_pattern(pattern, rng):
    """Dense Gaussian entries zeroed outside the pattern, plus m*I for invertibility.

    The ones of `pattern` are taken as the allowed positions directly; use
    random_consistent_matrix when starting from a template instead.
    """
    allowed = _require_pattern(pattern)
    m = allowed.shape[0]
    C = rng.standard_normal((m, m)) * allowed
    C[np.diag_indices(m)] += m
    return C


def random_consistent_matrix(S, rng):
    """Dense Gaussian entries zeroed outside the template's mask, plus m*I.

    The standard test-fixture recipe: guarantees an invertible member of the
    consistent class without rejection sampling.
    """
    return random_matrix_in_pattern(consistency_mask(S).mask, rng)
