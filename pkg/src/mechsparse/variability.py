"""Empirical rank checks of the sufficient-variability assumptions.

A transition mean passes time-variability when its Jacobians with respect
to the previous latent, restricted to the graph's support and stacked over
random probe points, span the full support dimension; action-variability
asks the same per action of the stacked partial differences. Linear means
are the canonical failure: their probes are all parallel, so the stack has
rank 1 no matter how many probes are taken.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ModelSupportError, NumericalError, ValidationError
from .graph_algebra import BinaryGraph

DEFAULT_PROBES = 200
DEFAULT_SUPPORT_TOL = 1e-6
RANK_FLOOR = 1e-8
ACTION_LOW, ACTION_HIGH = -2.0, 2.0


@dataclass(frozen=True)
class VariabilityReport:
    """Outcome of one rank check (one per graph for time, one per action)."""

    kind: str
    target_dim: int
    achieved_rank: int
    singular_values: tuple
    passes: bool
    n_probes: int
    seed: int
    off_support_max: float
    action_index: int = None

    def to_json(self):
        return {
            "kind": self.kind,
            "action_index": self.action_index,
            "target_dim": self.target_dim,
            "achieved_rank": self.achieved_rank,
            "singular_values": list(self.singular_values),
            "passes": self.passes,
            "n_probes": self.n_probes,
            "seed": self.seed,
            "off_support_max": self.off_support_max,
        }


def jacobian_wrt_z(mu, z, a, step=None):
    """d mu / d z at (z, a): the map's analytic Jacobian when it has one,
    otherwise a central finite difference with per-coordinate step
    1e-5 * (1 + |z_j|)."""
    z = np.asarray(z, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if hasattr(mu, "jacobian_z"):
        jac = np.asarray(mu.jacobian_z(z, a), dtype=np.float64)
    else:
        d_z = z.shape[-1]
        cols = []
        for j in range(d_z):
            h = (1e-5 * (1.0 + abs(z[j]))) if step is None else step
            e = np.zeros(d_z)
            e[j] = h
            cols.append((np.asarray(mu(z + e, a)) - np.asarray(mu(z - e, a))) / (2 * h))
        jac = np.stack(cols, axis=-1).astype(np.float64)
    if not np.all(np.isfinite(jac)):
        raise NumericalError("non-finite Jacobian evaluation")
    return jac


def partial_difference(mu, z, a, ell, eps):
    """mu(z, a + eps*e_ell) - mu(z, a), the discrete action derivative."""
    if eps == 0:
        raise ValidationError("eps must be nonzero")
    z = np.asarray(z, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if not 0 <= ell < a.shape[-1]:
        raise ValidationError(f"action index {ell} out of range")
    shifted = a.copy()
    shifted[..., ell] += eps
    diff = np.asarray(mu(z, shifted), dtype=np.float64) - np.asarray(
        mu(z, a), dtype=np.float64
    )
    if not np.all(np.isfinite(diff)):
        raise NumericalError("non-finite partial difference evaluation")
    return diff


def _numerical_rank(stack, rank_floor):
    if stack.size == 0:
        return 0, ()
    sv = np.linalg.svd(stack, compute_uv=False)
    threshold = max(rank_floor, max(stack.shape) * np.finfo(np.float64).eps * sv[0])
    return int(np.sum(sv > threshold)), tuple(float(s) for s in sv)


def _probe_points(d_z, d_a, n_probes, rng):
    z = rng.standard_normal((n_probes, d_z))
    a = rng.uniform(ACTION_LOW, ACTION_HIGH, (n_probes, d_a))
    return z, a


def check_time_variability(
    mu,
    G,
    n_probes=DEFAULT_PROBES,
    seed=0,
    support_tol=DEFAULT_SUPPORT_TOL,
    rank_floor=RANK_FLOOR,
):
    """Stack support-restricted Jacobians over probes and demand full rank.

    Raises ModelSupportError when any Jacobian has weight outside the
    graph's latent support: the map then simply does not follow the graph
    it claims, and no rank computation can repair that.
    """
    if not isinstance(G, BinaryGraph):
        raise ValidationError("check_time_variability expects a BinaryGraph")
    rng = np.random.default_rng(seed)
    zs, acts = _probe_points(G.d_z, G.d_a, n_probes, rng)
    support = G.gz.astype(bool)
    target = int(support.sum())
    rows = []
    off_max = 0.0
    for p in range(n_probes):
        jac = jacobian_wrt_z(mu, zs[p], acts[p])
        off = float(np.max(np.abs(jac) * ~support)) if (~support).any() else 0.0
        off_max = max(off_max, off)
        if off > support_tol:
            raise ModelSupportError(
                f"Jacobian weight {off:.3e} outside the latent support at probe {p}"
            )
        rows.append(jac[support])
    stack = np.asarray(rows).reshape(n_probes, target)
    rank, sv = _numerical_rank(stack, rank_floor)
    return VariabilityReport(
        kind="time",
        target_dim=target,
        achieved_rank=rank,
        singular_values=sv,
        passes=rank == target,
        n_probes=n_probes,
        seed=seed,
        off_support_max=off_max,
    )


def check_action_variability(
    mu,
    G,
    n_probes=DEFAULT_PROBES,
    seed=0,
    support_tol=DEFAULT_SUPPORT_TOL,
    rank_floor=RANK_FLOOR,
):
    """One report per action: stacked partial differences restricted to the
    action's children must span that child set."""
    if not isinstance(G, BinaryGraph):
        raise ValidationError("check_action_variability expects a BinaryGraph")
    rng = np.random.default_rng(seed)
    reports = []
    for ell in range(G.d_a):
        zs, acts = _probe_points(G.d_z, G.d_a, n_probes, rng)
        epss = rng.uniform(0.1, 1.0, n_probes)
        children = G.ga[:, ell].astype(bool)
        target = int(children.sum())
        rows = []
        off_max = 0.0
        for p in range(n_probes):
            diff = partial_difference(mu, zs[p], acts[p], ell, epss[p])
            off = float(np.max(np.abs(diff) * ~children)) if (~children).any() else 0.0
            off_max = max(off_max, off)
            if off > support_tol:
                raise ModelSupportError(
                    f"partial difference of action {ell} has weight {off:.3e} "
                    f"outside its child set at probe {p}"
                )
            rows.append(diff[children])
        stack = np.asarray(rows).reshape(n_probes, target)
        rank, sv = _numerical_rank(stack, rank_floor)
        reports.append(
            VariabilityReport(
                kind="action",
                action_index=ell,
                target_dim=target,
                achieved_rank=rank,
                singular_values=sv,
                passes=rank == target,
                n_probes=n_probes,
                seed=seed,
                off_support_max=off_max,
            )
        )
    return reports


class LinearTimeMap:
    """mu(z, a) = W z with W supported on the graph: the canonical map whose
    constant Jacobian makes the time-variability stack rank 1."""

    def __init__(self, W):
        self.W = np.asarray(W, dtype=np.float64)

    def __call__(self, z, a):
        return np.asarray(z, dtype=np.float64) @ self.W.T

    def jacobian_z(self, z, a):
        return self.W.copy()


class LinearActionMap:
    """mu(z, a) = W a: every partial difference of action l is eps * column l,
    so each action's stack is rank 1 however many probes are taken."""

    def __init__(self, W):
        self.W = np.asarray(W, dtype=np.float64)

    def __call__(self, z, a):
        return np.asarray(a, dtype=np.float64) @ self.W.T

    def jacobian_z(self, z, a):
        z = np.asarray(z, dtype=np.float64)
        d = self.W.shape[0]
        return np.zeros(z.shape[:-1] + (d, z.shape[-1]))


def builtin_counterexamples(seed=0):
    """The two linear demonstrations: weights supported on gz1 / ga1 with
    generic values, which fail the matching variability checks."""
    from .synth import builtin_graph

    rng = np.random.default_rng(seed)
    g_time = builtin_graph("gz1")
    w_time = g_time.gz * (0.5 + rng.random((g_time.d_z, g_time.d_z)))
    g_action = builtin_graph("ga1")
    w_action = g_action.ga * (0.5 + rng.random((g_action.d_z, g_action.d_a)))
    return (
        ("time", LinearTimeMap(w_time), g_time),
        ("action", LinearActionMap(w_action), g_action),
    )
