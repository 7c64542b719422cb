"""Graphical criterion for complete disentanglement.

A graph admits complete disentanglement when, for every latent i, the
intersection of the parent sets of i's latent children, the child sets of
i's latent parents, and the child sets of i's action parents pins down {i}
exactly. Three routes are provided: the per-node set form, the
exists-subsets form (searched exhaustively at small sizes), and the
equivalent combined-mask-is-diagonal form; they must agree everywhere.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .graph_algebra import BinaryGraph, combined_mask

#: exhaustive-subset search limit for the exists-subsets form
EXHAUSTIVE_DZ_LIMIT = 6
EXHAUSTIVE_DA_LIMIT = 10


@dataclass(frozen=True)
class CriterionReport:
    """Outcome of the per-node intersection test (0-based node indices)."""

    holds: bool
    per_node: tuple
    violating_nodes: tuple

    def to_json(self):
        return {
            "holds": self.holds,
            "index_base": 0,
            "per_node": [sorted(s) for s in self.per_node],
            "violating_nodes": list(self.violating_nodes),
        }


def graphical_criterion(G):
    """Per-node intersection test, computed from explicit parent/child families.

    For node i the family contains Pa^z_j for every latent child j of i,
    Ch^z_j for every latent parent j of i, and Ch^a_l for every action
    parent l of i; an empty family contributes the full node set.
    """
    if not isinstance(G, BinaryGraph):
        raise ValidationError("graphical_criterion expects a BinaryGraph")
    gz = G.gz.astype(bool)
    ga = G.ga.astype(bool)
    d_z, d_a = G.d_z, G.d_a
    per_node = []
    violating = []
    for i in range(d_z):
        inter = np.ones(d_z, dtype=bool)
        for j in range(d_z):
            if gz[j, i]:
                inter &= gz[j]
            if gz[i, j]:
                inter &= gz[:, j]
        for ell in range(d_a):
            if ga[i, ell]:
                inter &= ga[:, ell]
        members = frozenset(int(k) for k in np.flatnonzero(inter))
        per_node.append(members)
        if members != {i}:
            violating.append(i)
    return CriterionReport(
        holds=not violating,
        per_node=tuple(per_node),
        violating_nodes=tuple(violating),
    )


def _subset_intersections(member_bits, n_sets, full):
    """AND of the selected bitmask sets, for every subset of {0..n_sets-1}.

    Entry s of the result is the intersection over {j : bit j of s set},
    with the empty subset giving the full universe.
    """
    out = np.full(1 << n_sets, full, dtype=np.int64)
    idx = np.arange(1 << n_sets)
    for j in range(n_sets):
        chosen = (idx >> j) & 1 == 1
        out[chosen] &= member_bits[j]
    return out


def criterion_original_form(G):
    """Exists-subsets form: some choice of node/action subsets isolates each i.

    For each i the proof's sufficient choice (latent children of i, latent
    parents of i, action parents of i) is tried first; otherwise every
    subset triple is enumerated. Limited to d_z <= 6 (subset blow-up).
    """
    if not isinstance(G, BinaryGraph):
        raise ValidationError("criterion_original_form expects a BinaryGraph")
    if G.d_z > EXHAUSTIVE_DZ_LIMIT:
        raise ValidationError(
            f"exhaustive subset search limited to d_z <= {EXHAUSTIVE_DZ_LIMIT}, "
            f"got {G.d_z}"
        )
    if G.d_a > EXHAUSTIVE_DA_LIMIT:
        raise ValidationError(
            f"exhaustive subset search limited to d_a <= {EXHAUSTIVE_DA_LIMIT}, "
            f"got {G.d_a}"
        )
    gz = G.gz.astype(np.int64)
    ga = G.ga.astype(np.int64)
    d_z, d_a = G.d_z, G.d_a
    full = (1 << d_z) - 1
    powers = 1 << np.arange(d_z, dtype=np.int64)
    pa_z = [int((gz[j] * powers).sum()) for j in range(d_z)]
    ch_z = [int((gz[:, j] * powers).sum()) for j in range(d_z)]
    ch_a = [int((ga[:, ell] * powers).sum()) for ell in range(d_a)]

    pa_subsets = _subset_intersections(pa_z, d_z, full)
    ch_subsets = _subset_intersections(ch_z, d_z, full)
    act_subsets = _subset_intersections(ch_a, d_a, full)

    for i in range(d_z):
        target = 1 << i
        witness_I = sum(1 << j for j in range(d_z) if gz[j, i])
        witness_J = sum(1 << j for j in range(d_z) if gz[i, j])
        witness_L = sum(1 << ell for ell in range(d_a) if ga[i, ell])
        hit = (
            pa_subsets[witness_I] & ch_subsets[witness_J] & act_subsets[witness_L]
        ) == target
        if not hit:
            combos = (
                pa_subsets[:, None, None]
                & ch_subsets[None, :, None]
                & act_subsets[None, None, :]
            )
            if not bool(np.any(combos == target)):
                return False
    return True


def criterion_implies_diagonal(G):
    """Mask form of the criterion: the combined consistency mask is the identity."""
    if not isinstance(G, BinaryGraph):
        raise ValidationError("criterion_implies_diagonal expects a BinaryGraph")
    return bool(np.array_equal(combined_mask(G), np.eye(G.d_z, dtype=np.uint8)))
