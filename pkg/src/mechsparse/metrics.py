"""Disentanglement metrics with the guaranteed ordering MCC <= R_con <= R.

MCC pairs each true factor with one learned factor (assignment on absolute
Pearson correlations); R predicts each true factor from all learned
factors; R_con restricts the regressors of each true factor to the columns
its graph's combined consistency mask allows. Since the single matched
column is always allowed (the mask diagonal is one) and the allowed set is
a subset of all columns, the three scores nest.
"""

import itertools
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .graph_algebra import BinaryGraph, Permutation, combined_mask

#: columns with variance at or below this are treated as collapsed
DEGENERATE_VAR = 1e-12
#: exhaustive assignment up to this many latents; LAP solver above
EXHAUSTIVE_LIMIT = 8
RIDGE = 1e-10


@dataclass(frozen=True)
class MetricReport:
    """The four scores, the MCC-optimal alignment, and the correlation matrix."""

    mcc: float
    r: float
    r_con: float
    shd: int
    p_hat: Permutation
    correlation: np.ndarray

    def to_json(self):
        return {
            "mcc": self.mcc,
            "r": self.r,
            "r_con": self.r_con,
            "shd": self.shd,
            "sigma": self.p_hat.sigma.tolist(),
            "correlation": self.correlation.tolist(),
        }


def _as_sample_matrix(arr, name):
    out = np.asarray(arr, dtype=np.float64)
    if out.ndim != 2:
        raise ValidationError(f"{name} must be 2-D (N x d), got shape {out.shape}")
    return out


def pearson_matrix(z, zhat):
    """K[i, j] = Pearson correlation of z_i with zhat_j; collapsed columns give 0."""
    z = _as_sample_matrix(z, "z")
    zhat = _as_sample_matrix(zhat, "zhat")
    if z.shape[0] != zhat.shape[0]:
        raise ValidationError(
            f"sample counts differ: {z.shape[0]} vs {zhat.shape[0]}"
        )
    zc = z - z.mean(axis=0)
    hc = zhat - zhat.mean(axis=0)
    n = z.shape[0]
    sz = np.sqrt((zc**2).mean(axis=0))
    sh = np.sqrt((hc**2).mean(axis=0))
    good_z = sz**2 > DEGENERATE_VAR
    good_h = sh**2 > DEGENERATE_VAR
    cov = zc.T @ hc / n
    denom = np.outer(np.where(good_z, sz, 1.0), np.where(good_h, sh, 1.0))
    K = cov / denom
    K *= np.outer(good_z, good_h)
    return K


def _assign(weights, method="auto"):
    """Permutation maximizing sum weights[i, sigma(i)] and its value."""
    W = np.asarray(weights, dtype=np.float64)
    d = W.shape[0]
    if method == "auto":
        method = "exhaustive" if d <= EXHAUSTIVE_LIMIT else "lap"
    if method == "exhaustive":
        perms = np.array(list(itertools.permutations(range(d))))
        scores = W[np.arange(d), perms].sum(axis=1)
        best = int(np.argmax(scores))
        return perms[best].copy(), float(scores[best])
    from scipy.optimize import linear_sum_assignment

    rows, cols = linear_sum_assignment(-W)
    sigma = np.empty(d, dtype=np.intp)
    sigma[rows] = cols
    return sigma, float(W[rows, cols].sum())


def mcc(z, zhat, method="auto"):
    """(score, alignment, correlation matrix): the assignment-optimal mean |K|."""
    z = _as_sample_matrix(z, "z")
    zhat = _as_sample_matrix(zhat, "zhat")
    if z.shape != zhat.shape:
        raise ValidationError(f"shape mismatch: {z.shape} vs {zhat.shape}")
    if z.shape[0] < 3:
        raise ValidationError(f"need at least 3 samples, got {z.shape[0]}")
    K = pearson_matrix(z, zhat)
    sigma, total = _assign(np.abs(K), method)
    return total / z.shape[1], Permutation(sigma), K


def _multiple_correlation(y, X):
    """Correlation of y with its least-squares prediction from [X, 1].

    Exactly rank-deficient designs are refit with a tiny ridge and warned
    about; a collapsed target or prediction scores 0.
    """
    from scipy.linalg import lstsq

    n = y.shape[0]
    design = np.hstack([X, np.ones((n, 1))])
    coef, _, rank, _ = lstsq(design, y, lapack_driver="gelsy")
    if rank < design.shape[1]:
        warnings.warn(
            f"rank-deficient regression design ({rank} < {design.shape[1]}); "
            "applying ridge",
            RuntimeWarning,
        )
        gram = design.T @ design + RIDGE * np.eye(design.shape[1])
        coef = np.linalg.solve(gram, design.T @ y)
    pred = design @ coef
    vy = y.var()
    vp = pred.var()
    if vy <= DEGENERATE_VAR or vp <= DEGENERATE_VAR:
        return 0.0
    corr = np.corrcoef(pred, y)[0, 1]
    return float(max(0.0, corr))


def r_score(z, zhat):
    """Mean over i of the multiple correlation of z_i with all of zhat."""
    z = _as_sample_matrix(z, "z")
    zhat = _as_sample_matrix(zhat, "zhat")
    if z.shape != zhat.shape:
        raise ValidationError(f"shape mismatch: {z.shape} vs {zhat.shape}")
    return float(np.mean([_multiple_correlation(z[:, i], zhat) for i in range(z.shape[1])]))


def r_con_score(z, zhat, G, p_hat):
    """R restricted to the combined-mask-allowed regressors per factor.

    The learned factors are first aligned by the MCC permutation; factor i
    is then predicted only from the aligned columns j with mask[i, j] = 1.
    """
    z = _as_sample_matrix(z, "z")
    zhat = _as_sample_matrix(zhat, "zhat")
    if z.shape != zhat.shape:
        raise ValidationError(f"shape mismatch: {z.shape} vs {zhat.shape}")
    if not isinstance(G, BinaryGraph):
        raise ValidationError("r_con_score expects a BinaryGraph")
    if not isinstance(p_hat, Permutation) or p_hat.m != z.shape[1]:
        raise ValidationError("p_hat must be a Permutation of the latent columns")
    S_C = combined_mask(G)
    zhat_perm = zhat[:, p_hat.sigma]
    scores = []
    for i in range(z.shape[1]):
        allowed = S_C[i].astype(bool)
        scores.append(_multiple_correlation(z[:, i], zhat_perm[:, allowed]))
    return float(np.mean(scores))


def shd(G, Ghat, p_hat):
    """Entrywise disagreements after aligning the learned graph by p_hat."""
    if not isinstance(G, BinaryGraph) or not isinstance(Ghat, BinaryGraph):
        raise ValidationError("shd expects BinaryGraph instances")
    if G.d_z != Ghat.d_z or G.d_a != Ghat.d_a:
        raise ValidationError(
            f"graph dimensions differ: ({G.d_z},{G.d_a}) vs ({Ghat.d_z},{Ghat.d_a})"
        )
    if not isinstance(p_hat, Permutation) or p_hat.m != G.d_z:
        raise ValidationError("p_hat must be a Permutation of the latent nodes")
    sigma = p_hat.sigma
    gz_aligned = Ghat.gz[np.ix_(sigma, sigma)]
    ga_aligned = Ghat.ga[sigma]
    return int(np.sum(G.gz != gz_aligned) + np.sum(G.ga != ga_aligned))


def metric_report(z, zhat, G, Ghat=None):
    """All four metrics at once, sharing one MCC alignment."""
    mcc_val, p_hat, K = mcc(z, zhat)
    r_val = r_score(z, zhat)
    r_con_val = r_con_score(z, zhat, G, p_hat)
    shd_val = shd(G, Ghat, p_hat) if Ghat is not None else None
    return MetricReport(
        mcc=float(mcc_val),
        r=r_val,
        r_con=r_con_val,
        shd=shd_val,
        p_hat=p_hat,
        correlation=K,
    )
