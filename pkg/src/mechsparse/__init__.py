"""Latent causal-graph algebra, identifiability checks, synthetic benchmarks,
disentanglement metrics, and a constrained sparse-mechanism VAE."""

__version__ = "0.1.0"

from ._core import BACKEND
from .errors import (
    EliminationError,
    ModelSupportError,
    NumericalError,
    RankDeficientError,
    ValidationError,
)
from .graph_algebra import (
    DEFAULT_TOL,
    BinaryGraph,
    ConsistencyMask,
    Permutation,
    combined_mask,
    conjugate_mask,
    consistency_mask,
    consistent_row_support,
    is_s_consistent,
    pattern_inverse,
    permutation_in_support,
    random_consistent_matrix,
    random_matrix_in_pattern,
    sconsistent_inverse,
    sconsistent_product,
)

# Heavier submodules (the estimator pulls in torch) are exposed lazily so
# that `import mechsparse` stays cheap for graph-algebra-only callers.
_LAZY_EXPORTS = {
    "CriterionReport": ".criterion",
    "criterion_implies_diagonal": ".criterion",
    "criterion_original_form": ".criterion",
    "graphical_criterion": ".criterion",
    "Dataset": ".synth",
    "MixingNetwork": ".synth",
    "TransitionMap": ".synth",
    "TransitionSpec": ".synth",
    "builtin_graph": ".synth",
    "builtin_kind": ".synth",
    "builtin_spec": ".synth",
    "empirical_injectivity": ".synth",
    "sample_mixing": ".synth",
    "simulate": ".synth",
    "MetricReport": ".metrics",
    "mcc": ".metrics",
    "metric_report": ".metrics",
    "pearson_matrix": ".metrics",
    "r_con_score": ".metrics",
    "r_score": ".metrics",
    "shd": ".metrics",
    "ConsistencyWitness": ".equivalence",
    "LinearWitness": ".equivalence",
    "check_consistency_equivalence": ".equivalence",
    "check_perm_equivalence": ".equivalence",
    "consistency_equivalence_report": ".equivalence",
    "fit_linear_witness": ".equivalence",
    "permute_graph": ".equivalence",
    "relation_axiom_suite": ".equivalence",
    "VariabilityReport": ".variability",
    "builtin_counterexamples": ".variability",
    "check_action_variability": ".variability",
    "check_time_variability": ".variability",
    "SparseMechanismVAE": ".estimator",
    "TrainConfig": ".estimator",
    "TrainState": ".estimator",
    "evaluate": ".estimator",
    "load_checkpoint": ".estimator",
    "save_checkpoint": ".estimator",
    "train": ".estimator",
}


def __getattr__(name):
    if name in _LAZY_EXPORTS:
        import importlib

        module = importlib.import_module(_LAZY_EXPORTS[name], __name__)
        value = getattr(module, name)
        globals()[name] = value
        return value
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(set(globals()) | set(_LAZY_EXPORTS))


__all__ = [
    "BACKEND",
    "DEFAULT_TOL",
    "BinaryGraph",
    "ConsistencyMask",
    "EliminationError",
    "ModelSupportError",
    "NumericalError",
    "Permutation",
    "RankDeficientError",
    "ValidationError",
    "combined_mask",
    "conjugate_mask",
    "consistency_mask",
    "consistent_row_support",
    "is_s_consistent",
    "pattern_inverse",
    "permutation_in_support",
    "random_consistent_matrix",
    "random_matrix_in_pattern",
    "sconsistent_inverse",
    "sconsistent_product",
    "__version__",
] + sorted(_LAZY_EXPORTS)
