"""End-to-end acceptance checks, one test per criterion, each printing a
single PASS/FAIL line (run with ``pytest -s`` to see them live).

Criteria 1-7 are deterministic property suites over the algebra, masks,
criterion forms, equivalence axioms, metrics, variability checks, and the
estimator's gradients. Criteria 8-10 train nine desk-scale models (three
seeds for each of: action benchmark with an edge budget, the same without,
and the time benchmark with an edge budget) and check recovery quality;
they take a few minutes per run on a single CPU core."""

import itertools
import statistics
import time

import numpy as np
import pytest

from mechsparse.criterion import (
    criterion_implies_diagonal,
    criterion_original_form,
    graphical_criterion,
)
from mechsparse.equivalence import relation_axiom_suite
from mechsparse.graph_algebra import (
    BinaryGraph,
    consistency_mask,
    is_s_consistent,
    random_consistent_matrix,
    sconsistent_inverse,
    sconsistent_product,
)
from mechsparse.metrics import metric_report
from mechsparse.synth import (
    TransitionMap,
    TransitionSpec,
    builtin_graph,
    builtin_spec,
    sample_mixing,
    simulate,
)
from mechsparse.variability import (
    builtin_counterexamples,
    check_action_variability,
    check_time_variability,
)


def _verdict(num, name, ok, detail):
    line = f"[criterion {num:>2}/10] {'PASS' if ok else 'FAIL'} {name}: {detail}"
    print(line, flush=True)
    assert ok, line


# --- 1. algebra closure at scale -------------------------------------------


def test_criterion_01_group_algebra():
    rng = np.random.default_rng(0)
    started = time.perf_counter()
    n_matrices = 0
    worst_residual = 0.0
    worst_vs_lu = 0.0
    while n_matrices < 10_000:
        m = int(rng.integers(2, 13))
        S = rng.integers(0, 2, size=(m, m)).astype(np.uint8)
        C1 = random_consistent_matrix(S, rng)
        C2 = random_consistent_matrix(S, rng)
        n_matrices += 2

        inv = sconsistent_inverse(C1, S)
        prod = sconsistent_product(C1, C2, S)
        assert is_s_consistent(inv, S, tol=1e-7)
        assert is_s_consistent(prod, S, tol=1e-7)

        residual = float(np.max(np.abs(C1 @ inv - np.eye(m))))
        vs_lu = float(np.max(np.abs(inv - np.linalg.inv(C1))))
        worst_residual = max(worst_residual, residual)
        worst_vs_lu = max(worst_vs_lu, vs_lu)
        assert residual <= 1e-9
        assert vs_lu <= 1e-9

    elapsed = time.perf_counter() - started
    _verdict(
        1,
        "group algebra",
        elapsed <= 60.0,
        f"{n_matrices} matrices closed under product/inverse; "
        f"worst residual {worst_residual:.2e}, worst vs LU {worst_vs_lu:.2e}, "
        f"{elapsed:.1f}s (limit 60s)",
    )


# --- 2. the worked-example mask and the diagonal property ------------------

# ten action-benchmark rows of the consistency mask, written as bit strings
WORKED_EXAMPLE_MASK = [
    "1100000011",
    "1100000011",
    "0011000000",
    "0011000000",
    "0000110000",
    "0000110000",
    "0000001100",
    "0000001100",
    "0000000011",
    "0000000011",
]


def test_criterion_02_mask_correctness():
    expected = np.array([[int(c) for c in row] for row in WORKED_EXAMPLE_MASK],
                        dtype=np.uint8)
    got = consistency_mask(builtin_graph("ga2").ga).mask
    exact = np.array_equal(got, expected)

    n_checked = 0
    diag_ok = True
    for m in range(1, 5):
        for n in range(1, 5):
            for bits in range(2 ** (m * n)):
                S = ((bits >> np.arange(m * n)) & 1).reshape(m, n)
                mask = consistency_mask(S.astype(np.uint8)).mask
                if not np.all(np.diagonal(mask) == 1):
                    diag_ok = False
                n_checked += 1

    _verdict(
        2,
        "mask correctness",
        exact and diag_ok,
        f"worked-example mask bit-exact: {exact}; unit diagonal on all "
        f"{n_checked} supports up to 4x4: {diag_ok}",
    )


# --- 3. criterion equivalences ----------------------------------------------


def _all_graphs(d_z, d_a):
    for gz_bits in range(2 ** (d_z * d_z)):
        gz = ((gz_bits >> np.arange(d_z * d_z)) & 1).reshape(d_z, d_z)
        for ga_bits in range(2 ** (d_z * d_a)):
            ga = ((ga_bits >> np.arange(d_z * d_a)) & 1).reshape(d_z, d_a)
            yield BinaryGraph(gz=gz.astype(np.uint8), ga=ga.astype(np.uint8))


def test_criterion_03_criterion_equivalences():
    n_exhaustive = 0
    for d_z in (1, 2, 3):
        for d_a in (1, 2):
            for G in _all_graphs(d_z, d_a):
                assert criterion_original_form(G) == graphical_criterion(G).holds
                n_exhaustive += 1

    rng = np.random.default_rng(3)
    n_random = 1000
    for _ in range(n_random):
        d_z = int(rng.integers(2, 9))
        d_a = int(rng.integers(1, 6))
        G = BinaryGraph(
            gz=rng.integers(0, 2, size=(d_z, d_z)).astype(np.uint8),
            ga=rng.integers(0, 2, size=(d_z, d_a)).astype(np.uint8),
        )
        assert graphical_criterion(G).holds == criterion_implies_diagonal(G)

    _verdict(
        3,
        "criterion equivalences",
        True,
        f"simplified == original on all {n_exhaustive} graphs with "
        f"d_z<=3, d_a<=2; criterion == diagonal-mask on {n_random} random "
        f"graphs with d_z<=8",
    )


# --- 4. equivalence-relation axioms -----------------------------------------


def test_criterion_04_equivalence_axioms():
    suite = relation_axiom_suite(seed=0, n_triples=500, tol=1e-6)
    ok = suite["n_failures"] == 0
    _verdict(
        4,
        "equivalence axioms",
        ok,
        f"{suite['n_triples']} witness triples, {suite['n_failures']} "
        f"failures, max mask violation {suite['max_violation']:.2e}",
    )


# --- 5. metric ordering and optimal assignment ------------------------------


_PERM_CACHE = {}


def _exhaustive_mcc(K):
    d = K.shape[0]
    if d not in _PERM_CACHE:
        _PERM_CACHE[d] = np.array(list(itertools.permutations(range(d))))
    perms = _PERM_CACHE[d]
    return float(np.abs(K)[np.arange(d)[None, :], perms].mean(axis=1).max())


def test_criterion_05_metric_ordering():
    rng = np.random.default_rng(5)
    slack = 1e-9
    n_instances = 1000
    assignment_exact = 0
    for trial in range(n_instances):
        d_z = int(rng.integers(2, 9))
        n = int(rng.integers(3 * d_z, 60))
        z = rng.standard_normal((n, d_z))
        if trial % 3 == 0:
            zhat = rng.standard_normal((n, d_z))  # unrelated
        else:
            mix = rng.standard_normal((d_z, d_z))
            zhat = z @ mix + 0.3 * rng.standard_normal((n, d_z))
        G = BinaryGraph(
            gz=rng.integers(0, 2, size=(d_z, d_z)).astype(np.uint8),
            ga=rng.integers(0, 2, size=(d_z, 2)).astype(np.uint8),
        )
        report = metric_report(z, zhat, G)
        assert -slack <= report.mcc <= report.r_con + slack
        assert report.r_con <= report.r + slack
        assert report.r <= 1.0 + slack
        if abs(report.mcc - _exhaustive_mcc(report.correlation)) <= 1e-12:
            assignment_exact += 1
    ok = assignment_exact == n_instances
    _verdict(
        5,
        "metric ordering",
        ok,
        f"0 <= MCC <= R_con <= R <= 1 on {n_instances} instances; "
        f"assignment matched exhaustive search on {assignment_exact}/"
        f"{n_instances}",
    )


# --- 6. variability checks ---------------------------------------------------


def test_criterion_06_variability():
    builtin_pass = True
    for name in ("gz1", "gz2", "ga1", "ga2"):
        spec = builtin_spec(name)
        mu = TransitionMap(spec)
        if spec.kind == "time":
            reports = [check_time_variability(mu, spec.graph, seed=0)]
        else:
            reports = check_action_variability(mu, spec.graph, seed=0)
        if not all(r.passes for r in reports):
            builtin_pass = False

    counterexamples_fail = True
    for kind, mu, graph in builtin_counterexamples(seed=0):
        if kind == "time":
            reports = [check_time_variability(mu, graph, seed=0)]
        else:
            reports = check_action_variability(mu, graph, seed=0)
        if all(r.passes for r in reports):
            counterexamples_fail = False

    _verdict(
        6,
        "variability",
        builtin_pass and counterexamples_fail,
        f"all four builtin transition maps pass: {builtin_pass}; "
        f"linear counterexamples rejected: {counterexamples_fail}",
    )


# --- 7. gradient oracle -------------------------------------------------------


def test_criterion_07_gradient_oracle():
    import torch

    from mechsparse.estimator import SparseMechanismVAE, TrainConfig, constraint_value

    from ._oracles import finite_difference_gradient

    torch.manual_seed(7)
    config = TrainConfig(
        total_steps=1, batch_size=4, beta_target=1.5, enc_widths=(8,),
        dec_widths=(8,), trans_widths=(4,), seed=7,
    )
    model = SparseMechanismVAE(d_z=2, d_x=3, d_a=1, kind="time", config=config)
    model.double()
    with torch.no_grad():
        model.gamma.uniform_(-1.0, 1.0)

    B, T = 4, 2
    x = torch.randn(B, T, 3, dtype=torch.float64)
    a = torch.zeros(B, T, 1, dtype=torch.float64)
    latent_noise = torch.randn(B, T, 2, dtype=torch.float64)
    mask_noise = torch.rand_like(model.gamma.double().expand(B, -1, -1))

    params = [p for p in model.parameters() if p.requires_grad]

    def objective_tensor():
        out = model.elbo(
            x, a, latent_noise=latent_noise, mask_noise=mask_noise,
            mask_mode="soft",
        )
        return -out["elbo"] + 0.7 * (constraint_value(model.gamma) - 1.5)

    loss = objective_tensor()
    model.zero_grad()
    loss.backward()
    analytic = np.concatenate(
        [p.grad.detach().numpy().ravel() for p in params]
    )

    shapes = [tuple(p.shape) for p in params]
    sizes = [int(np.prod(s)) if s else 1 for s in shapes]

    def objective_flat(theta):
        with torch.no_grad():
            offset = 0
            for p, size, shape in zip(params, sizes, shapes):
                chunk = theta[offset:offset + size].reshape(shape)
                p.copy_(torch.from_numpy(np.asarray(chunk)))
                offset += size
        return float(objective_tensor().detach())

    theta0 = np.concatenate([p.detach().numpy().ravel() for p in params])
    numeric = finite_difference_gradient(objective_flat, theta0, h=1e-6)
    objective_flat(theta0)  # restore parameters

    denom = np.maximum(np.abs(analytic), np.abs(numeric))
    significant = denom > 1e-8
    rel = np.abs(analytic - numeric)[significant] / denom[significant]
    worst = float(rel.max()) if rel.size else 0.0
    small_ok = bool(
        np.allclose(analytic[~significant], numeric[~significant], atol=1e-7)
    )
    ok = worst < 1e-4 and small_ok
    _verdict(
        7,
        "gradient oracle",
        ok,
        f"{theta0.size} parameters on a d_z=2, d_x=3, T=2 toy in float64; "
        f"worst relative error {worst:.2e} (limit 1e-4)",
    )


# --- 8-10. desk-scale benchmark runs -----------------------------------------

DESK_N = 100_000
DESK_D_X = 20
DATA_SEED = 7
TRAIN_SEEDS = (1, 2, 3)
DESK_STEPS = 50_000
DESK_BATCH = 512
DESK_PRIMAL_LR = 3e-3
DESK_DUAL_LR = 1e-2
DESK_RAMP = 0.5
GA2_BETA = 12.0
GZ1_BETA = 20.0


def _desk_config(TrainConfig, seed, beta, no_sparsity=False):
    return TrainConfig(
        total_steps=DESK_STEPS,
        batch_size=DESK_BATCH,
        primal_lr=DESK_PRIMAL_LR,
        dual_lr=DESK_DUAL_LR,
        ramp_frac=DESK_RAMP,
        beta_target=beta,
        no_sparsity=no_sparsity,
        seed=seed,
        log_every=0,
    )


@pytest.fixture(scope="session")
def desk_runs():
    """Nine desk-scale trainings: 3 seeds x {action budgeted, action
    unconstrained, time budgeted}. Several minutes per run on one core."""
    from mechsparse.estimator import TrainConfig, evaluate, train

    datasets = {}
    for name in ("ga2", "gz1"):
        spec = builtin_spec(name)
        mixing = sample_mixing(spec.d_z, DESK_D_X, seed=DATA_SEED)
        datasets[name] = simulate(spec, mixing, DESK_N, seed=DATA_SEED)

    results = {}
    jobs = [
        ("ga2", GA2_BETA, False),
        ("ga2", None, True),
        ("gz1", GZ1_BETA, False),
    ]
    for name, beta, no_sparsity in jobs:
        rows = []
        for seed in TRAIN_SEEDS:
            config = _desk_config(TrainConfig, seed, beta, no_sparsity)
            started = time.perf_counter()
            state = train(datasets[name], config)
            metrics = evaluate(state, datasets[name])["metrics"]
            elapsed = time.perf_counter() - started
            print(
                f"    [{name} beta={beta} no_sparsity={no_sparsity} "
                f"seed={seed}] shd={metrics.shd} mcc={metrics.mcc:.4f} "
                f"r_con={metrics.r_con:.4f} r={metrics.r:.4f} "
                f"({elapsed / 60:.1f} min)",
                flush=True,
            )
            rows.append(
                {
                    "seed": seed,
                    "shd": metrics.shd,
                    "mcc": metrics.mcc,
                    "r_con": metrics.r_con,
                    "r": metrics.r,
                }
            )
        results[(name, no_sparsity)] = rows
    return results


def _median(rows, key):
    return statistics.median(row[key] for row in rows)


def test_criterion_08_action_benchmark_budgeted(desk_runs):
    rows = desk_runs[("ga2", False)]
    med_shd = _median(rows, "shd")
    med_r = _median(rows, "r")
    med_r_con = _median(rows, "r_con")
    med_gap = statistics.median(r["r"] - r["r_con"] for r in rows)
    med_partial = statistics.median(r["r_con"] - r["mcc"] for r in rows)
    ok = (
        med_shd <= 4
        and med_r >= 0.90
        and med_r_con >= 0.88
        and med_gap <= 0.05
        and med_partial >= 0.05
    )
    _verdict(
        8,
        "action benchmark with budget",
        ok,
        f"median over {len(rows)} seeds: shd {med_shd} (<=4), "
        f"R {med_r:.4f} (>=0.90), R_con {med_r_con:.4f} (>=0.88), "
        f"R-R_con {med_gap:.4f} (<=0.05), R_con-MCC {med_partial:.4f} "
        f"(>=0.05)",
    )


def test_criterion_09_sparsity_ablation(desk_runs):
    with_rows = desk_runs[("ga2", False)]
    without_rows = desk_runs[("ga2", True)]
    diffs = [
        w["r_con"] - wo["r_con"]
        for w, wo in zip(with_rows, without_rows)
    ]
    med_diff = statistics.median(diffs)
    ok = med_diff >= 0.10
    _verdict(
        9,
        "sparsity ablation",
        ok,
        f"median matched-seed R_con drop without the budget: "
        f"{med_diff:.4f} (>=0.10); per-seed {['%.4f' % d for d in diffs]}",
    )


def test_criterion_10_time_benchmark_budgeted(desk_runs):
    rows = desk_runs[("gz1", False)]
    med_shd = _median(rows, "shd")
    med_r_con = _median(rows, "r_con")
    # the ground truth IS the paired-block structure, so the aligned-graph
    # SHD metric doubles as the block-structure check
    ok = med_shd <= 4 and med_r_con >= 0.90
    _verdict(
        10,
        "time benchmark with budget",
        ok,
        f"median over {len(rows)} seeds: shd {med_shd} (<=4, also the "
        f"block-structure bound), R_con {med_r_con:.4f} (>=0.90)",
    )
