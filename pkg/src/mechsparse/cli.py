"""Command-line front end: gen / train / eval / verify.

Every command writes (or updates) exactly one manifest.json in its output
directory recording the command line, config and dataset hashes, seeds,
tool version, timestamps, and emitted artifacts, so a run can be reproduced
from the manifest alone. Exit codes: 0 success, 2 validation error,
3 numerical failure, 4 IO failure.
"""

import argparse
import csv
import hashlib
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .errors import NumericalError, ValidationError
from .graph_algebra import BinaryGraph, combined_mask, consistency_mask

_UTC = timezone.utc


def _now():
    return datetime.now(_UTC).isoformat()


def _canonical_json(obj):
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _sha256_bytes(data):
    return hashlib.sha256(data).hexdigest()


def _sha256_files(paths):
    h = hashlib.sha256()
    for p in sorted(Path(p) for p in paths):
        h.update(p.read_bytes())
    return h.hexdigest()


def _write_manifest(out_dir, manifest):
    (Path(out_dir) / "manifest.json").write_text(_canonical_json(manifest))


def _load_manifest(run_dir):
    path = Path(run_dir) / "manifest.json"
    if not path.exists():
        raise ValidationError(f"no manifest.json in {run_dir}")
    return json.loads(path.read_text())


def _apply_thread_cap():
    cap = os.environ.get("MECHSPARSE_THREADS")
    if not cap:
        return None
    try:
        n = int(cap)
        if n < 1:
            raise ValueError
    except ValueError:
        raise ValidationError(f"MECHSPARSE_THREADS must be a positive int, got {cap!r}")
    import torch

    torch.set_num_threads(n)
    return n


def _load_graph_file(path):
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed graph file {path}: {exc}") from exc
    graph = BinaryGraph.from_json(obj)
    kind = obj.get("kind")
    if kind is None:
        has_z, has_a = bool(graph.gz.any()), bool(graph.ga.any())
        if has_z and not has_a:
            kind = "time"
        elif has_a and not has_z:
            kind = "action"
        else:
            raise ValidationError(
                "graph file needs a 'kind' field ('time' or 'action') when "
                "both blocks are zero or both are nonzero"
            )
    if kind not in ("time", "action"):
        raise ValidationError(f"graph file kind must be 'time' or 'action', got {kind!r}")
    return graph, kind


def _resolve_graph(args):
    """(graph, kind, name) from --graph or --graph-file."""
    from .synth import builtin_graph, builtin_kind

    if getattr(args, "graph", None) and getattr(args, "graph_file", None):
        raise ValidationError("give either --graph or --graph-file, not both")
    if getattr(args, "graph", None):
        return builtin_graph(args.graph), builtin_kind(args.graph), args.graph
    if getattr(args, "graph_file", None):
        graph, kind = _load_graph_file(args.graph_file)
        return graph, kind, "custom"
    raise ValidationError("a graph is required (--graph NAME or --graph-file PATH)")


def cmd_gen(args):
    from .synth import TransitionSpec, sample_mixing, simulate

    graph, kind, name = _resolve_graph(args)
    spec = TransitionSpec(kind=kind, graph=graph, T=args.t)
    mixing = sample_mixing(graph.d_z, args.d_x, tuple(args.widths), seed=args.seed)
    started = _now()
    dataset = simulate(spec, mixing, args.n, seed=args.seed)
    dataset.extra["graph_name"] = name
    dataset.extra["mixing_seed"] = mixing.seed
    out = dataset.save(args.out)
    data_files = [out / "x.bin", out / "a.bin", out / "z.bin", out / "meta.json"]
    manifest = {
        "command": sys.argv,
        "tool_version": __version__,
        "config_hash": _sha256_bytes(_canonical_json(dataset.meta_json()).encode()),
        "dataset_hash": _sha256_files(data_files),
        "seeds": [args.seed],
        "started": started,
        "finished": _now(),
        "artifacts": [str(p.relative_to(out)) for p in data_files],
    }
    _write_manifest(out, manifest)
    print(f"wrote {dataset.n} trajectories to {out}")
    return 0


def _resolved_config(args):
    from .estimator import TrainConfig

    if args.config:
        try:
            obj = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"malformed config {args.config}: {exc}") from exc
    else:
        obj = {}
    if args.no_sparsity:
        obj["no_sparsity"] = True
    if args.seed is not None:
        obj["seed"] = args.seed
    return TrainConfig.from_json(obj)


def _train_single(dataset, config, run_dir, data_dir):
    from .estimator import save_checkpoint, train

    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    started = _now()
    state = train(dataset, config, out_dir=run_dir, log=print)
    save_checkpoint(state, run_dir / "checkpoint.pt")
    (run_dir / "config.json").write_text(_canonical_json(config.to_json()))
    with open(run_dir / "history.csv", "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["step", "elbo", "recon", "kl", "constraint", "alpha", "beta"]
        )
        writer.writeheader()
        writer.writerows(state.history)
    manifest = {
        "command": sys.argv,
        "tool_version": __version__,
        "config_hash": _sha256_bytes(_canonical_json(config.to_json()).encode()),
        "dataset_hash": dataset.sha256(),
        "data_dir": str(Path(data_dir).resolve()),
        "seeds": [config.seed],
        "started": started,
        "finished": _now(),
        "artifacts": ["checkpoint.pt", "config.json", "history.csv"],
    }
    _write_manifest(run_dir, manifest)
    return state


def _parse_sweep(expr):
    try:
        key, _, rng = expr.partition("=")
        if key.strip() != "seeds":
            raise ValueError("only 'seeds=A..B' sweeps are supported")
        lo, _, hi = rng.partition("..")
        lo, hi = int(lo), int(hi)
        if hi < lo:
            raise ValueError("empty seed range")
        return list(range(lo, hi + 1))
    except ValueError as exc:
        raise ValidationError(f"bad --sweep expression {expr!r}: {exc}") from exc


def _graph_display_name(dataset):
    return dataset.extra.get("graph_name", "custom")


def _table_row(dataset, config, metrics):
    return {
        "Graph": _graph_display_name(dataset),
        "Sparsity": "No" if config.no_sparsity else "Yes",
        "SHD": metrics.shd,
        "MCC": f"{metrics.mcc:.4f}",
        "R_con": f"{metrics.r_con:.4f}",
        "R": f"{metrics.r:.4f}",
    }


def _write_table(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["Graph", "Sparsity", "SHD", "MCC", "R_con", "R"]
        )
        writer.writeheader()
        writer.writerows(rows)


def _emit_eval(run_dir, dataset, config, result):
    run_dir = Path(run_dir)
    metrics = result["metrics"]
    (run_dir / "metrics.json").write_text(_canonical_json(metrics.to_json()))
    (run_dir / "witness.json").write_text(_canonical_json(result["witness"].to_json()))
    eq = result["equivalence"]
    (run_dir / "equivalence.json").write_text(
        _canonical_json(
            {
                "sigma": eq["P"].sigma.tolist(),
                "graphs_match": eq["graphs_match"],
                "consistent": eq["consistent"],
                "masks_checked": eq["masks_checked"],
            }
        )
    )
    _write_table(run_dir / "table.csv", [_table_row(dataset, config, metrics)])
    mat_dir = run_dir / "matrices"
    mat_dir.mkdir(exist_ok=True)
    for name, matrix in result["matrices"].items():
        np.savetxt(mat_dir / f"{name}.csv", np.asarray(matrix), delimiter=",", fmt="%.6g")
    artifacts = [
        "metrics.json",
        "witness.json",
        "equivalence.json",
        "table.csv",
    ] + [f"matrices/{name}.csv" for name in result["matrices"]]
    return artifacts


def _eval_run_dir(run_dir, data_dir=None):
    from .estimator import evaluate, load_checkpoint
    from .synth import Dataset

    run_dir = Path(run_dir)
    manifest = _load_manifest(run_dir)
    data_dir = Path(data_dir) if data_dir else Path(manifest["data_dir"])
    dataset = Dataset.load(data_dir)
    if dataset.sha256() != manifest["dataset_hash"]:
        raise ValidationError(
            f"dataset at {data_dir} does not match the hash recorded for this run"
        )
    state = load_checkpoint(run_dir / "checkpoint.pt")
    result = evaluate(state, dataset)
    artifacts = _emit_eval(run_dir, dataset, state.config, result)
    manifest["eval"] = {
        "finished": _now(),
        "artifacts": artifacts,
        "n_eval": result["n_eval"],
    }
    _write_manifest(run_dir, manifest)
    return dataset, state, result


def cmd_train(args):
    from .synth import Dataset

    _apply_thread_cap()
    dataset = Dataset.load(args.data)
    base_config = _resolved_config(args)
    out = Path(args.out)
    if not args.sweep:
        _train_single(dataset, base_config, out, args.data)
        print(f"run complete: {out}")
        return 0

    seeds = _parse_sweep(args.sweep)
    from .estimator import TrainConfig

    rows = []
    raw = []
    for seed in seeds:
        cfg_obj = base_config.to_json()
        cfg_obj["seed"] = seed
        config = TrainConfig.from_json(cfg_obj)
        run_dir = out / f"seed_{seed}"
        _train_single(dataset, config, run_dir, args.data)
        _, state, result = _eval_run_dir(run_dir, args.data)
        metrics = result["metrics"]
        rows.append(_table_row(dataset, config, metrics))
        raw.append(
            {
                "seed": seed,
                "shd": metrics.shd,
                "mcc": metrics.mcc,
                "r_con": metrics.r_con,
                "r": metrics.r,
            }
        )
        print(f"seed {seed}: shd={metrics.shd} mcc={metrics.mcc:.4f} "
              f"r_con={metrics.r_con:.4f} r={metrics.r:.4f}")
    out.mkdir(parents=True, exist_ok=True)
    _write_table(out / "runs.csv", rows)
    agg = {
        "Graph": _graph_display_name(dataset),
        "Sparsity": "No" if base_config.no_sparsity else "Yes",
    }
    for key, col in (("shd", "SHD"), ("mcc", "MCC"), ("r_con", "R_con"), ("r", "R")):
        vals = np.array([r[key] for r in raw], dtype=np.float64)
        agg[col] = f"{vals.mean():.4f}+-{vals.std():.4f}"
    _write_table(out / "aggregate.csv", [agg])
    (out / "aggregate.json").write_text(_canonical_json({"seeds": seeds, "runs": raw}))
    manifest = {
        "command": sys.argv,
        "tool_version": __version__,
        "config_hash": _sha256_bytes(_canonical_json(base_config.to_json()).encode()),
        "dataset_hash": dataset.sha256(),
        "data_dir": str(Path(args.data).resolve()),
        "seeds": seeds,
        "started": None,
        "finished": _now(),
        "artifacts": ["runs.csv", "aggregate.csv", "aggregate.json"]
        + [f"seed_{s}/" for s in seeds],
    }
    _write_manifest(out, manifest)
    print(f"sweep complete: {out}")
    return 0


def cmd_eval(args):
    _apply_thread_cap()
    _, _, result = _eval_run_dir(args.run, args.data)
    metrics = result["metrics"]
    print(
        f"shd={metrics.shd} mcc={metrics.mcc:.4f} "
        f"r_con={metrics.r_con:.4f} r={metrics.r:.4f}"
    )
    return 0


def cmd_verify(args):
    from .criterion import (
        EXHAUSTIVE_DA_LIMIT,
        EXHAUSTIVE_DZ_LIMIT,
        criterion_implies_diagonal,
        criterion_original_form,
        graphical_criterion,
    )
    from .synth import TransitionMap, TransitionSpec
    from .variability import (
        builtin_counterexamples,
        check_action_variability,
        check_time_variability,
    )

    report = {"tool_version": __version__}
    graph = kind = None
    if args.graph or args.graph_file:
        graph, kind, name = _resolve_graph(args)
        report["graph"] = {"name": name, **graph.to_json(), "kind": kind}
    elif args.data:
        from .synth import Dataset

        dataset = Dataset.load(args.data)
        graph, kind = dataset.spec.graph, dataset.spec.kind
        report["graph"] = {
            "name": dataset.extra.get("graph_name", "custom"),
            **graph.to_json(),
            "kind": kind,
        }
    if graph is None and not args.builtin_counterexamples:
        raise ValidationError(
            "nothing to verify: give --graph/--graph-file/--data or "
            "--builtin-counterexamples"
        )

    if graph is not None and args.criterion:
        crit = graphical_criterion(graph)
        report["criterion"] = crit.to_json()
        report["criterion_mask_form"] = criterion_implies_diagonal(graph)
        if graph.d_z <= EXHAUSTIVE_DZ_LIMIT and graph.d_a <= EXHAUSTIVE_DA_LIMIT:
            report["criterion_original_form"] = criterion_original_form(graph)
    if graph is not None and args.mask:
        report["masks"] = {
            "gz": consistency_mask(graph.gz).mask.astype(int).tolist(),
            "gzT": consistency_mask(graph.gz.T).mask.astype(int).tolist(),
            "ga": consistency_mask(graph.ga).mask.astype(int).tolist(),
            "combined": combined_mask(graph).astype(int).tolist(),
        }
    if graph is not None and args.assumption:
        spec = TransitionSpec(kind=kind, graph=graph)
        mu = TransitionMap(spec)
        if args.assumption == "time":
            rep = check_time_variability(mu, graph, n_probes=args.probes, seed=args.seed)
            report["variability"] = [rep.to_json()]
        else:
            reps = check_action_variability(
                mu, graph, n_probes=args.probes, seed=args.seed
            )
            report["variability"] = [r.to_json() for r in reps]
    if args.builtin_counterexamples:
        demos = []
        for demo_kind, mu, demo_graph in builtin_counterexamples(seed=args.seed):
            if demo_kind == "time":
                reps = [check_time_variability(mu, demo_graph, args.probes, args.seed)]
            else:
                reps = check_action_variability(mu, demo_graph, args.probes, args.seed)
            demos.append(
                {
                    "kind": demo_kind,
                    "map": "linear",
                    "reports": [r.to_json() for r in reps],
                    "all_pass": all(r.passes for r in reps),
                }
            )
        report["counterexamples"] = demos

    text = _canonical_json(report)
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mechsparse",
        description="Latent causal graph algebra, synthetic benchmarks, "
        "disentanglement metrics, and a constrained sparse-mechanism VAE.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate a synthetic dataset")
    p_gen.add_argument("--graph", help="builtin graph name (gz1|gz2|ga1|ga2)")
    p_gen.add_argument("--graph-file", help="JSON graph file")
    p_gen.add_argument("--n", type=int, required=True, help="trajectory count")
    p_gen.add_argument("--seed", type=int, required=True)
    p_gen.add_argument("--t", type=int, default=2, help="trajectory length")
    p_gen.add_argument("--d-x", type=int, default=20, help="observation dim")
    p_gen.add_argument(
        "--widths", type=int, nargs="+", default=[20, 20, 20],
        help="mixing-network hidden widths",
    )
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(func=cmd_gen)

    p_train = sub.add_parser("train", help="train the sparse-mechanism VAE")
    p_train.add_argument("--config", help="JSON config file (defaults if omitted)")
    p_train.add_argument("--data", required=True, help="dataset directory")
    p_train.add_argument("--out", required=True, help="run directory")
    p_train.add_argument("--seed", type=int, help="override config seed")
    p_train.add_argument(
        "--no-sparsity", action="store_true",
        help="train with the multiplier frozen at 0 and an infinite budget",
    )
    p_train.add_argument("--sweep", help="run a seed sweep, e.g. seeds=1..5")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a trained run")
    p_eval.add_argument("--run", required=True, help="run directory")
    p_eval.add_argument("--data", help="dataset directory (defaults to the run's)")
    p_eval.set_defaults(func=cmd_eval)

    p_verify = sub.add_parser("verify", help="criterion / mask / variability reports")
    p_verify.add_argument("--graph", help="builtin graph name")
    p_verify.add_argument("--graph-file", help="JSON graph file")
    p_verify.add_argument("--data", help="dataset directory to read the graph from")
    p_verify.add_argument("--criterion", action="store_true")
    p_verify.add_argument("--mask", action="store_true")
    p_verify.add_argument("--assumption", choices=["time", "action"])
    p_verify.add_argument("--probes", type=int, default=200)
    p_verify.add_argument("--seed", type=int, default=0)
    p_verify.add_argument(
        "--builtin-counterexamples", action="store_true",
        help="run the linear transition demonstrations",
    )
    p_verify.add_argument("--out", help="also write the JSON report here")
    p_verify.set_defaults(func=cmd_verify)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"io failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
