"""Command-line harness: one subcommand per pipeline stage plus the full
three-scenario report, and a separate ``pe-patch`` entry point for byte-level
edits of real PE files.

Every stage prints runtime telemetry (wall time and, where an oracle is
involved, query counts) to stderr so batch runs are auditable.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import attack, data, explain, gbdt, mlp, pe, rank, report
from .data import FeatureMask
from .explain import Attribution, ExplainerConfig
from .seeding import rng


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _load_any_model(path: str):
    """Load an MLP or GBDT model file, telling them apart by magic."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
    if magic.startswith(mlp.MODEL_MAGIC):
        return mlp.load_model(path)
    if magic.startswith(gbdt.GBDT_MAGIC):
        return gbdt.load_gbdt(path)
    raise ValueError(f"{path}: not a recognized model file")


def _mask_indices(mask_path: str | None, n_features: int) -> np.ndarray:
    if mask_path is None:
        return np.arange(n_features)
    return data.load_mask(mask_path).indices


# --- subcommands ------------------------------------------------------------

def cmd_gen_data(args) -> int:
    t0 = time.time()
    schema = data.make_schema()
    ds = data.generate(schema, args.samples, args.informative, args.balance,
                       seed=args.seed)
    data.save_dataset(ds, args.out)
    _log(f"gen-data: wrote {ds.n_samples} samples x {schema.size} features "
         f"to {args.out} in {time.time() - t0:.1f}s")
    if args.mask_out:
        mask = data.sample_feature_mask(schema, args.mask_fraction,
                                        seed=args.mask_seed)
        data.save_mask(mask, args.mask_out)
        _log(f"gen-data: wrote mask of {mask.popcount} features to {args.mask_out}")
    return 0


def cmd_train_target(args) -> int:
    t0 = time.time()
    ds = data.load_dataset(args.data)
    idx = _mask_indices(args.mask, ds.schema.size)
    model = gbdt.train_gbdt((ds.X[:, idx], ds.y), n_trees=args.trees,
                            max_leaves=args.leaves,
                            learning_rate=args.learning_rate, seed=args.seed)
    gbdt.save_gbdt(model, args.out)
    acc = float(((gbdt.score_batch(model, ds.X[:, idx]) > 0.5) == ds.y).mean())
    _log(f"train-target: {args.trees} trees on {idx.size} features, "
         f"train accuracy {acc:.4f}, {time.time() - t0:.1f}s -> {args.out}")
    return 0


def cmd_train_substitute(args) -> int:
    t0 = time.time()
    ds = data.load_dataset(args.data)
    idx = _mask_indices(args.mask, ds.schema.size)
    config = mlp.TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                             learning_rate=args.learning_rate,
                             dropout_rate=args.dropout, seed=args.seed)
    model = mlp.train(mlp.init(idx.size, args.hidden, seed=args.seed),
                      (ds.X[:, idx], ds.y.astype(float)), config)
    mlp.save_model(model, args.out)
    acc = float(((mlp.forward_batch(model, ds.X[:, idx]) > 0.5) == ds.y).mean())
    _log(f"train-substitute: hidden {args.hidden} on {idx.size} features, "
         f"train accuracy {acc:.4f}, {time.time() - t0:.1f}s -> {args.out}")
    return 0


def _explainer_config(args, ds, idx) -> ExplainerConfig:
    background = None
    if args.method in ("shap_exact", "shap_sampled"):
        pick = rng(args.seed, "cli", "background").choice(
            ds.n_samples, size=min(args.background_size, ds.n_samples),
            replace=False)
        background = ds.X[np.sort(pick)][:, idx]
    return ExplainerConfig(shap_background=background,
                           shap_samples=args.shap_samples,
                           seed=args.seed, space=args.space)


def cmd_explain(args) -> int:
    t0 = time.time()
    ds = data.load_dataset(args.data)
    model = _load_any_model(args.model)
    idx = _mask_indices(args.mask, ds.schema.size)
    scorer = model if isinstance(model, mlp.MlpModel) else gbdt.as_oracle(model)
    if not isinstance(model, mlp.MlpModel) and \
            args.method not in ("shap_exact", "shap_sampled"):
        _log(f"explain: {args.method} needs the white-box substitute; "
             f"use a shap method for the target model")
        return 2
    config = _explainer_config(args, ds, idx)
    x = ds.X[args.index, idx]
    attribution = explain.attribute(args.method, scorer, x, config)
    ranking = explain.rank_features(attribution)
    rank_of = np.empty(idx.size, dtype=int)
    rank_of[ranking] = np.arange(idx.size)

    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["feature_index", "feature_name", "value", "rank"])
        for k in range(idx.size):
            g = int(idx[k])
            w.writerow([g, ds.schema.features[g].name,
                        repr(float(attribution.values[k])), int(rank_of[k])])
    diagnostics = {
        "method": attribution.method,
        "sample_index": args.index,
        "label": int(ds.y[args.index]),
        "completeness_gap": attribution.completeness_gap,
        "attribution_sum": float(attribution.values.sum()),
        "space": config.space,
        "seed": args.seed,
        "n_features": int(idx.size),
        "wall_time_seconds": time.time() - t0,
    }
    diag_path = args.diagnostics or (args.out + ".json")
    Path(diag_path).write_text(json.dumps(diagnostics, indent=2) + "\n")
    _log(f"explain: {args.method} on sample {args.index} -> {args.out} "
         f"(diagnostics {diag_path}) in {time.time() - t0:.1f}s")
    return 0


def _read_attribution_csv(path: str) -> Attribution:
    indices, values = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            indices.append(int(row["feature_index"]))
            values.append(float(row["value"]))
    order = np.argsort(indices)
    return Attribution(np.asarray(values)[order], "file")


def cmd_rank_compare(args) -> int:
    t0 = time.time()
    if len(args.a) != len(args.b):
        _log(f"rank-compare: got {len(args.a)} files for --a "
             f"but {len(args.b)} for --b")
        return 2
    attribs_a = [_read_attribution_csv(p) for p in args.a]
    attribs_b = [_read_attribution_csv(p) for p in args.b]
    mask = data.load_mask(args.mask) if args.mask else None
    if args.workers > 1 and not args.global_ranking:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            summaries = list(pool.map(
                lambda ab: rank.compare_models([ab[0]], [ab[1]], mask),
                zip(attribs_a, attribs_b)))
        per = [s.per_sample[0] for s in summaries]
        taus = np.array([r.tau for r in per])
        tauws = np.array([r.tau_w for r in per])
        summary = rank.AgreementSummary(per, float(taus.mean()), float(taus.std()),
                                        float(tauws.mean()), float(tauws.std()))
    else:
        summary = rank.compare_models(attribs_a, attribs_b, mask,
                                      global_ranking=args.global_ranking)
    line = (f"{args.label},{args.algorithm},{summary.mean_tau_w:.6f},"
            f"{summary.mean_tau:.6f},{summary.std_tau_w:.6f},"
            f"{summary.std_tau:.6f},{summary.n_samples}")
    header = "scenario,algorithm,mean_tau_w,mean_tau,std_tau_w,std_tau,n_samples"
    if args.out:
        path = Path(args.out)
        new = not path.exists()
        with open(path, "a") as fh:
            if new:
                fh.write(header + "\n")
            fh.write(line + "\n")
    print(header)
    print(line)
    _log(f"rank-compare: {summary.n_samples} comparisons in {time.time() - t0:.1f}s")
    return 0


def cmd_attack(args) -> int:
    t0 = time.time()
    ds = data.load_dataset(args.data)
    target = gbdt.load_gbdt(args.target)
    t_idx = _mask_indices(args.target_mask, ds.schema.size)
    oracle = gbdt.ScoreOracle(
        lambda x: gbdt.score(target, np.asarray(x, dtype=float)[t_idx]),
        lambda X: gbdt.score_batch(target, np.atleast_2d(X)[:, t_idx]))

    registry = attack.default_registry(ds.schema)
    s_idx = _mask_indices(args.substitute_mask, ds.schema.size)
    if args.target_mask or args.substitute_mask:
        shared = FeatureMask(np.zeros(ds.schema.size, dtype=bool))
        shared.bits[np.intersect1d(t_idx, s_idx)] = True
        registry = report._masked_registry(registry, shared)

    if args.samples:
        ds = data.Dataset(ds.schema, ds.X[:args.samples], ds.y[:args.samples],
                          ds.informative_indices, ds.seed)
    config = attack.AttackConfig(args.max_features, args.budget,
                                 args.threshold, args.method, seed=args.seed)
    if args.order == "guided":
        substitute = mlp.load_model(args.substitute)
        explainer = _explainer_config(args, ds, s_idx)
        eligible = [i for i in range(ds.n_samples)
                    if ds.y[i] == 1 and oracle.score(ds.X[i]) >= args.threshold]
        attribs = [report._embed(
            explain.attribute(args.method, substitute, ds.X[i, s_idx],
                              explainer).values, s_idx, ds.schema.size,
            args.method) for i in eligible]
        rep = attack.run_campaign(ds, substitute, oracle, registry, explainer,
                                  config, order="guided", attributions=attribs,
                                  workers=args.workers)
    else:
        rep = attack.run_campaign(ds, None, oracle, registry, None, config,
                                  order="random", workers=args.workers)

    algorithm = args.method if args.order == "guided" else "random"
    if args.traces_out:
        with open(args.traces_out, "w") as fh:
            for t in rep.traces:
                fh.write(json.dumps({
                    "outcome": t.outcome,
                    "queries_used": t.queries_used,
                    "n_features_modified": t.n_features_modified,
                    "initial_score": t.initial_score,
                    "final_score": t.final_score,
                    "steps": [{"feature_index": s.feature_index,
                               "old_value": s.old_value,
                               "new_value": s.new_value,
                               "oracle_score_after": s.oracle_score_after}
                              for s in t.steps],
                }) + "\n")
    header = "scenario,algorithm,effectiveness,avg_perturbation"
    line = f"{args.label},{algorithm},{rep.effectiveness:.6f},{rep.avg_perturbation:.6f}"
    if args.out:
        path = Path(args.out)
        new = not path.exists()
        with open(path, "a") as fh:
            if new:
                fh.write(header + "\n")
            fh.write(line + "\n")
    print(header)
    print(line)
    _log(f"attack: {rep.n_evaded}/{rep.n_eligible} evaded, "
         f"{oracle.queries} oracle queries, {time.time() - t0:.1f}s")
    return 0


def cmd_report(args) -> int:
    t0 = time.time()
    values = {}
    if args.config:
        values.update(json.loads(Path(args.config).read_text()))
    fields = report.ExperimentConfig.__dataclass_fields__
    for key in fields:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    config = report.ExperimentConfig.from_json(values)
    rep = report.run_experiment(config)
    written = report.write_report(rep, args.out_dir)
    for p in written:
        _log(f"report: wrote {p}")
    _log(f"report: total {time.time() - t0:.1f}s")
    return 0


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="xea",
        description="Explainability-transferability experiments and "
                    "explainability-guided evasion at desk scale.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic labeled dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--samples", type=int, default=12000)
    g.add_argument("--informative", type=int, default=12)
    g.add_argument("--balance", type=float, default=0.5)
    g.add_argument("--seed", type=int, default=7)
    g.add_argument("--mask-out")
    g.add_argument("--mask-fraction", type=float, default=0.5)
    g.add_argument("--mask-seed", type=int, default=2)
    g.set_defaults(func=cmd_gen_data)

    g = sub.add_parser("train-target", help="train the black-box boosted-tree target")
    g.add_argument("--data", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--mask")
    g.add_argument("--trees", type=int, default=50)
    g.add_argument("--leaves", type=int, default=15)
    g.add_argument("--learning-rate", type=float, default=0.1)
    g.add_argument("--seed", type=int, default=5)
    g.set_defaults(func=cmd_train_target)

    g = sub.add_parser("train-substitute", help="train the white-box MLP substitute")
    g.add_argument("--data", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--mask")
    g.add_argument("--hidden", type=int, nargs="+", default=[16])
    g.add_argument("--epochs", type=int, default=300)
    g.add_argument("--batch-size", type=int, default=64)
    g.add_argument("--learning-rate", type=float, default=5e-3)
    g.add_argument("--dropout", type=float, default=0.2)
    g.add_argument("--seed", type=int, default=3)
    g.set_defaults(func=cmd_train_substitute)

    g = sub.add_parser("explain", help="attribute one sample's classification")
    g.add_argument("--data", required=True)
    g.add_argument("--model", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--diagnostics")
    g.add_argument("--mask")
    g.add_argument("--method", default="integrated_gradients",
                   choices=explain.METHODS)
    g.add_argument("--index", type=int, default=0)
    g.add_argument("--space", default="score", choices=("score", "logit"))
    g.add_argument("--background-size", type=int, default=32)
    g.add_argument("--shap-samples", type=int, default=32)
    g.add_argument("--seed", type=int, default=11)
    g.set_defaults(func=cmd_explain)

    g = sub.add_parser("rank-compare", help="rank agreement between attribution dumps")
    g.add_argument("--a", nargs="+", required=True)
    g.add_argument("--b", nargs="+", required=True)
    g.add_argument("--mask")
    g.add_argument("--out")
    g.add_argument("--label", default="adhoc")
    g.add_argument("--algorithm", default="integrated_gradients")
    g.add_argument("--global-ranking", action="store_true")
    g.add_argument("--workers", type=int, default=1)
    g.set_defaults(func=cmd_rank_compare)

    g = sub.add_parser("attack", help="greedy evasion campaign against the target")
    g.add_argument("--data", required=True)
    g.add_argument("--target", required=True)
    g.add_argument("--substitute")
    g.add_argument("--target-mask")
    g.add_argument("--substitute-mask")
    g.add_argument("--order", default="guided", choices=("guided", "random"))
    g.add_argument("--method", default="integrated_gradients",
                   choices=explain.METHODS)
    g.add_argument("--samples", type=int)
    g.add_argument("--budget", type=int, default=14)
    g.add_argument("--max-features", type=int, default=20)
    g.add_argument("--threshold", type=float, default=0.5)
    g.add_argument("--space", default="score", choices=("score", "logit"))
    g.add_argument("--background-size", type=int, default=32)
    g.add_argument("--shap-samples", type=int, default=32)
    g.add_argument("--seed", type=int, default=19)
    g.add_argument("--label", default="adhoc")
    g.add_argument("--out")
    g.add_argument("--traces-out")
    g.add_argument("--workers", type=int, default=1)
    g.set_defaults(func=cmd_attack)

    g = sub.add_parser("report", help="full three-scenario experiment matrix")
    g.add_argument("--out-dir", required=True)
    g.add_argument("--config", help="JSON file of experiment settings; "
                                    "flags override file values")
    for key, f in report.ExperimentConfig.__dataclass_fields__.items():
        flag = "--" + key.replace("_", "-")
        if key in ("hidden_dims", "methods"):
            g.add_argument(flag, nargs="+", default=None,
                           type=int if key == "hidden_dims" else str)
        elif f.type in ("int", int):
            g.add_argument(flag, type=int, default=None)
        else:
            g.add_argument(flag, type=float, default=None)
    g.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as e:
        _log(f"{args.command}: {e}")
        return 1


# --- pe-patch ---------------------------------------------------------------

def pe_patch_main(argv=None) -> int:
    p = argparse.ArgumentParser(
        prog="pe-patch",
        description="Apply inert byte-level edits to a PE32/PE32+ file: "
                    "timestamp, CLR directory fields, printable-character "
                    "buffer as a new section or overlay.")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--timedate", type=int)
    p.add_argument("--clr-size", type=int)
    p.add_argument("--clr-va", type=int)
    p.add_argument("--section-name", help="append the printable buffer as a "
                                          "section with this name")
    p.add_argument("--target-dist", help="file of 96 comma-separated decimals "
                                         "summing to 1")
    p.add_argument("--overlay", action="store_true",
                   help="append the printable buffer as overlay instead of a section")
    p.add_argument("--buffer-cap", type=int, default=pe.DEFAULT_BUFFER_CAP)
    args = p.parse_args(argv)

    try:
        raw = Path(args.input).read_bytes()
        image = pe.parse(raw)
        edits = []
        if args.timedate is not None:
            edits.append(("timedate_stamp", args.timedate))
        if args.clr_size is not None:
            edits.append(("clr_size", args.clr_size))
        if args.clr_va is not None:
            edits.append(("clr_virtual_address", args.clr_va))
        if args.target_dist:
            text = Path(args.target_dist).read_text().strip()
            hist = np.array([float(v) for v in text.split(",")])
            target = pe.CharDistributionTarget(hist, args.buffer_cap)
            buffer = pe.build_printable_buffer(pe.printable_counts(raw), target)
            _log(f"pe-patch: printable buffer of {len(buffer)} bytes")
            if args.overlay:
                edits.append(("append_overlay", buffer))
            elif args.section_name:
                edits.append(("append_printable_section",
                              (args.section_name.encode(), buffer)))
            else:
                _log("pe-patch: --target-dist needs --section-name or --overlay")
                return 2
        if not edits:
            _log("pe-patch: nothing to do (no edits requested)")
            return 2
        patched = pe.apply_plan(image, pe.PatchPlan(tuple(edits)))
        Path(args.output).write_bytes(patched.raw)
    except (ValueError, OSError) as e:
        _log(f"pe-patch: {e}")
        return 1
    _log(f"pe-patch: wrote {args.output} "
         f"({len(patched.raw) - len(raw):+d} bytes)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
