"""Three-knowledge-scenario experiment harness.

Scenario 1 trains the substitute on the same half of the training pool as the
target with all features visible; scenario 2 moves the substitute to the other
(disjoint) half; scenario 3 additionally gives each model its own random 50%
feature subset.  The target side is always explained with sampled Shapley
values (the only method available through score-only access); the substitute
side is explained with every configured method plus a random-ranking baseline.

Outputs: a transferability table (scenario x algorithm -> weighted and plain
Kendall tau against the target's ranking), an attack table (scenario x
algorithm -> effectiveness and average perturbation), a markdown summary with
environment and telemetry, and bar-chart figures.
"""

from __future__ import annotations

import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, attack, data, explain, gbdt, mlp, rank
from .attack import AttackConfig, AttackReport, ModifiabilityRegistry, RegistryEntry
from .data import Dataset, FeatureMask, FeatureSchema
from .explain import Attribution, ExplainerConfig
from .rank import AgreementSummary
from .seeding import rng

SCENARIOS = ("same_train_same_features", "diff_train_same_features",
             "diff_train_diff_features")
SUBSTITUTE_METHODS = ("integrated_gradients", "eps_lrp", "deeplift", "shap_sampled")
RANDOM_ALGORITHM = "random"

TRANSFERABILITY_CSV = "report_transferability.csv"
ATTACK_CSV = "report_attack.csv"
REPORT_MD = "report.md"
TRANSFERABILITY_FIG = "fig_transferability.png"
ATTACK_FIG = "fig_attack.png"


@dataclass
class ExperimentConfig:
    n_samples: int = 12000
    n_informative: int = 12
    class_balance: float = 0.5
    data_seed: int = 7
    train_fraction: float = 0.6
    split_seed: int = 1
    half_seed: int = 2
    mask_fraction: float = 0.5
    target_mask_seed: int = 2
    substitute_mask_seed: int = 32
    hidden_dims: tuple[int, ...] = (16,)
    mlp_seed: int = 3
    gbdt_trees: int = 50
    gbdt_seed: int = 5
    eval_samples: int = 200
    background_size: int = 32
    shap_samples: int = 32
    explain_seed: int = 11
    max_features_modified: int = 20
    oracle_budget: int = 14
    benign_threshold: float = 0.5
    attack_seed: int = 19
    methods: tuple[str, ...] = SUBSTITUTE_METHODS

    def to_json(self) -> dict:
        d = dict(vars(self))
        d["hidden_dims"] = list(self.hidden_dims)
        d["methods"] = list(self.methods)
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "ExperimentConfig":
        obj = dict(obj)
        if "hidden_dims" in obj:
            obj["hidden_dims"] = tuple(obj["hidden_dims"])
        if "methods" in obj:
            obj["methods"] = tuple(obj["methods"])
        return cls(**obj)


@dataclass
class ScenarioResult:
    scenario: str
    agreement: dict[str, AgreementSummary]   # method -> vs-target summary
    attacks: dict[str, AttackReport]         # method (incl. "random") -> report
    shared_feature_count: int
    modifiable_feature_count: int
    attack_oracle_queries: int
    runtime_seconds: float


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    scenarios: list[ScenarioResult]
    environment: dict = field(default_factory=dict)
    total_runtime_seconds: float = 0.0


def _column_oracle(model: gbdt.GbdtModel, indices: np.ndarray) -> gbdt.ScoreOracle:
    """Score oracle that sees only the model's feature subset of a full vector."""
    idx = np.asarray(indices)

    def score_one(x):
        return gbdt.score(model, np.asarray(x, dtype=float)[idx])

    def score_many(X):
        return gbdt.score_batch(model, np.atleast_2d(np.asarray(X, dtype=float))[:, idx])

    return gbdt.ScoreOracle(score_one, score_many)


def _embed(values: np.ndarray, indices: np.ndarray, n_features: int,
           method: str) -> Attribution:
    full = np.zeros(n_features)
    full[indices] = values
    return Attribution(full, method)


def _masked_registry(registry: ModifiabilityRegistry,
                     allowed: FeatureMask) -> ModifiabilityRegistry:
    entries = {}
    for i, e in registry.entries.items():
        if e.modifiable and not allowed.bits[i]:
            entries[i] = RegistryEntry(False, (), e.dependency_note)
        else:
            entries[i] = e
    return ModifiabilityRegistry(entries)


def _random_attributions(n_samples: int, n_features: int, scenario: str,
                         seed: int) -> list[Attribution]:
    return [Attribution(rng(seed, "random-ranking", scenario, i).random(n_features),
                        RANDOM_ALGORITHM)
            for i in range(n_samples)]


def run_experiment(config: ExperimentConfig = ExperimentConfig()) -> ExperimentReport:
    """Run the full scenario matrix and return all tables and telemetry."""
    t_start = time.time()
    schema = data.make_schema()
    F = schema.size
    ds = data.generate(schema, config.n_samples, config.n_informative,
                       config.class_balance, seed=config.data_seed)
    pool, test = data.split(ds, config.train_fraction, seed=config.split_seed)
    half_a, half_b = data.split(pool, 0.5, seed=config.half_seed)

    mask_t = data.sample_feature_mask(schema, config.mask_fraction,
                                      seed=config.target_mask_seed)
    mask_s = data.sample_feature_mask(schema, config.mask_fraction,
                                      seed=config.substitute_mask_seed)
    all_features = FeatureMask(np.ones(F, dtype=bool))

    n_eval = min(config.eval_samples, test.n_samples)
    eval_X = test.X[:n_eval]
    eval_y = test.y[:n_eval]

    registry = attack.default_registry(schema)
    results = []
    for scenario in SCENARIOS:
        t_sc = time.time()
        diff_features = scenario == "diff_train_diff_features"
        t_mask = mask_t if diff_features else all_features
        s_mask = mask_s if diff_features else all_features
        t_idx, s_idx = t_mask.indices, s_mask.indices
        shared = t_mask & s_mask

        target_train = half_a
        sub_train = half_a if scenario == "same_train_same_features" else half_b

        target = gbdt.train_gbdt((target_train.X[:, t_idx], target_train.y),
                                 n_trees=config.gbdt_trees, seed=config.gbdt_seed)
        oracle = _column_oracle(target, t_idx)       # full vectors (attacks)
        explain_oracle = gbdt.as_oracle(target)      # projected vectors (SHAP)

        substitute = mlp.train(
            mlp.init(s_idx.size, list(config.hidden_dims), seed=config.mlp_seed),
            (sub_train.X[:, s_idx], sub_train.y.astype(float)),
            mlp.TrainConfig(seed=config.mlp_seed))

        bg_pick = rng(config.explain_seed, "background", scenario) \
            .choice(sub_train.n_samples, size=config.background_size, replace=False)
        sub_bg = sub_train.X[np.sort(bg_pick)][:, s_idx]
        tgt_pick = rng(config.explain_seed, "background-target", scenario) \
            .choice(target_train.n_samples, size=config.background_size, replace=False)
        tgt_bg = target_train.X[np.sort(tgt_pick)][:, t_idx]

        sub_cfg = ExplainerConfig(shap_background=sub_bg,
                                  shap_samples=config.shap_samples,
                                  seed=config.explain_seed)
        tgt_cfg = ExplainerConfig(shap_background=tgt_bg,
                                  shap_samples=config.shap_samples,
                                  seed=config.explain_seed)

        tgt_attribs = [
            _embed(explain.shap_sampled(explain_oracle, eval_X[i, t_idx], tgt_cfg).values,
                   t_idx, F, "shap_sampled")
            for i in range(n_eval)
        ]
        sub_attribs = {
            method: [
                _embed(explain.attribute(method, substitute, eval_X[i, s_idx],
                                         sub_cfg).values, s_idx, F, method)
                for i in range(n_eval)
            ]
            for method in config.methods
        }
        rand_attribs = _random_attributions(n_eval, F, scenario, config.explain_seed)

        agreement = {
            method: rank.compare_models(sub_attribs[method], tgt_attribs, shared)
            for method in config.methods
        }
        agreement[RANDOM_ALGORITHM] = rank.compare_models(rand_attribs, tgt_attribs,
                                                          shared)

        # attacks run on the same evaluation slice against this scenario's oracle
        scen_registry = _masked_registry(registry, shared) if diff_features \
            else registry
        eval_ds = Dataset(schema, eval_X, eval_y,
                          ds.informative_indices, ds.seed)
        eligible = [i for i in range(n_eval)
                    if eval_y[i] == 1
                    and oracle.score(eval_X[i]) >= config.benign_threshold]
        queries_before = oracle.queries
        attacks = {}
        for method in config.methods:
            cfg = AttackConfig(config.max_features_modified, config.oracle_budget,
                               config.benign_threshold, method,
                               seed=config.attack_seed)
            attacks[method] = attack.run_campaign(
                eval_ds, substitute, oracle, scen_registry, sub_cfg, cfg,
                order="guided",
                attributions=[sub_attribs[method][i] for i in eligible])
        rand_cfg = AttackConfig(config.max_features_modified, config.oracle_budget,
                                config.benign_threshold, seed=config.attack_seed)
        attacks[RANDOM_ALGORITHM] = attack.run_campaign(
            eval_ds, None, oracle, scen_registry, None, rand_cfg, order="random")

        results.append(ScenarioResult(
            scenario=scenario,
            agreement=agreement,
            attacks=attacks,
            shared_feature_count=int(shared.popcount),
            modifiable_feature_count=len(scen_registry.modifiable_indices()),
            attack_oracle_queries=oracle.queries - queries_before,
            runtime_seconds=time.time() - t_sc,
        ))

    env = {
        "package_version": __version__,
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "platform": platform.platform(),
        "seeds": {k: v for k, v in vars(config).items() if k.endswith("seed")},
    }
    return ExperimentReport(config, results, env, time.time() - t_start)


# --- rendering -------------------------------------------------------------

def _fmt(x: float) -> str:
    return f"{x:.6f}"


def transferability_rows(report: ExperimentReport) -> list[tuple]:
    rows = []
    for res in report.scenarios:
        for alg in (*report.config.methods, RANDOM_ALGORITHM):
            s = res.agreement[alg]
            rows.append((res.scenario, alg, s.mean_tau_w, s.mean_tau,
                         s.std_tau_w, s.std_tau, s.n_samples))
    return rows


def attack_rows(report: ExperimentReport) -> list[tuple]:
    rows = []
    for res in report.scenarios:
        for alg in (*report.config.methods, RANDOM_ALGORITHM):
            r = res.attacks[alg]
            rows.append((res.scenario, alg, r.effectiveness, r.avg_perturbation))
    return rows


def write_report(report: ExperimentReport, outdir) -> list[Path]:
    """Render CSV tables, markdown summary and figures; returns written paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []

    path = outdir / TRANSFERABILITY_CSV
    with open(path, "w") as fh:
        fh.write("scenario,algorithm,mean_tau_w,mean_tau,std_tau_w,std_tau,n_samples\n")
        for sc, alg, mtw, mt, stw, st, n in transferability_rows(report):
            fh.write(f"{sc},{alg},{_fmt(mtw)},{_fmt(mt)},{_fmt(stw)},{_fmt(st)},{n}\n")
    written.append(path)

    path = outdir / ATTACK_CSV
    with open(path, "w") as fh:
        fh.write("scenario,algorithm,effectiveness,avg_perturbation\n")
        for sc, alg, eff, pert in attack_rows(report):
            fh.write(f"{sc},{alg},{_fmt(eff)},{_fmt(pert)}\n")
    written.append(path)

    written.append(_write_markdown(report, outdir / REPORT_MD))
    written.extend(_write_figures(report, outdir))
    return written


def _write_markdown(report: ExperimentReport, path: Path) -> Path:
    lines = ["# Explainability transferability and guided-evasion report", ""]
    lines += ["## Transferability (mean tau_w | mean tau vs target SHAP ranking)", ""]
    algs = (*report.config.methods, RANDOM_ALGORITHM)
    lines.append("| scenario | " + " | ".join(algs) + " |")
    lines.append("|" + "---|" * (len(algs) + 1))
    for res in report.scenarios:
        cells = [f"{res.agreement[a].mean_tau_w:.3f} \\| {res.agreement[a].mean_tau:.3f}"
                 for a in algs]
        lines.append(f"| {res.scenario} | " + " | ".join(cells) + " |")
    lines += ["", "## Attack (effectiveness | avg features perturbed on evaded)", ""]
    lines.append("| scenario | " + " | ".join(algs) + " |")
    lines.append("|" + "---|" * (len(algs) + 1))
    for res in report.scenarios:
        cells = [f"{res.attacks[a].effectiveness:.3f} \\| "
                 f"{res.attacks[a].avg_perturbation:.2f}" for a in algs]
        lines.append(f"| {res.scenario} | " + " | ".join(cells) + " |")
    lines += ["", "## Telemetry", ""]
    for res in report.scenarios:
        lines.append(f"- {res.scenario}: shared features {res.shared_feature_count}, "
                     f"modifiable {res.modifiable_feature_count}, "
                     f"attack oracle queries {res.attack_oracle_queries}, "
                     f"runtime {res.runtime_seconds:.1f}s")
    lines.append(f"- total runtime {report.total_runtime_seconds:.1f}s")
    lines += ["", "## Environment", ""]
    for k, v in report.environment.items():
        lines.append(f"- {k}: {v}")
    lines.append("")
    path.write_text("\n".join(lines))
    return path


def _write_figures(report: ExperimentReport, outdir: Path) -> list[Path]:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    algs = (*report.config.methods, RANDOM_ALGORITHM)
    scenarios = [r.scenario for r in report.scenarios]
    x = np.arange(len(scenarios))
    width = 0.8 / len(algs)
    paths = []

    fig, ax = plt.subplots(figsize=(9, 4.5))
    for k, alg in enumerate(algs):
        means = [r.agreement[alg].mean_tau_w for r in report.scenarios]
        stds = [r.agreement[alg].std_tau_w for r in report.scenarios]
        ax.bar(x + (k - len(algs) / 2 + 0.5) * width, means, width,
               yerr=stds, capsize=2, label=alg)
    ax.set_xticks(x, scenarios, fontsize=8)
    ax.set_ylabel("mean weighted Kendall tau")
    ax.set_title("Rank agreement with the target's SHAP ranking")
    ax.axhline(0.0, color="black", linewidth=0.6)
    ax.legend(fontsize=8)
    fig.tight_layout()
    p = outdir / TRANSFERABILITY_FIG
    fig.savefig(p, dpi=120)
    plt.close(fig)
    paths.append(p)

    fig, ax = plt.subplots(figsize=(9, 4.5))
    for k, alg in enumerate(algs):
        effs = [r.attacks[alg].effectiveness for r in report.scenarios]
        ax.bar(x + (k - len(algs) / 2 + 0.5) * width, effs, width, label=alg)
    ax.set_xticks(x, scenarios, fontsize=8)
    ax.set_ylabel("attack effectiveness")
    ax.set_title("Guided vs random evasion effectiveness")
    ax.legend(fontsize=8)
    fig.tight_layout()
    p = outdir / ATTACK_FIG
    fig.savefig(p, dpi=120)
    plt.close(fig)
    paths.append(p)
    return paths
