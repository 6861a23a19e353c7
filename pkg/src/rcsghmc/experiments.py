"""Experiment drivers behind the command line.

Every run writes ``<outdir>/<experiment>/<seed>/`` containing
``trajectory.csv``, ``samples.csv`` and ``report.json``; commands add their
own tables and a ``summary.json`` next to the seed directories.  Outputs
contain no timestamps or host details, so re-running a config with the
same seeds reproduces every file byte for byte, whatever ``jobs`` is.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, List, Optional, Sequence

import numpy as np

from .config import ExperimentConfig
from .core import ConfigError, DivergenceError, EvaluationError
from .diagnostics import DistanceMatrix, mean_offdiagonal, mode_coverage, pairwise_distance_matrix
from .model import (
    AdapterModel,
    ClassifierModel,
    accuracy,
    ensemble_predict,
    make_synthetic_task,
    predictive_nll,
)
from .potentials import MixturePotential
from .repulsion import RepresentationContext, RepulsionConfig
from .samplers import (
    CyclicalSchedule,
    ProbeSource,
    RunReport,
    SampleArchive,
    SampleRecord,
    SghmcConfig,
    map_baseline,
    run,
)

logger = logging.getLogger(__name__)

JENSEN_SLACK = 1e-10
NORMALIZATION_TOL = 1e-12


# ---------------------------------------------------------------- file output


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return format(float(x), ".17g")


def write_csv(path: str, header: Sequence[str], rows) -> None:
    """CSV with doubles at 17 significant digits (lossless round trip)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    return obj


def write_json(path: str, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_plain(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _theta_header(dim: int) -> List[str]:
    return [f"theta_{i}" for i in range(dim)]


def write_trajectory(path: str, report: Optional[RunReport], dim: int) -> None:
    rows = []
    if report is not None:
        for r in report.trajectory:
            rows.append([int(r[0]), int(r[1]), int(r[2]), *r[3:]])
    write_csv(path, ["cycle", "iter", "chain", *_theta_header(dim)], rows)


def write_samples(path: str, archive: SampleArchive) -> None:
    dim = archive.records[0].theta.size
    rows = [[r.cycle, r.chain, r.steps, r.potential, *r.theta] for r in archive.records]
    write_csv(path, ["cycle", "chain", "steps", "potential", *_theta_header(dim)], rows)


def write_distance_matrix(path: str, D: DistanceMatrix) -> None:
    rows = [[label, *D.entries[i]] for i, label in enumerate(D.labels)]
    write_csv(path, ["sample", *D.labels], rows)


def sample_labels(archive: SampleArchive) -> List[str]:
    return [f"c{r.cycle}k{r.chain}" for r in archive.records]


def _run_dir(outdir: str, experiment: str, seed: int) -> str:
    path = os.path.join(outdir, experiment, str(seed))
    os.makedirs(path, exist_ok=True)
    return path


# ------------------------------------------------------------ object builders


def schedule(cfg: ExperimentConfig) -> CyclicalSchedule:
    s = cfg.sampler
    return CyclicalSchedule(s.step_size, cfg.iterations_per_cycle(), s.cycles, s.beta)


def sampler_config(cfg: ExperimentConfig) -> SghmcConfig:
    s, r = cfg.sampler, cfg.repulsion
    repulsion = RepulsionConfig(
        r.strength, r.epsilon, r.mode, r.metric, r.batch_size, r.mmd_sigma, r.mmd_unbiased
    )
    return SghmcConfig(
        algorithm=s.algorithm,
        friction=s.friction,
        gamma_hat=s.gamma_hat,
        repulsion=repulsion,
        burnin=s.burnin,
        burnin_fraction=s.burnin_fraction,
        burnin_lr=s.burnin_lr,
        burnin_weight_decay=s.burnin_weight_decay,
        momentum_restart=s.momentum_restart,
        position_restart=s.position_restart,
    )


class ClassifierSetup:
    """Data, model, potential and initial point of one classifier run."""

    def __init__(self, cfg: ExperimentConfig, seed: int):
        t = cfg.task
        data_seed = seed if t.seed is None else t.seed
        self.task = make_synthetic_task(
            data_seed,
            t.n,
            t.n_classes,
            t.input_dim,
            t.feature_dim,
            t.rep_dim,
            t.n_test,
            t.class_sep,
            t.temperature,
        )
        if t.adapter == "mlp":
            adapter = AdapterModel.mlp(t.feature_dim, t.rep_dim)
        else:
            adapter = AdapterModel.shift(data_seed, t.feature_dim)
        self.model = ClassifierModel(adapter, self.task.backbone, self.task.embeddings)
        batch = min(cfg.sampler.batch_size, t.n)
        self.potential = self.model.potential(self.task.train, batch, t.prior_precision)
        self.init = adapter.init_params(np.random.default_rng([seed, 0x1417]), t.init_scale)
        self.probe_source = ProbeSource(adapter, self.task.backbone, self.task.train.inputs)

    def diagnostic_context(self, cfg: ExperimentConfig) -> RepresentationContext:
        """Held-out probe batch shared by every distance matrix of an analysis."""
        d = cfg.diagnostics
        n_test = self.task.test.n
        size = min(d.probe_size, n_test)
        idx = np.sort(np.random.default_rng([d.probe_seed, 0x9B0B]).choice(n_test, size, replace=False))
        return RepresentationContext(self.model.adapter, self.task.backbone, self.task.test.inputs[idx])

    def evaluate(self, thetas: Sequence[np.ndarray]) -> dict:
        """Held-out accuracy and NLL of each member and of their ensemble."""
        X, y = self.task.test.inputs, self.task.test.labels
        members = []
        for theta in thetas:
            p = self.model.predict_proba(X, theta)
            members.append({"accuracy": accuracy(p, y), "nll": predictive_nll(p, y)})
        p_ens = ensemble_predict(self.model, list(thetas), X)
        norm_err = float(np.max(np.abs(p_ens.sum(axis=1) - 1.0)))
        ensemble = {"accuracy": accuracy(p_ens, y), "nll": predictive_nll(p_ens, y)}
        mean_member_nll = float(np.mean([m["nll"] for m in members]))
        if norm_err > NORMALIZATION_TOL:
            raise EvaluationError(f"ensemble probabilities off the simplex by {norm_err:.3g}")
        if ensemble["nll"] > mean_member_nll + JENSEN_SLACK:
            raise EvaluationError(
                f"ensemble NLL {ensemble['nll']!r} exceeds mean member NLL {mean_member_nll!r}"
            )
        return {
            "members": members,
            "ensemble": ensemble,
            "mean_member_nll": mean_member_nll,
            "max_normalization_error": norm_err,
        }


def _members(cfg: ExperimentConfig, archive: SampleArchive):
    """Labels and parameters of the archived samples that join the ensemble."""
    records = archive.records
    if cfg.ensemble.members == "final_cycle":
        records = [r for r in records if r.cycle == archive.cycles]
    return [f"c{r.cycle}k{r.chain}" for r in records], [r.theta for r in records]


def _diverged(experiment: str, seed: int, run_dir: str, err: DivergenceError) -> dict:
    report = {"experiment": experiment, "seed": seed, "status": "diverged", "error": err.to_dict()}
    write_json(os.path.join(run_dir, "report.json"), report)
    return report


def _sample_and_write(cfg, seed, run_dir, potential, init, probe_source=None):
    """Run the configured sampler and write the trajectory and samples."""
    if cfg.sampler.algorithm == "map":
        s = cfg.sampler
        theta = map_baseline(potential, init, s.map_max_iter, s.map_tol)
        archive = SampleArchive([SampleRecord(1, 0, theta, float(potential.value(theta)), 0, seed)])
        report = None
    else:
        archive, report = run(
            schedule(cfg),
            sampler_config(cfg),
            potential,
            init,
            chains=cfg.sampler.chains,
            seed=seed,
            probe_source=probe_source,
            record_every=cfg.sampler.record_every,
        )
    write_trajectory(os.path.join(run_dir, "trajectory.csv"), report, archive.records[0].theta.size)
    write_samples(os.path.join(run_dir, "samples.csv"), archive)
    return archive, report


def _run_summary(archive: SampleArchive, report: Optional[RunReport]) -> dict:
    out = {
        "final_potentials": [r.potential for r in archive.records],
        "samples": sample_labels(archive),
    }
    if report is not None:
        out["noise_draws"] = report.noise_draws
        out["stage_noise"] = report.stage_noise
    return out


FILES = ["trajectory.csv", "samples.csv", "report.json"]


# ---------------------------------------------------------------- single runs


def run_toy(cfg: ExperimentConfig, seed: int, outdir: str, experiment: str = "toy2d") -> dict:
    """One sampler run on the Gaussian-mixture toy, scored by mode coverage."""
    run_dir = _run_dir(outdir, experiment, seed)
    gm = cfg.task.mixture()
    potential = MixturePotential(gm)
    try:
        archive, report = _sample_and_write(cfg, seed, run_dir, potential, np.asarray(cfg.task.init))
    except DivergenceError as err:
        return _diverged(experiment, seed, run_dir, err)
    samples = archive.samples()
    cov = mode_coverage(samples, gm, cfg.task.coverage_radius)
    dist = np.linalg.norm(np.stack(samples)[:, None, :] - gm.means[None, :, :], axis=2)
    result = {
        "experiment": experiment,
        "seed": seed,
        "status": "ok",
        "algorithm": cfg.sampler.algorithm,
        "coverage": cov.coverage,
        "mode_hits": list(cov.hits),
        "radius": cov.radius,
        "nearest_mode": dist.argmin(axis=1),
        "nearest_mode_distance": dist.min(axis=1),
        "metric": {"name": "coverage", "value": cov.coverage},
        "files": FILES,
        **_run_summary(archive, report),
    }
    write_json(os.path.join(run_dir, "report.json"), result)
    return result


def run_classifier(
    cfg: ExperimentConfig,
    seed: int,
    outdir: str,
    experiment: str,
    with_map: bool = False,
    distances: bool = False,
) -> dict:
    """One sampler run on the synthetic classifier.

    Reports held-out accuracy and NLL of every archived member and of the
    ensemble; optionally also the MAP baseline from the same initial point
    and the pairwise distance matrix of the archive on the probe batch.
    """
    run_dir = _run_dir(outdir, experiment, seed)
    setup = ClassifierSetup(cfg, seed)
    try:
        archive, report = _sample_and_write(
            cfg, seed, run_dir, setup.potential, setup.init, setup.probe_source
        )
        if with_map:
            s = cfg.sampler
            theta_map = map_baseline(setup.potential, setup.init, s.map_max_iter, s.map_tol)
    except DivergenceError as err:
        return _diverged(experiment, seed, run_dir, err)

    labels, thetas = _members(cfg, archive)
    scores = setup.evaluate(thetas)
    files = list(FILES)
    result = {
        "experiment": experiment,
        "seed": seed,
        "status": "ok",
        "algorithm": cfg.sampler.algorithm,
        "members": scores["members"],
        "ensemble": scores["ensemble"],
        "mean_member_nll": scores["mean_member_nll"],
        "max_normalization_error": scores["max_normalization_error"],
        "metric": {"name": "ensemble_accuracy", "value": scores["ensemble"]["accuracy"]},
        **_run_summary(archive, report),
    }
    rows = [["ensemble", cfg.ensemble.members, scores["ensemble"]["accuracy"], scores["ensemble"]["nll"]]]
    for label, m in zip(labels, scores["members"]):
        rows.append(["member", label, m["accuracy"], m["nll"]])
    if with_map:
        p = setup.model.predict_proba(setup.task.test.inputs, theta_map)
        y = setup.task.test.labels
        result["map"] = {
            "accuracy": accuracy(p, y),
            "nll": predictive_nll(p, y),
            "grad_norm": float(np.linalg.norm(setup.potential.grad(theta_map))),
        }
        rows.insert(0, ["map", "map", result["map"]["accuracy"], result["map"]["nll"]])
    write_csv(os.path.join(run_dir, "metrics.csv"), ["method", "member", "accuracy", "nll"], rows)
    files.append("metrics.csv")

    if distances:
        D = pairwise_distance_matrix(
            archive.samples(),
            setup.diagnostic_context(cfg),
            cfg.diagnostics.metric,
            labels=sample_labels(archive),
        )
        write_distance_matrix(os.path.join(run_dir, "distances.csv"), D)
        files.append("distances.csv")
        result["mean_offdiagonal"] = mean_offdiagonal(D)
    result["files"] = sorted(files)
    write_json(os.path.join(run_dir, "report.json"), result)
    return result


def run_single(cfg: ExperimentConfig, seed: int, outdir: str, experiment: str) -> dict:
    if cfg.is_toy:
        return run_toy(cfg, seed, outdir, experiment)
    return run_classifier(cfg, seed, outdir, experiment)


# ------------------------------------------------------------------- commands


def _execute(tasks: List[tuple], jobs: int) -> List[dict]:
    """Run ``(fn, args...)`` tuples, in worker processes when ``jobs > 1``.

    Results come back in submission order either way.
    """
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(*args) for fn, *args in tasks]
    with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
        futures = [pool.submit(fn, *args) for fn, *args in tasks]
        return [f.result() for f in futures]


class CommandResult:
    """Summary written by a command plus the runs it was built from."""

    def __init__(self, summary: dict, runs: List[dict], path: str):
        self.summary = summary
        self.runs = runs
        self.path = path

    @property
    def diverged(self) -> List[dict]:
        return [r for r in self.runs if r["status"] == "diverged"]


def _finish(cfg, outdir, experiment, summary, runs) -> CommandResult:
    root = os.path.join(outdir, experiment)
    os.makedirs(root, exist_ok=True)
    write_json(os.path.join(root, "config.json"), cfg.to_dict())
    summary = {"experiment": experiment, "seeds": cfg.seeds, **summary}
    summary["status"] = "diverged" if any(r["status"] == "diverged" for r in runs) else "ok"
    path = os.path.join(root, "summary.json")
    write_json(path, summary)
    return CommandResult(summary, runs, path)


def cmd_toy2d(cfg: ExperimentConfig, outdir: str, jobs: int = 1) -> CommandResult:
    if not cfg.is_toy:
        raise ConfigError("toy2d needs a toy-2d task")
    runs = _execute([(run_toy, cfg, s, outdir, "toy2d") for s in cfg.seeds], jobs)
    ok = [r for r in runs if r["status"] == "ok"]
    summary = {
        "algorithm": cfg.sampler.algorithm,
        "per_seed": [{"seed": r["seed"], "coverage": r["coverage"]} for r in ok],
        "mean_coverage": float(np.mean([r["coverage"] for r in ok])) if ok else None,
        "full_coverage_seeds": sum(r["coverage"] == 1.0 for r in ok),
    }
    return _finish(cfg, outdir, "toy2d", summary, runs)


def _value_cfg(cfg: ExperimentConfig, parameter: str, value: float) -> ExperimentConfig:
    if parameter == "xi":
        return cfg.replace(repulsion={"strength": float(value)})
    if parameter == "cycles":
        return cfg.replace(sampler={"cycles": int(value)})
    return cfg.replace(repulsion={"batch_size": int(value)})


def _value_label(parameter: str, value: float) -> str:
    return repr(float(value)) if parameter == "xi" else str(int(value))


def cmd_ablate(cfg: ExperimentConfig, outdir: str, jobs: int = 1) -> CommandResult:
    """Grid over one parameter; one results row per (value, seed)."""
    parameter = cfg.ablation.parameter
    if parameter == "repulsion_batch" and cfg.repulsion.mode != "representation":
        raise ConfigError("ablation.parameter: repulsion_batch needs representation-mode repulsion")
    experiment = f"ablate-{parameter}"
    tasks = []
    for value in cfg.ablation.values:
        sub = _value_cfg(cfg, parameter, value)
        name = f"{experiment}/{_value_label(parameter, value)}"
        tasks.extend((run_single, sub, s, outdir, name) for s in cfg.seeds)
    runs = _execute(tasks, jobs)

    rows, means = [], {}
    it = iter(runs)
    for value in cfg.ablation.values:
        label = _value_label(parameter, value)
        vals = []
        for seed in cfg.seeds:
            r = next(it)
            if r["status"] != "ok":
                rows.append([parameter, label, seed, "diverged", float("nan")])
                continue
            rows.append([parameter, label, seed, r["metric"]["name"], r["metric"]["value"]])
            vals.append(r["metric"]["value"])
        means[label] = float(np.mean(vals)) if vals else None
    os.makedirs(os.path.join(outdir, experiment), exist_ok=True)
    write_csv(
        os.path.join(outdir, experiment, "results.csv"),
        ["parameter", "value", "seed", "metric", "score"],
        rows,
    )
    summary = {
        "parameter": parameter,
        "values": [_value_label(parameter, v) for v in cfg.ablation.values],
        "metric": "coverage" if cfg.is_toy else "ensemble_accuracy",
        "mean_score": means,
        "files": ["results.csv"],
    }
    return _finish(cfg, outdir, experiment, summary, runs)


def _require_classifier(cfg, command):
    if cfg.is_toy:
        raise ConfigError(f"{command} needs a synthetic-classifier task")


def cmd_diversity(cfg: ExperimentConfig, outdir: str, jobs: int = 1) -> CommandResult:
    """Matched-seed runs with and without repulsion, compared by the mean
    off-diagonal pairwise distance of their archives."""
    _require_classifier(cfg, "diversity")
    control = cfg.replace(repulsion={"strength": 0.0})
    tasks = []
    for s in cfg.seeds:
        tasks.append((run_classifier, cfg, s, outdir, "diversity/repulsion", False, True))
        tasks.append((run_classifier, control, s, outdir, "diversity/control", False, True))
    runs = _execute(tasks, jobs)
    per_seed = []
    for seed, on, off in zip(cfg.seeds, runs[::2], runs[1::2]):
        if on["status"] != "ok" or off["status"] != "ok":
            per_seed.append({"seed": seed, "status": "diverged"})
            continue
        per_seed.append(
            {
                "seed": seed,
                "with_repulsion": on["mean_offdiagonal"],
                "without_repulsion": off["mean_offdiagonal"],
                "difference": on["mean_offdiagonal"] - off["mean_offdiagonal"],
            }
        )
    ok = [p for p in per_seed if "difference" in p]
    summary = {"metric": cfg.diagnostics.metric, "probe_size": cfg.diagnostics.probe_size, "per_seed": per_seed}
    if ok:
        mean_on = float(np.mean([p["with_repulsion"] for p in ok]))
        mean_off = float(np.mean([p["without_repulsion"] for p in ok]))
        summary.update(
            mean_with_repulsion=mean_on,
            mean_without_repulsion=mean_off,
            difference=mean_on - mean_off,
            seeds_with_greater=sum(p["difference"] > 0 for p in ok),
        )
    return _finish(cfg, outdir, "diversity", summary, runs)


def cmd_ensemble_eval(cfg: ExperimentConfig, outdir: str, jobs: int = 1) -> CommandResult:
    """MAP baseline against the sample ensemble on held-out data."""
    _require_classifier(cfg, "ensemble-eval")
    runs = _execute([(run_classifier, cfg, s, outdir, "ensemble-eval", True) for s in cfg.seeds], jobs)
    rows = []
    for r in runs:
        if r["status"] != "ok":
            continue
        rows.append([r["seed"], "map", r["map"]["accuracy"], r["map"]["nll"]])
        rows.append([r["seed"], "ensemble", r["ensemble"]["accuracy"], r["ensemble"]["nll"]])
    os.makedirs(os.path.join(outdir, "ensemble-eval"), exist_ok=True)
    write_csv(os.path.join(outdir, "ensemble-eval", "results.csv"), ["seed", "method", "accuracy", "nll"], rows)
    ok = [r for r in runs if r["status"] == "ok"]
    summary = {
        "members": cfg.ensemble.members,
        "files": ["results.csv"],
        "jensen_holds": all(r["ensemble"]["nll"] <= r["mean_member_nll"] + JENSEN_SLACK for r in ok),
    }
    if ok:
        summary.update(
            mean_map_accuracy=float(np.mean([r["map"]["accuracy"] for r in ok])),
            mean_ensemble_accuracy=float(np.mean([r["ensemble"]["accuracy"] for r in ok])),
            mean_map_nll=float(np.mean([r["map"]["nll"] for r in ok])),
            mean_ensemble_nll=float(np.mean([r["ensemble"]["nll"] for r in ok])),
        )
    return _finish(cfg, outdir, "ensemble-eval", summary, runs)


COMMANDS: dict[str, Callable[..., CommandResult]] = {
    "toy2d": cmd_toy2d,
    "ablate": cmd_ablate,
    "diversity": cmd_diversity,
    "ensemble-eval": cmd_ensemble_eval,
}
