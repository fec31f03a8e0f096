"""End-to-end run: differences -> directions -> traversal -> metrics -> report.

Output directory layout (``<cls>`` is the sanitised target-class label)::

    <out>/<cls>/diffs.cdlc, unit.cdlc, normalize.json
    <out>/<cls>/directions.cdlc (+ .json sidecar), model.json
    <out>/<cls>/latents/c<j>_a<alpha>.cdlc        manipulated test latents
    <out>/probs/baseline.tsv                       baseline probabilities
    <out>/probs/<cls>/K<K>/c<j>_a<alpha>.tsv       manipulated probabilities
    <out>/report.json, report.md

``probs/`` has the layout a ``tables`` scorer reads, so probabilities from an
external model can be dropped in place of the built-in linear scorer.
"""

from __future__ import annotations

import contextlib
import hashlib
import json
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .concept_metrics import DEFAULT_DELTA, DEFAULT_Q, ablation_record, effect_table
from .distribution_metrics import frechet_distance, gaussian_stats
from .errors import ConceptDirsError, ConfigError, DataError, EmptyManifest, IoFailure, NumericError, PipelineStageError, TooFewPoints
from .latent_diff import DEFAULT_EPSILON_NORM, UnitMatrix, difference_vectors, unit_normalize
from .report import AblationRecord, ClassSummary, ConceptRecord, EvalReport, emit_report
from .sphere_cluster import (
    DEFAULT_K_RANGE,
    DEFAULT_MAX_ITER,
    DEFAULT_RESTARTS,
    DEFAULT_TOL,
    extract_directions,
    select_k,
    spherical_kmeans,
)
from .tcav import DEFAULT_RUNS, tcav_runs
from .tensor_io import (
    file_sha256,
    load_latents,
    load_pair_manifest,
    read_direction_set,
    read_json,
    read_prob_table,
    write_direction_set,
    write_json,
    write_latent_matrix,
    write_prob_table,
)
from .traversal import AlphaSweep, LinearSoftmaxScorer, apply_direction, best_alpha, success_rate

SEED_ENV = "CONCEPTDIRS_SEED"
_PATH_FIELDS = ("factual", "counterfactual", "manifest", "test_latents", "features_dir", "external_metrics")


def safe_label(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", label) or "_"


def alpha_tag(alpha: float) -> str:
    return f"{alpha:g}"


@dataclass
class PipelineConfig:
    factual: Path
    counterfactual: Path
    manifest: Path
    test_latents: Path
    scorer: dict
    alphas: tuple[float, ...]
    output_dir: Path
    k: dict = field(default_factory=dict)
    k_range: tuple[int, int] = DEFAULT_K_RANGE
    ablation_k: tuple[int, int] | None = None
    classes: list | None = None
    delta: float = DEFAULT_DELTA
    q: float = DEFAULT_Q
    seed: int = 0
    restarts: int = DEFAULT_RESTARTS
    max_iter: int = DEFAULT_MAX_ITER
    tol: float = DEFAULT_TOL
    epsilon_norm: float = DEFAULT_EPSILON_NORM
    features_dir: Path | None = None
    external_metrics: Path | None = None
    tcav_runs: int = DEFAULT_RUNS
    tcav_layers: list | None = None
    workers: int = 1
    raw: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def from_dict(cls, data: dict, base_dir=".") -> "PipelineConfig":
        base = Path(base_dir)
        known = {f.name for f in fields(cls)} - {"raw"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        required = {"factual", "counterfactual", "manifest", "test_latents", "scorer", "alphas", "output_dir"}
        missing = required - set(data)
        if missing:
            raise ConfigError(f"missing config keys: {sorted(missing)}")
        values = dict(data)
        values.setdefault("seed", int(os.environ.get(SEED_ENV, "0")))
        for key in _PATH_FIELDS + ("output_dir",):
            if values.get(key) is not None:
                values[key] = base / values[key]
        scorer = dict(values["scorer"])
        for key in ("weights", "dir"):
            if key in scorer:
                scorer[key] = base / scorer[key]
        values["scorer"] = scorer
        try:
            values["alphas"] = AlphaSweep(values["alphas"]).values
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"alphas: {exc}") from exc
        for key in ("k_range", "ablation_k"):
            if values.get(key) is not None:
                values[key] = tuple(int(v) for v in values[key])
        cfg = cls(**values, raw=dict(data))
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path, overrides: dict | None = None) -> "PipelineConfig":
        data = read_json(path)
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        data.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_dict(data, Path(path).parent)

    def validate(self):
        if not self.delta > 0:
            raise ConfigError("delta must be > 0")
        if not 0 < self.q <= 1:
            raise ConfigError("q must lie in (0, 1]")
        if self.restarts < 1 or self.max_iter < 1 or self.workers < 1:
            raise ConfigError("restarts, max_iter and workers must be >= 1")
        if len(self.k_range) != 2 or self.k_range[0] < 2 or self.k_range[1] < self.k_range[0]:
            raise ConfigError(f"invalid k_range {self.k_range}")
        if self.ablation_k is not None and (len(self.ablation_k) != 2 or self.ablation_k[0] < 1 or self.ablation_k[1] < self.ablation_k[0]):
            raise ConfigError(f"invalid ablation_k {self.ablation_k}")
        if any(int(v) < 1 for v in self.k.values()):
            raise ConfigError("per-class k must be >= 1")
        kind = self.scorer.get("type")
        if kind == "linear":
            if "weights" not in self.scorer:
                raise ConfigError("linear scorer needs 'weights'")
        elif kind == "tables":
            if "dir" not in self.scorer:
                raise ConfigError("tables scorer needs 'dir'")
        else:
            raise ConfigError(f"scorer type must be 'linear' or 'tables', got {kind!r}")
        paths = [self.factual, self.counterfactual, self.manifest, self.test_latents]
        paths += [p for p in (self.features_dir, self.external_metrics, self.scorer.get("weights"), self.scorer.get("dir")) if p is not None]
        for p in paths:
            if not Path(p).exists():
                raise ConfigError(f"input not found: {p}")

    def fingerprint(self) -> dict:
        """Config content that determines results (no output location, no worker count)."""
        return {k: v for k, v in self.raw.items() if k not in ("output_dir", "workers")} | {"seed": self.seed}


@contextlib.contextmanager
def stage(name):
    try:
        yield
    except PipelineStageError:
        raise
    except ConceptDirsError as exc:
        raise PipelineStageError(name, exc) from exc
    except (ValueError, TypeError) as exc:
        raise PipelineStageError(name, ConfigError(str(exc))) from exc
    except np.linalg.LinAlgError as exc:
        raise PipelineStageError(name, NumericError(str(exc))) from exc
    except OSError as exc:
        raise PipelineStageError(name, IoFailure(getattr(exc, "filename", "?"), exc)) from exc


@contextlib.contextmanager
def output_lock(directory: Path):
    directory.mkdir(parents=True, exist_ok=True)
    lock = directory / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigError(f"output directory {directory} is locked by another run ({lock})") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


class _Scoring:
    """Produces probability tables, from the built-in scorer or from files."""

    def __init__(self, config: PipelineConfig, test_latents, out: Path):
        self.config = config
        self.test = test_latents
        self.out = out / "probs"
        spec = config.scorer
        if spec["type"] == "linear":
            self.model = LinearSoftmaxScorer.from_latent(load_latents(spec["weights"]), spec.get("bias"))
            self.baseline = self.model(test_latents)
            write_prob_table(self.baseline, self.out / "baseline.tsv")
        else:
            self.model = None
            self.source = Path(spec["dir"])
            self.baseline = read_prob_table(self.source / "baseline.tsv")
            if self.baseline.ids != test_latents.ids:
                raise DataError("baseline.tsv ids do not match the test latents")

    def table(self, cls, K, j, direction, alpha, keep_latents=None):
        rel = Path(safe_label(cls)) / f"K{K}" / f"c{j}_a{alpha_tag(alpha)}.tsv"
        if self.model is None:
            return read_prob_table(self.source / rel)
        moved = apply_direction(self.test, direction, alpha)
        if keep_latents is not None:
            write_latent_matrix(moved, keep_latents / f"c{j}_a{alpha_tag(alpha)}.cdlc")
        table = self.model(moved)
        write_prob_table(table, self.out / rel)
        return table


def _pmap(fn, items, workers):
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _sweep(scoring, cls, K, directions, alphas, workers, keep_latents=None):
    """SR and tables for every (concept, alpha); returns {j: [(alpha, sr, table), ...]}."""
    jobs = [(j, a) for j in range(directions.k) for a in alphas]

    def run(job):
        j, a = job
        table = scoring.table(cls, K, j, directions.directions[j], a, keep_latents)
        return j, a, success_rate(scoring.baseline, table, cls), table

    out = {j: [] for j in range(directions.k)}
    for j, a, sr, table in _pmap(run, jobs, workers):
        out[j].append((a, sr, table))
    return out


def _external(config):
    if config.external_metrics is None:
        return {}
    data = read_json(config.external_metrics)
    if not isinstance(data, dict):
        raise ConfigError("external metrics must be a JSON object keyed by class label")
    return data


def _per_alpha(value, alpha):
    if isinstance(value, dict):
        return value.get(alpha_tag(alpha))
    return value


def _tcav_for(config, cls, j):
    base = config.features_dir / safe_label(cls) / f"c{j}" / "tcav"
    if not base.is_dir():
        return None
    layers = config.tcav_layers or sorted(p.name for p in base.iterdir() if p.is_dir())
    results = []
    for layer in layers:
        d = base / layer
        res = tcav_runs(
            load_latents(d / "concept.cdlc"),
            load_latents(d / "negatives.cdlc"),
            load_latents(d / "grads.cdlc"),
            runs=config.tcav_runs,
            seed=config.seed,
            workers=config.workers,
        )
        results.append({"layer": layer, "mean": res.mean, "std": res.std})
    return results


def _fid_for(config, cls, j, alpha, real_stats):
    if real_stats is None:
        return None
    path = config.features_dir / safe_label(cls) / f"c{j}_a{alpha_tag(alpha)}.cdlc"
    if not path.exists():
        return None
    return frechet_distance(real_stats, gaussian_stats(load_latents(path)))


def _input_hashes(config):
    hashes = {}
    for key in ("factual", "counterfactual", "manifest", "test_latents", "external_metrics"):
        p = getattr(config, key)
        if p is not None:
            hashes[key] = file_sha256(p)
    if config.scorer["type"] == "linear":
        hashes["scorer_weights"] = file_sha256(config.scorer["weights"])
    return hashes


def run_pipeline(config: PipelineConfig) -> EvalReport:
    out = Path(config.output_dir)
    with output_lock(out):
        return _run(config, out)


def _run(config: PipelineConfig, out: Path) -> EvalReport:
    with stage("load"):
        factual = load_latents(config.factual)
        counterfactual = load_latents(config.counterfactual)
        manifest = load_pair_manifest(config.manifest)
        test = load_latents(config.test_latents)
        scoring = _Scoring(config, test, out)
        external = _external(config)
        real_stats = None
        if config.features_dir is not None and (config.features_dir / "real.cdlc").exists():
            real_stats = gaussian_stats(load_latents(config.features_dir / "real.cdlc"))

    with stage("diff"):
        if len(manifest) == 0:
            raise EmptyManifest(f"manifest {config.manifest} contains no pairs")
        manifest.validate_against(factual, counterfactual)
    targets = config.classes or manifest.targets()
    report = EvalReport()

    for cls in targets:
        cdir = out / safe_label(cls)
        with stage("diff"):
            sub = manifest.for_target(cls)
            if len(sub) == 0:
                raise EmptyManifest(f"manifest {config.manifest} has no pairs targeting {cls!r}")
            diffs = difference_vectors(factual, counterfactual, sub)
            write_latent_matrix(diffs, cdir / "diffs.cdlc")

        with stage("normalize"):
            normed, skipped = unit_normalize(diffs, config.epsilon_norm)
            stored = normed.to_latent()
            write_latent_matrix(stored, cdir / "unit.cdlc")
            write_json(cdir / "normalize.json", {
                "epsilon_norm": config.epsilon_norm,
                "skipped_ids": skipped,
                "source_norms": dict(zip(normed.ids, normed.source_norms.tolist())),
            })
            # cluster what was written, so standalone subcommands reproduce this run
            unit = UnitMatrix.from_latent(stored)

        with stage("cluster"):
            kwargs = dict(seed=config.seed, restarts=config.restarts, max_iter=config.max_iter, tol=config.tol)
            if cls in config.k:
                k = int(config.k[cls])
                model = spherical_kmeans(unit, k, workers=config.workers, **kwargs)
                models, k_source = {k: model}, "fixed"
            else:
                lo, hi = config.k_range
                hi = min(hi, unit.n - 1)
                if hi < lo:
                    raise TooFewPoints(f"{unit.n} unit vectors for {cls!r}; k_range {config.k_range} needs more")
                k, models = select_k(unit, lo, hi, workers=config.workers, **kwargs)
                model, k_source = models[k], "silhouette"
            directions = extract_directions(model, cls, k_source=k_source, k_configured=config.k.get(cls))
            write_direction_set(directions, cdir / "directions.cdlc")
            directions = read_direction_set(cdir / "directions.cdlc")
            write_json(cdir / "model.json", model.to_dict())
            report.classes.append(ClassSummary(
                class_label=cls,
                k=k,
                k_source=k_source,
                n_pairs=len(sub),
                skipped_ids=skipped,
                silhouettes={str(kk): m.silhouette for kk, m in sorted(models.items())},
                objective=model.objective,
            ))

        with stage("apply"):
            sweep = _sweep(scoring, cls, k, directions, config.alphas, config.workers, keep_latents=cdir / "latents")

        with stage("evaluate"):
            ext = external.get(cls, {})
            for j in range(directions.k):
                chosen, _ = best_alpha([(a, sr) for a, sr, _ in sweep[j]])
                info = ext.get(str(j), {})
                tcav = _tcav_for(config, cls, j) if config.features_dir is not None else None
                if tcav is None and info.get("tcav") is not None:
                    tcav = info["tcav"]
                for a, sr, _ in sweep[j]:
                    fid = _fid_for(config, cls, j, a, real_stats)
                    if fid is None:
                        fid = _per_alpha(info.get("fid"), a)
                    report.concepts.append(ConceptRecord(
                        class_label=cls,
                        concept=j,
                        alpha=a,
                        sr=sr,
                        selected=a == chosen,
                        name=info.get("name"),
                        lpips=_per_alpha(info.get("lpips"), a),
                        fid=fid,
                        tcav=tcav if a == chosen else None,
                    ))

        if config.ablation_k is not None:
            with stage("ablate"):
                for K in range(config.ablation_k[0], config.ablation_k[1] + 1):
                    m = models.get(K) or spherical_kmeans(unit, K, workers=config.workers, **kwargs)
                    ds = extract_directions(m, cls)
                    per = sweep if K == k else _sweep(scoring, cls, K, ds, config.alphas, config.workers)
                    tables = []
                    for j in range(ds.k):
                        chosen, _ = best_alpha([(a, sr) for a, sr, _ in per[j]])
                        tables.append(next(t for a, _, t in per[j] if a == chosen))
                    rec = ablation_record(K, ds, effect_table(scoring.baseline, tables, cls), config.delta, config.q)
                    report.ablation.append(AblationRecord(class_label=cls, selected=K == k, **rec))

    config_json = json.dumps(config.fingerprint(), sort_keys=True, default=str)
    report.provenance = {
        "package_version": __version__,
        "numpy_version": np.__version__,
        "config_sha256": hashlib.sha256(config_json.encode()).hexdigest(),
        "inputs_sha256": _input_hashes(config),
        "seed": config.seed,
        "restarts": config.restarts,
        "max_iter": config.max_iter,
        "tol": config.tol,
        "epsilon_norm": config.epsilon_norm,
        "delta": config.delta,
        "q": config.q,
        "alphas": list(config.alphas),
        "k_configured": dict(config.k),
        "k_range": list(config.k_range),
        "ablation_k": list(config.ablation_k) if config.ablation_k else None,
        "scorer": config.scorer["type"],
        "tcav_runs": config.tcav_runs,
        "tcav_negatives": "uniform subsample without replacement, size of concept set",
    }
    with stage("report"):
        emit_report(report, "json", out / "report.json")
        emit_report(report, "markdown", out / "report.md")
    return report
