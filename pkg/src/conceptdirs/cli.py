"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .concept_metrics import DEFAULT_DELTA, DEFAULT_Q, ablation_record, best_of_k, coverage, effect_table, redundancy, top_q_mean
from .distribution_metrics import frechet_distance, gaussian_stats
from .errors import ConceptDirsError, ConfigError
from .latent_diff import DEFAULT_EPSILON_NORM, UnitMatrix, difference_vectors, unit_normalize
from .pipeline import SEED_ENV, PipelineConfig, alpha_tag, run_pipeline
from .report import AblationRecord, EvalReport, emit_report
from .sphere_cluster import ABLATION_K_RANGE, DEFAULT_K_RANGE, DEFAULT_MAX_ITER, DEFAULT_RESTARTS, DEFAULT_TOL, extract_directions, select_k, spherical_kmeans
from .synth_oracle import PlantedSpec, generate_planted, write_synthetic_workspace
from .tcav import DEFAULT_RUNS, tcav_runs
from .tensor_io import (
    dumps_json,
    load_latents,
    load_pair_manifest,
    read_direction_set,
    read_prob_table,
    write_direction_set,
    write_json,
    write_latent_matrix,
    write_text,
)
from .traversal import AlphaSweep, LinearSoftmaxScorer, apply_direction, best_alpha, success_rate

log = logging.getLogger("conceptdirs")


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV}={raw!r} is not an integer") from None


def _alphas(text) -> AlphaSweep:
    try:
        return AlphaSweep.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _emit(obj, out):
    text = dumps_json(obj)
    if out:
        write_text(out, text)
    else:
        sys.stdout.write(text)


def _clustering_args(p):
    p.add_argument("--seed", type=int, default=None, help=f"default: ${SEED_ENV} or 0")
    p.add_argument("--restarts", type=int, default=DEFAULT_RESTARTS)
    p.add_argument("--max-iter", type=int, default=DEFAULT_MAX_ITER)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--workers", type=int, default=1)


def cmd_diff(args):
    factual = load_latents(args.factual)
    counterfactual = load_latents(args.counterfactual)
    manifest = load_pair_manifest(args.manifest, factual, counterfactual)
    if args.target:
        manifest = manifest.for_target(args.target)
    diffs = difference_vectors(factual, counterfactual, manifest)
    write_latent_matrix(diffs, args.out)
    log.info("wrote %d difference vectors (d=%d) to %s", diffs.n, diffs.d, args.out)


def cmd_normalize(args):
    unit, skipped = unit_normalize(load_latents(args.diffs), args.epsilon)
    write_latent_matrix(unit.to_latent(), args.out)
    write_json(Path(str(args.out) + ".json"), {
        "epsilon_norm": args.epsilon,
        "skipped_ids": skipped,
        "source_norms": dict(zip(unit.ids, unit.source_norms.tolist())),
    })
    log.info("kept %d rows, skipped %d", unit.n, len(skipped))


def cmd_cluster(args):
    points = UnitMatrix.from_latent(load_latents(args.points))
    model = spherical_kmeans(points, args.k, args.seed, args.restarts, args.max_iter, args.tol, args.workers)
    write_direction_set(extract_directions(model, args.class_label), args.out)
    if args.model:
        write_json(args.model, model.to_dict())
    _emit({"k": model.k, "objective": model.objective, "silhouette": model.silhouette}, None)


def cmd_select_k(args):
    points = UnitMatrix.from_latent(load_latents(args.points))
    k_star, models = select_k(points, args.k_min, args.k_max, args.seed, args.restarts, args.max_iter, args.tol, args.workers)
    write_direction_set(extract_directions(models[k_star], args.class_label, k_source="silhouette"), args.out)
    summary = {"k_star": k_star, "silhouettes": {str(k): m.silhouette for k, m in models.items()}}
    if args.models:
        write_json(args.models, {str(k): m.to_dict() for k, m in models.items()})
    _emit(summary, None)


def cmd_apply(args):
    ds = read_direction_set(args.directions)
    latents = load_latents(args.latents)
    out = Path(args.out_dir)
    for j in range(ds.k):
        for a in args.alpha_list:
            write_latent_matrix(apply_direction(latents, ds.directions[j], a), out / f"c{j}_a{alpha_tag(a)}.cdlc")
    log.info("wrote %d manipulated matrices to %s", ds.k * len(args.alpha_list), out)


def cmd_evaluate(args):
    result = {}
    if args.fid:
        real, gen = args.fid
        result["fid"] = frechet_distance(gaussian_stats(load_latents(real)), gaussian_stats(load_latents(gen)))
    if args.tcav:
        if not (args.concept and args.negatives and args.grads):
            raise ConfigError("--tcav needs --concept, --negatives and --grads")
        res = tcav_runs(load_latents(args.concept), load_latents(args.negatives), load_latents(args.grads), runs=args.runs, seed=args.seed)
        result["tcav"] = {"mean": res.mean, "std": res.std, "per_run": res.per_run, "runs": args.runs, "seed": args.seed}
    if args.manipulated:
        if not (args.baseline and args.target):
            raise ConfigError("success rate / effects need --baseline and --target")
        base = read_prob_table(args.baseline)
        tables = [read_prob_table(p) for p in args.manipulated]
        result["sr"] = [success_rate(base, t, args.target) for t in tables]
        t = effect_table(base, tables, args.target)
        result["effects"] = {
            "coverage": coverage(t, args.delta),
            "best_of_k": best_of_k(t),
            "top_q_mean": top_q_mean(t, args.q),
            "delta": args.delta,
            "q": args.q,
        }
    if args.directions:
        ds = read_direction_set(args.directions)
        result["redundancy"] = redundancy(ds) if ds.k >= 2 else None
    if not result:
        raise ConfigError("evaluate: nothing to do; pass --fid, --tcav, --manipulated or --directions")
    _emit(result, args.out)


def cmd_ablate(args):
    points = UnitMatrix.from_latent(load_latents(args.points))
    latents = load_latents(args.latents)
    scorer = LinearSoftmaxScorer.from_latent(load_latents(args.scorer_weights))
    baseline = scorer(latents)
    report = EvalReport()
    k_star = None
    if args.selected_k is None and args.k_min >= 2 and args.k_max <= points.n - 1:
        k_star, _ = select_k(points, args.k_min, args.k_max, args.seed, args.restarts, args.max_iter, args.tol, args.workers)
    selected = args.selected_k or k_star
    for K in range(args.k_min, args.k_max + 1):
        model = spherical_kmeans(points, K, args.seed, args.restarts, args.max_iter, args.tol, args.workers)
        ds = extract_directions(model, args.target)
        tables = []
        for j in range(ds.k):
            sweep = [(a, scorer(apply_direction(latents, ds.directions[j], a))) for a in args.alpha_list]
            chosen, _ = best_alpha([(a, success_rate(baseline, t, args.target)) for a, t in sweep])
            tables.append(next(t for a, t in sweep if a == chosen))
        rec = ablation_record(K, ds, effect_table(baseline, tables, args.target), args.delta, args.q)
        report.ablation.append(AblationRecord(class_label=args.target, selected=K == selected, **rec))
    out = Path(args.out_dir)
    emit_report(report, "json", out / "ablation.json")
    emit_report(report, "markdown", out / "ablation.md")
    _emit(report.to_dict()["ablation"], None)


def cmd_synth(args):
    mixing = tuple(float(x) for x in args.mixing.split(",")) if args.mixing else None
    spec = PlantedSpec(args.k_true, args.dim, args.n, args.noise, args.seed, mixing)
    if args.workspace:
        path = write_synthetic_workspace(args.workspace, spec)
        log.info("wrote synthetic pipeline inputs; run with: conceptdirs run --config %s", path)
        return
    if not args.out:
        raise ConfigError("synth needs --out (or --workspace)")
    points, truth, labels = generate_planted(spec)
    write_latent_matrix(points.to_latent(), args.out)
    if args.truth:
        write_direction_set(truth, args.truth)
    if args.labels:
        write_text(args.labels, "".join(f"{sid}\t{int(l)}\n" for sid, l in zip(points.ids, labels)))


def cmd_run(args):
    overrides = {"seed": args.seed, "workers": args.workers, "restarts": args.restarts}
    if args.alpha_list is not None:
        overrides["alphas"] = list(args.alpha_list)
    if args.out_dir is not None:
        overrides["output_dir"] = str(Path(args.out_dir).resolve())
    config = PipelineConfig.from_file(args.config, overrides)
    report = run_pipeline(config)
    log.info("report written to %s", Path(config.output_dir) / "report.json")
    summary = [{"class": c.class_label, "k": c.k, "k_source": c.k_source} for c in report.classes]
    _emit(summary, None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="conceptdirs", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("diff", help="counterfactual minus factual latents, per manifest pair")
    p.add_argument("--factual", required=True)
    p.add_argument("--counterfactual", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--target", help="keep only pairs with this target class")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_diff)

    p = sub.add_parser("normalize", help="project difference vectors onto the unit sphere")
    p.add_argument("--diffs", required=True)
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON_NORM)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_normalize)

    p = sub.add_parser("cluster", help="spherical k-means with a fixed k")
    p.add_argument("--points", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--class-label", default="target")
    p.add_argument("--out", required=True, help="direction set file")
    p.add_argument("--model", help="optional JSON dump of the cluster model")
    _clustering_args(p)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("select-k", help="choose k by the highest cosine silhouette")
    p.add_argument("--points", required=True)
    p.add_argument("--k-min", type=int, default=DEFAULT_K_RANGE[0])
    p.add_argument("--k-max", type=int, default=DEFAULT_K_RANGE[1])
    p.add_argument("--class-label", default="target")
    p.add_argument("--out", required=True, help="direction set file for the selected k")
    p.add_argument("--models", help="optional JSON dump of every fitted model")
    _clustering_args(p)
    p.set_defaults(func=cmd_select_k)

    p = sub.add_parser("apply", help="move latents along each direction for each alpha")
    p.add_argument("--directions", required=True)
    p.add_argument("--latents", required=True)
    p.add_argument("--alpha-list", type=_alphas, required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("evaluate", help="FID, TCAV, success rate and effect metrics from files")
    p.add_argument("--fid", nargs=2, metavar=("REAL", "GEN"))
    p.add_argument("--tcav", action="store_true")
    p.add_argument("--concept")
    p.add_argument("--negatives")
    p.add_argument("--grads")
    p.add_argument("--runs", type=int, default=DEFAULT_RUNS)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--baseline", help="probability table of the unmodified reconstructions")
    p.add_argument("--manipulated", nargs="+", help="one probability table per concept")
    p.add_argument("--target")
    p.add_argument("--delta", type=float, default=DEFAULT_DELTA)
    p.add_argument("--q", type=float, default=DEFAULT_Q)
    p.add_argument("--directions", help="direction set for the redundancy index")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="redundancy/coverage/influence table over a range of K")
    p.add_argument("--points", required=True)
    p.add_argument("--latents", required=True, help="test latents")
    p.add_argument("--scorer-weights", required=True, help="linear scorer weights; row ids are class labels")
    p.add_argument("--target", required=True)
    p.add_argument("--alpha-list", type=_alphas, required=True)
    p.add_argument("--k-min", type=int, default=ABLATION_K_RANGE[0])
    p.add_argument("--k-max", type=int, default=ABLATION_K_RANGE[1])
    p.add_argument("--selected-k", type=int, help="K to mark as selected (default: silhouette choice)")
    p.add_argument("--delta", type=float, default=DEFAULT_DELTA)
    p.add_argument("--q", type=float, default=DEFAULT_Q)
    p.add_argument("--out-dir", required=True)
    _clustering_args(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("synth", help="planted-direction synthetic data")
    p.add_argument("--k-true", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--noise", type=float, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--mixing", help="comma-separated cluster proportions")
    p.add_argument("--out", help="unit points file")
    p.add_argument("--truth", help="planted direction set file")
    p.add_argument("--labels", help="TSV of generating labels")
    p.add_argument("--workspace", help="write a complete pipeline input directory instead")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="full pipeline from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--alpha-list", type=_alphas)
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        if getattr(args, "seed", None) is None and args.command != "run":
            args.seed = _default_seed()
        args.func(args)
    except ConceptDirsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ConfigError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
