"""Command line interface.

Exit codes: 0 on success, 2 for invalid input, 3 for I/O failures.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ValidationError
from .lesions import normalize_measure_id
from .pipeline import (DEFAULT_THRESHOLD_GRID, IDEAL, RANDOM, PipelineConfig,
                       binarize, ensemble_mean, evaluate_patient, run_pipeline,
                       tune_threshold)
from .retention import average_curves, tau_fractions, uniform_grid
from .stats import bootstrap_se, wilcoxon_one_sided
from .synth import SynthSpec, synth_generate
from .voxel import compute_voxel_uncertainties
from .volume import load_manifest, save_array

EXIT_OK, EXIT_VALIDATION, EXIT_IO = 0, 2, 3

# PipelineConfig fields settable from the command line, keyed by argparse dest
_CONFIG_FLAGS = {
    "manifest": "manifest", "threshold": "ensemble_threshold",
    "member_thresholds": "member_thresholds", "tau": "tau", "gamma": "gamma",
    "connectivity": "connectivity", "grid": "grid", "seed": "seed",
    "fn_mode": "fn_mode", "voxel_measures": "voxel_measures",
    "lesion_measures": "lesion_measures", "sample_size": "bootstrap_sample_size",
    "reps": "bootstrap_reps", "skip_empty": "skip_empty", "threads": "threads",
}


def _floats(s):
    return [float(x) for x in s.split(",") if x.strip()]


def _ints(s):
    return tuple(int(x) for x in s.split(",") if x.strip())


def _csv_list(s):
    return [x.strip() for x in s.split(",") if x.strip()]


def build_config(args, **overrides):
    """Defaults, then ``--config FILE``, then flags given on the command line."""
    d = {}
    if getattr(args, "config", None):
        with open(args.config) as f:
            d.update(json.load(f))
    for dest, key in _CONFIG_FLAGS.items():
        v = getattr(args, dest, None)
        if v is not None and v is not False:
            d[key] = v
    d.update(overrides)
    return PipelineConfig.from_dict(d)


def _add_eval_flags(p, lesions=True):
    p.add_argument("--manifest", help="dataset manifest JSON")
    p.add_argument("--threshold", type=float, help="ensemble binarization threshold (default 0.3)")
    p.add_argument("--member-thresholds", type=_floats,
                   help="comma-separated per-member thresholds for ddu-true (tuned if omitted)")
    if lesions:
        p.add_argument("--gamma", type=float, help="IoU threshold for a detected lesion (default 0.25)")
        p.add_argument("--connectivity", type=int, choices=(6, 18, 26))
        p.add_argument("--fn-mode", choices=("zero-overlap", "unmatched"))


def _member_thresholds(config, samples):
    if config.member_thresholds is not None:
        return config.member_thresholds
    return [tune_threshold(samples, k) for k in range(samples[0].k)]


def cmd_synth(args):
    kw = {}
    for name in ("patients", "members", "noise", "smooth", "blob_miss_prob",
                 "calibration_spread"):
        v = getattr(args, name)
        if v is not None:
            kw[name] = v
    for name in ("shape", "lesion_count", "blob_count"):
        v = getattr(args, name)
        if v is not None:
            kw[name] = v
    for name in ("lesion_radius", "blob_radius"):
        v = getattr(args, name)
        if v is not None:
            kw[name] = tuple(v)
    if args.miss_prob is not None:
        kw["miss_prob"] = args.miss_prob[0] if len(args.miss_prob) == 1 else args.miss_prob
    spec = SynthSpec(**kw)
    manifest = synth_generate(spec, args.seed or 0, args.out)
    out = Path(args.out)
    (out / "synth_spec.json").write_text(
        json.dumps({"seed": args.seed or 0, "spec": spec.to_json()}, indent=2) + "\n")
    print(f"wrote {len(manifest.samples)} patients to {out / 'manifest.json'}")


def cmd_uncertainty(args):
    samples = load_manifest(args.manifest, args.threads or 1)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for s in samples:
        maps = compute_voxel_uncertainties(s, args.measures)
        for name in maps:
            save_array(maps[name], out / f"{s.patient_id}_{name}.npy")
    print(f"wrote uncertainty maps for {len(samples)} patients to {out}")


def cmd_segment(args):
    config = build_config(args)
    samples = load_manifest(config.manifest, config.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for s in samples:
        mean = ensemble_mean(s.member_probs)
        save_array(mean, out / f"{s.patient_id}_mean.npy")
        save_array(binarize(mean, config.ensemble_threshold), out / f"{s.patient_id}_seg.npy")
        if config.member_thresholds is not None:
            for k, (m, t) in enumerate(zip(s.member_probs, config.member_thresholds)):
                save_array(binarize(m, t), out / f"{s.patient_id}_m{k}_seg.npy")
    print(f"wrote segmentations for {len(samples)} patients to {out}")


def cmd_lesions(args):
    config = build_config(args, voxel_measures=[], lesion_measures=args.measures)
    samples = load_manifest(config.manifest, config.threads)
    thresholds = None
    if "ddu-true" in config.lesion_measures:
        thresholds = _member_thresholds(config, samples)
    doc = {"gamma": config.gamma, "connectivity": config.connectivity,
           "fn_mode": config.fn_mode, "ensemble_threshold": config.ensemble_threshold,
           "member_thresholds": thresholds, "measures": config.lesion_measures,
           "patients": []}
    for s in samples:
        r = evaluate_patient(s, config, thresholds)
        cls = r.classification
        lesions = []
        for i, label in enumerate(cls.labels):
            lesions.append({"label": label, "size": r.lesion_sizes[i], "status": cls.status[i],
                            "best_iou": cls.best_iou[i],
                            "scores": {m: float(v[i]) for m, v in r.scores.items()}})
        doc["patients"].append({"patient_id": s.patient_id, "tp": cls.tp, "fp": cls.fp,
                                "fn": cls.fn, "lesions": lesions})
    Path(args.out).write_text(json.dumps(doc, indent=2) + "\n")
    print(f"wrote lesion scores for {len(samples)} patients to {args.out}")


def cmd_rc(args):
    measure = normalize_measure_id(args.measure)
    if args.scale == "dsc":
        if measure in (IDEAL, RANDOM):
            config = build_config(args, voxel_measures=[], lesion_measures=[])
        else:
            config = build_config(args, voxel_measures=[measure], lesion_measures=[])
        grid = tau_fractions(config.tau)
    else:
        lm = [] if measure in (IDEAL, RANDOM) else [measure]
        config = build_config(args, voxel_measures=[], lesion_measures=lm)
        grid = uniform_grid(config.grid)
    samples = load_manifest(config.manifest, config.threads)
    thresholds = _member_thresholds(config, samples) if "ddu-true" in config.lesion_measures else None
    curves = {}
    for s in samples:
        r = evaluate_patient(s, config, thresholds)
        if args.scale == "f1" and config.skip_empty and r.n_lesions == 0:
            continue
        curves[s.patient_id] = (r.dsc_curves if args.scale == "dsc" else r.f1_curves)[measure]
    if not curves:
        raise ValidationError("no patients left to build curves from")
    bundle = average_curves(curves, grid)
    out = Path(args.out)
    with open(out, "w") as f:
        f.write("patient_id,fraction,value\n")
        for x, y in zip(bundle.mean_curve.fractions, bundle.mean_curve.values):
            f.write(f"MEAN,{x:.12g},{y:.12g}\n")
        for pid, c in bundle.curves.items():
            for x, y in zip(c.fractions, c.values):
                f.write(f"{pid},{x:.12g},{y:.12g}\n")
    companion = out.with_suffix(".json")
    companion.write_text(json.dumps({
        "scale": args.scale, "measure": measure, "patients": list(bundle.curves),
        "aucs": {measure: [c.auc for c in bundle.curves.values()]},
        "mean_auc": bundle.mean_auc}, indent=2) + "\n")
    print(f"{args.scale} {measure}: mean AUC {bundle.mean_auc:.6f} over {len(curves)} patients")


def _load_aucs(path):
    with open(path) as f:
        doc = json.load(f)
    if "aucs" not in doc:
        raise ValidationError(f"{path}: no 'aucs' mapping of measure -> per-patient values")
    return {normalize_measure_id(k): v for k, v in doc["aucs"].items()}


def cmd_stats(args):
    aucs = _load_aucs(args.inp)
    if args.test == "bootstrap":
        names = [normalize_measure_id(m) for m in args.measure] if args.measure else list(aucs)
        rows = []
        for m in names:
            if m not in aucs:
                raise ValidationError(f"measure {m!r} not in {args.inp}")
            size = args.sample_size or min(50, len(aucs[m]))
            r = bootstrap_se(aucs[m], size, args.reps, args.seed or 0)
            rows.append({"measure": m, "mean": r.mean, "se": r.standard_error,
                         "sample_size": r.sample_size, "repetitions": r.repetitions,
                         "seed": r.seed})
        print(json.dumps(rows, indent=2))
    else:
        first, second = normalize_measure_id(args.first), normalize_measure_id(args.second)
        for m in (first, second):
            if m not in aucs:
                raise ValidationError(f"measure {m!r} not in {args.inp}")
        r = wilcoxon_one_sided(aucs[first], aucs[second], args.exact_max_n)
        print(json.dumps({"first": first, "second": second, "statistic": r.statistic,
                          "p_value": r.p_value, "n_effective": r.n_effective,
                          "alternative": r.alternative, "method": r.method}, indent=2))


def cmd_tune(args):
    samples = load_manifest(args.manifest, args.threads or 1)
    grid = _floats(args.grid) if args.grid else DEFAULT_THRESHOLD_GRID
    if args.target == "ensemble":
        result = {"ensemble": tune_threshold(samples, "ensemble", grid)}
    elif args.target == "members":
        result = {"members": [tune_threshold(samples, k, grid) for k in range(samples[0].k)]}
    else:
        k = int(args.target)
        result = {f"member_{k}": tune_threshold(samples, k, grid)}
    print(json.dumps(result))


def cmd_report(args):
    from .report import emit_report, read_curves_csv, read_report_json
    src = Path(args.inp)
    report = read_report_json(src / "report.json" if src.is_dir() else src)
    curves_path = Path(args.curves) if args.curves else (src if src.is_dir() else src.parent) / "curves.csv"
    bundles = read_curves_csv(curves_path)
    emit_report(report, bundles, args.out, figures=not args.no_figures)
    print(f"wrote {report.scale} report to {args.out}")


def cmd_run(args):
    from .report import emit_pipeline
    config = build_config(args)
    result = run_pipeline(config)
    emit_pipeline(result, args.out, figures=not args.no_figures)
    for rep in (result.dsc_report, result.f1_report):
        print(f"{rep.scale.upper()}-AUC")
        for r in rep.rows:
            print(f"  {r.measure:<14s} {r.mean_auc:.4f} +- {r.se:.4f}")
    print(f"outputs in {args.out}")


def _global_flags(default):
    # subcommands repeat the global flags with SUPPRESS so they do not reset
    # values given before the subcommand name
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=default, help="base random seed (default 0)")
    p.add_argument("--threads", type=int, default=default, help="patients processed in parallel")
    p.add_argument("--config", default=default, help="JSON file with pipeline configuration")
    p.add_argument("-v", "--verbose", action="store_true", default=default or False)
    return p


def build_parser():
    common = _global_flags(argparse.SUPPRESS)
    parser = argparse.ArgumentParser(prog="segunc", parents=[_global_flags(None)],
                                     description="Uncertainty measures and error retention curves "
                                                 "for segmentation ensembles.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic ensemble dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--patients", type=int)
    p.add_argument("--shape", type=_ints, help="e.g. 48,48,48")
    p.add_argument("--members", type=int)
    p.add_argument("--lesion-count", type=_ints, help="min,max")
    p.add_argument("--lesion-radius", type=_floats, help="min,max")
    p.add_argument("--blob-count", type=_ints, help="min,max spurious blobs")
    p.add_argument("--blob-radius", type=_floats, help="min,max")
    p.add_argument("--blob-miss-prob", type=float)
    p.add_argument("--miss-prob", type=_floats, help="one value, or one per member")
    p.add_argument("--noise", type=float)
    p.add_argument("--smooth", type=float)
    p.add_argument("--calibration-spread", type=float)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("uncertainty", parents=[common], help="write voxel uncertainty maps")
    p.add_argument("--manifest", required=True)
    p.add_argument("--measures", default="eoe,nc,exe,mi,epkl,rmi")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_uncertainty)

    p = sub.add_parser("segment", parents=[common], help="write ensemble mean and binary masks")
    _add_eval_flags(p, lesions=False)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("lesions", parents=[common], help="classify and score predicted lesions")
    _add_eval_flags(p)
    p.add_argument("--measures", type=_csv_list, help="lesion measures, e.g. mean-eoe,ddu,ddu-true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_lesions)

    p = sub.add_parser("rc", parents=[common], help="retention curves for one measure")
    p.add_argument("scale", choices=("dsc", "f1"))
    _add_eval_flags(p)
    p.add_argument("--measure", required=True)
    p.add_argument("--tau", type=float)
    p.add_argument("--grid", type=int)
    p.add_argument("--skip-empty", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rc)

    p = sub.add_parser("stats", parents=[common], help="bootstrap SE or paired Wilcoxon test")
    p.add_argument("test", choices=("bootstrap", "wilcoxon"))
    p.add_argument("--in", dest="inp", required=True, help="JSON with an 'aucs' mapping")
    p.add_argument("--measure", action="append")
    p.add_argument("--sample-size", type=int)
    p.add_argument("--reps", type=int, default=10_000)
    p.add_argument("--first")
    p.add_argument("--second")
    p.add_argument("--exact-max-n", type=int, default=20)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("tune-threshold", parents=[common], help="pick a threshold maximizing mean DSC")
    p.add_argument("--manifest", required=True)
    p.add_argument("--target", default="ensemble", help="'ensemble', 'members' or a member index")
    p.add_argument("--grid", help="comma-separated thresholds (default 0.05..0.95)")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("report", parents=[common], help="re-render a report directory")
    p.add_argument("--in", dest="inp", required=True, help="report.json or its directory")
    p.add_argument("--curves", help="curves.csv (default: next to report.json)")
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("run", parents=[common], help="full evaluation pipeline")
    _add_eval_flags(p)
    p.add_argument("--tau", type=float)
    p.add_argument("--grid", type=int)
    p.add_argument("--voxel-measures", type=_csv_list)
    p.add_argument("--lesion-measures", type=_csv_list)
    p.add_argument("--sample-size", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--skip-empty", action="store_true")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "stats" and args.test == "wilcoxon" and not (args.first and args.second):
        parser.error("stats wilcoxon needs --first and --second")
    try:
        args.func(args)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except json.JSONDecodeError as e:
        print(f"error: invalid JSON: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
