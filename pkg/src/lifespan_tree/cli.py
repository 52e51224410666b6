"""Command-line frontend: simulate, fit, build, classify, evaluate, export.

Every subcommand writes ``manifest-<command>.json`` next to its outputs, listing
the arguments, seed, library versions and a SHA-256 for every input and
output file.  Failures print one JSON object on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from . import plotting
from .baseline import EcocModel, train_ecoc, with_age
from .cohort import load_subjects, partition, save_subjects
from .embed import EmbeddingModel, UmapParams, fit_umap
from .errors import LifespanTreeError
from .evaluation import (
    MERGE_RULES,
    RankedPrediction,
    bacc_metric,
    confusion_matrix,
    merge_classes,
    metrics_report,
    paired_bootstrap_pvalue,
    read_predictions_csv,
    write_confusion_csv,
    write_predictions_csv,
)
from .normalize import NormalizationModel, fit_normalization, normalize_records
from .pipeline import CONTROL, TREE_PRESETS, to_ranked
from .sampling import SAMPLES_PER_YEAR, training_pool
from .simulate import CohortSpec, cognitive_like_spec, desk_spec, generate_cohort
from .structures import read_manifest
from .tree import DISTANCE_RULES, LifespanTree, build_tree, classify_records, cut_tree, write_cut_csv
from .trajectory import LifespanModelSet, divergence_from_control, fit_lifespan_models

log = logging.getLogger("lifespan_tree")

NORM_FILE = "normalization.json"
TRAJ_FILE = "trajectories.json"
EMBED_FILE = "embedding.npz"
TREE_FILE = "tree.json"
BASELINE_FILE = "baseline.json"
RUN_MANIFEST = "manifest-{command}.json"
DIVERGENCE_AGES = (60, 70, 80, 90)
MERGE_PRESETS = {
    "cognitive": ({lab: ("CN" if lab == "CN" else "patient") for lab in TREE_PRESETS["cognitive"]},
                  "patient"),
    "motor": ({lab: ("PD" if lab == "PD" else "atypical") for lab in TREE_PRESETS["motor"]},
              "atypical"),
}


class CliError(LifespanTreeError):
    code = "usage"


# ---------------------------------------------------------------- helpers


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions():
    out = {"python": platform.python_version()}
    for pkg in ("lifespan-tree", "numpy", "scipy", "numba", "matplotlib"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


class Run:
    """Collects inputs and outputs of one subcommand for the run manifest."""

    def __init__(self, args, out_dir):
        self.args = args
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.inputs = []
        self.outputs = []

    def input(self, path):
        path = Path(path)
        if not path.exists():
            raise CliError(f"input file not found: {path}")
        self.inputs.append(path)
        return path

    def output(self, name):
        path = self.out_dir / name
        self.outputs.append(path)
        return path

    def write_manifest(self):
        skip = {"func", "verbose"}
        doc = {
            "command": self.args.command,
            "arguments": {k: (str(v) if isinstance(v, Path) else v)
                          for k, v in sorted(vars(self.args).items()) if k not in skip},
            "seed": getattr(self.args, "seed", None),
            "versions": _versions(),
            "inputs": [{"path": str(p), "sha256": _sha256(p)} for p in self.inputs],
            "outputs": [{"path": str(p), "sha256": _sha256(p)} for p in self.outputs],
        }
        path = self.out_dir / RUN_MANIFEST.format(command=self.args.command)
        path.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
        return path


def _labels(args):
    if args.tree in TREE_PRESETS:
        return TREE_PRESETS[args.tree]
    if not args.labels:
        raise CliError("--tree custom needs --labels")
    return tuple(args.labels.split(","))


def _structures(args, run=None):
    if args.manifest is None:
        return read_manifest()
    path = run.input(args.manifest) if run else Path(args.manifest)
    return read_manifest(path)


def _load(args, run, path=None):
    names = _structures(args, run)
    return load_subjects(run.input(path or args.subjects), names), names


def _model_dir(args):
    if args.model_dir is None:
        raise CliError("--model-dir is required")
    return Path(args.model_dir)


# ---------------------------------------------------------------- commands


def cmd_simulate(args):
    run = Run(args, args.out)
    if args.spec:
        spec = CohortSpec.load(run.input(args.spec))
        spec = spec.with_counts(args.n_subjects, seed=args.seed)
    elif args.preset == "cognitive":
        spec = cognitive_like_spec(args.separation, args.n_subjects or 150, seed=args.seed)
    else:
        spec = desk_spec(separation=args.separation, n_subjects=args.n_subjects or 150, seed=args.seed)
    if args.ages:
        lo, hi = args.ages
        spec = spec.with_counts(age_ranges={p.name: (lo, hi) for p in spec.populations})
    records = generate_cohort(spec, id_prefix=args.id_prefix)
    spec.save(run.output("cohort_spec.json"))
    save_subjects(run.output("subjects.csv"), records, spec.structure_names)
    return run


def cmd_fit_norm(args):
    out = _model_dir(args)
    run = Run(args, out)
    records, names = _load(args, run)
    labels = _labels(args)
    part = partition([r for r in records if r.diagnosis in labels + (CONTROL,)],
                     tuple(dict.fromkeys(labels + (CONTROL,))), CONTROL)
    model = fit_normalization(part[CONTROL], names)
    model.save(run.output(NORM_FILE))
    return run


def cmd_fit_trajectories(args):
    out = _model_dir(args)
    run = Run(args, out)
    records, _ = _load(args, run)
    norm = NormalizationModel.load(run.input(out / NORM_FILE))
    labels = _labels(args)
    all_labels = tuple(dict.fromkeys(labels + (CONTROL,)))
    part = partition([r for r in records if r.diagnosis in all_labels], all_labels, CONTROL)
    models = fit_lifespan_models(part, norm, branches=labels)
    models.save(run.output(TRAJ_FILE))
    return run


def cmd_build_tree(args):
    out = _model_dir(args)
    run = Run(args, out)
    models = LifespanModelSet.load(run.input(out / TRAJ_FILE))
    samples = training_pool(models, args.samples_per_year, args.seed)
    params = UmapParams.for_populations(len(models.branches), seed=args.seed)
    embedding = fit_umap(samples, params)
    tree = build_tree(models, embedding, samples)
    embedding.save(run.output(EMBED_FILE))
    tree.save(run.output(TREE_FILE))
    if args.with_baseline:
        if not args.subjects:
            raise CliError("--with-baseline needs --subjects (training cohort)")
        records, _ = _load(args, run)
        norm = NormalizationModel.load(run.input(out / NORM_FILE))
        records = [r for r in records if r.diagnosis in models.branches]
        Z, _ = normalize_records(records, norm)
        if args.baseline_age:
            Z = with_age(Z, [r.age for r in records])
        ecoc = train_ecoc(Z, [r.diagnosis for r in records], label_order=sorted(models.branches))
        ecoc.save(run.output(BASELINE_FILE))
    return run


def _baseline_predictions(ecoc, Z, records):
    scores = ecoc.scores(Z)
    preds = []
    for i, r in enumerate(records):
        order = sorted(range(len(ecoc.labels)), key=lambda j: (-scores[i, j], j))
        preds.append(RankedPrediction(r.subject_id, r.diagnosis, tuple(ecoc.labels[j] for j in order),
                                      tuple(float(scores[i, j]) for j in order)))
    return preds


def cmd_classify(args):
    out = _model_dir(args)
    run = Run(args, Path(args.out) if args.out else out)
    records, _ = _load(args, run)
    norm = NormalizationModel.load(run.input(out / NORM_FILE))
    tree = LifespanTree.load(run.input(out / TREE_FILE))
    embedding = EmbeddingModel.load(run.input(out / EMBED_FILE))
    known = [r for r in records if r.diagnosis in tree.order]
    if len(known) < len(records):
        log.warning("%d subject(s) with labels outside the tree skipped", len(records) - len(known))
    results = classify_records(tree, norm, embedding, known, args.distance_rule)
    write_predictions_csv(run.output("predictions.csv"), [to_ranked(res, r.diagnosis)
                                                          for res, r in zip(results, known)])
    if args.with_baseline:
        ecoc = EcocModel.load(run.input(out / BASELINE_FILE))
        Z, _ = normalize_records(known, norm)
        if ecoc.mean.size == Z.shape[1] + 1:
            Z = with_age(Z, [r.age for r in known])
        write_predictions_csv(run.output("predictions_baseline.csv"),
                              _baseline_predictions(ecoc, Z, known))
    return run


def cmd_evaluate(args):
    pred_path = Path(args.predictions)
    run = Run(args, Path(args.out) if args.out else pred_path.parent)
    preds = read_predictions_csv(run.input(pred_path))
    labels = tuple(sorted(preds[0].ranking)) if preds else ()
    report = metrics_report(preds, labels, ks=range(1, args.topk + 1), n_rep=args.n_bootstrap,
                            seed=args.seed)
    merge = MERGE_PRESETS.get(args.tree)
    if merge and set(labels) == set(merge[0]):
        mr = merge_classes(preds, merge[0], positive=merge[1], rule=args.merge_rule, labels=labels)
        report["merged"] = {"rule": args.merge_rule, "positive": mr.positive,
                            "labels": list(mr.superlabels), "confusion": mr.confusion.tolist(),
                            "sensitivity": mr.sen, "specificity": mr.spe, "bacc": mr.bacc}
    if args.with_baseline:
        base_path = Path(args.baseline_predictions or pred_path.with_name("predictions_baseline.csv"))
        base = read_predictions_csv(run.input(base_path))
        report["baseline"] = metrics_report(base, labels, ks=range(1, args.topk + 1),
                                            n_rep=args.n_bootstrap, seed=args.seed)
        report["paired_pvalue"] = {
            f"top{k}_bacc": paired_bootstrap_pvalue(preds, base, bacc_metric(k), args.n_bootstrap,
                                                    args.seed, labels)
            for k in range(1, args.topk + 1)
        }
    run.output("metrics.json").write_text(json.dumps(report, indent=1) + "\n", encoding="utf-8")
    cm = confusion_matrix(preds, labels)
    write_confusion_csv(run.output("confusion.csv"), cm, labels)
    plotting.plot_confusion(cm, labels, run.output("confusion.png"))
    print(f"top-1 BACC {report['topk']['1']['bacc']:.4f}")
    return run


def cmd_export(args):
    out = _model_dir(args)
    run = Run(args, Path(args.out) if args.out else out / "export")
    tree = LifespanTree.load(run.input(out / TREE_FILE))
    models = LifespanModelSet.load(run.input(out / TRAJ_FILE))
    tree.save(run.output(TREE_FILE))
    plotting.plot_tree_3d(tree, run.output("tree_3d.png"))
    if args.cut_age is not None:
        test_points = []
        if args.subjects:
            records, _ = _load(args, run)
            norm = NormalizationModel.load(run.input(out / NORM_FILE))
            embedding = EmbeddingModel.load(run.input(out / EMBED_FILE))
            near = [r for r in records if abs(r.age - args.cut_age) <= args.window
                    and r.diagnosis in tree.order]
            res = classify_records(tree, norm, embedding, near, args.distance_rule)
            test_points = [(r.diagnosis, r.age, *c.xy) for r, c in zip(near, res)]
        rows = cut_tree(tree, args.cut_age, args.window, test_points)
        stem = f"cut_{args.cut_age:g}"
        write_cut_csv(run.output(f"{stem}.csv"), rows)
        plotting.plot_cut_tree(rows, tree.order, run.output(f"{stem}.svg"), args.cut_age)
    names = _structures(args, run)
    pathologies = [p for p in models.branches if p != models.control]
    values = []
    with run.output("divergence.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["population", "age", *names])
        for pop in pathologies:
            for age in DIVERGENCE_AGES:
                d = divergence_from_control(models, pop, float(age))
                values.append(d)
                w.writerow([pop, age, *[repr(float(v)) for v in d]])
    if values:
        plotting.plot_divergence(np.vstack(values), pathologies, DIVERGENCE_AGES,
                                 run.output("divergence.png"), list(names))
    return run


# ---------------------------------------------------------------- parser


def build_parser():
    p = argparse.ArgumentParser(prog="lifespan-tree", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, subjects=False, model_dir=True, tree=True):
        sp.add_argument("--manifest", help="structure manifest (one name per line)")
        if subjects:
            sp.add_argument("--subjects", required=subjects == "required", help="subjects CSV")
        if model_dir:
            sp.add_argument("--model-dir", required=True)
        if tree:
            sp.add_argument("--tree", choices=("cognitive", "motor", "custom"), default="cognitive")
            sp.add_argument("--labels", help="comma-separated branch labels for --tree custom")

    sp = sub.add_parser("simulate", help="generate a synthetic cohort")
    common(sp, model_dir=False, tree=False)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--spec", help="cohort spec JSON (overrides --preset)")
    sp.add_argument("--preset", choices=("desk", "cognitive"), default="desk")
    sp.add_argument("--separation", type=float, default=2.0)
    sp.add_argument("--n-subjects", type=int)
    sp.add_argument("--ages", type=float, nargs=2, metavar=("LO", "HI"))
    sp.add_argument("--id-prefix", default="sim")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("fit-norm", help="fit ICV/sex/z-score normalization on controls")
    common(sp, subjects="required")
    sp.set_defaults(func=cmd_fit_norm)

    sp = sub.add_parser("fit-trajectories", help="fit per-structure lifespan trajectories")
    common(sp, subjects="required")
    sp.set_defaults(func=cmd_fit_trajectories)

    sp = sub.add_parser("build-tree", help="sample, embed and assemble the tree")
    common(sp, subjects=True, tree=False)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--samples-per-year", type=int, default=SAMPLES_PER_YEAR)
    sp.add_argument("--with-baseline", action="store_true", help="also train the SVM baseline")
    sp.add_argument("--baseline-age", action="store_true", help="append age to baseline features")
    sp.set_defaults(func=cmd_build_tree)

    sp = sub.add_parser("classify", help="rank branches for each subject")
    common(sp, subjects="required", tree=False)
    sp.add_argument("--distance-rule", choices=DISTANCE_RULES, default="polyline")
    sp.add_argument("--with-baseline", action="store_true")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_classify)

    sp = sub.add_parser("evaluate", help="metrics, bootstrap intervals and baseline comparison")
    common(sp, model_dir=False)
    sp.add_argument("--predictions", required=True)
    sp.add_argument("--baseline-predictions")
    sp.add_argument("--with-baseline", action="store_true")
    sp.add_argument("--merge-rule", choices=MERGE_RULES, default="argmax")
    sp.add_argument("--topk", type=int, default=3)
    sp.add_argument("--n-bootstrap", type=int, default=10_000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("export", help="tree JSON, cut-tree CSV/SVG, divergence CSV")
    common(sp, subjects=True, tree=False)
    sp.add_argument("--cut-age", type=float)
    sp.add_argument("--window", type=float, default=2.0)
    sp.add_argument("--distance-rule", choices=DISTANCE_RULES, default="polyline")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_export)
    return p


def _fail(code, message, **extra):
    doc = {"error": code, "message": message, **{k: v for k, v in extra.items() if v is not None}}
    print(json.dumps(doc), file=sys.stderr)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run = args.func(args)
        run.write_manifest()
    except LifespanTreeError as exc:
        _fail(exc.code, str(exc), row=getattr(exc, "row", None),
              file=getattr(args, "subjects", None))
        return 1
    except OSError as exc:
        _fail("io", str(exc), file=getattr(exc, "filename", None))
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
