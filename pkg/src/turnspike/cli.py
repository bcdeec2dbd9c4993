"""Command-line front end.

Exit codes: 0 success, 2 configuration problems, 3 data problems,
4 numerical failures inside a simulation or fit.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import dataset, metrics, model as model_mod, objects as objects_mod, snn
from .errors import ConfigError, DataError, NumericalError
from .experiment import ExperimentConfig, run_experiment
from .metrics import TAU_GRID, EarlyCurve


def _global_options(sub):
    sub.add_argument("--seed", type=int, default=None,
                     help="override the config seed")
    sub.add_argument("--config", default=None,
                     help="experiment config JSON; defaults apply when omitted")
    sub.add_argument("--out-dir", default=".", help="directory for artifacts")
    sub.add_argument("--threads", type=int, default=1,
                     help="worker processes for fold-parallel commands")


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    return cfg


def _corpus_from_args(args, config):
    if getattr(args, "corpus", None):
        return dataset.load_corpus(args.corpus, getattr(args, "objects", None))
    if config.corpus_path:
        return dataset.load_corpus(config.corpus_path, config.objects_path)
    return dataset.generate_synthetic(config.synthetic, config.seed)


def _cmd_gen_data(args):
    config = _load_config(args)
    corpus = dataset.generate_synthetic(config.synthetic, config.seed)
    os.makedirs(args.out_dir, exist_ok=True)
    corpus_path = os.path.join(args.out_dir, "corpus.jsonl")
    dataset.save_corpus(corpus, corpus_path)
    print(f"wrote {len(corpus.events)} events to {corpus_path}")
    if corpus.object_sequences:
        objects_path = os.path.join(args.out_dir, "objects.csv")
        dataset.save_object_sequences(corpus.object_sequences, objects_path)
        print(f"wrote {len(corpus.object_sequences)} trials to {objects_path}")
    return 0


def _cmd_train(args):
    config = _load_config(args)
    corpus = _corpus_from_args(args, config)
    trained = model_mod.train(corpus, config.model, seed=config.seed)
    os.makedirs(args.out_dir, exist_ok=True)
    path = os.path.join(args.out_dir, "model.json")
    trained.save(path)
    print(f"trained on {len(corpus.events)} events; model saved to {path}")
    return 0


def _cmd_predict(args):
    config = _load_config(args)
    trained = model_mod.TtsnetModel.load(args.model)
    corpus = _corpus_from_args(args, config)
    if not 0.0 < args.tau <= 1.0:
        raise ConfigError(f"tau must lie in (0, 1], got {args.tau}")
    obs = [e.observation for e in corpus.events]
    labels, scores = trained.predict_batch(obs, args.tau)
    os.makedirs(args.out_dir, exist_ok=True)
    path = os.path.join(args.out_dir, "predictions.csv")
    lines = ["event_id,tau,label,pred,score"]
    for e, pred, score in zip(corpus.events, labels, scores):
        lines.append(f"{e.event_id},{args.tau!r},{e.label},{pred},{float(score)!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"wrote {len(corpus.events)} predictions to {path}")
    return 0


def _cmd_eval(args):
    config = _load_config(args)
    summary = run_experiment(config, args.out_dir, threads=args.threads)
    for name, entry in summary["methods"].items():
        auc = entry["auc"]
        auc_text = f"{auc:.3f}" if auc is not None else "n/a"
        print(f"{name}: F1(1.0) mean {entry['f1_mean'][-1]:.3f}, AUC {auc_text}")
    if summary["objects"]:
        print(f"objects: hmm {summary['objects']['hmm']['formatted']}, "
              f"bigram {summary['objects']['bigram']['formatted']}")
    print(f"artifacts in {args.out_dir}")
    return 0


def _read_prediction_csv(path):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != "event_id,tau,label,pred,score":
        raise DataError(f"{path}: expected header event_id,tau,label,pred,score")
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 5:
            raise DataError(f"{path}: malformed row {ln!r}")
        rows.append((float(parts[1]), int(parts[2]), int(parts[3])))
    return rows


def _cmd_curve(args):
    per_file = []
    for path in args.predictions:
        rows = _read_prediction_csv(path)
        taus = sorted({r[0] for r in rows})
        values = []
        for tau in taus:
            sub = [r for r in rows if r[0] == tau]
            tp = sum(1 for _, lab, pred in sub if pred == 1 and lab == 1)
            fp = sum(1 for _, lab, pred in sub if pred == 1 and lab == 0)
            fn = sum(1 for _, lab, pred in sub if pred == 0 and lab == 1)
            values.append(metrics.f1(tp, fp, fn))
        per_file.append((tuple(taus), values))
    grid = per_file[0][0]
    if any(t != grid for t, _ in per_file):
        raise DataError("prediction files cover different tau grids")
    mat = np.array([v for _, v in per_file])
    mean, std = mat.mean(axis=0), mat.std(axis=0)
    os.makedirs(args.out_dir, exist_ok=True)
    path = os.path.join(args.out_dir, "curve.csv")
    lines = ["tau,f1_mean,f1_std"]
    for t, m, s in zip(grid, mean, std):
        lines.append(f"{t!r},{float(m)!r},{float(s)!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"wrote {path}")
    if len(grid) == len(TAU_GRID) and np.allclose(grid, TAU_GRID, atol=1e-9):
        print(f"AUC {EarlyCurve(grid, tuple(mean)).auc:.3f}")
    return 0


def _cmd_objects(args):
    from .experiment import _objects_fold  # shares the fold logic with eval
    config = _load_config(args)
    corpus = _corpus_from_args(args, config)
    if not corpus.object_sequences:
        raise DataError("corpus has no object sequences")
    n_objects = max(max(s.object_ids) for s in corpus.object_sequences)
    subjects = sorted({s.subject_id for s in corpus.object_sequences})
    if len(subjects) < 2:
        raise DataError("object evaluation needs >= 2 subjects")
    os.makedirs(args.out_dir, exist_ok=True)
    per_fold = {"hmm": [], "bigram": []}
    for i, subject in enumerate(subjects):
        train = [s for s in corpus.object_sequences if s.subject_id != subject]
        test = [s for s in corpus.object_sequences if s.subject_id == subject]
        seed = int(np.random.SeedSequence([config.seed, i]).generate_state(5)[4])
        fold = _objects_fold(train, test, config, n_objects, seed)
        objects_mod.save_object_predictions(
            os.path.join(args.out_dir, f"objects_{subject}.csv"), fold["rows"])
        for name in per_fold:
            per_fold[name].append(fold["weighted_f1"][name])
    summary = {"n_objects": n_objects, "subjects": subjects}
    for name, vals in per_fold.items():
        summary[name] = {"weighted_f1_per_fold": vals,
                         "median": metrics.median_low(vals),
                         "mad": metrics.mad(vals),
                         "formatted": metrics.format_median_mad(vals)}
        print(f"{name}: weighted F1 {summary[name]['formatted']}")
    with open(os.path.join(args.out_dir, "objects_summary.json"), "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return 0


def _cmd_dump_raster(args):
    config = _load_config(args)
    trained = model_mod.TtsnetModel.load(args.model)
    corpus = _corpus_from_args(args, config)
    matches = [e for e in corpus.events if e.event_id == args.event_id]
    if not matches:
        raise DataError(f"event {args.event_id!r} not found in corpus")
    if not 0 <= args.channel < len(trained.channel_names):
        raise ConfigError(f"channel must lie in [0, {len(trained.channel_names)})")
    maps, sim_ms = trained.firing_maps_batch([matches[0].observation], args.tau)
    os.makedirs(args.out_dir, exist_ok=True)
    safe = args.event_id.replace("/", "_")
    path = os.path.join(args.out_dir, f"raster_{safe}_ch{args.channel}.csv")
    snn.save_raster(maps[0][args.channel], path)
    print(f"simulated {sim_ms} ms; raster written to {path}")
    return 0


def _read_labels(path):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if lines and not lines[0].lstrip("-").isdigit():
        lines = lines[1:]  # tolerate a header line
    if not lines:
        raise DataError(f"{path}: no labels found")
    try:
        return np.array([int(ln) for ln in lines])
    except ValueError as exc:
        raise DataError(f"{path}: labels must be integers ({exc})") from exc


def _cmd_kappa(args):
    a = _read_labels(args.rater_a)
    b = _read_labels(args.rater_b)
    if a.size != b.size:
        raise DataError(f"label counts differ: {a.size} vs {b.size}")
    print(f"kappa {metrics.cohen_kappa(a, b):.4f}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="turnspike",
        description="Spiking-network early turn prediction: data, training, evaluation.")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("gen-data", help="write a synthetic corpus")
    _global_options(p)
    p.set_defaults(func=_cmd_gen_data)

    p = subs.add_parser("train", help="train the spiking pipeline on a corpus")
    _global_options(p)
    p.add_argument("--corpus", default=None, help="corpus JSONL (default: synthetic)")
    p.add_argument("--objects", default=None, help="object sequence CSV")
    p.set_defaults(func=_cmd_train)

    p = subs.add_parser("predict", help="score a corpus with a saved model")
    _global_options(p)
    p.add_argument("--model", required=True, help="model JSON from `train`")
    p.add_argument("--corpus", default=None, help="corpus JSONL (default: synthetic)")
    p.add_argument("--objects", default=None)
    p.add_argument("--tau", type=float, default=1.0, help="observed fraction in (0, 1]")
    p.set_defaults(func=_cmd_predict)

    p = subs.add_parser("eval", help="run the leave-one-subject-out benchmark")
    _global_options(p)
    p.set_defaults(func=_cmd_eval)

    p = subs.add_parser("curve", help="aggregate prediction CSVs into an F1 curve")
    _global_options(p)
    p.add_argument("--predictions", nargs="+", required=True,
                   help="one or more per-fold prediction CSVs")
    p.set_defaults(func=_cmd_curve)

    p = subs.add_parser("objects", help="leave-one-subject-out next-object benchmark")
    _global_options(p)
    p.add_argument("--corpus", default=None)
    p.add_argument("--objects", dest="objects", default=None,
                   help="object sequence CSV paired with --corpus")
    p.set_defaults(func=_cmd_objects)

    p = subs.add_parser("dump-raster", help="simulate one event and save its spikes")
    _global_options(p)
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", default=None)
    p.add_argument("--objects", default=None)
    p.add_argument("--event-id", required=True)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--channel", type=int, default=0)
    p.set_defaults(func=_cmd_dump_raster)

    p = subs.add_parser("kappa", help="inter-rater agreement of two label files")
    _global_options(p)
    p.add_argument("rater_a", help="file with one integer label per line")
    p.add_argument("rater_b")
    p.set_defaults(func=_cmd_kappa)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
