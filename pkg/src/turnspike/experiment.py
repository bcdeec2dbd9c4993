"""Leave-one-subject-out evaluation of the early Give/Keep predictors.

One fold per subject: every method trains on the remaining subjects and is
scored on the held-out one across the early-horizon grid. Folds are
independent jobs, so they can run in worker processes; all randomness is
derived from (experiment seed, fold index), which makes the written
artifacts byte-identical regardless of thread count or completion order.
"""

from __future__ import annotations

import dataclasses
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import baselines, metrics, model as model_mod, objects as objects_mod, snn
from .dataset import Corpus, SyntheticConfig, generate_synthetic, load_corpus
from .errors import ConfigError, DataError
from .metrics import TAU_GRID, EarlyCurve, f1
from .model import TtsnetConfig

KNOWN_METHODS = ("ttsnet", "hmm", "ishii", "png", "always_give")
SUMMARY_VERSION = 1


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a full evaluation run needs, loadable from one JSON file."""

    seed: int = 0
    corpus_path: str = None
    objects_path: str = None
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    model: TtsnetConfig = field(default_factory=TtsnetConfig)
    methods: tuple = ("ttsnet", "always_give")
    taus: tuple = TAU_GRID
    png_templates: int = 20
    png_j_eps: float = 0.9
    hmm_num_features: int = 10
    hmm_states: int = 5
    hmm_restarts: int = 5
    ishii_rff_dim: int = 500
    ishii_c_grid: tuple = (1.0, 10.0, 100.0)
    ishii_gamma_grid: tuple = (0.1, 0.01, 0.001)
    objects_enabled: bool = True
    objects_order: int = 3
    objects_states: int = 5
    objects_restarts: int = 10
    dump_rasters: bool = False

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "taus", tuple(float(t) for t in self.taus))
        object.__setattr__(self, "ishii_c_grid", tuple(self.ishii_c_grid))
        object.__setattr__(self, "ishii_gamma_grid", tuple(self.ishii_gamma_grid))
        for m in self.methods:
            if m not in KNOWN_METHODS:
                raise ConfigError(f"methods: unknown method {m!r}, "
                                  f"expected one of {KNOWN_METHODS}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("methods: duplicate entries")
        if not self.methods:
            raise ConfigError("methods: need at least one method")
        if any(not 0.0 < t <= 1.0 for t in self.taus):
            raise ConfigError("taus: horizons must lie in (0, 1]")
        if self.png_templates < 1:
            raise ConfigError("png_templates: must be >= 1")

    def to_dict(self):
        out = dataclasses.asdict(self)
        out["synthetic"] = self.synthetic.to_dict()
        out["model"] = self.model.to_dict()
        for key in ("methods", "taus", "ishii_c_grid", "ishii_gamma_grid"):
            out[key] = list(out[key])
        out["synthetic"]["motif_channels"] = list(self.synthetic.motif_channels)
        return out

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("experiment config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"{unknown[0]}: unknown field")
        kwargs = dict(d)
        if "synthetic" in kwargs:
            kwargs["synthetic"] = SyntheticConfig.from_dict(kwargs["synthetic"])
        if "model" in kwargs:
            try:
                kwargs["model"] = TtsnetConfig.from_dict(kwargs["model"])
            except ConfigError as exc:
                raise ConfigError(f"model.{exc}") from exc
        return cls(**kwargs)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            try:
                payload = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(payload)


def reference_config():
    """The pinned benchmark: 12 subjects x 180 events, seed 7, early motif onset.

    Feature count, training presentations and template counts are trimmed so
    the twelve folds finish on a small CPU budget without touching the
    benchmark's fixed corpus shape.
    """
    return ExperimentConfig(
        seed=7,
        synthetic=SyntheticConfig(n_subjects=12, events_per_subject=180,
                                  motif_start_frac=0.0, offset_scale=0.75,
                                  trials_per_subject=10),
        model=TtsnetConfig(num_features=5, presentations=240,
                           norm_taus=(0.1, 0.3, 0.6, 1.0)),
        methods=("ttsnet", "png", "always_give"),
        png_templates=3,
        objects_enabled=True,
    )


def load_experiment_corpus(config: ExperimentConfig) -> Corpus:
    if config.corpus_path is not None:
        return load_corpus(config.corpus_path, config.objects_path)
    return generate_synthetic(config.synthetic, config.seed)


def loso_split(corpus: Corpus):
    """(held_out_subject, train, test) triples, one per subject, sorted."""
    subjects = corpus.subjects
    if len(subjects) < 2:
        raise DataError(f"leave-one-subject-out needs >= 2 subjects, found {len(subjects)}")
    return [(s,) + corpus.split_by_subject(s) for s in subjects]


def f1_curve(predict, observations, labels, taus=TAU_GRID):
    """Early-prediction curve of one predictor on one test set.

    predict(observations, tau) -> (pred_labels, scores). Returns the curve
    plus the per-tau prediction rows for the fold's CSV.
    """
    truth = np.asarray(labels, dtype=np.int64)
    values, rows = [], []
    for tau in taus:
        preds, scores = predict(observations, tau)
        preds = np.asarray(preds, dtype=np.int64)
        tp = int(np.sum((preds == 1) & (truth == 1)))
        fp = int(np.sum((preds == 1) & (truth == 0)))
        fn = int(np.sum((preds == 0) & (truth == 1)))
        values.append(f1(tp, fp, fn))
        rows.append((tau, preds, np.asarray(scores, dtype=float)))
    return EarlyCurve(taus=tuple(taus), f1_values=tuple(values)), rows


def _fold_seeds(seed: int, fold_index: int, n: int):
    return [int(s) for s in np.random.SeedSequence([seed, fold_index]).generate_state(n)]


def _objects_fold(train_seqs, test_seqs, config: ExperimentConfig, n_objects, seed):
    train_hist = []
    for seq in train_seqs:
        train_hist.extend(objects_mod.trigram_windows(seq.object_ids, config.objects_order))
    predictor = objects_mod.train_object_models(
        train_hist, n_objects=n_objects, order=config.objects_order,
        n_states=config.objects_states, restarts=config.objects_restarts, seed=seed)
    bigram = objects_mod.train_bigram(
        [h for h in train_hist if h.next_id is not None], n_objects)

    rows = []
    pairs = {"hmm": [], "bigram": []}
    for seq in test_seqs:
        for k, hist in enumerate(objects_mod.trigram_windows(seq.object_ids,
                                                             config.objects_order)):
            if hist.next_id is None:
                continue
            probs, pred = objects_mod.predict_next(predictor, hist.window)
            _, big_pred = bigram.predict(hist.window)
            pairs["hmm"].append((hist.next_id, pred))
            pairs["bigram"].append((hist.next_id, big_pred))
            rows.append({"trial_id": seq.trial_id, "step": k + 2,
                         "true_object": hist.next_id, "pred_object": pred,
                         "probs": probs})

    scores = {}
    for name, tp_pairs in pairs.items():
        truth = np.array([p[0] for p in tp_pairs])
        preds = np.array([p[1] for p in tp_pairs])
        confusions, sizes = [], []
        for c in range(1, n_objects + 1):
            tp = int(np.sum((preds == c) & (truth == c)))
            fp = int(np.sum((preds == c) & (truth != c)))
            fn = int(np.sum((preds != c) & (truth == c)))
            confusions.append((tp, fp, fn))
            sizes.append(int(np.sum(truth == c)))
        scores[name] = metrics.weighted_f1(confusions, sizes)
    return {"rows": rows, "weighted_f1": scores}


def _run_fold(args):
    """One LOSO fold; the only entry point executed in worker processes."""
    fold_index, subject, config, corpus, n_objects = args
    train, test = corpus.split_by_subject(subject)
    seeds = _fold_seeds(config.seed, fold_index, 6)
    test_obs = [e.observation for e in test.events]
    test_labels = [e.label for e in test.events]
    test_ids = [e.event_id for e in test.events]

    out = {"fold_index": fold_index, "subject": subject, "event_ids": test_ids,
           "labels": test_labels, "methods": {}, "objects": None, "raster": None}

    needs_model = "ttsnet" in config.methods or "png" in config.methods
    trained = model_mod.train(train, config.model, seed=seeds[0]) if needs_model else None

    if needs_model:
        bank = None
        if "png" in config.methods:
            bank = baselines.png_knn_train(train, trained, config.png_templates,
                                           config.png_j_eps, seed=seeds[1])
        rows = {"ttsnet": [], "png": []}
        for tau in config.taus:
            maps, _ = trained.firing_maps_batch(test_obs, tau)
            if "ttsnet" in config.methods:
                preds, scores = trained.predict_from_maps(maps, tau)
                rows["ttsnet"].append((tau, preds, scores))
            if bank is not None:
                scored = [baselines.png_score_maps(bank, m) for m in maps]
                preds = np.array([s[0] for s in scored], dtype=np.int64)
                scores = np.array([s[1] for s in scored])
                rows["png"].append((tau, preds, scores))
            if config.dump_rasters and tau == 1.0 and out["raster"] is None and maps:
                out["raster"] = (test_ids[0], maps[0][0])
        truth = np.asarray(test_labels, dtype=np.int64)
        for name in ("ttsnet", "png"):
            if name not in config.methods:
                continue
            values = []
            for tau, preds, scores in rows[name]:
                tp = int(np.sum((preds == 1) & (truth == 1)))
                fp = int(np.sum((preds == 1) & (truth == 0)))
                fn = int(np.sum((preds == 0) & (truth == 1)))
                values.append(f1(tp, fp, fn))
            out["methods"][name] = {
                "f1": values,
                "rows": rows[name],
            }

    if "hmm" in config.methods:
        hb = baselines.train_hmm_baseline(
            train, num_features=config.hmm_num_features, n_states=config.hmm_states,
            restarts=config.hmm_restarts, seed=seeds[2], alpha=config.model.alpha)
        curve, rows_h = f1_curve(hb.predict_batch, test_obs, test_labels, config.taus)
        out["methods"]["hmm"] = {"f1": list(curve.f1_values), "rows": rows_h}

    if "ishii" in config.methods:
        ib = baselines.train_ishii_baseline(
            train, seed=seeds[3], c_grid=config.ishii_c_grid,
            gamma_grid=config.ishii_gamma_grid, rff_dim=config.ishii_rff_dim)
        curve, rows_i = f1_curve(ib.predict_batch, test_obs, test_labels, config.taus)
        out["methods"]["ishii"] = {"f1": list(curve.f1_values), "rows": rows_i}

    if "always_give" in config.methods:
        def always(obs, tau):
            return np.ones(len(obs), dtype=np.int64), np.ones(len(obs))
        curve, rows_a = f1_curve(always, test_obs, test_labels, config.taus)
        out["methods"]["always_give"] = {"f1": list(curve.f1_values), "rows": rows_a}

    if config.objects_enabled and corpus.object_sequences:
        train_seqs = [s for s in corpus.object_sequences if s.subject_id != subject]
        test_seqs = [s for s in corpus.object_sequences if s.subject_id == subject]
        if train_seqs and test_seqs:
            out["objects"] = _objects_fold(train_seqs, test_seqs, config,
                                           n_objects, seeds[4])
    return out


def _write_predictions(path, event_ids, rows):
    lines = ["event_id,tau,label,pred,score"]
    for tau, preds, scores in rows:
        for eid, label, pred, score in zip(event_ids["ids"], event_ids["labels"],
                                           preds, scores):
            lines.append(f"{eid},{tau!r},{label},{pred},{float(score)!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _write_curve(path, taus, mean, std):
    lines = ["tau,f1_mean,f1_std"]
    for t, m, s in zip(taus, mean, std):
        lines.append(f"{t!r},{float(m)!r},{float(s)!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def run_experiment(config: ExperimentConfig, out_dir, threads: int = 1):
    """Run the full LOSO benchmark and write artifacts under out_dir.

    Returns the summary dict that is also written to summary.json.
    """
    if threads < 1:
        raise ConfigError(f"threads must be >= 1, got {threads}")
    os.makedirs(out_dir, exist_ok=True)
    corpus = load_experiment_corpus(config)
    folds = loso_split(corpus)
    n_objects = max((max(s.object_ids) for s in corpus.object_sequences), default=0)

    jobs = [(i, subject, config, corpus, n_objects)
            for i, (subject, _, _) in enumerate(folds)]
    if threads == 1:
        results = [_run_fold(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_fold, jobs))
    results.sort(key=lambda r: r["fold_index"])

    summary = {
        "version": SUMMARY_VERSION,
        "seed": config.seed,
        "config": config.to_dict(),
        "subjects": [r["subject"] for r in results],
        "methods": {},
        "objects": None,
    }

    full_grid = (len(config.taus) == len(TAU_GRID)
                 and np.allclose(config.taus, TAU_GRID, atol=1e-9))
    for name in config.methods:
        mat = np.array([r["methods"][name]["f1"] for r in results])
        mean = mat.mean(axis=0)
        std = mat.std(axis=0)
        entry = {
            "taus": list(config.taus),
            "f1_mean": [float(v) for v in mean],
            "f1_std": [float(v) for v in std],
            "f1_per_fold": [[float(v) for v in row] for row in mat],
            "auc": None,
        }
        if full_grid:
            entry["auc"] = EarlyCurve(tuple(config.taus), tuple(mean)).auc
        summary["methods"][name] = entry
        _write_curve(os.path.join(out_dir, f"curve_{name}.csv"),
                     config.taus, mean, std)
        for r in results:
            _write_predictions(
                os.path.join(out_dir, f"predictions_{name}_{r['subject']}.csv"),
                {"ids": r["event_ids"], "labels": r["labels"]},
                r["methods"][name]["rows"])

    object_folds = [r for r in results if r["objects"] is not None]
    if object_folds:
        per_fold = {"hmm": [], "bigram": []}
        for r in object_folds:
            for name in per_fold:
                per_fold[name].append(r["objects"]["weighted_f1"][name])
            objects_mod.save_object_predictions(
                os.path.join(out_dir, f"objects_{r['subject']}.csv"),
                r["objects"]["rows"])
        summary["objects"] = {
            "n_objects": n_objects,
            "chance_level": 1.0 / n_objects if n_objects else None,
            "subjects": [r["subject"] for r in object_folds],
        }
        for name, vals in per_fold.items():
            summary["objects"][name] = {
                "weighted_f1_per_fold": [float(v) for v in vals],
                "median": metrics.median_low(vals),
                "mad": metrics.mad(vals),
                "formatted": metrics.format_median_mad(vals),
            }

    if config.dump_rasters:
        for r in results:
            if r["raster"] is not None:
                eid, fmap = r["raster"]
                safe = str(eid).replace("/", "_")
                snn.save_raster(fmap, os.path.join(out_dir, f"raster_{safe}.csv"))

    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return summary
