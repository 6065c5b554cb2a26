"""Pipeline command line: generate data, build corpora, train, evaluate, plot.

Subcommands: gen-cohort, build-corpus, train, eval-ordinality, eval-predict,
tsne, neighbors. A single --seed fans out to derived per-stage seeds, every
run writes a manifest with the resolved parameters and artifact fingerprints
(no timestamps), so identical config + seed reproduces identical manifests.
"""

from __future__ import annotations

import argparse
import sys
from collections import Counter
from datetime import date
from pathlib import Path

from . import corpus, features, glove, ordeval, predict, synthgen, viz, w2v
from .embedstore import load_model, nearest_neighbors, save_model
from .util import derive_seed, file_sha256


class ConfigError(ValueError):
    pass


def _read_config(path: str | None) -> dict[str, str]:
    if not path:
        return {}
    cfg: dict[str, str] = {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    for line_no, line in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{line_no}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        cfg[key.strip()] = value.strip()
    return cfg


def _resolve(cli_value, config: dict, key: str, default, cast=str):
    if cli_value is not None:
        return cli_value
    if key in config:
        raw = config[key]
        try:
            return cast(raw)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"config key {key}={raw!r}: {e}") from None
    return default


def _write_manifest(out_dir: Path, name: str, params: dict, artifacts: list[Path]) -> Path:
    lines = [f"subcommand={name}"]
    for key in sorted(params):
        lines.append(f"{key}={params[key]}")
    for p in artifacts:
        lines.append(f"artifact {p.name} {file_sha256(p)}")
    path = out_dir / f"manifest-{name}.txt"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _apply_gen_config(gcfg: synthgen.GeneratorConfig, config: dict) -> None:
    """Override GeneratorConfig fields from config keys prefixed gen. (e.g. gen.n_panels=30)."""
    for key, raw in config.items():
        if not key.startswith("gen."):
            continue
        name = key[4:]
        if not hasattr(gcfg, name):
            raise ConfigError(f"unknown generator field {name!r}")
        current = getattr(gcfg, name)
        try:
            if isinstance(current, bool):
                value = raw.lower() in ("1", "true", "yes")
            elif isinstance(current, int):
                value = int(raw)
            elif isinstance(current, float):
                value = float(raw)
            elif isinstance(current, date):
                value = date.fromisoformat(raw)
            elif isinstance(current, tuple):
                parts = [x.strip() for x in raw.split(",")]
                kind = type(current[0])
                value = tuple(kind(x) for x in parts)
            else:
                value = raw
        except (TypeError, ValueError) as e:
            raise ConfigError(f"config key {key}={raw!r}: {e}") from None
        setattr(gcfg, name, value)


def _parse_events(path: str, fmt: str | None) -> list[corpus.LabEvent]:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"events file not found: {path} (produce it with gen-cohort)")
    if fmt is None:
        fmt = "jsonl" if p.suffix == ".jsonl" else "csv"
    return corpus.parse_events(str(p), fmt)


def _mode(value: str) -> corpus.TokenMode:
    try:
        return corpus.TokenMode(value)
    except ValueError:
        raise ConfigError(
            f"unknown token mode {value!r}; expected LoincOnly or LoincPlusAbnormality"
        ) from None


def cmd_gen_cohort(args, config) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    gcfg = synthgen.GeneratorConfig()
    _apply_gen_config(gcfg, config)
    if args.patients is not None:
        gcfg.n_patients = args.patients
    if args.panels is not None:
        gcfg.n_panels = args.panels
    if args.target_rate is not None:
        gcfg.target_positive_rate = args.target_rate

    diag: dict = {}
    events, patients = synthgen.generate_cohort(gcfg, derive_seed(args.seed, "gen-cohort"), diag)
    panels, _profiles = synthgen.generate_panels(gcfg, derive_seed(args.seed, "gen-cohort"))
    exclusions: dict = {}
    records = synthgen.assign_prediction_dates(
        patients,
        window_days=args.window_days,
        horizon_days=gcfg.horizon_days,
        seed=derive_seed(args.seed, "assign"),
        interval_support=gcfg.interval_support,
        followup_days=gcfg.followup_days,
        events=events,
        exclusions=exclusions,
    )
    fmt = args.format
    events_path = out_dir / ("events.jsonl" if fmt == "jsonl" else "events.csv")
    if fmt == "jsonl":
        corpus.write_events_jsonl(events, events_path)
    else:
        corpus.write_events_csv(events, events_path)
    cohort_path = out_dir / "cohort.csv"
    synthgen.write_cohort_csv(records, cohort_path)
    classes_path = out_dir / "classes.csv"
    synthgen.write_class_table(panels, classes_path)
    survival_path = out_dir / "survival.csv"
    synthgen.write_survival_csv(synthgen.survival_by_group(records, patients), survival_path)

    n_pos = sum(r.label_dead_90d for r in records)
    print(f"patients {gcfg.n_patients}, events {len(events)}, cohort records {len(records)}")
    print(
        f"positives {n_pos} ({n_pos / len(records):.4f} of cohort; target "
        f"{gcfg.target_positive_rate}), deceased {diag['n_deceased']}"
    )
    if exclusions:
        print("exclusions: " + ", ".join(f"{k}={v}" for k, v in sorted(exclusions.items())))
    params = {
        "seed": args.seed,
        "patients": gcfg.n_patients,
        "panels": gcfg.n_panels,
        "target_rate": gcfg.target_positive_rate,
        "window_days": args.window_days,
        "format": fmt,
    }
    _write_manifest(out_dir, "gen-cohort", params, [events_path, cohort_path, classes_path, survival_path])
    return 0


def cmd_build_corpus(args, config) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    mode = _mode(_resolve(args.mode, config, "mode", "LoincPlusAbnormality"))
    min_count = _resolve(args.min_count, config, "min_count", 5, int)
    events = _parse_events(args.events, args.format)
    if args.before is not None:
        cutoff = date.fromisoformat(args.before)
        events = [e for e in events if e.timestamp.date() < cutoff]
        if not events:
            raise ConfigError(f"no events before {cutoff}")
    vocab = corpus.build_vocabulary(events, mode, min_count)
    ctr: Counter = Counter()
    sentences = corpus.build_sentences(events, vocab, derive_seed(args.seed, "sentences"), counters=ctr)
    vocab_path = out_dir / "vocab.txt"
    corpus.save_vocabulary(vocab, vocab_path)
    sents_path = out_dir / "sentences.txt"
    corpus.save_sentences(sentences, vocab, sents_path)
    print(
        f"vocabulary {len(vocab)} tokens (mode {mode.value}, min_count {min_count}); "
        f"{len(sentences)} sentences; dropped oov {ctr.get('oov_dropped', 0)}"
    )
    params = {
        "seed": args.seed,
        "events": Path(args.events).name,
        "mode": mode.value,
        "min_count": min_count,
        "before": args.before or "",
    }
    _write_manifest(out_dir, "build-corpus", params, [vocab_path, sents_path])
    return 0


def _train_model(algo: str, sentences, vocab, dim, window, epochs, seed, lr=None, negatives=5):
    if algo in ("sgns", "cbow"):
        hp = w2v.W2vHyperparams(
            dim=dim,
            window=window,
            epochs=epochs,
            negatives=negatives,
            seed=seed,
            algorithm=w2v.Algorithm.SkipGram if algo == "sgns" else w2v.Algorithm.CBOW,
        )
        if lr is not None:
            hp.initial_lr = lr
        trainer = w2v.train_sgns if algo == "sgns" else w2v.train_cbow
        model = trainer(sentences, vocab, hp)
    elif algo == "glove":
        cooc = glove.build_cooccurrence(sentences, vocab, window=window)
        hp = glove.GloveHyperparams(dim=dim, epochs=epochs, seed=seed)
        if lr is not None:
            hp.initial_lr = lr
        model = glove.train_glove(cooc, vocab, hp)
    else:
        raise ConfigError(f"unknown algorithm {algo!r}; expected sgns, cbow or glove")
    model.metadata["token_mode"] = vocab.mode.value
    return model


def cmd_train(args, config) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vocab = corpus.load_vocabulary(args.vocab)
    sentences = corpus.load_sentences(args.sentences, vocab)
    dim = _resolve(args.dim, config, "dim", 50, int)
    window = _resolve(args.window, config, "window", 5, int)
    epochs = _resolve(args.epochs, config, "epochs", None, int)
    if epochs is None:
        epochs = 30 if args.algo == "glove" else 5
    lr = _resolve(args.lr, config, "lr", None, float)
    seed = derive_seed(args.seed, f"train-{args.algo}-{dim}")
    model = _train_model(args.algo, sentences, vocab, dim, window, epochs, seed, lr, args.negatives)
    model_path = Path(args.out) if args.out else out_dir / f"model_{args.algo}_d{dim}.txt"
    save_model(model, model_path)
    print(f"trained {args.algo} dim {dim} on {len(sentences)} sentences -> {model_path}")
    params = {
        "seed": args.seed,
        "algo": args.algo,
        "dim": dim,
        "window": window,
        "epochs": epochs,
        "vocab": Path(args.vocab).name,
        "sentences": Path(args.sentences).name,
    }
    _write_manifest(out_dir, "train", params, [model_path, Path(str(model_path) + ".meta")])
    return 0


def cmd_eval_ordinality(args, config) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vocab = corpus.load_vocabulary(args.vocab)
    model = load_model(args.model)
    tests = ordeval.generate_ordinality_tests(vocab)
    report = ordeval.evaluate_ordinality(model, tests)
    report_path = out_dir / "ordinality.csv"
    ordeval.write_ordinality_report(report, report_path)
    print(
        f"ordinality tests {report.n_tests}, failures {report.n_failures}, "
        f"error rate {report.error_rate:.4f}"
    )
    params = {"model": Path(args.model).name, "vocab": Path(args.vocab).name, "seed": args.seed}
    _write_manifest(out_dir, "eval-ordinality", params, [report_path])
    return 0


def _build_records(cohort_rows, events, window_days):
    by_patient: dict[str, list] = {}
    for e in events:
        by_patient.setdefault(e.patient_id, []).append(e)
    records = []
    for rec in cohort_rows:
        pred = rec.prediction_date.toordinal()
        window = [
            e
            for e in by_patient.get(rec.patient_id, ())
            if pred - window_days <= e.timestamp.date().toordinal() <= pred
        ]
        records.append(
            synthgen.CohortRecord(
                patient_id=rec.patient_id,
                prediction_date=rec.prediction_date,
                label_dead_90d=rec.label_dead_90d,
                observation_events=window,
            )
        )
    return records


def cmd_eval_predict(args, config) -> int:
    import numpy as np

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    split_raw = _resolve(args.split_date, config, "split_date", None)
    if split_raw is None:
        raise ConfigError("eval-predict needs --split-date (ISO date) or split_date in the config")
    split = date.fromisoformat(split_raw)
    window_days = _resolve(args.window_days, config, "window_days", 30, int)
    min_count = _resolve(args.min_count, config, "min_count", 5, int)
    dims = [int(x) for x in _resolve(args.dims, config, "dims", "50,100,200,300").split(",")]
    algos = [x.strip() for x in _resolve(args.algos, config, "algos", "sgns,cbow,glove").split(",")]
    modes = [
        _mode(x.strip())
        for x in _resolve(args.modes, config, "modes", "LoincOnly,LoincPlusAbnormality").split(",")
    ]
    svd_ks = [int(x) for x in _resolve(args.svd_k, config, "svd_k", "50,100,200,300").split(",") if x]
    aggs = [
        features.Aggregation(x.strip())
        for x in _resolve(args.aggs, config, "aggs", "Mean").split(",")
    ]
    n_draws = _resolve(args.cv_draws, config, "cv_draws", 30, int)
    k_folds = _resolve(args.cv_folds, config, "cv_folds", 5, int)
    epochs = _resolve(args.epochs, config, "epochs", None, int)
    window = _resolve(args.window, config, "window", 5, int)

    events = _parse_events(args.events, args.format)
    cohort_rows = synthgen.read_cohort_csv(args.cohort)
    records = _build_records(cohort_rows, events, window_days)
    pre_split_events = [e for e in events if e.timestamp.date() < split]
    if not pre_split_events:
        raise ConfigError(f"no events before split date {split}")

    is_test = np.array([r.prediction_date >= split for r in records])
    y = np.array([r.label_dead_90d for r in records], dtype=float)
    if y[~is_test].sum() == 0 or y[is_test].sum() == 0:
        raise ConfigError("train or test period has no positive labels; adjust split date")
    print(
        f"records {len(records)} (train {int((~is_test).sum())}, test {int(is_test.sum())}), "
        f"split {split}, embedding corpus events {len(pre_split_events)}/{len(events)}"
    )

    rows = []

    def evaluate(label, X, extra):
        X = predict._as_dense(X)
        search = predict.random_search_cv(
            X[~is_test],
            y[~is_test],
            n_draws=n_draws,
            k_folds=k_folds,
            seed=derive_seed(args.seed, f"cv-{label}"),
        )
        scores = search.model.decision(X[is_test])
        auc = predict.roc_auc(scores, y[is_test])
        ap = predict.average_precision(scores, y[is_test])
        cv_best = max(t[1] for t in search.trace)
        rows.append(
            dict(
                feature_set=label,
                cv_auc="%.4f" % cv_best,
                test_auc="%.4f" % auc,
                test_ap="%.4f" % ap,
                lambda_="%.3g" % search.best_params["lambda"],
                class_weight=search.best_params["class_weight"],
                **extra,
            )
        )
        print(f"  {label}: test AUC {auc:.4f}, AP {ap:.4f}")
        return scores

    bow_vocab = corpus.build_vocabulary(pre_split_events, corpus.TokenMode.LoincPlusAbnormality, min_count)
    bow = features.bow_matrix(records, bow_vocab)
    print(f"BOW features over {len(bow_vocab)} tokens")
    evaluate("BOW", bow.X, dict(kind="BOW", dim=len(bow_vocab), mode=bow_vocab.mode.value, aggregation=""))

    X_bow = predict._as_dense(bow.X)
    for k in svd_ks:
        k_eff = min(k, min(int((~is_test).sum()), X_bow.shape[1]))
        reducer = features.SvdReducer(k_eff, seed=derive_seed(args.seed, f"svd-{k}"))
        reducer.fit(X_bow[~is_test])
        evaluate(
            f"SVD-{k_eff}",
            reducer.transform(X_bow),
            dict(kind="SVD", dim=k_eff, mode=bow_vocab.mode.value, aggregation=""),
        )

    for mode in modes:
        vocab_m = corpus.build_vocabulary(pre_split_events, mode, min_count)
        sentences_m = corpus.build_sentences(
            pre_split_events, vocab_m, derive_seed(args.seed, f"sentences-{mode.value}")
        )
        for algo in algos:
            for dim in dims:
                model = _train_model(
                    algo,
                    sentences_m,
                    vocab_m,
                    dim,
                    window,
                    epochs if epochs is not None else (30 if algo == "glove" else 5),
                    derive_seed(args.seed, f"emb-{mode.value}-{algo}-{dim}"),
                )
                for agg in aggs:
                    emb = features.embed_matrix(records, model, agg=agg, mode=mode)
                    evaluate(
                        f"{algo}-d{dim}-{mode.value}-{agg.value}",
                        emb.X,
                        dict(kind="Embedding", dim=dim, mode=mode.value, aggregation=agg.value),
                    )

    table_path = out_dir / "comparison.csv"
    import csv as _csv

    with open(table_path, "w", encoding="utf-8", newline="") as f:
        writer = _csv.DictWriter(
            f,
            fieldnames=[
                "feature_set",
                "kind",
                "dim",
                "mode",
                "aggregation",
                "cv_auc",
                "test_auc",
                "test_ap",
                "lambda_",
                "class_weight",
            ],
        )
        writer.writeheader()
        writer.writerows(rows)
    print(f"comparison table -> {table_path}")
    best = max(rows, key=lambda r: float(r["test_auc"]))
    print(f"best: {best['feature_set']} test AUC {best['test_auc']}")

    params = {
        "seed": args.seed,
        "events": Path(args.events).name,
        "cohort": Path(args.cohort).name,
        "split_date": split.isoformat(),
        "window_days": window_days,
        "dims": ",".join(str(d) for d in dims),
        "algos": ",".join(algos),
        "modes": ",".join(m.value for m in modes),
        "svd_k": ",".join(str(k) for k in svd_ks),
        "aggs": ",".join(a.value for a in aggs),
        "cv_draws": n_draws,
        "cv_folds": k_folds,
    }
    _write_manifest(out_dir, "eval-predict", params, [table_path])
    return 0


def cmd_tsne(args, config) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vocab = corpus.load_vocabulary(args.vocab)
    model = load_model(args.model)
    class_table = viz.read_class_table(args.classes) if args.classes else {}
    top_k = _resolve(args.top_k, config, "top_k", min(500, len(vocab)), int)
    cfg = viz.TsneConfig(
        perplexity=_resolve(args.perplexity, config, "perplexity", 30.0, float),
        iterations=_resolve(args.iterations, config, "iterations", 1000, int),
        seed=derive_seed(args.seed, "tsne"),
    )
    vectors, tokens = viz.top_k_frequent(model, vocab, top_k)
    history: dict = {}
    coords = viz.tsne(vectors, cfg, history)
    csv_path = out_dir / "tsne.csv"
    svg_path = out_dir / "tsne.svg"
    viz.emit_plot(coords, tokens, class_table, csv_path, svg_path)
    print(
        f"tsne on {top_k} tokens: KL {history['kl_initial']:.4f} -> {history['kl_final']:.4f}; "
        f"wrote {csv_path} and {svg_path}"
    )
    params = {
        "seed": args.seed,
        "model": Path(args.model).name,
        "vocab": Path(args.vocab).name,
        "classes": Path(args.classes).name if args.classes else "",
        "top_k": top_k,
        "perplexity": cfg.perplexity,
        "iterations": cfg.iterations,
    }
    _write_manifest(out_dir, "tsne", params, [csv_path, svg_path])
    return 0


def cmd_neighbors(args, config) -> int:
    model = load_model(args.model)
    result = nearest_neighbors(model, args.token, args.k)
    for token, sim in result:
        print(f"{token}\t{sim:.6f}")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", encoding="utf-8") as f:
            f.write("token,similarity\n")
            for token, sim in result:
                f.write(f"{token},{sim:.6f}\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="labembed",
        description="lab-code embedding pipeline on synthetic or supplied event streams",
    )
    parser.add_argument("--seed", type=int, default=0, help="global seed, fanned out per stage")
    parser.add_argument("--config", default=None, help="key=value config file")
    parser.add_argument("--out-dir", default=".", help="artifact directory")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("gen-cohort", help="generate synthetic events, cohort and class table")
    p.add_argument("--patients", type=int, default=None)
    p.add_argument("--panels", type=int, default=None)
    p.add_argument("--target-rate", type=float, default=None)
    p.add_argument("--window-days", type=int, default=30)
    p.add_argument("--format", choices=["csv", "jsonl"], default="csv")
    p.set_defaults(func=cmd_gen_cohort)

    p = sub.add_parser("build-corpus", help="build vocabulary and shuffled sentences from events")
    p.add_argument("--events", required=True)
    p.add_argument("--format", choices=["csv", "jsonl"], default=None)
    p.add_argument("--mode", default=None)
    p.add_argument("--min-count", type=int, default=None)
    p.add_argument("--before", default=None, help="keep only events before this ISO date")
    p.set_defaults(func=cmd_build_corpus)

    p = sub.add_parser("train", help="train one embedding model")
    p.add_argument("--algo", required=True, choices=["sgns", "cbow", "glove"])
    p.add_argument("--vocab", required=True)
    p.add_argument("--sentences", required=True)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--negatives", type=int, default=5)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval-ordinality", help="run ordinality preservation tests on a model")
    p.add_argument("--model", required=True)
    p.add_argument("--vocab", required=True)
    p.set_defaults(func=cmd_eval_ordinality)

    p = sub.add_parser("eval-predict", help="mortality benchmark: BOW, SVD and embedding features")
    p.add_argument("--events", required=True)
    p.add_argument("--cohort", required=True)
    p.add_argument("--format", choices=["csv", "jsonl"], default=None)
    p.add_argument("--split-date", default=None)
    p.add_argument("--window-days", type=int, default=None)
    p.add_argument("--min-count", type=int, default=None)
    p.add_argument("--dims", default=None)
    p.add_argument("--algos", default=None)
    p.add_argument("--modes", default=None)
    p.add_argument("--svd-k", default=None)
    p.add_argument("--aggs", default=None)
    p.add_argument("--cv-draws", type=int, default=None)
    p.add_argument("--cv-folds", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--window", type=int, default=None)
    p.set_defaults(func=cmd_eval_predict)

    p = sub.add_parser("tsne", help="project frequent tokens to 2-D and plot")
    p.add_argument("--model", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--classes", default=None)
    p.add_argument("--top-k", type=int, default=None)
    p.add_argument("--perplexity", type=float, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.set_defaults(func=cmd_tsne)

    p = sub.add_parser("neighbors", help="nearest neighbors of a token")
    p.add_argument("--model", required=True)
    p.add_argument("--token", required=True)
    p.add_argument("-k", type=int, default=10)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_neighbors)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _read_config(args.config)
        return args.func(args, config)
    except (
        ConfigError,
        ValueError,
        KeyError,
        FileNotFoundError,
        RuntimeError,
    ) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
