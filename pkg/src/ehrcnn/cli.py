"""Command-line pipeline: synth -> embed -> cohort -> train -> evaluate.

Exit codes: 0 success, 2 configuration or input error, 3 data error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path


from .baselines import BaselineError, run_baseline_suite, write_suite_report
from .checkpoint import CheckpointError, load_model, save_model
from .cnn import InputMode
from .cohort import CohortError, build_cohort, load_cohort, save_cohort
from .config import (ConfigError, RunConfig, load_run_config, parse_value, report_header,
                     stage_seed)
from .data import (EmptyVocabularyError, ParseError, build_vocabulary, load_patients,
                   load_vocabulary, save_vocabulary)
from .embedding import (EmbeddingFormatError, load_embeddings, nearest_neighbors,
                        save_embeddings, train_cbow)
from .metrics import evaluate_scores
from .optim import NumericalError
from .synth import SynthConfigError, generate_cohort_corpus, generate_corpus, write_corpus
from .training import predict_proba, train_cnn

log = logging.getLogger("ehrcnn")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_CONFIG):
        super().__init__(message)
        self.code = code


def _dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _out_dir(path) -> Path:
    if path is None:
        raise CliError("--out is required")
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise CliError(f"output directory {out} is not writable: {exc.strerror}") from None
    return out


def _existing(path, what: str) -> Path:
    if path is None:
        raise CliError(f"{what} is required")
    p = Path(path)
    if not p.is_file():
        raise CliError(f"{what} {p} does not exist")
    return p


def _patients_path(args) -> Path:
    events = _existing(args.events, "--events")
    return _existing(args.patients or events.with_name("patients.jsonl"), "--patients")


def _load_records(args, cfg: RunConfig):
    """Encoded records plus vocabulary (from --vocab when given)."""
    raw = load_patients(_patients_path(args), _existing(args.events, "--events"))
    if getattr(args, "vocab", None):
        vocab = load_vocabulary(_existing(args.vocab, "--vocab"))
    else:
        vocab = build_vocabulary(raw, cfg.cbow_config().min_count)
    return vocab.encode_all(raw), vocab


# --- stages ---------------------------------------------------------------------

def stage_synth(cfg: RunConfig, out: Path):
    scfg = cfg.synth_config()
    records = generate_cohort_corpus(scfg) if scfg.target_code else generate_corpus(scfg)
    return write_corpus(records, scfg, out)


def stage_embed(records, vocab, cfg: RunConfig, out: Path):
    emb = train_cbow([r.indices for r in records], vocab, cfg.cbow_config())
    save_embeddings(emb, out / "embeddings.txt")
    save_vocabulary(vocab, out / "vocab.txt")
    return emb


def stage_cohort(records, vocab, cfg: RunConfig, out: Path, holdoff: int | None = None,
                 name: str = "cohort.jsonl"):
    spec = cfg.cohort_spec(holdoff)
    ds = build_cohort(records, vocab, spec)
    side = save_cohort(ds, spec, out / name)
    summary = json.loads(side.read_text(encoding="utf-8"))
    summary["vocab_size"] = len(vocab)
    _dump_json(summary, side)
    return ds, spec


def stage_train(ds, emb, vocab_size: int, cfg: RunConfig, out: Path, mode: str | None = None,
                name: str = "model.ckpt"):
    mcfg = cfg.cnn_config()
    if mode is not None:
        mcfg.input_mode = InputMode(mode).value
    if InputMode(mcfg.input_mode).needs_pretrained and emb is None:
        raise CliError(f"input mode {mcfg.input_mode} needs an embedding file (--emb)")
    model, history = train_cnn(ds, mcfg, cfg.train_config(),
                               pretrained=emb.input_vectors if emb is not None else None,
                               vocab_size=vocab_size)
    save_model(model, out / name)
    _dump_json(history, out / (name + ".history.json"))
    return model, history


def evaluate_model(model, ds) -> dict:
    test = ds.test
    if not test:
        raise CliError("cohort has an empty test split", EXIT_DATA)
    scores = predict_proba(model, [s.indices for s in test])
    return evaluate_scores(scores, [s.label for s in test])


def eval_report(cfg: RunConfig, ds, spec, models: list[dict]) -> dict:
    report = report_header(cfg)
    report.update({"holdoff_days": spec.holdoff_days, "counts": ds.counts(),
                   "case_count": ds.case_count, "control_count": ds.control_count,
                   "models": models})
    return report


TABLE_COLUMNS = ("accuracy", "auroc", "auprc", "max_f1")


def write_table1(models: list[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["Method", "Input", "Accuracy", "AUROC", "AUPRC", "Max F1"])
        for m in models:
            w.writerow([m["method"], m["input"]] + [f"{m[k]:.4f}" for k in TABLE_COLUMNS])


def write_table2(models: list[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["Input", "Accuracy", "AUROC", "AUPRC", "Max F1"])
        for m in models:
            if m["method"] == "LR":
                w.writerow([m["input"]] + [f"{m[k]:.4f}" for k in TABLE_COLUMNS])


def write_table3(rows: list[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["Hold-off (days)", "# of Case", "Accuracy", "AUROC"])
        for r in rows:
            w.writerow([r["holdoff_days"], r["cases"], f"{r['accuracy']:.4f}", f"{r['auroc']:.4f}"])


def _suite_models(rows) -> list[dict]:
    return [{"method": r["classifier"], "input": r["representation"],
             **{k: r[k] for k in TABLE_COLUMNS}} for r in rows]


# --- commands ---------------------------------------------------------------------

def cmd_synth(args, cfg):
    out = _out_dir(args.out)
    p, e = stage_synth(cfg, out)
    print(f"wrote {p} and {e}")


def cmd_embed(args, cfg):
    events = _existing(args.events, "--events")
    out = _out_dir(args.out)
    raw = load_patients(_patients_path(args), events)
    vocab = build_vocabulary(raw, cfg.cbow_config().min_count)
    stage_embed(vocab.encode_all(raw), vocab, cfg, out)
    print(f"wrote {out / 'embeddings.txt'} ({len(vocab)} codes)")


def cmd_neighbors(args, cfg):
    emb = load_embeddings(_existing(args.emb, "--emb"))
    if args.k < 0:
        raise CliError("--k must be >= 0")
    try:
        idx = emb.vocab.lookup(args.code, args.kind)
    except (KeyError, ValueError) as exc:
        raise CliError(f"unknown code {args.code!r}: {exc}", EXIT_DATA) from None
    if args.k == 0:
        return
    if args.k >= len(emb):
        raise CliError(f"--k must be smaller than the vocabulary size ({len(emb)})")
    for j, cos in nearest_neighbors(emb, idx, args.k):
        print(f"{emb.vocab.codes[j].code} {cos:.6f}")


def cmd_cohort(args, cfg):
    out = _out_dir(args.out)
    records, vocab = _load_records(args, cfg)
    ds, _ = stage_cohort(records, vocab, cfg, out)
    print(f"{ds.case_count} cases, {ds.control_count} controls -> {out / 'cohort.jsonl'}")


def _cohort_vocab_size(args, emb) -> int:
    if emb is not None:
        return len(emb)
    if getattr(args, "vocab", None):
        return len(load_vocabulary(_existing(args.vocab, "--vocab")))
    side = Path(args.cohort).with_name(Path(args.cohort).name + ".summary.json")
    if side.is_file():
        size = json.loads(side.read_text(encoding="utf-8")).get("vocab_size")
        if size:
            return int(size)
    raise CliError("cannot determine vocabulary size; pass --vocab or --emb")


def cmd_train(args, cfg):
    ds = load_cohort(_existing(args.cohort, "--cohort"))
    mode = args.mode or cfg.cnn_config().input_mode
    if InputMode(mode).needs_pretrained and not args.emb:
        raise CliError(f"input mode {mode} needs an embedding file (--emb)")
    emb = load_embeddings(_existing(args.emb, "--emb")) if args.emb else None
    out = _out_dir(args.out)
    stage_train(ds, emb, _cohort_vocab_size(args, emb), cfg, out, mode)
    print(f"wrote {out / 'model.ckpt'}")


def cmd_evaluate(args, cfg):
    cohort_path = _existing(args.cohort, "--cohort")
    ds = load_cohort(cohort_path)
    out = _out_dir(args.out)
    models = []
    if args.model:
        model = load_model(_existing(args.model, "--model"))
        models.append({"method": "CNN", "input": model.input_mode.value, **evaluate_model(model, ds)})
    if args.suite:
        models += _suite_models_from_file(_existing(args.suite, "--suite"))
    if not models:
        raise CliError("evaluate needs --model and/or --suite")
    spec = cfg.cohort_spec()
    side = cohort_path.with_name(cohort_path.name + ".summary.json")
    if side.is_file():
        spec.holdoff_days = json.loads(side.read_text(encoding="utf-8"))["spec"]["holdoff_days"]
    report = eval_report(cfg, ds, spec, models)
    _dump_json(report, out / "report.json")
    write_table1(models, out / "table1.csv")
    print(f"wrote {out / 'report.json'}")


def _suite_models_from_file(path) -> list[dict]:
    rows = json.loads(Path(path).read_text(encoding="utf-8"))
    return _suite_models(rows)


def cmd_suite(args, cfg):
    ds = load_cohort(_existing(args.cohort, "--cohort"))
    emb = load_embeddings(_existing(args.emb, "--emb")) if args.emb else None
    out = _out_dir(args.out)
    sc = cfg.suite_config()
    rows = run_baseline_suite(ds, emb, sc.modes, sc.classifiers, sc.lambdas,
                              vocab_size=_cohort_vocab_size(args, emb),
                              seed=stage_seed(cfg.seed, "suite"))
    write_suite_report(rows, out / "suite.json", out / "suite.csv")
    print(f"wrote {out / 'suite.json'}")


def cmd_pipeline(args, cfg):
    """Every stage in sequence, writing all artifacts under --out."""
    out = _out_dir(args.out)
    data_dir = out / "data"
    data_dir.mkdir(exist_ok=True)
    p_path, e_path = stage_synth(cfg, data_dir)
    raw = load_patients(p_path, e_path)
    vocab = build_vocabulary(raw, cfg.cbow_config().min_count)
    records = vocab.encode_all(raw)
    log.info("embedding %d codes", len(vocab))
    emb = stage_embed(records, vocab, cfg, out)
    ds, spec = stage_cohort(records, vocab, cfg, out)
    log.info("cohort: %s", ds.counts())
    model, _ = stage_train(ds, emb, len(vocab), cfg, out)
    cnn_metrics = evaluate_model(model, ds)
    models = [{"method": "CNN", "input": model.input_mode.value, **cnn_metrics}]
    sc = cfg.suite_config()
    if sc.enabled:
        rows = run_baseline_suite(ds, emb, sc.modes, sc.classifiers, sc.lambdas,
                                  vocab_size=len(vocab), seed=stage_seed(cfg.seed, "suite"))
        write_suite_report(rows, out / "suite.json", out / "suite.csv")
        models += _suite_models(rows)
    table3 = [{"holdoff_days": spec.holdoff_days, "cases": ds.case_count,
               "accuracy": cnn_metrics["accuracy"], "auroc": cnn_metrics["auroc"]}]
    for h in cfg.early_prediction:
        if h == spec.holdoff_days:
            continue
        ds_h, _ = stage_cohort(records, vocab, cfg, out, h, f"cohort_h{h}.jsonl")
        model_h, _ = stage_train(ds_h, emb, len(vocab), cfg, out, name=f"model_h{h}.ckpt")
        m = evaluate_model(model_h, ds_h)
        table3.append({"holdoff_days": h, "cases": ds_h.case_count,
                       "accuracy": m["accuracy"], "auroc": m["auroc"]})
    report = eval_report(cfg, ds, spec, models)
    report["early_prediction"] = table3
    _dump_json(report, out / "report.json")
    write_table1(models, out / "table1.csv")
    write_table2(models, out / "table2.csv")
    write_table3(table3, out / "table3.csv")
    print(f"wrote {out / 'report.json'}")


COMMANDS = {
    "synth": cmd_synth, "embed": cmd_embed, "neighbors": cmd_neighbors, "cohort": cmd_cohort,
    "train": cmd_train, "evaluate": cmd_evaluate, "suite": cmd_suite, "pipeline": cmd_pipeline,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ehrcnn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text,
                           epilog="Any config value can be overridden with a dotted flag, "
                                  "e.g. --cbow.window=20 or --cohort.holdoff_days 90.")
        p.add_argument("--config", help="run configuration (JSON)")
        p.add_argument("--seed", type=int, help="global seed")
        p.add_argument("--out", help="output directory")
        return p

    add("synth", "generate a synthetic corpus")
    p = add("embed", "train CBOW embeddings")
    p.add_argument("--events")
    p.add_argument("--patients")
    p = add("neighbors", "nearest neighbours of a code")
    p.add_argument("--emb")
    p.add_argument("--code", required=True)
    p.add_argument("--kind", choices=["diagnosis", "medication"])
    p.add_argument("--k", type=int, default=10)
    p = add("cohort", "build a case/control cohort")
    p.add_argument("--events")
    p.add_argument("--patients")
    p.add_argument("--vocab")
    p = add("train", "train the CNN")
    p.add_argument("--cohort")
    p.add_argument("--emb")
    p.add_argument("--vocab")
    p.add_argument("--mode", choices=[m.value for m in InputMode])
    p = add("evaluate", "score a model and/or suite on the test split")
    p.add_argument("--cohort")
    p.add_argument("--model")
    p.add_argument("--suite")
    p = add("suite", "run the baseline suite")
    p.add_argument("--cohort")
    p.add_argument("--emb")
    p.add_argument("--vocab")
    add("pipeline", "run every stage end to end")
    return parser


def _split_overrides(extra: list[str]) -> dict:
    overrides, i = {}, 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or "." not in tok.split("=", 1)[0]:
            raise CliError(f"unrecognised argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
        else:
            if i + 1 >= len(extra):
                raise CliError(f"missing value for {tok}")
            i += 1
            value = extra[i]
        overrides[key] = parse_value(value)
        i += 1
    return overrides


def run(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = _split_overrides(extra)
        cfg = load_run_config(args.config, overrides, args.seed)
        COMMANDS[args.command](args, cfg)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, SynthConfigError, ParseError, EmbeddingFormatError,
            CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CohortError, EmptyVocabularyError, BaselineError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def main() -> None:
    sys.exit(run())
