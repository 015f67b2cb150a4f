"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import backchannel as bc
from .bargein import BargeInClassifier
from .config import GlobalConfig, apply_overrides, load_config
from .features import EmbeddingTable, fbank, fbank_csv, load_embeddings
from .neural.checkpoint import CheckpointError, read_checkpoint, write_checkpoint
from .neural.data import Example, collate, make_example
from .neural.gradcheck import grad_check
from .neural.model import TASKS, Model, ModelConfig, NumericalError, predict
from .neural.train import fit
from .simulator.corpus import iter_corpus, read_corpus, vocabulary, write_corpus
from .simulator.evaluate import LabelError, evaluate, oracle_classifiers, trace_examples
from .simulator.latency import PAPER_PROFILE, LatencyProfile, latency_table, latency_total
from .simulator.metrics import MetricsReport
from .simulator.misalign import apply_misalignment
from .trace import TraceError, latest_window, load_trace, pcm16_to_float, read_wav, save_trace
from .turnpolicy import ConfigError, FunctionClassifiers, UserState, format_log, run

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3

log = logging.getLogger("duplex")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser, task: bool = False) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config field, e.g. engine.vad_silence_ms=900")
    p.add_argument("--seed", type=int, help="random seed (overrides config)")
    p.add_argument("--out", help="output path")
    p.add_argument("--dry-run", action="store_true", help="validate inputs without writing anything")
    if task:
        p.add_argument("--task", choices=sorted(TASKS), required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="duplex", description="Full-duplex turn-taking toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen", help="generate a synthetic corpus")
    _common(p)
    p.add_argument("--task", choices=["state", "bargein", "backchannel", "all"], default="all")
    p.add_argument("--n-state", type=int)
    p.add_argument("--n-bargein", type=int)

    p = sub.add_parser("misalign", help="delay ASR events of every trace in a corpus")
    _common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--delay-min", type=int, default=300)
    p.add_argument("--delay-max", type=int, default=600)

    p = sub.add_parser("features", help="dump FBANK features as CSV")
    _common(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--wav")
    src.add_argument("--trace")
    p.add_argument("--t-ms", type=int, help="query time for --trace (default: end of trace)")

    p = sub.add_parser("train", help="train a classifier")
    _common(p, task=True)
    p.add_argument("--corpus", required=True, help="labeled corpus directory")
    p.add_argument("--unlabeled", help="corpus directory used without labels for SSL")

    p = sub.add_parser("eval", help="evaluate a checkpoint or the barge-in rule")
    _common(p, task=True)
    p.add_argument("--corpus", required=True)
    who = p.add_mutually_exclusive_group(required=True)
    who.add_argument("--model")
    who.add_argument("--rule", action="store_true", help="barge-in confidence rule")

    p = sub.add_parser("replay", help="run the turn-taking engine over a trace")
    _common(p)
    p.add_argument("--trace", required=True)
    p.add_argument("--state-model", help="user-state checkpoint (default: trace labels)")
    p.add_argument("--bargein-model", help="barge-in checkpoint (default: trace labels)")

    p = sub.add_parser("latency", help="response-latency table")
    _common(p)
    p.add_argument("--profile", choices=["paper", "custom"], default="paper")
    p.add_argument("--profile-file", help="JSON stage values for --profile custom")

    p = sub.add_parser("gradcheck", help="finite-difference gradient check on a tiny model")
    _common(p)
    p.add_argument("--hidden", type=int, default=4)
    p.add_argument("--eps", type=float, default=1e-4)
    return parser


# --- helpers ---------------------------------------------------------------------


def _config(args) -> GlobalConfig:
    cfg = load_config(args.config) if args.config else GlobalConfig()
    if args.set:
        cfg = apply_overrides(cfg, args.set)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _need_dir(path: Optional[str], what: str) -> Path:
    if path is None or not Path(path).is_dir():
        raise FileNotFoundError(f"{what} directory {path} does not exist")
    return Path(path)


def _need_out(args) -> Path:
    if not args.out:
        raise UsageError("--out is required")
    return Path(args.out)


def _table(cfg: GlobalConfig, task: str) -> EmbeddingTable:
    dim = cfg.tasks[task].emb_dim
    if cfg.embeddings:
        return load_embeddings(cfg.embeddings)
    words = bc.backchannel_vocabulary() if task == "backchannel" else vocabulary()
    return EmbeddingTable.random(words, dim, seed=cfg.seed)


def _model_config(cfg: GlobalConfig, task: str) -> ModelConfig:
    t = cfg.tasks[task]
    return ModelConfig(task=task, n_classes=TASKS[task], hidden=t.hidden, widths=t.widths,
                       n_filters=t.n_filters, n_mels=cfg.fbank.n_mels, modality=t.modality,
                       use_bot_text=t.use_bot_text, use_timing=t.use_timing,
                       output="sigmoid" if task == "backchannel" else "softmax")


def _task_traces(corpus: Path, task: str):
    traces = [t for t in read_corpus(corpus) if (t.labels or {}).get("task") == task]
    if not traces:
        raise LabelError(f"{corpus} has no {task} traces")
    for t in traces:
        t.audio_ref = str(corpus / t.audio_ref)
    return traces


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


# --- subcommands -------------------------------------------------------------------


def cmd_gen(args, cfg: GlobalConfig) -> int:
    sc = replace(cfg.scenario, seed=cfg.seed, engine=cfg.engine)
    if args.n_state is not None:
        sc = replace(sc, n_state=args.n_state)
    if args.n_bargein is not None:
        sc = replace(sc, n_bargein=args.n_bargein)
    sc.validate()
    out = _need_out(args)
    tasks = {"all": ("state", "bargein"), "state": ("state",), "bargein": ("bargein",),
             "backchannel": ()}[args.task]
    if args.dry_run:
        print(f"would write {sc.n_state if 'state' in tasks else 0} state and "
              f"{sc.n_bargein if 'bargein' in tasks else 0} barge-in traces to {out}")
        return EXIT_OK
    write_corpus(iter_corpus(sc, tasks), out, sc)
    if args.task in ("backchannel", "all"):
        items = bc.synthetic_pairs(cfg.backchannel.n_pairs, seed=cfg.seed)
        with open(out / "backchannel_pairs.jsonl", "w", encoding="utf-8") as f:
            for it in items:
                f.write(json.dumps({"query": it.query, "response": it.response, "intent": it.intent,
                                    "appropriate": list(it.appropriate)}, sort_keys=True) + "\n")
    print(f"wrote corpus to {out}")
    return EXIT_OK


def cmd_misalign(args, cfg: GlobalConfig) -> int:
    corpus = _need_dir(args.corpus, "corpus")
    traces = read_corpus(corpus)
    out = _need_out(args)
    shifted = []
    for tr in traces:
        tr.audio_ref = str(corpus / tr.audio_ref)
        tr.samples()
        m = apply_misalignment(tr, args.delay_min, args.delay_max, seed=cfg.seed)
        m.audio_ref = f"{tr.session_id}.wav"
        shifted.append(m)
    if args.dry_run:
        print(f"would write {len(shifted)} misaligned traces to {out}")
        return EXIT_OK
    manifest = json.loads((corpus / "manifest.json").read_text())
    out.mkdir(parents=True, exist_ok=True)
    for tr in shifted:
        save_trace(tr, out / f"{tr.session_id}.jsonl")
    with open(out / "labels.jsonl", "w", encoding="utf-8") as fh:
        for tr in shifted:
            fh.write(json.dumps({"session_id": tr.session_id, **(tr.labels or {})}, sort_keys=True) + "\n")
    manifest["misalignment"] = {"delay_min": args.delay_min, "delay_max": args.delay_max, "seed": cfg.seed}
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    print(f"wrote {len(shifted)} misaligned traces to {out}")
    return EXIT_OK


def cmd_features(args, cfg: GlobalConfig) -> int:
    if args.wav:
        pcm, rate = read_wav(args.wav)
        if rate != cfg.fbank.sample_rate_hz:
            raise TraceError(f"{args.wav}: sample rate {rate}, expected {cfg.fbank.sample_rate_hz}")
        samples = pcm16_to_float(pcm)
    else:
        tr = load_trace(args.trace)
        t = args.t_ms if args.t_ms is not None else (tr.events[-1].t_ms if tr.events else 0)
        samples = latest_window(tr, t).audio_window
    csv = fbank_csv(fbank(samples, cfg.fbank), cfg.fbank)
    if args.dry_run:
        print(f"{csv.count(chr(10)) - 1} frames")
    elif args.out:
        _write(Path(args.out), csv)
    else:
        sys.stdout.write(csv)
    return EXIT_OK


def _backchannel_records(corpus: Path, cfg: GlobalConfig, table: EmbeddingTable):
    path = corpus / "backchannel_pairs.jsonl"
    if not path.exists():
        raise FileNotFoundError(f"{path} does not exist")
    rows = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
    return rows, bc.build_soft_labels([(r["query"], r["response"]) for r in rows], table,
                                      cfg.backchannel.cluster_threshold)


def cmd_train(args, cfg: GlobalConfig) -> int:
    task = args.task
    corpus = _need_dir(args.corpus, "corpus")
    table = _table(cfg, task)
    tc = cfg.tasks[task].train_config(task, cfg.seed)
    if task == "backchannel":
        _, records = _backchannel_records(corpus, cfg, table)
        labeled, unlabeled = bc.soft_label_examples(records, table), []
    else:
        labeled = trace_examples(_task_traces(corpus, task), task, table, engine=cfg.engine,
                                 fbank_config=cfg.fbank)
        unlabeled = []
        if args.unlabeled:
            ucorpus = _need_dir(args.unlabeled, "unlabeled corpus")
            unlabeled = trace_examples(_task_traces(ucorpus, task), task, table, labeled=False,
                                       engine=cfg.engine, fbank_config=cfg.fbank)
    out = _need_out(args)
    if args.dry_run:
        print(f"{task}: {len(labeled)} labeled, {len(unlabeled)} unlabeled examples; config ok")
        return EXIT_OK
    model = Model(_model_config(cfg, task), table, seed=cfg.seed)
    history = fit(model, labeled, unlabeled, tc)
    write_checkpoint(model, out, extra={"seed": cfg.seed, "history": history})
    print(f"trained {task} model: final L_sup={history[-1]['loss_sup']:.4f}; wrote {out}")
    return EXIT_OK


def cmd_eval(args, cfg: GlobalConfig) -> int:
    task = args.task
    corpus = _need_dir(args.corpus, "corpus")
    if task == "backchannel":
        if args.rule:
            raise UsageError("--rule applies to barge-in only")
        model = read_checkpoint(args.model, task)
        rows, _ = _backchannel_records(corpus, cfg, model.embeddings)
        report = _eval_backchannel(model, rows, cfg)
    else:
        traces = _task_traces(corpus, task)
        predictor = "rule" if args.rule else read_checkpoint(args.model, task)
        if args.dry_run:
            print(f"{task}: {len(traces)} traces; inputs ok")
            return EXIT_OK
        report = evaluate(predictor, traces, task, cfg.engine, threshold=cfg.bargein_threshold)
    print(report.table())
    if args.out and not args.dry_run:
        _write(Path(args.out), report.to_json() + "\n")
    return EXIT_OK


def _eval_backchannel(model: Model, rows: list[dict], cfg: GlobalConfig):
    probs = bc.score_queries(model, [r["query"] for r in rows])
    truth = np.zeros((len(rows), bc.N_RESPONSES), dtype=np.int64)
    for i, r in enumerate(rows):
        truth[i, r["appropriate"]] = 1
    pred = bc.binarize(probs)
    rng = np.random.default_rng(cfg.seed)
    chosen = [bc.select_response(p, cfg.backchannel.select_threshold, rng) for p in probs]
    correct = float(np.mean([truth[i, c] == 1 for i, c in enumerate(chosen)]))
    tp = float(np.sum(pred & truth))
    prec = tp / pred.sum() if pred.sum() else 0.0
    rec = tp / truth.sum() if truth.sum() else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return MetricsReport(task="backchannel", n=len(rows), accuracy=correct, macro_f1=f1, precision=prec,
                         recall=rec, per_class_f1=[], confusion=[],
                         hamming_loss=bc.hamming_loss(truth, pred), extra={"selection_correct": correct})


def cmd_replay(args, cfg: GlobalConfig) -> int:
    tr = load_trace(args.trace)
    oracle = oracle_classifiers(tr) if tr.labels else None
    state_fn = oracle.user_state_fn if oracle else (lambda clip: UserState.TURN_SWITCH)
    barge_fn = oracle.barge_in_fn if oracle else BargeInClassifier(config=cfg.engine)
    if args.state_model:
        sm = read_checkpoint(args.state_model, "state")

        def state_fn(clip):
            ex = make_example(clip, sm.embeddings, fbank_config=cfg.fbank)
            return UserState(int(predict(sm, collate([ex]))[0]))
    if args.bargein_model:
        barge_fn = BargeInClassifier(read_checkpoint(args.bargein_model, "bargein"), cfg.engine,
                                     cfg.bargein_threshold, cfg.fbank)
    if args.dry_run:
        print(f"{tr.session_id}: {len(tr.events)} events; inputs ok")
        return EXIT_OK
    text = format_log(run(cfg.engine, tr, FunctionClassifiers(state_fn, barge_fn)))
    if args.out:
        _write(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_latency(args, cfg: GlobalConfig) -> int:
    profile = PAPER_PROFILE
    if args.profile == "custom":
        if not args.profile_file:
            raise UsageError("--profile custom needs --profile-file")
        path = Path(args.profile_file)
        if not path.exists():
            raise FileNotFoundError(f"{path} does not exist")
        try:
            profile = LatencyProfile(**json.loads(path.read_text()))
        except TypeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    text = latency_table(profile)
    print(text)
    if args.out and not args.dry_run:
        totals = {"without_backchannel_ms": latency_total(profile, False),
                  "with_backchannel_ms": latency_total(profile, True)}
        _write(Path(args.out), json.dumps(totals, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_gradcheck(args, cfg: GlobalConfig) -> int:
    rng = np.random.default_rng(cfg.seed)
    table = EmbeddingTable.random(["a", "b", "c", "d"], 3, seed=cfg.seed)
    worst = {}
    for modality in ("both", "text", "audio"):
        mc = ModelConfig(task="state", n_classes=3, hidden=args.hidden, widths=(1, 2), n_filters=2,
                         n_mels=cfg.fbank.n_mels, modality=modality, use_timing=modality == "both")
        model = Model(mc, table, dtype=np.float64, seed=cfg.seed)
        exs = [Example(rng.integers(0, 5, size=int(rng.integers(1, 4))), rng.integers(0, 5, size=2),
                       rng.normal(size=(int(rng.integers(1, 4)), mc.n_mels)).astype(np.float32),
                       float(rng.random()), np.eye(3)[int(rng.integers(3))]) for _ in range(3)]
        errs = grad_check(model, collate(exs, mc.n_mels), eps=args.eps)
        worst[modality] = errs["max"]
        for name, e in sorted(errs.items()):
            if name != "max":
                print(f"{modality:6s} {name:10s} {e:.3e}")
    overall = max(worst.values())
    print(f"max relative error {overall:.3e}")
    if args.out and not args.dry_run:
        _write(Path(args.out), json.dumps(worst, sort_keys=True) + "\n")
    if overall >= 1e-3:
        raise NumericalError(f"gradient check failed: {overall:.3e}")
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen, "misalign": cmd_misalign, "features": cmd_features, "train": cmd_train,
    "eval": cmd_eval, "replay": cmd_replay, "latency": cmd_latency, "gradcheck": cmd_gradcheck,
}


def run_command(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("missing subcommand")
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, TraceError, CheckpointError, LabelError, FileNotFoundError,
            ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
