"""Command-line entry point.

Subcommands: convert, linearize, train, parse, eval, bench.  Exit codes:
0 success, 1 validation/usage error, 2 I/O error.  Config precedence for
training hyperparameters: command-line flags > --config JSON file >
built-in defaults.  Set ARBOR_LOG={error,info,debug} to control logging.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields

import numpy as np

from . import convert as conv
from . import formats
from .encoder import EncoderInput
from .evaluate import labeled_triple_f1, smatch_score, speed_bench, validity_audit
from .graph import Framework, GraphError
from .inference import parse as parse_graph
from .linearize import OrderingPolicy, arbor_to_relations, policy_for
from .model import ModelConfig, TransducerModel, build_vocabularies
from .training import TrainConfig, prepare_corpus, relation_f1, train as run_training

log = logging.getLogger("arbor")


class CliError(ValueError):
    pass


def _setup_logging() -> None:
    level = os.environ.get("ARBOR_LOG", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(
        level=levels.get(level, logging.INFO),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


# ---------------------------------------------------------------------------
# Graph file I/O by format


def _read_graphs(path: str, fmt: str, framework: Framework):
    """Yield (record_id, graph, tokens, pos) items."""
    if fmt == "penman":
        text = open(path, encoding="utf-8").read()
        blocks = [b.strip() for b in text.split("\n\n") if b.strip()]
        for i, block in enumerate(blocks):
            yield str(i), formats.read_penman(block), None, None
    elif fmt == "sdp":
        text = open(path, encoding="utf-8").read()
        for i, block in enumerate(formats.iter_sdp_blocks(text)):
            tokens, graph = formats.read_sdp(block)
            yield str(i), graph, [t.form for t in tokens], [t.pos for t in tokens]
    elif fmt == "canonical":
        for record in formats.read_canonical_file(path):
            yield record.id, record.graph(), record.tokens, record.pos
    else:
        raise CliError(f"unknown format {fmt!r}")


def _write_graph(fh, record_id: str, graph, fmt: str, tokens=None, pos=None):
    if fmt == "penman":
        fh.write(formats.write_penman(graph) + "\n\n")
    elif fmt == "sdp":
        if tokens is None:
            raise CliError("sdp output needs token rows; use canonical input")
        rows = [formats.SdpToken(t, t, p) for t, p in zip(tokens, pos or ["_"] * len(tokens))]
        fh.write(formats.write_sdp(rows, graph) + "\n")
    else:
        record = formats.CanonicalGraphRecord.from_graph(
            record_id, graph, tokens or [], pos or None
        )
        fh.write(formats.write_canonical(record) + "\n")


def _load_records(path: str):
    return formats.read_canonical_file(path)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_convert(args) -> int:
    framework = Framework(args.framework)
    with open(args.output, "w", encoding="utf-8") as out:
        if args.direction == "to-arbor":
            for record_id, graph, tokens, pos in _read_graphs(args.input, args.format, framework):
                if graph.framework != framework:
                    raise CliError(
                        f"record {record_id}: framework {graph.framework.value} != {args.framework}"
                    )
                arbor = conv.to_arbor(graph)
                out.write(formats.arbor_to_json(arbor, record_id) + "\n")
        else:
            with open(args.input, encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    record_id, arbor = formats.arbor_from_json(line)
                    graph = conv.from_arbor(arbor, framework)
                    _write_graph(out, record_id, graph, args.format)
    return 0


def cmd_linearize(args) -> int:
    policy = OrderingPolicy(args.policy)
    with open(args.input, encoding="utf-8") as fh, open(args.output, "w", encoding="utf-8") as out:
        for line in fh:
            if not line.strip():
                continue
            record_id, arbor = formats.arbor_from_json(line)
            seq = arbor_to_relations(arbor, policy)
            for rel in seq.relations:
                out.write(
                    f"{rel.source}\t{rel.source_index}\t{rel.rel}\t"
                    f"{rel.target}\t{rel.target_index}\n"
                )
            out.write("\n")
    return 0


def _train_config(args) -> TrainConfig:
    base = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            base.update(json.load(fh))
    names = {f.name for f in fields(TrainConfig)}
    unknown = set(base) - names
    if unknown:
        raise CliError(f"unknown config keys: {sorted(unknown)}")
    for name in names:
        value = getattr(args, name, None)
        if value is not None:
            base[name] = value
    return TrainConfig(**base)


def cmd_train(args) -> int:
    records = _load_records(args.train)
    dev_records = _load_records(args.dev) if args.dev else records
    train_pairs, sense_counts = prepare_corpus(records)
    dev_pairs, _ = prepare_corpus(dev_records)
    cfg = _train_config(args)

    overrides = {}
    if args.hidden:
        overrides.update(encoder_hidden=args.hidden, relation_hidden=2 * args.hidden)
    model_config = ModelConfig.defaults(args.framework, **overrides)
    if args.dropout is not None:
        model_config.dropout = args.dropout
    vocabs = build_vocabularies(model_config, [p[0] for p in train_pairs],
                                [p[1] for p in train_pairs])
    word_init = None
    if args.embeddings:
        table = formats.load_embeddings(args.embeddings, dim=model_config.word_dim)
        rng = np.random.default_rng(cfg.seed)
        word_init = rng.uniform(-0.1, 0.1, size=(len(vocabs.enc_word), model_config.word_dim))
        for i, token in enumerate(vocabs.enc_word.itos):
            vec = table.get(token)
            word_init[i] = vec if vec is not None else table.unk
    model = TransducerModel(model_config, vocabs, seed=cfg.seed,
                            word_init=word_init, sense_counts=sense_counts)
    log.info("training on %d pairs (%d dev), %d parameters",
             len(train_pairs), len(dev_pairs),
             sum(t.size for t in model.parameters().values()))
    result = run_training(model, train_pairs, dev_pairs, cfg, log_path=args.metrics)
    model.save(args.output)
    log.info("best dev F1 %.4f at epoch %d (%d epochs run)",
             result.best_dev_f1, result.best_epoch, result.epochs_run)
    return 0


def _parse_one(model, record, beam, max_len):
    inp = EncoderInput(tokens=list(record.tokens), pos=list(record.pos),
                       features={k: list(v) for k, v in record.features.items()})
    limit = max_len if max_len else 2 * len(record.tokens) + 10
    return parse_graph(model, inp, beam_size=beam, max_len=limit)


def cmd_parse(args) -> int:
    model = TransducerModel.load(args.model)
    records = _load_records(args.input)
    beam = 1 if args.greedy else args.beam
    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        graphs = list(pool.map(lambda r: _parse_one(model, r, beam, args.max_len), records))
    with open(args.output, "w", encoding="utf-8") as out:
        for record, graph in zip(records, graphs):
            _write_graph(out, record.id, graph, args.format, record.tokens, record.pos)
    return 0


def cmd_eval(args) -> int:
    gold = {r.id: r for r in _load_records(args.gold)}
    pred = {r.id: r for r in _load_records(args.pred)}
    missing = sorted(set(gold) - set(pred))
    if missing:
        raise CliError(f"predictions missing for ids: {missing[:5]}")

    def score_one(record_id):
        g, p = gold[record_id].graph(), pred[record_id].graph()
        if g.framework == Framework.AMR:
            return smatch_score(g, p, mode=args.smatch_mode)
        return labeled_triple_f1(g, p)

    ids = sorted(gold)
    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        reports = list(pool.map(score_one, ids))
    matched = sum(r.matched for r in reports)
    gold_total = sum(r.gold for r in reports)
    pred_total = sum(r.predicted for r in reports)
    precision = matched / pred_total if pred_total else 0.0
    recall = matched / gold_total if gold_total else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    audit = validity_audit([pred[i].graph() for i in ids])
    report = {
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "matched": matched,
        "gold_triples": gold_total,
        "predicted_triples": pred_total,
        "graphs": len(ids),
        "invalid_graphs": audit.invalid,
        "invalid_rate": audit.rate,
    }
    with open(args.output, "w", encoding="utf-8") as out:
        json.dump(report, out, indent=2)
        out.write("\n")
    print(json.dumps(report))
    return 0


def cmd_bench(args) -> int:
    model = TransducerModel.load(args.model)
    records = _load_records(args.input)
    inputs = [
        EncoderInput(tokens=list(r.tokens), pos=list(r.pos),
                     features={k: list(v) for k, v in r.features.items()})
        for r in records
    ]
    report = speed_bench(model, inputs, beam_size=args.beam,
                         max_len=args.max_len or 100)
    payload = {
        "greedy_tokens_per_sec": report.greedy_tokens_per_sec,
        "beam_tokens_per_sec": report.beam_tokens_per_sec,
        "linear_r2": report.linear_r2,
        "step_counts_exact": report.step_counts_exact,
    }
    with open(args.output, "w", encoding="utf-8") as out:
        json.dump(payload, out, indent=2)
        out.write("\n")
    print(json.dumps(payload))
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="arbor", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="graph file <-> unified arborescence JSONL")
    p.add_argument("--framework", required=True, choices=[f.value for f in Framework])
    p.add_argument("--direction", required=True, choices=["to-arbor", "from-arbor"])
    p.add_argument("--format", default="canonical", choices=["penman", "sdp", "canonical"])
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("linearize", help="arborescence JSONL -> relation TSV")
    p.add_argument("--policy", default="alphanumeric",
                   choices=[pol.value for pol in OrderingPolicy])
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_linearize)

    p = sub.add_parser("train", help="train a transducer on canonical JSONL")
    p.add_argument("--framework", required=True, choices=[f.value for f in Framework])
    p.add_argument("--train", required=True)
    p.add_argument("--dev")
    p.add_argument("--output", required=True, help="checkpoint path")
    p.add_argument("--metrics", help="JSONL metrics log path")
    p.add_argument("--config", help="JSON file with TrainConfig overrides")
    p.add_argument("--embeddings", help="pretrained word-vector file")
    p.add_argument("--hidden", type=int, help="encoder hidden size override")
    p.add_argument("--dropout", type=float)
    for name, typ in (("learning_rate", float), ("batch_size", int), ("max_epochs", int),
                      ("patience", int), ("seed", int), ("label_smoothing", float),
                      ("coverage_weight", float), ("max_grad_norm", float)):
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=typ, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("parse", help="checkpoint + sentences -> graphs")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help="canonical JSONL with tokens/pos")
    p.add_argument("--output", required=True)
    p.add_argument("--format", default="canonical", choices=["penman", "sdp", "canonical"])
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--greedy", action="store_true", help="force beam size 1")
    p.add_argument("--max-len", dest="max_len", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("eval", help="score predictions against gold graphs")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--output", required=True, help="JSON report path")
    p.add_argument("--smatch-mode", dest="smatch_mode", default="hill_climb",
                   choices=["hill_climb", "exact"])
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="decoding speed benchmark")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--max-len", dest="max_len", type=int, default=None)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, GraphError, formats.FormatError, formats.CheckpointError, ValueError) as exc:
        log.error("%s", exc)
        return 1
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
