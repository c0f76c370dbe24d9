"""Command-line driver: synth, build-net, train, predict, eval."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import __version__
from .corpus_io import (CorpusError, check_labels, load_corpus, load_labels, load_seeds,
                        read_predictions, select_seeds, write_corpus, write_labels,
                        write_predictions, write_seeds)
from .cotrain import CoTrainConfig, run_joint_training, write_trace
from .evaluation import evaluate
from .gnn import TrainingError, save_gnn
from .network import (build_network, load_network, load_phrases, mine_phrases,
                      network_summary, save_network)
from .ppr import (DEFAULT_BETA, DEFAULT_EPSILON, DEFAULT_K, NeighborTable,
                  build_neighbor_table, cache_key)
from .synth import SynthSpec, generate_synthetic
from .text_model import load_text_model, predict_text

log = logging.getLogger("trncat")

NEIGHBORS_FILE = "neighbors.tsv"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _echo(title: str, payload) -> None:
    print(f"[{title}] {json.dumps(payload, sort_keys=True)}", file=sys.stderr)


def flatten_config(config: CoTrainConfig) -> dict:
    flat = {}
    for k, v in config.to_dict().items():
        if isinstance(v, dict):
            flat.update({f"{k}.{sub}": x for sub, x in v.items()})
        else:
            flat[k] = v
    return flat


def _parse_override(item: str) -> tuple[str, object]:
    key, sep, raw = item.partition("=")
    if not sep:
        raise ValueError(f"--set expects key=value, got {item!r}")
    try:
        return key, json.loads(raw)
    except json.JSONDecodeError:
        return key, raw


def resolve_config(path: str | None, overrides: list[str]) -> CoTrainConfig:
    flat: dict = {}
    if path:
        with open(path, encoding="utf-8") as f:
            flat = json.load(f)
        if not isinstance(flat, dict):
            raise ValueError(f"{path}: config must be a JSON object")
    flat.update(_parse_override(o) for o in overrides)
    return CoTrainConfig.from_dict(flat)


def neighbor_table(network, network_dir: str, beta: float, epsilon: float, K: int) -> NeighborTable:
    """Reuse ``neighbors.tsv`` when its header matches, otherwise rebuild and rewrite it."""
    path = os.path.join(network_dir, NEIGHBORS_FILE)
    key = cache_key(network.digest(), beta, epsilon, K)
    if os.path.exists(path):
        table = NeighborTable.load(path, key)
        if table is not None:
            log.info("neighbor table cache hit: %s", path)
            return table
    table = build_neighbor_table(network, beta, epsilon, K)
    table.save(path)
    return table


def cmd_synth(args) -> int:
    spec = SynthSpec(n_classes=args.n_classes, docs_per_class=args.docs_per_class,
                     class_vocab_size=args.class_vocab_size,
                     shared_vocab_size=args.shared_vocab_size,
                     attrs_per_class=args.attrs_per_class, attribute_purity=args.attribute_purity,
                     label_name_mention_rate=args.mention_rate,
                     noise_token_rate=args.noise_token_rate, doc_length=args.doc_length,
                     rng_seed=args.rng_seed)
    _echo("synth", spec.to_dict())
    corpus, labels = generate_synthetic(spec)
    os.makedirs(args.out, exist_ok=True)
    write_corpus(corpus, os.path.join(args.out, "corpus.jsonl"))
    write_labels(labels, os.path.join(args.out, "labels.json"))
    if args.test_fraction > 0:
        train, test = corpus.split(args.test_fraction, args.rng_seed)
        write_corpus(train, os.path.join(args.out, "train.jsonl"))
        write_corpus(test, os.path.join(args.out, "test.jsonl"))
    return 0


def cmd_build_net(args) -> int:
    corpus = load_corpus(args.corpus)
    labels = load_labels(args.labels)
    check_labels(corpus, labels)
    if args.phrases:
        phrases = load_phrases(args.phrases, corpus)
    else:
        phrases = mine_phrases(corpus, args.phrase_min_count, args.phrase_max_len)
    network = build_network(corpus, phrases, labels)
    save_network(network, args.out)
    _echo("network", {**network_summary(network), "beta": args.beta,
                      "epsilon": args.epsilon, "K": args.K})
    neighbor_table(network, args.out, args.beta, args.epsilon, args.K)
    return 0


def cmd_train(args) -> int:
    config = resolve_config(args.config, args.set or [])
    corpus = load_corpus(args.corpus)
    labels = load_labels(args.labels)
    check_labels(corpus, labels)
    dev = load_corpus(args.dev) if args.dev else None
    if dev is not None:
        check_labels(dev, labels)
    if args.seeds:
        seeds = load_seeds(args.seeds)
    else:
        seeds = select_seeds(corpus, labels, args.n_seeds, config.rng_seed)
    network = load_network(args.network)
    _echo("config", flatten_config(config))
    _echo("seeds", {"rng_seed": config.rng_seed,
                    "iteration_seeds": [config.iteration_seed(i)
                                        for i in range(1, config.max_iterations + 1)],
                    "documents": dict(sorted(seeds.entries.items()))})

    os.makedirs(args.out, exist_ok=True)
    trace_path = os.path.join(args.out, "trace.jsonl")
    if os.path.exists(trace_path):
        os.remove(trace_path)
    with open(os.path.join(args.out, "config.json"), "w", encoding="utf-8") as f:
        json.dump(flatten_config(config), f, indent=2, sort_keys=True)
    write_seeds(seeds, os.path.join(args.out, "seeds.jsonl"))

    table = neighbor_table(network, args.network, config.beta, config.epsilon, config.K)
    result = run_joint_training(corpus, network, labels, seeds, config, table=table, dev=dev,
                                run_dir=args.out)
    write_trace(result.trace, trace_path)
    result.text_model.save(os.path.join(args.out, "text_model.npz"))
    save_gnn(result.gnn_model, os.path.join(args.out, "gnn_model.npz"))
    preds = predict_text(result.text_model, list(corpus))
    write_predictions({d: (lab, float(p.max())) for d, (lab, p) in preds.items()},
                      os.path.join(args.out, "predictions.tsv"), labels)
    _echo("done", {"iterations": len(result.trace), "pool_size": len(result.pool)})
    return 0


def cmd_predict(args) -> int:
    model = load_text_model(args.model)
    corpus = load_corpus(args.corpus)
    preds = predict_text(model, list(corpus))
    write_predictions({d: (lab, float(p.max())) for d, (lab, p) in preds.items()},
                      args.out, model.labels)
    _echo("predict", {"documents": len(preds), "out": args.out})
    return 0


def cmd_eval(args) -> int:
    labels = load_labels(args.labels)
    gold = load_corpus(args.corpus)
    check_labels(gold, labels)
    preds = {d: lab for d, (lab, _) in read_predictions(args.predictions).items()}
    report = json.dumps(evaluate(preds, gold, labels).to_dict(), indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(report + "\n")
    print(report)
    return 0


def cmd_default_config(args) -> int:
    print(json.dumps(flatten_config(CoTrainConfig()), indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="trncat", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a planted-structure corpus")
    s.add_argument("--out", required=True)
    defaults = SynthSpec()
    s.add_argument("--n-classes", type=int, default=defaults.n_classes)
    s.add_argument("--docs-per-class", type=int, default=defaults.docs_per_class)
    s.add_argument("--class-vocab-size", type=int, default=defaults.class_vocab_size)
    s.add_argument("--shared-vocab-size", type=int, default=defaults.shared_vocab_size)
    s.add_argument("--attrs-per-class", type=int, default=defaults.attrs_per_class)
    s.add_argument("--attribute-purity", type=float, default=defaults.attribute_purity)
    s.add_argument("--mention-rate", type=float, default=defaults.label_name_mention_rate)
    s.add_argument("--noise-token-rate", type=float, default=defaults.noise_token_rate)
    s.add_argument("--doc-length", type=int, default=defaults.doc_length)
    s.add_argument("--rng-seed", type=int, default=defaults.rng_seed)
    s.add_argument("--test-fraction", type=float, default=0.0,
                   help="also write a stratified train.jsonl/test.jsonl split")
    s.set_defaults(func=cmd_synth)

    b = sub.add_parser("build-net", help="build network files and the neighbor table")
    b.add_argument("--corpus", required=True)
    b.add_argument("--labels", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--phrases", help="external phrase list, one per line")
    b.add_argument("--phrase-min-count", type=int, default=5)
    b.add_argument("--phrase-max-len", type=int, default=4)
    b.add_argument("--beta", type=float, default=DEFAULT_BETA)
    b.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    b.add_argument("--K", type=int, default=DEFAULT_K)
    b.set_defaults(func=cmd_build_net)

    t = sub.add_parser("train", help="joint training run")
    t.add_argument("--corpus", required=True)
    t.add_argument("--labels", required=True)
    t.add_argument("--network", required=True, help="directory written by build-net")
    t.add_argument("--out", required=True, help="run directory")
    t.add_argument("--config", help="flat JSON config file")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override")
    t.add_argument("--seeds", help="seed file; otherwise drawn with the config rng_seed")
    t.add_argument("--n-seeds", type=int, default=3, help="seeds per class when drawing")
    t.add_argument("--dev", help="labeled dev corpus scored every iteration")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("predict", help="label new documents with a trained text model")
    r.add_argument("--model", required=True)
    r.add_argument("--corpus", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_predict)

    e = sub.add_parser("eval", help="score a predictions file")
    e.add_argument("--predictions", required=True)
    e.add_argument("--corpus", required=True)
    e.add_argument("--labels", required=True)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("default-config", help="print every config key with its default")
    c.set_defaults(func=cmd_default_config)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CorpusError, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
