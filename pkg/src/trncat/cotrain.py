"""Joint training of the text and network modules with pooled pseudo labels."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .corpus_io import Corpus, CorpusError, LabelSpace, SeedSet
from .evaluation import evaluate
from .gnn import (FeatureMatrix, GnnModel, GnnTrainConfig, TrainingError, init_model,
                  predict_gnn, save_gnn, train_gnn)
from .network import PHRASE, PhraseEntry, PhraseVocabulary, TextRichNetwork
from .ppr import DEFAULT_BETA, DEFAULT_EPSILON, DEFAULT_K, NeighborTable, build_neighbor_table
from .text_model import (POST_FINETUNE, PRE_FINETUNE, DefaultTextModel, TextModel,
                         TextTrainConfig, build_vocab, predict_text, train_text)

log = logging.getLogger(__name__)

SEED, TEXT, GNN, BOTH = "seed", "text", "gnn", "both"


@dataclass(frozen=True)
class PseudoLabel:
    doc_id: str
    label: str
    confidence: float


@dataclass(frozen=True)
class PoolEntry:
    label: str
    confidence: float
    source: str


@dataclass
class PseudoLabelPool:
    entries: dict[str, PoolEntry]
    iteration: int = 0

    def __len__(self) -> int:
        return len(self.entries)

    def assignment(self) -> dict[str, str]:
        return {d: e.label for d, e in self.entries.items()}

    def count(self, source: str) -> int:
        return sum(1 for e in self.entries.values() if e.source == source)


@dataclass(frozen=True)
class CoTrainConfig:
    confidence_threshold: float = 0.9
    top_m_per_class: int = 50
    top_fraction: float | None = None
    max_iterations: int = 5
    feature_sharing: bool = True
    reinitialize: bool = True
    rng_seed: int = 0
    hidden_dim: int = 64
    embedding_dim: int = 64
    vocab_min_count: int = 2
    beta: float = DEFAULT_BETA
    epsilon: float = DEFAULT_EPSILON
    K: int = DEFAULT_K
    text: TextTrainConfig = field(default_factory=TextTrainConfig)
    gnn: GnnTrainConfig = field(default_factory=GnnTrainConfig)

    def __post_init__(self):
        if not 0 < self.confidence_threshold < 1:
            raise ValueError("confidence_threshold must lie in (0, 1)")
        if self.top_m_per_class < 1:
            raise ValueError("top_m_per_class must be >= 1")
        if self.top_fraction is not None and not 0 < self.top_fraction <= 1:
            raise ValueError("top_fraction must lie in (0, 1]")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")

    def iteration_seed(self, iteration: int) -> int:
        return self.rng_seed * 1_000_003 + iteration

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, flat: Mapping[str, object]) -> "CoTrainConfig":
        """Build from flat keys; ``text.*`` / ``gnn.*`` prefixes address sub-configs."""
        top, text, gnn = {}, {}, {}
        for k, v in flat.items():
            if k.startswith("text."):
                text[k[5:]] = v
            elif k.startswith("gnn."):
                gnn[k[4:]] = v
            elif k in ("text", "gnn") and isinstance(v, Mapping):
                (text if k == "text" else gnn).update(v)
            else:
                top[k] = v
        known = set(cls.__dataclass_fields__)
        unknown = set(top) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**top, text=TextTrainConfig(**text), gnn=GnnTrainConfig(**gnn))
        except TypeError as exc:
            raise ValueError(f"bad config: {exc}") from exc


def confident_predictions(predictions: Mapping[str, tuple[str, float]], threshold: float,
                          top_m: int, exclude: Iterable[str] = (),
                          top_fraction: float | None = None) -> list[PseudoLabel]:
    """Threshold filter then per-class top-M (ties by ascending doc id).

    With ``top_fraction`` the per-class cut is ceil(fraction * survivors)
    instead of ``top_m``.
    """
    excluded = set(exclude)
    by_class: dict[str, list[PseudoLabel]] = {}
    for doc_id, (label, conf) in predictions.items():
        if doc_id in excluded or conf < threshold:
            continue
        by_class.setdefault(label, []).append(PseudoLabel(doc_id, label, float(conf)))
    out = []
    for label in sorted(by_class):
        group = sorted(by_class[label], key=lambda p: (-p.confidence, p.doc_id))
        keep = top_m if top_fraction is None else math.ceil(top_fraction * len(group))
        out.extend(group[:keep])
    return out


def merge_pools(seeds: SeedSet, t1: Iterable[PseudoLabel], t2: Iterable[PseudoLabel],
                iteration: int = 0) -> PseudoLabelPool:
    """Seeds always win; cross-source conflicts go to the higher confidence, exact ties drop."""
    text = {p.doc_id: p for p in t1}
    gnn = {p.doc_id: p for p in t2}
    entries = {d: PoolEntry(lab, 1.0, SEED) for d, lab in seeds.entries.items()}
    for doc_id in sorted(set(text) | set(gnn)):
        if doc_id in entries:
            continue
        a, b = text.get(doc_id), gnn.get(doc_id)
        if a is None or b is None:
            p, src = (a, TEXT) if b is None else (b, GNN)
            entries[doc_id] = PoolEntry(p.label, p.confidence, src)
        elif a.label == b.label:
            entries[doc_id] = PoolEntry(a.label, max(a.confidence, b.confidence), BOTH)
        elif a.confidence > b.confidence:
            entries[doc_id] = PoolEntry(a.label, a.confidence, TEXT)
        elif b.confidence > a.confidence:
            entries[doc_id] = PoolEntry(b.label, b.confidence, GNN)
    return PseudoLabelPool(entries, iteration)


@dataclass
class IterationRecord:
    iteration: int
    pool_size: int
    n_seed: int
    n_text: int
    n_gnn: int
    n_both: int
    t1_per_class: dict[str, int]
    t2_per_class: dict[str, int]
    changed: bool
    seconds: float
    feature_digest: str
    dev: dict | None = None
    pool: PseudoLabelPool | None = field(default=None, repr=False)
    t1: list[PseudoLabel] = field(default_factory=list, repr=False)
    t2: list[PseudoLabel] = field(default_factory=list, repr=False)
    trained_on: dict[str, str] = field(default_factory=dict, repr=False)

    def summary(self) -> dict:
        out = {k: getattr(self, k) for k in (
            "iteration", "pool_size", "n_seed", "n_text", "n_gnn", "n_both",
            "t1_per_class", "t2_per_class", "changed", "seconds", "feature_digest")}
        if self.dev is not None:
            out["dev"] = self.dev
        return out


class JointResult(NamedTuple):
    text_model: TextModel
    gnn_model: GnnModel
    trace: list[IterationRecord]
    pool: PseudoLabelPool
    table: NeighborTable


def default_text_factory(corpus: Corpus, network: TextRichNetwork, labels: LabelSpace,
                         config: CoTrainConfig) -> Callable[[int], TextModel]:
    phrases = PhraseVocabulary(tuple(
        PhraseEntry(tuple(d.split(" ")), 0, 0)
        for k, d in zip(network.kinds, network.displays) if k == PHRASE
    ))
    vocab = build_vocab(corpus, phrases, config.vocab_min_count)
    return lambda seed: DefaultTextModel(vocab, labels, config.embedding_dim, rng_seed=seed)


def _digest(values: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(values).tobytes()).hexdigest()[:16]


def _per_class(items: Sequence[PseudoLabel]) -> dict[str, int]:
    out: dict[str, int] = {}
    for p in items:
        out[p.label] = out.get(p.label, 0) + 1
    return dict(sorted(out.items()))


def run_joint_training(corpus: Corpus, network: TextRichNetwork, labels: LabelSpace,
                       seeds: SeedSet, config: CoTrainConfig = CoTrainConfig(), *,
                       table: NeighborTable | None = None,
                       text_factory: Callable[[int], TextModel] | None = None,
                       dev: Corpus | None = None,
                       run_dir: str | os.PathLike | None = None) -> JointResult:
    """Alternate text / GNN training with pooled confident pseudo labels.

    Stops after ``max_iterations`` or once an iteration reproduces the
    previous iteration's doc -> label pool.  The last trained text model is
    the deployment classifier.
    """
    seeds.validate(corpus, labels)
    node_of = network.node_of()
    missing = [d.id for d in corpus if d.id not in node_of]
    if missing:
        raise CorpusError(f"document {missing[0]!r} has no textual node in the network")
    if table is None:
        table = build_neighbor_table(network, config.beta, config.epsilon, config.K)
    if text_factory is None:
        text_factory = default_text_factory(corpus, network, labels, config)

    docs = list(corpus)
    doc_nodes = tuple(node_of[d.id] for d in docs)
    unlabeled = [d for d in docs if d.id not in seeds.entries]
    unlabeled_nodes = [node_of[d.id] for d in unlabeled]
    label_ids = labels.ids

    text_model = text_factory(config.iteration_seed(0))
    X = FeatureMatrix(doc_nodes, text_model.embed(docs, PRE_FINETUNE))
    gnn_model: GnnModel | None = None
    T = dict(seeds.entries)
    pool = merge_pools(seeds, (), ())
    previous: dict[str, str] | None = None
    trace: list[IterationRecord] = []

    for it in range(1, config.max_iterations + 1):
        started = time.perf_counter()
        seed = config.iteration_seed(it)
        trained_on = dict(T)
        feature_digest = _digest(X.values)
        try:
            if config.reinitialize:
                text_model = text_factory(seed)
            train_text(text_model, corpus, T, replace(config.text, rng_seed=seed))
            if config.reinitialize or gnn_model is None:
                gnn_model = init_model(X.dim, config.hidden_dim, len(labels), rng_seed=seed)
            gnn_model = train_gnn(
                gnn_model, X, table, {node_of[d]: labels.index(lab) for d, lab in T.items()},
                replace(config.gnn, rng_seed=seed),
            )
            text_pred = {d: (lab, float(p.max())) for d, (lab, p) in
                         predict_text(text_model, unlabeled).items()}
            gnn_raw = predict_gnn(gnn_model, X, table, unlabeled_nodes)
            gnn_pred = {d.id: (label_ids[gnn_raw[n][0]], float(gnn_raw[n][1].max()))
                        for d, n in zip(unlabeled, unlabeled_nodes)}
            t1 = confident_predictions(text_pred, config.confidence_threshold,
                                       config.top_m_per_class, seeds.entries, config.top_fraction)
            t2 = confident_predictions(gnn_pred, config.confidence_threshold,
                                       config.top_m_per_class, seeds.entries, config.top_fraction)
            if config.feature_sharing:
                X = FeatureMatrix(doc_nodes, text_model.embed(docs, POST_FINETUNE))
        except (TrainingError, ValueError, KeyError) as exc:
            raise TrainingError(f"iteration {it}: {exc}") from exc
        pool = merge_pools(seeds, t1, t2, iteration=it)
        T = pool.assignment()
        changed = previous is None or T != previous
        previous = T

        dev_report = None
        if dev is not None and len(dev):
            preds = {d: lab for d, (lab, _) in predict_text(text_model, list(dev)).items()}
            report = evaluate(preds, dev, labels)
            dev_report = {"micro_f1": report.micro_f1, "macro_f1": report.macro_f1}
        record = IterationRecord(
            iteration=it, pool_size=len(pool), n_seed=pool.count(SEED),
            n_text=pool.count(TEXT), n_gnn=pool.count(GNN), n_both=pool.count(BOTH),
            t1_per_class=_per_class(t1), t2_per_class=_per_class(t2), changed=changed,
            seconds=round(time.perf_counter() - started, 3), feature_digest=feature_digest,
            dev=dev_report, pool=pool, t1=t1, t2=t2, trained_on=trained_on,
        )
        trace.append(record)
        log.info("iteration %d: %s", it, json.dumps(record.summary()))
        if run_dir is not None:
            _checkpoint(run_dir, it, text_model, gnn_model, record)
        if not changed:
            break

    return JointResult(text_model, gnn_model, trace, pool, table)


def _checkpoint(run_dir, it: int, text_model: TextModel, gnn_model: GnnModel,
                record: IterationRecord) -> None:
    d = os.path.join(run_dir, f"iter_{it:02d}")
    os.makedirs(d, exist_ok=True)
    if hasattr(text_model, "save"):
        text_model.save(os.path.join(d, "text_model.npz"))
    save_gnn(gnn_model, os.path.join(d, "gnn_model.npz"))
    with open(os.path.join(run_dir, "trace.jsonl"), "a", encoding="utf-8") as f:
        f.write(json.dumps(record.summary()) + "\n")


def write_trace(trace: Sequence[IterationRecord], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in trace:
            f.write(json.dumps(rec.summary()) + "\n")
