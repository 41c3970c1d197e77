"""Mixed-corpus training: batching, schedule, optimisation and model selection."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from functools import lru_cache
from pathlib import Path

import numpy as np
import torch

from .encoder import EncoderConfig, collate
from .graph import (augmentations_for, build_graph, cache_filename, load_graph, sample_subgraph, transpose,
                    transpose_labels)
from .inference import evaluate
from .ingest import LabelFrame, TaskSchema
from .metrics import mean_score
from .model import AnalysisModel, Checkpoint, ModelConfig, checkpoint_from_model

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    subgraph_size: int = 500
    batch_size: int = 250
    max_batch_notes: int = 4000
    lr: float = 0.005
    weight_decay: float = 0.0005
    warmup_steps: int = 500
    max_steps: int = 5000
    seed: int = 0
    eval_interval: int = 100
    logit_fusion: bool = True
    transpositions: bool = True
    aux_tasks: bool = True
    aux_raw_ce: bool = False
    layers: int = 3
    hidden: int = 256
    out: int = 128
    dropout: float = 0.2
    merge: str = "concat_project"
    head_hidden: int = 256
    fusion_dim: int = 128
    fusion_heads: int = 4

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if not 0 <= self.warmup_steps < self.max_steps:
            raise ValueError("warmup_steps must be < max_steps")
        if self.subgraph_size < 1 or self.batch_size < 1:
            raise ValueError("subgraph_size and batch_size must be >= 1")

    @property
    def subgraphs_per_batch(self) -> int:
        return max(1, min(self.batch_size, self.max_batch_notes // self.subgraph_size))

    def model_config(self) -> ModelConfig:
        enc = EncoderConfig(self.layers, self.hidden, self.out, self.dropout, self.merge)
        return ModelConfig(enc, self.head_hidden, self.fusion_dim, self.fusion_heads, self.logit_fusion)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_mapping(cls, values: dict) -> "TrainConfig":
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            key = key.strip().replace("-", "_")
            if key not in types:
                raise ValueError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(raw, types[key])
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path, overrides: dict | None = None) -> "TrainConfig":
        values = read_flat_config(path) if path else {}
        values.update(overrides or {})
        return cls.from_mapping(values)


def _coerce(raw, typ):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    if typ in ("bool", bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if typ in ("int", int):
        return int(raw)
    if typ in ("float", float):
        return float(raw)
    return raw


def read_flat_config(path) -> dict:
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to ``cfg.lr`` then cosine decay to 0 at ``max_steps``."""
    if step < cfg.warmup_steps:
        return cfg.lr * (step + 1) / cfg.warmup_steps
    progress = (step - cfg.warmup_steps) / (cfg.max_steps - cfg.warmup_steps)
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * min(progress, 1.0)))


class Corpus:
    """Pieces of one dataset available for drawing, with lazily built graphs.

    With ``cache_dir`` graphs written by ``build-graphs`` are loaded instead of
    rebuilt when present.
    """

    def __init__(self, name: str, notes: dict, labels: dict, pieces=None, cache_dir=None):
        self.name = name
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self.notes = notes
        self.labels = labels
        self.pieces = sorted(pieces if pieces is not None else notes)
        self._graph = lru_cache(maxsize=4096)(self._build_graph)
        self._intervals = lru_cache(maxsize=None)(lambda p: augmentations_for(self.notes[p]))

    def __len__(self):
        return len(self.pieces)

    def subset(self, pieces) -> "Corpus":
        keep = set(pieces)
        c = Corpus(self.name, self.notes, self.labels, [p for p in self.pieces if p in keep], self.cache_dir)
        c._graph, c._intervals = self._graph, self._intervals
        return c

    def intervals(self, piece: str):
        return self._intervals(piece)

    def _build_graph(self, piece: str, interval=(0, 0)):
        if self.cache_dir is not None:
            path = self.cache_dir / cache_filename(piece, interval)
            if path.exists():
                g = load_graph(path)
                if g.piece_id == piece and g.n_notes == len(self.notes[piece]):
                    return g
                log.warning("ignoring stale cached graph %s", path)
        notes = self.notes[piece] if interval == (0, 0) else transpose(self.notes[piece], *interval)
        return build_graph(notes)

    def graph(self, piece: str, interval=(0, 0)):
        return self._graph(piece, tuple(interval))

    def frame(self, piece: str, schema: TaskSchema, interval=(0, 0)) -> LabelFrame:
        frame = self.labels.get(piece)
        if frame is None:
            frame = LabelFrame.empty(piece, [n.note_id for n in self.notes[piece]], schema)
        return transpose_labels(frame, schema, *interval)


@dataclass
class Draw:
    corpus: str
    piece: str
    interval: tuple


def make_batches(corpora, cfg: TrainConfig, rng, schema: TaskSchema):
    """Endless stream of (subgraphs, draws); corpora are visited round-robin."""
    active = [c for c in corpora if len(c)]
    if not active:
        raise ValueError("all corpora are empty")
    k = 0
    while True:
        subs, draws = [], []
        for _ in range(cfg.subgraphs_per_batch):
            corpus = active[k % len(active)]
            k += 1
            piece = corpus.pieces[int(rng.integers(len(corpus)))]
            interval = (0, 0)
            if cfg.transpositions:
                options = corpus.intervals(piece)
                interval = options[int(rng.integers(len(options)))]
            g = corpus.graph(piece, interval)
            frame = corpus.frame(piece, schema, interval)
            subs.append(sample_subgraph(g, frame, cfg.subgraph_size, rng))
            draws.append(Draw(corpus.name, piece, interval))
        yield subs, draws


@dataclass
class TrainResult:
    best: Checkpoint
    last: Checkpoint
    model: AnalysisModel
    loss_rows: list = field(default_factory=list)
    metric_rows: list = field(default_factory=list)


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def validation_scores(model: AnalysisModel, corpora, schema: TaskSchema) -> dict:
    scores = {}
    for corpus in corpora:
        if not len(corpus):
            continue
        pieces = {p: corpus.graph(p) for p in corpus.pieces}
        frames = {p: corpus.frame(p, schema) for p in corpus.pieces}
        scores[corpus.name] = evaluate(model, pieces, frames)
    return scores


def selection_score(scores: dict, schema: TaskSchema) -> float | None:
    """Unweighted mean over tasks of each task's own metric, averaged over corpora."""
    per_corpus = [mean_score(s.get(name) for name in schema.names) for s in scores.values()]
    return mean_score(per_corpus)


def train(cfg: TrainConfig, corpora, schema: TaskSchema, valid=None, out_dir=None) -> TrainResult:
    """Train on ``corpora`` (training pieces) and select on ``valid``."""
    valid = [c for c in (valid or []) if len(c)]
    if not valid:
        raise ValueError("training needs a non-empty validation split for model selection")
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    if not cfg.aux_tasks:
        schema = schema.without_aux()
    model = AnalysisModel(schema, cfg.model_config())
    optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    batches = make_batches(corpora, cfg, rng, schema)
    out_dir = Path(out_dir) if out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    names = schema.names
    loss_header = ["step", "lr", "loss"] + [f"L_{n}" for n in names] + [f"sigma2_{n}" for n in names]
    metric_header = ["step", "selection"] + names + (["csr"] if "local_key" in schema else [])
    loss_rows, metric_rows = [], []
    best, best_score = None, -math.inf

    def checkpoint(step, metrics=None):
        return checkpoint_from_model(model, step, cfg.to_dict(), optimizer, metrics)

    for step in range(cfg.max_steps):
        lr = lr_at(step, cfg)
        for group in optimizer.param_groups:
            group["lr"] = lr
        subs, draws = next(batches)
        batch = collate([s.graph for s in subs], [s.labels for s in subs], [s.target for s in subs], schema)
        model.train()
        loss, per_task = model.loss(batch, cfg.aux_raw_ce)
        if not torch.isfinite(loss):
            ids = "; ".join(f"{d.corpus}/{d.piece}@{d.interval}" for d in draws)
            raise TrainingDiverged(f"non-finite loss at step {step}; batch: {ids}")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        sigma2 = model.weighting.sigma2.detach()
        loss_rows.append([str(step), _fmt(lr), _fmt(loss.item())]
                         + [_fmt(v) for v in per_task.detach().tolist()]
                         + [_fmt(v) for v in sigma2.tolist()])
        done = step + 1
        if done % cfg.eval_interval == 0 or done == cfg.max_steps:
            scores = validation_scores(model, valid, schema)
            sel = selection_score(scores, schema)
            pooled = {n: mean_score(s.get(n) for s in scores.values()) for n in metric_header[2:]}
            metric_rows.append([str(done), _fmt(sel)] + [_fmt(pooled[n]) for n in metric_header[2:]])
            log.info("step %d loss %.4f selection %s", done, loss.item(), sel)
            score = sel if sel is not None else -math.inf
            if best is None or score > best_score:
                best_score = score
                best = checkpoint(done, {"selection": sel, "scores": scores})
                if out_dir:
                    best.save(out_dir / "best.ckpt")
    last = checkpoint(cfg.max_steps)
    if out_dir:
        last.save(out_dir / "last.ckpt")
        _write_tsv(out_dir / "loss.tsv", loss_header, loss_rows)
        _write_tsv(out_dir / "metrics.tsv", metric_header, metric_rows)
    return TrainResult(best, last, model, [loss_header] + loss_rows, [metric_header] + metric_rows)


def _write_tsv(path, header, rows) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(row) + "\n")
