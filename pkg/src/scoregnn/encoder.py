"""Hybrid encoder: heterogeneous graph convolutions alongside a bidirectional GRU."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .graph import EDGE_TYPES, N_FEATURES, NODE_TYPES, ScoreGraph

MERGES = ("concat_project", "sum")


@dataclass
class EncoderConfig:
    layers: int = 3
    hidden: int = 256
    out: int = 128
    dropout: float = 0.2
    merge: str = "concat_project"
    in_features: int = N_FEATURES

    def __post_init__(self):
        if self.layers < 1 or self.hidden < 1 or self.out < 1:
            raise ValueError("layers, hidden and out must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.merge not in MERGES:
            raise ValueError(f"merge must be one of {MERGES}")

    def to_dict(self) -> dict:
        return asdict(self)


def etype_key(etype) -> str:
    return "__".join(etype)


@dataclass
class GraphBatch:
    """Disjoint union of score graphs as tensors.

    ``seq`` holds, per graph, its note indices in (onset, pitch) order, padded
    with 0 past ``lengths``.
    """

    x: dict
    edges: dict
    seq: torch.Tensor
    lengths: torch.Tensor
    note_graph: torch.Tensor
    onset_group: torch.Tensor
    labels: dict = field(default_factory=dict)
    mask: dict = field(default_factory=dict)
    target: torch.Tensor | None = None
    names: list = field(default_factory=list)

    @property
    def n_notes(self) -> int:
        return self.x["note"].shape[0]

    def num_nodes(self, ntype: str) -> int:
        return self.x[ntype].shape[0]


def collate(graphs, labels=None, targets=None, schema=None, dtype=torch.float32) -> GraphBatch:
    """Stack ScoreGraphs (and optional LabelFrames / target masks) into one batch."""
    graphs = list(graphs)
    offsets = {nt: 0 for nt in NODE_TYPES}
    x = {nt: [] for nt in NODE_TYPES}
    edges = {et: [] for et in EDGE_TYPES}
    seqs, note_graph, groups = [], [], []
    group_offset = 0
    for gi, g in enumerate(graphs):
        for nt in NODE_TYPES:
            x[nt].append(g.features(nt))
        for et in EDGE_TYPES:
            e = g.edges[et]
            edges[et].append(e + np.array([[offsets[et[0]]], [offsets[et[2]]]]))
        seqs.append(g.note_order + offsets["note"])
        note_graph.append(np.full(g.n_notes, gi))
        groups.append(g.onset_group + group_offset)
        group_offset += int(g.onset_group.max()) + 1 if g.n_notes else 0
        for nt in NODE_TYPES:
            offsets[nt] += g.num_nodes(nt)
    lengths = torch.tensor([len(s) for s in seqs], dtype=torch.long)
    seq = torch.zeros(len(seqs), int(lengths.max()), dtype=torch.long)
    for i, s in enumerate(seqs):
        seq[i, :len(s)] = torch.from_numpy(s)
    batch = GraphBatch(
        x={nt: torch.from_numpy(np.concatenate(x[nt]).reshape(-1, N_FEATURES)).to(dtype) for nt in NODE_TYPES},
        edges={et: torch.from_numpy(np.concatenate(edges[et], axis=1).reshape(2, -1)).long()
               for et in EDGE_TYPES},
        seq=seq,
        lengths=lengths,
        note_graph=torch.from_numpy(np.concatenate(note_graph)).long(),
        onset_group=torch.from_numpy(np.concatenate(groups)).long(),
        names=[g.piece_id for g in graphs],
    )
    if targets is not None:
        batch.target = torch.from_numpy(np.concatenate(targets)).bool()
    if labels is not None:
        names = schema.names if schema is not None else list(labels[0].labels)
        for name in names:
            batch.labels[name] = torch.from_numpy(np.concatenate([f.labels[name] for f in labels])).long()
            batch.mask[name] = torch.from_numpy(np.concatenate([f.mask[name] for f in labels])).bool()
    return batch


def mean_aggregate(src_x: torch.Tensor, edges: torch.Tensor, n_dst: int) -> torch.Tensor:
    """Mean of source features over incoming edges; zero where there are none."""
    out = src_x.new_zeros(n_dst, src_x.shape[1])
    if edges.shape[1] == 0:
        return out
    out.index_add_(0, edges[1], src_x[edges[0]])
    deg = torch.bincount(edges[1], minlength=n_dst).clamp(min=1).to(src_x.dtype)
    return out / deg.unsqueeze(1)


class HeteroConv(nn.Module):
    """Per node type: self transform plus per-relation transforms of mean messages.

    Only the node types in ``targets`` are updated; the last layer of the
    branch updates notes alone since nothing reads the other types after it.
    """

    def __init__(self, in_dim: int, out_dim: int, edge_types=EDGE_TYPES, targets=NODE_TYPES):
        super().__init__()
        self.targets = tuple(targets)
        self.edge_types = tuple(et for et in edge_types if et[2] in self.targets)
        self.self_lin = nn.ModuleDict({nt: nn.Linear(in_dim, out_dim) for nt in self.targets})
        self.rel_lin = nn.ModuleDict({etype_key(et): nn.Linear(in_dim, out_dim, bias=False)
                                      for et in self.edge_types})

    def forward(self, x: dict, edges: dict) -> dict:
        out = {nt: self.self_lin[nt](x[nt]) for nt in self.targets}
        for et in self.edge_types:
            src, _, dst = et
            agg = mean_aggregate(x[src], edges[et], x[dst].shape[0])
            out[dst] = out[dst] + self.rel_lin[etype_key(et)](agg)
        return out


class GraphBranch(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        dims = [cfg.in_features] + [cfg.hidden] * cfg.layers
        self.convs = nn.ModuleList(
            HeteroConv(a, b, targets=NODE_TYPES if k < cfg.layers - 1 else ("note",))
            for k, (a, b) in enumerate(zip(dims[:-1], dims[1:])))
        self.dropout = cfg.dropout
        self.in_features = cfg.in_features

    def forward(self, batch: GraphBatch) -> torch.Tensor:
        x = batch.x
        if x["note"].shape[1] != self.in_features:
            raise ValueError(f"expected {self.in_features} note features, got {x['note'].shape[1]}")
        for conv in self.convs:
            x = conv(x, batch.edges)
            x = {nt: F.dropout(F.relu(v), self.dropout, self.training) for nt, v in x.items()}
        return x["note"]


class SequenceBranch(nn.Module):
    """Bidirectional multi-layer GRU over each graph's notes; directions summed.

    Each layer runs two unidirectional GRUs over the padded batch.  The
    backward one reads every sequence reversed within its own length, so
    padding always trails the real steps and never reaches a real output.
    This is exact and much faster on CPU than packed sequences.
    """

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.hidden = cfg.hidden
        self.dropout = nn.Dropout(cfg.dropout)
        widths = [cfg.in_features] + [2 * cfg.hidden] * (cfg.layers - 1)
        self.forward_rnn = nn.ModuleList(nn.GRU(w, cfg.hidden, batch_first=True) for w in widths)
        self.backward_rnn = nn.ModuleList(nn.GRU(w, cfg.hidden, batch_first=True) for w in widths)
        for name, p in self.named_parameters():
            if "bias" in name:
                nn.init.zeros_(p)

    def forward(self, batch: GraphBatch) -> torch.Tensor:
        x = batch.x["note"]
        padded = x[batch.seq]
        steps = torch.arange(padded.shape[1]).unsqueeze(0)
        lengths = batch.lengths.unsqueeze(1)
        valid = steps < lengths
        rev = torch.where(valid, lengths - 1 - steps, steps).unsqueeze(-1)

        def flip(t):
            return torch.gather(t, 1, rev.expand_as(t))

        h = padded
        for k, (fwd, bwd) in enumerate(zip(self.forward_rnn, self.backward_rnn)):
            if k:
                h = self.dropout(h)
            a, _ = fwd(h)
            b, _ = bwd(flip(h))
            h = torch.cat([a, flip(b)], dim=-1)
        out = h[..., :self.hidden] + h[..., self.hidden:]
        result = x.new_zeros(x.shape[0], self.hidden)
        result[batch.seq[valid]] = out[valid]
        return result


class HybridEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig | None = None):
        super().__init__()
        cfg = cfg or EncoderConfig()
        self.cfg = cfg
        self.graph = GraphBranch(cfg)
        self.sequence = SequenceBranch(cfg)
        width = 2 * cfg.hidden if cfg.merge == "concat_project" else cfg.hidden
        self.project = nn.Linear(width, cfg.out)

    def forward(self, batch: GraphBatch) -> torch.Tensor:
        g = self.graph(batch)
        s = self.sequence(batch)
        if g.shape != s.shape:
            raise ValueError(f"branch shapes differ: {tuple(g.shape)} vs {tuple(s.shape)}")
        merged = torch.cat([g, s], dim=1) if self.cfg.merge == "concat_project" else g + s
        return self.project(merged)


def encode(graph: ScoreGraph, encoder: HybridEncoder) -> torch.Tensor:
    dtype = next(encoder.parameters()).dtype
    return encoder(collate([graph], dtype=dtype))
