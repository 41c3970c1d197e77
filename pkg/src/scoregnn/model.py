"""The full multi-task model and its checkpoint container."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import torch
import torch.nn as nn

from .encoder import EncoderConfig, GraphBatch, HybridEncoder
from .heads import LogitFusion, TaskHeads
from .ingest import TaskSchema, TaskSpec
from .loss import UncertaintyWeighting, task_ce

CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    head_hidden: int = 256
    fusion_dim: int = 128
    fusion_heads: int = 4
    logit_fusion: bool = True

    def to_dict(self) -> dict:
        return {"encoder": self.encoder.to_dict(), "head_hidden": self.head_hidden,
                "fusion_dim": self.fusion_dim, "fusion_heads": self.fusion_heads,
                "logit_fusion": self.logit_fusion}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["encoder"] = EncoderConfig(**d["encoder"])
        return cls(**d)


class AnalysisModel(nn.Module):
    def __init__(self, schema: TaskSchema, cfg: ModelConfig | None = None):
        super().__init__()
        cfg = cfg or ModelConfig()
        self.cfg = cfg
        self.schema = schema
        self.encoder = HybridEncoder(cfg.encoder)
        self.heads = TaskHeads(schema, cfg.encoder.out, cfg.head_hidden, cfg.encoder.dropout)
        self.fusion = LogitFusion(schema, cfg.fusion_dim, cfg.fusion_heads) if cfg.logit_fusion else None
        self.weighting = UncertaintyWeighting(len(schema))

    def forward(self, batch: GraphBatch) -> tuple[dict, dict]:
        """Return (raw logits, final logits); final equals raw without fusion."""
        h = self.encoder(batch)
        raw = self.heads(h)
        fused = self.fusion(raw) if self.fusion is not None else raw
        return raw, fused

    def task_losses(self, batch: GraphBatch, raw: dict, fused: dict, aux_raw_ce: bool = False) -> torch.Tensor:
        losses = []
        for name in self.schema.names:
            loss = task_ce(fused[name], batch.labels[name], batch.mask[name])
            if aux_raw_ce and self.fusion is not None:
                loss = loss + task_ce(raw[name], batch.labels[name], batch.mask[name])
            losses.append(loss)
        return torch.stack(losses)

    def loss(self, batch: GraphBatch, aux_raw_ce: bool = False):
        raw, fused = self(batch)
        per_task = self.task_losses(batch, raw, fused, aux_raw_ce)
        return self.weighting(per_task), per_task


def schema_to_dict(schema: TaskSchema) -> list:
    return [{"name": t.name, "classes": list(t.classes), "level": t.level, "metric": t.metric,
             "is_nct": t.is_nct, "aux": t.aux} for t in schema]


def schema_from_dict(items) -> TaskSchema:
    return TaskSchema(tuple(TaskSpec(d["name"], tuple(d["classes"]), d["level"], d["metric"],
                                     d["is_nct"], d["aux"]) for d in items))


def config_hash(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class Checkpoint:
    step: int
    model_config: dict
    train_config: dict
    schema: list
    state: dict
    optimizer_state: dict | None = None
    metrics: dict = field(default_factory=dict)
    version: int = CHECKPOINT_VERSION

    @property
    def config_hash(self) -> str:
        return config_hash({"model": self.model_config, "train": self.train_config, "schema": self.schema})

    def task_schema(self) -> TaskSchema:
        return schema_from_dict(self.schema)

    def build_model(self) -> AnalysisModel:
        model = AnalysisModel(self.task_schema(), ModelConfig.from_dict(self.model_config))
        expected = model.state_dict()
        for key, value in self.state.items():
            if key in expected and expected[key].shape != value.shape:
                raise ValueError(f"parameter {key}: checkpoint shape {tuple(value.shape)} "
                                 f"does not match config shape {tuple(expected[key].shape)}")
        model.load_state_dict(self.state)
        model.eval()
        return model

    def save(self, path) -> None:
        payload = {
            "version": self.version, "step": self.step, "model_config": self.model_config,
            "train_config": self.train_config, "schema": self.schema, "state": self.state,
            "optimizer_state": self.optimizer_state, "metrics": self.metrics,
            "config_hash": self.config_hash,
        }
        torch.save(payload, Path(path))

    @classmethod
    def load(cls, path) -> "Checkpoint":
        payload = torch.load(Path(path), map_location="cpu", weights_only=False)
        if payload.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
        payload.pop("config_hash", None)
        return cls(**payload)


def checkpoint_from_model(model: AnalysisModel, step: int = 0, train_config: dict | None = None,
                          optimizer=None, metrics: dict | None = None) -> Checkpoint:
    return Checkpoint(
        step=step,
        model_config=model.cfg.to_dict(),
        train_config=dict(train_config or {}),
        schema=schema_to_dict(model.schema),
        state={k: v.detach().clone() for k, v in model.state_dict().items()},
        optimizer_state=optimizer.state_dict() if optimizer is not None else None,
        metrics=dict(metrics or {}),
    )
