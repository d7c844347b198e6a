"""Similarity-driven batch construction (hard negatives share a batch)."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, ContractError
from .objectives import EmbeddingBatch

REMAINDER_POLICIES = ("keep", "merge")


@dataclass
class MiningPlan:
    epoch: int
    batches: list[list[str]]
    similarity_source: str = "satellite"

    def ids(self) -> list[str]:
        return [i for batch in self.batches for i in batch]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "batch_index", "id"])
            for b, batch in enumerate(self.batches):
                for i in batch:
                    writer.writerow([self.epoch, b, i])


def _settle_remainder(batches: list[list[str]], batch_size: int, policy: str) -> list[list[str]]:
    if len(batches) > 1 and len(batches[-1]) < batch_size:
        if policy == "merge" or len(batches[-1]) < 2:
            tail = batches.pop()
            batches[-1].extend(tail)
    return batches


def random_plan(ids: Sequence[str], batch_size: int, rng: np.random.Generator, epoch: int = 0,
                remainder: str = "keep", similarity_source: str = "satellite") -> MiningPlan:
    """Uniform random permutation batching, used before any embeddings exist."""
    if len(ids) < batch_size:
        raise ConfigError(f"dataset of {len(ids)} items is smaller than the batch size {batch_size}")
    order = [ids[i] for i in rng.permutation(len(ids))]
    batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    return MiningPlan(epoch, _settle_remainder(batches, batch_size, remainder), similarity_source)


def build_mining_plan(embeddings: EmbeddingBatch, batch_size: int, rng: np.random.Generator,
                      epoch: int = 0, remainder: str = "keep",
                      similarity_source: str = "satellite") -> MiningPlan:
    """Greedy grouping: each random anchor takes its most similar unassigned neighbours."""
    if remainder not in REMAINDER_POLICIES:
        raise ConfigError(f"unknown remainder policy {remainder!r}")
    if batch_size < 2:
        raise ConfigError("batch size must be >= 2")
    if not embeddings.normalized:
        raise ContractError("mining needs normalized embeddings")
    ids = list(embeddings.ids)
    n = len(ids)
    if n < batch_size:
        raise ConfigError(f"dataset of {n} items is smaller than the batch size {batch_size}")
    vecs = embeddings.numpy().astype(np.float64)
    sim = vecs @ vecs.T
    assigned = np.zeros(n, dtype=bool)
    batches = []
    for anchor in rng.permutation(n):
        if assigned[anchor]:
            continue
        assigned[anchor] = True
        row = np.where(assigned, -np.inf, sim[anchor])
        free = n - int(assigned.sum())
        take = min(batch_size - 1, free)
        # stable sort keeps index order among equal similarities
        neighbours = np.argsort(-row, kind="stable")[:take]
        assigned[neighbours] = True
        batches.append([ids[anchor]] + [ids[j] for j in neighbours])
    return MiningPlan(epoch, _settle_remainder(batches, batch_size, remainder), similarity_source)


def mean_intra_batch_similarity(embeddings: EmbeddingBatch, plan: MiningPlan) -> float:
    index = {k: i for i, k in enumerate(embeddings.ids)}
    vecs = embeddings.numpy().astype(np.float64)
    values = []
    for batch in plan.batches:
        v = vecs[[index[i] for i in batch]]
        s = v @ v.T
        m = len(batch)
        if m > 1:
            values.append((s.sum() - np.trace(s)) / (m * (m - 1)))
    return float(np.mean(values))
