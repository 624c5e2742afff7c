"""Per-head audio-grounding scores from traces and word alignments.

A head is audio-critical when its top-K attended indices, at the steps that
generate a word, land inside that word's audio-token span. The per-step hit
ratio is averaged over all word-aligned steps into an L x H score matrix.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatchError
from .trace import AttentionTrace, AudioSpan, WordAlignment, WordStepMap, word_to_audio_span

DEFAULT_TOP_K = 24


@dataclass(frozen=True)
class TopKConfig:
    k: int = DEFAULT_TOP_K

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass(frozen=True)
class HeadScoreMatrix:
    """scores[layer, head] in [0, 1]; num_samples = aggregated decoding steps."""

    scores: np.ndarray
    num_samples: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.scores.shape


def topk_indices(attention_row: np.ndarray, k: int) -> frozenset[int]:
    """Indices of the k largest attention values, ties going to lower indices."""
    row = np.asarray(attention_row)
    if k < 1:
        raise ValueError("k must be >= 1")
    if row.ndim != 1 or row.size < 1:
        raise ValueError("attention row must be a non-empty 1-D array")
    if k >= row.size:
        return frozenset(range(row.size))
    order = np.argsort(-row, kind="stable")
    return frozenset(int(i) for i in order[:k])


def step_hit_ratio(topk: frozenset[int], span: AudioSpan, k: int) -> float:
    """Fraction of the top-k indices falling inside the word's audio span."""
    if k < 1:
        raise ValueError("k must be >= 1")
    hits = sum(1 for i in topk if span.start_index <= i <= span.end_index)
    return hits / k


def score_heads(
    trace: AttentionTrace,
    words: list[WordAlignment],
    word_step_map: WordStepMap,
    cfg: TopKConfig = TopKConfig(),
) -> HeadScoreMatrix:
    """Mean per-head hit ratio over all word-aligned decoding steps.

    Each step is scored against the span of its own word; steps not aligned
    to any word are ignored. An empty map yields a zero matrix.
    """
    shape = (trace.num_layers, trace.num_heads)
    totals = np.zeros(shape, dtype=np.float64)
    num_samples = 0
    steps_by_index = {step.step_index: step for step in trace.steps}
    for word_index, step_indices in word_step_map.entries:
        span = word_to_audio_span(words[word_index], trace)
        for step_index in sorted(step_indices):
            step = steps_by_index[step_index]
            rows = step.attention  # [L, H, context]
            k = min(cfg.k, step.context_length)
            order = np.argsort(-rows, axis=-1, kind="stable")[..., :k]
            in_span = (order >= span.start_index) & (order <= span.end_index)
            totals += in_span.sum(axis=-1) / cfg.k
            num_samples += 1
    scores = totals / num_samples if num_samples else totals
    return HeadScoreMatrix(scores=scores, num_samples=num_samples)


def merge_scores(a: HeadScoreMatrix, b: HeadScoreMatrix) -> HeadScoreMatrix:
    """Sample-count-weighted mean of two score matrices."""
    if a.shape != b.shape:
        raise DimensionMismatchError(f"cannot merge shapes {a.shape} and {b.shape}")
    total = a.num_samples + b.num_samples
    if total == 0:
        return HeadScoreMatrix(scores=np.zeros(a.shape), num_samples=0)
    merged = (a.scores * a.num_samples + b.scores * b.num_samples) / total
    return HeadScoreMatrix(scores=merged, num_samples=total)


def save_scores(matrix: HeadScoreMatrix, path: str | Path) -> None:
    payload = {
        "num_layers": int(matrix.shape[0]),
        "num_heads": int(matrix.shape[1]),
        "num_samples": int(matrix.num_samples),
        "scores": matrix.scores.tolist(),
    }
    Path(path).write_text(json.dumps(payload, indent=1))


def load_scores(path: str | Path) -> HeadScoreMatrix:
    payload = json.loads(Path(path).read_text())
    scores = np.asarray(payload["scores"], dtype=np.float64)
    if scores.shape != (payload["num_layers"], payload["num_heads"]):
        raise DimensionMismatchError(
            f"{path}: scores shaped {scores.shape}, header says "
            f"({payload['num_layers']}, {payload['num_heads']})"
        )
    return HeadScoreMatrix(scores=scores, num_samples=int(payload["num_samples"]))
