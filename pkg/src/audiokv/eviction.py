"""Token-selection policies deciding which KV entries each head retains.

All policies share the same skeleton: the most recent `recent` context
positions are kept unconditionally (counted inside capacity), and the rest of
a head's capacity is filled with the highest-scoring older positions, ties
going to the lower index. They differ in where the scores come from: the
window-averaged attention as-is, spectrally smoothed, pooled, or accumulated
over the whole trace.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .budget import BudgetPlan
from .errors import CapacityBelowRecentError, DimensionMismatchError
from .spectral import SssConfig, sss
from .trace import AttentionTrace

DEFAULT_RECENT = 32
DEFAULT_POOL_WIDTH = 7


@dataclass(frozen=True)
class ObservationWindow:
    """Mean attention over the last `width` steps, padded to the final context."""

    width: int
    aggregated: np.ndarray  # [layers, heads, context] float64

    @property
    def context_length(self) -> int:
        return self.aggregated.shape[-1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.aggregated.shape[:2]


@dataclass(frozen=True)
class EvictionResult:
    """Per-head sorted retained token indices."""

    policy_name: str
    retained: tuple[tuple[np.ndarray, ...], ...]  # [layer][head] sorted int64
    context_length: int
    plan: BudgetPlan | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.retained), len(self.retained[0])

    def total_retained(self) -> int:
        return sum(len(r) for layer in self.retained for r in layer)


def build_observation_window(trace: AttentionTrace, width: int) -> ObservationWindow:
    """Average the last `width` steps' rows, zero-padding vanished tail positions.

    A width larger than the trace is clamped to the available steps.
    """
    if width < 1:
        raise ValueError("width must be >= 1")
    width = min(width, trace.num_steps)
    context = trace.final_context_length
    acc = np.zeros((trace.num_layers, trace.num_heads, context), dtype=np.float64)
    for step in trace.steps[-width:]:
        acc[:, :, : step.context_length] += step.attention
    acc /= width
    return ObservationWindow(width=width, aggregated=acc)


def _retain_for_head(scores: np.ndarray, capacity: int, recent: int) -> np.ndarray:
    """Recent positions plus the top-scored older positions, sorted."""
    context = scores.shape[0]
    if capacity < recent:
        raise CapacityBelowRecentError(f"capacity {capacity} < recent window {recent}")
    capacity = min(capacity, context)
    kept_recent = min(recent, context)
    boundary = context - kept_recent
    fill = capacity - kept_recent
    older_order = np.argsort(-scores[:boundary], kind="stable")
    chosen = older_order[:fill]
    retained = np.concatenate([chosen, np.arange(boundary, context)])
    return np.sort(retained.astype(np.int64))


def _check_dims(window: ObservationWindow, plan: BudgetPlan) -> None:
    if window.shape != plan.shape:
        raise DimensionMismatchError(
            f"window heads {window.shape} != plan heads {plan.shape}"
        )


def select_audiokv(
    window: ObservationWindow,
    plan: BudgetPlan,
    sss_cfg: SssConfig | None,
    recent: int = DEFAULT_RECENT,
) -> EvictionResult:
    """Head-budgeted top-score retention, optionally smoothing scores first."""
    _check_dims(window, plan)
    layers, heads = window.shape
    context = window.context_length
    boundary = max(context - recent, 0)
    retained = []
    for layer in range(layers):
        row = []
        for head in range(heads):
            scores = window.aggregated[layer, head]
            if sss_cfg is not None and boundary > 0:
                # Only the evictable prefix is scored, so only it is smoothed;
                # the unconditionally kept recent block would otherwise bleed
                # into its neighbours through the global filter.
                scores = scores.copy()
                scores[:boundary] = sss(scores[:boundary], sss_cfg)
            row.append(
                _retain_for_head(scores, int(plan.capacities[layer, head]), recent)
            )
        retained.append(tuple(row))
    name = "audiokv" if sss_cfg is not None else "audiokv-nosss"
    return EvictionResult(
        policy_name=name,
        retained=tuple(retained),
        context_length=window.context_length,
        plan=plan,
    )


def select_snapkv(
    window: ObservationWindow,
    capacity_per_head: int,
    pool_width: int = DEFAULT_POOL_WIDTH,
    recent: int = DEFAULT_RECENT,
) -> EvictionResult:
    """Uniform capacity with centered moving-average pooling of the scores."""
    if pool_width < 1 or pool_width % 2 == 0:
        raise ValueError("pool_width must be odd and >= 1")
    layers, heads = window.shape
    kernel = np.full(pool_width, 1.0 / pool_width)
    retained = []
    for layer in range(layers):
        row = []
        for head in range(heads):
            scores = window.aggregated[layer, head]
            if pool_width > 1:
                scores = np.convolve(scores, kernel, mode="same")
            row.append(_retain_for_head(scores, capacity_per_head, recent))
        retained.append(tuple(row))
    return EvictionResult(
        policy_name="snapkv",
        retained=tuple(retained),
        context_length=window.context_length,
    )


def select_h2o(
    trace: AttentionTrace,
    capacity_per_head: int,
    recent: int = DEFAULT_RECENT,
) -> EvictionResult:
    """Heavy-hitter retention: attention mass accumulated over every step."""
    context = trace.final_context_length
    acc = np.zeros((trace.num_layers, trace.num_heads, context), dtype=np.float64)
    for step in trace.steps:
        acc[:, :, : step.context_length] += step.attention
    retained = []
    for layer in range(trace.num_layers):
        row = []
        for head in range(trace.num_heads):
            row.append(_retain_for_head(acc[layer, head], capacity_per_head, recent))
        retained.append(tuple(row))
    return EvictionResult(
        policy_name="h2o", retained=tuple(retained), context_length=context
    )


def select_adakv(
    window: ObservationWindow,
    layer_budget: int,
    recent: int = DEFAULT_RECENT,
) -> EvictionResult:
    """Layer-pooled selection: heads compete for one shared layer budget.

    Each head keeps its recent window; the remaining layer budget goes to the
    globally highest (score, head, index) triples, so per-head counts vary.
    """
    layers, heads = window.shape
    context = window.context_length
    if layer_budget < heads * recent:
        raise CapacityBelowRecentError(
            f"layer budget {layer_budget} < {heads} heads x recent {recent}"
        )
    kept_recent = min(recent, context)
    boundary = context - kept_recent
    pool_budget = min(layer_budget - heads * kept_recent, heads * boundary)
    recent_indices = np.arange(boundary, context, dtype=np.int64)
    retained = []
    for layer in range(layers):
        older = window.aggregated[layer, :, :boundary]
        flat_scores = older.reshape(-1)
        head_of = np.repeat(np.arange(heads), boundary)
        index_of = np.tile(np.arange(boundary), heads)
        order = np.lexsort((index_of, head_of, -flat_scores))
        chosen = order[:pool_budget]
        row = []
        for head in range(heads):
            mine = index_of[chosen[head_of[chosen] == head]]
            row.append(np.sort(np.concatenate([mine.astype(np.int64), recent_indices])))
        retained.append(tuple(row))
    return EvictionResult(
        policy_name="adakv", retained=tuple(retained), context_length=context
    )


def save_result(result: EvictionResult, path: str | Path) -> None:
    payload = {
        "policy": result.policy_name,
        "context_length": result.context_length,
        "plan": None
        if result.plan is None
        else {
            "window": result.plan.window,
            "base": result.plan.base,
            "budget": result.plan.global_budget,
            "mode": result.plan.mode,
        },
        "retained": [
            [head.tolist() for head in layer] for layer in result.retained
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=1))


def load_result(path: str | Path) -> EvictionResult:
    """Read a result file back; the plan summary is not reconstructed."""
    payload = json.loads(Path(path).read_text())
    retained = tuple(
        tuple(np.asarray(head, dtype=np.int64) for head in layer)
        for layer in payload["retained"]
    )
    return EvictionResult(
        policy_name=str(payload["policy"]),
        retained=retained,
        context_length=int(payload["context_length"]),
    )
