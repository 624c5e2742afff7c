"""Retention-quality metrics and the trace-replay comparison harness.

Policies are evaluated once at an eviction boundary inside the trace: the
steps before it feed the observation window the policies select from, and the
steps after it are held out as ground truth. Quality is then measured against
that held-out future: how much of the attention mass the model goes on to
spend lands on retained entries (retained_mass), and how closely the retained
set matches the hindsight-optimal one (oracle_overlap). Coverage entropy
quantifies how dispersed the retained indices are; memory_footprint counts
bytes for the surviving KV pairs.
"""

from __future__ import annotations

import csv
import io
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .budget import BudgetPlan
from .errors import DimensionMismatchError, HorizonError
from .eviction import (
    EvictionResult,
    ObservationWindow,
    build_observation_window,
    select_adakv,
    select_audiokv,
    select_h2o,
    select_snapkv,
)
from .spectral import SssConfig
from .trace import AttentionTrace

DEFAULT_ENTROPY_BINS = 10
THREADS_ENV_VAR = "AUDIOKV_THREADS"


@dataclass(frozen=True)
class KvGeometry:
    head_dim: int = 64
    bytes_per_element: int = 2
    kv_pair_factor: int = 2  # one key plus one value per entry

    def __post_init__(self) -> None:
        if min(self.head_dim, self.bytes_per_element, self.kv_pair_factor) < 1:
            raise ValueError("geometry fields must be positive")


@dataclass(frozen=True)
class RetentionReport:
    policy_name: str
    retention_ratio: float
    oracle_overlap: float
    coverage_entropy: float
    mass_retained: float
    memory_bytes: int


@dataclass(frozen=True)
class PolicySpec:
    """One comparison-grid entry; `selector` picks the eviction routine.

    audiokv uses the paired plan's per-head capacities (smoothing scores when
    `sss` is set); snapkv/h2o read a uniform capacity off the plan;
    adakv pools each layer's plan total.
    """

    name: str
    selector: str = "audiokv"
    sss: SssConfig | None = None
    pool_width: int = 1


def worker_count() -> int:
    """Parallelism cap from AUDIOKV_THREADS (unset or 0 means auto)."""
    raw = os.environ.get(THREADS_ENV_VAR, "").strip()
    if not raw or raw == "0":
        return os.cpu_count() or 1
    value = int(raw)
    if value < 1:
        raise ValueError(f"{THREADS_ENV_VAR} must be >= 0")
    return value


def find_eviction_step(trace: AttentionTrace, context_length: int) -> int:
    """Index of the step whose context matches the eviction boundary."""
    for i, step in enumerate(trace.steps):
        if step.context_length == context_length:
            return i
    raise HorizonError(f"no step has context length {context_length}")


def aggregate_future_attention(
    trace: AttentionTrace, eviction_step: int, horizon: int, context_length: int
) -> ObservationWindow:
    """Mean held-out attention over the next `horizon` steps, truncated to the
    pre-eviction context (positions created later are not evictable)."""
    future = trace.steps[eviction_step + 1 : eviction_step + 1 + horizon]
    if not future:
        raise HorizonError(f"no decoding steps remain after step {eviction_step}")
    acc = np.zeros((trace.num_layers, trace.num_heads, context_length), dtype=np.float64)
    for step in future:
        acc += step.attention[:, :, :context_length]
    acc /= len(future)
    return ObservationWindow(width=len(future), aggregated=acc)


def oracle_overlap(result: EvictionResult, trace: AttentionTrace, horizon: int) -> float:
    """Mean per-head overlap with the hindsight-optimal retained set.

    The oracle keeps, per head, the indices with the largest attention mass
    over the `horizon` steps that follow the eviction boundary, using the same
    set size the policy retained.
    """
    boundary = find_eviction_step(trace, result.context_length)
    future = aggregate_future_attention(trace, boundary, horizon, result.context_length)
    layers, heads = result.shape
    overlaps = []
    for layer in range(layers):
        for head in range(heads):
            retained = result.retained[layer][head]
            if len(retained) == 0:
                overlaps.append(1.0)
                continue
            mass = future.aggregated[layer, head]
            order = np.argsort(-mass, kind="stable")
            oracle = set(order[: len(retained)].tolist())
            overlaps.append(len(oracle.intersection(retained.tolist())) / len(oracle))
    return float(np.mean(overlaps))


def retained_mass(result: EvictionResult, window: ObservationWindow) -> float:
    """Mean per-head share of the window's attention mass on retained indices."""
    if result.shape != window.shape:
        raise DimensionMismatchError(
            f"result heads {result.shape} != window heads {window.shape}"
        )
    layers, heads = result.shape
    shares = []
    for layer in range(layers):
        for head in range(heads):
            row = window.aggregated[layer, head]
            total = float(row.sum())
            if total <= 0.0:
                shares.append(1.0)
                continue
            kept = float(row[result.retained[layer][head]].sum())
            shares.append(kept / total)
    return float(np.mean(shares))


def coverage_entropy(result: EvictionResult, bins: int = DEFAULT_ENTROPY_BINS) -> float:
    """Mean per-head Shannon entropy (nats) of retained indices over equal bins."""
    if bins < 2:
        raise ValueError("bins must be >= 2")
    layers, heads = result.shape
    entropies = []
    for layer in range(layers):
        for head in range(heads):
            retained = result.retained[layer][head]
            if len(retained) == 0:
                entropies.append(0.0)
                continue
            counts, _ = np.histogram(retained, bins=bins, range=(0, result.context_length))
            p = counts[counts > 0] / len(retained)
            entropies.append(float(-np.sum(p * np.log(p))))
    return float(np.mean(entropies))


def memory_footprint(result: EvictionResult, geom: KvGeometry) -> int:
    """Bytes held by the retained KV entries across all heads."""
    per_entry = geom.kv_pair_factor * geom.head_dim * geom.bytes_per_element
    return result.total_retained() * per_entry


def _uniform_capacity(plan: BudgetPlan) -> int:
    caps = np.unique(plan.capacities)
    if len(caps) != 1:
        raise ValueError("this selector requires a uniform plan")
    return int(caps[0])


def _run_pair(
    policy: PolicySpec,
    plan: BudgetPlan,
    trace: AttentionTrace,
    window: ObservationWindow,
    obs_trace: AttentionTrace,
    future: ObservationWindow,
    geom: KvGeometry,
    horizon: int,
    recent: int,
    bins: int,
) -> RetentionReport:
    if policy.selector == "audiokv":
        result = select_audiokv(window, plan, policy.sss, recent)
    elif policy.selector == "snapkv":
        result = select_snapkv(window, _uniform_capacity(plan), policy.pool_width, recent)
    elif policy.selector == "h2o":
        result = select_h2o(obs_trace, _uniform_capacity(plan), recent)
    elif policy.selector == "adakv":
        result = select_adakv(window, int(plan.capacities.sum(axis=1)[0]), recent)
    else:
        raise ValueError(f"unknown selector: {policy.selector}")
    result = EvictionResult(
        policy_name=policy.name,
        retained=result.retained,
        context_length=result.context_length,
        plan=result.plan,
    )
    layers, heads = result.shape
    ratio = result.total_retained() / (layers * heads * result.context_length)
    return RetentionReport(
        policy_name=policy.name,
        retention_ratio=ratio,
        oracle_overlap=oracle_overlap(result, trace, horizon),
        coverage_entropy=coverage_entropy(result, bins),
        mass_retained=retained_mass(result, future),
        memory_bytes=memory_footprint(result, geom),
    )


def run_comparison(
    trace: AttentionTrace,
    policies: list[PolicySpec],
    plans: list[BudgetPlan],
    geom: KvGeometry = KvGeometry(),
    *,
    observation_width: int = 32,
    horizon: int | None = None,
    recent: int = 32,
    bins: int = DEFAULT_ENTROPY_BINS,
) -> list[RetentionReport]:
    """Replay the trace once per (policy, plan) pair, in the order given.

    The first `observation_width` steps feed the policies; the held-out steps
    (up to `horizon` of them) score the results. Reports come back in input
    order regardless of worker parallelism.
    """
    if len(policies) != len(plans):
        raise ValueError("policies and plans must pair up one to one")
    if not policies:
        return []
    obs_steps = min(observation_width, trace.num_steps - 1)
    if obs_steps < 1:
        raise HorizonError("trace too short to split into observation and future")
    remaining = trace.num_steps - obs_steps - 1
    horizon = remaining + 1 if horizon is None else min(horizon, remaining + 1)
    if horizon < 1:
        raise HorizonError("no future steps left for the requested horizon")
    obs_trace = trace.prefix(obs_steps)
    window = build_observation_window(obs_trace, obs_steps)
    context = obs_trace.final_context_length
    future = aggregate_future_attention(trace, obs_steps - 1, horizon, context)

    def job(pair):
        policy, plan = pair
        return _run_pair(
            policy, plan, trace, window, obs_trace, future, geom, horizon, recent, bins
        )

    pairs = list(zip(policies, plans))
    workers = worker_count()
    if workers > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=min(workers, len(pairs))) as pool:
            return list(pool.map(job, pairs))
    return [job(pair) for pair in pairs]


REPORT_COLUMNS = ("policy", "ratio", "overlap", "mass", "entropy", "bytes")


def reports_to_csv(reports: list[RetentionReport]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for r in reports:
        writer.writerow(
            [
                r.policy_name,
                f"{r.retention_ratio:.10g}",
                f"{r.oracle_overlap:.10g}",
                f"{r.mass_retained:.10g}",
                f"{r.coverage_entropy:.10g}",
                r.memory_bytes,
            ]
        )
    return buffer.getvalue()


def write_reports(
    reports: list[RetentionReport], csv_path: str | Path, json_path: str | Path | None = None
) -> None:
    Path(csv_path).write_text(reports_to_csv(reports))
    if json_path is not None:
        payload = [
            {
                "policy": r.policy_name,
                "ratio": r.retention_ratio,
                "overlap": r.oracle_overlap,
                "mass": r.mass_retained,
                "entropy": r.coverage_entropy,
                "bytes": r.memory_bytes,
            }
            for r in reports
        ]
        Path(json_path).write_text(json.dumps(payload, indent=1))
