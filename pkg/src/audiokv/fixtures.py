"""Deterministic synthetic traces for tests, demos, and calibration.

Three profiles:

* ``specialized-heads``: a small fraction of planted heads lock their top-K
  attention onto the current word's audio span; everything else looks at
  recent text. Exercises head scoring and allocation skew.
* ``spike-plateau``: planted audio heads carry a broad moderate plateau of
  relevance over the not-yet-transcribed audio plus tall transient peaks on
  the words being transcribed right now. The observation window therefore
  shows a dense cluster of high-frequency peaks over the recently transcribed
  region, while the held-out future attends the plateau; smoothing disperses
  selection off the transient peaks. Exercises the smoothing and comparison
  machinery.
* ``uniform``: every head shares one mild pattern; scores come out nearly
  equal.

All randomness flows from the single seed, so identical seeds reproduce
identical traces byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .trace import AttentionTrace, DecodingStep, WordAlignment, validate_trace

PROFILES = ("specialized-heads", "spike-plateau", "uniform")


@dataclass(frozen=True)
class Fixture:
    profile: str
    seed: int
    trace: AttentionTrace
    words: list[WordAlignment]
    planted_heads: tuple[tuple[int, int], ...]


def _split_word_text(word: str, pieces: int) -> list[str]:
    """Chop ' word' into `pieces` non-empty sub-token texts."""
    text = " " + word
    size = max(1, len(text) // pieces)
    chunks = [text[i * size : (i + 1) * size] for i in range(pieces - 1)]
    chunks.append(text[(pieces - 1) * size :])
    return [c if c else " " for c in chunks]


def _confidences(rng: np.random.Generator, count: int, low_count: int) -> np.ndarray:
    conf = rng.uniform(0.96, 0.995, size=count)
    if low_count:
        dips = rng.choice(count, size=min(low_count, count), replace=False)
        conf[dips] = 0.90
    return conf


def _exponential_recent(length: int, gamma: float) -> np.ndarray:
    weights = gamma ** np.arange(length)[::-1]  # latest position heaviest
    return weights / weights.sum()


def _plateau_profile(
    rng: np.random.Generator, length: int, coverage: float, lo: int
) -> np.ndarray:
    """Blocky relevance profile: 2-3 broad high-relevance regions over a floor.

    Blocks live in [lo, length): the already-consumed opening of the audio
    keeps only the floor, so early transients never coincide with a block.
    """
    profile = np.full(length, 0.02)
    num_blocks = int(rng.integers(2, 4))
    usable = length - lo
    block = int(coverage * usable / num_blocks)
    segment = usable // num_blocks
    for i in range(num_blocks):
        # one block per segment keeps blocks disjoint and coverage exact
        start = lo + i * segment + int(rng.integers(0, segment - block + 1))
        profile[start : start + block] = 1.0
    return profile


SPIKE_PLATEAU_KNOBS = {
    "audio_share": 0.35,
    "peak_step_gain": 5.0,  # per-step spike height, in units of the plateau top
    "transcribed_decay": 0.6,
    "plateau_coverage": 0.6,
    "step_noise": 0.10,  # transient per-step jitter, uncorrelated with the future
    "recent_share": 0.30,
}


def _spike_plateau(seed: int) -> Fixture:
    rng = np.random.default_rng(seed)
    layers, heads = 2, 4
    planted = ((0, 0), (1, 2))
    num_words, steps_per_word = 24, 8
    n_audio, a0, n_post = 512, 4, 2
    duration = 9.6
    num_steps = num_words * steps_per_word
    base_context = a0 + n_audio + n_post

    span_width = n_audio / num_words
    word_start = [a0 + int(np.floor(w * span_width)) for w in range(num_words)]
    word_stop = word_start[1:] + [a0 + n_audio]  # exclusive

    knobs = SPIKE_PLATEAU_KNOBS
    unit = knobs["audio_share"] / n_audio * 2.0  # plateau-top value pre-normalization
    peak_value = knobs["peak_step_gain"] * unit
    transcribed_decay = knobs["transcribed_decay"]

    observed_words = 32 // steps_per_word
    plateau_lo = word_stop[observed_words - 1] - a0
    profiles = {
        lh: _plateau_profile(rng, n_audio, knobs["plateau_coverage"], plateau_lo)
        for lh in planted
    }
    trend = {lh: unit * profiles[lh] for lh in planted}

    def draw_peaks(lh, w):
        # Transient mis-alignment spikes: prefer irrelevant (off-plateau) frames.
        span = np.arange(word_start[w] - a0, word_stop[w] - a0)
        off = span[profiles[lh][span] < 0.5]
        pool = off if len(off) >= 4 else span
        return rng.choice(pool, size=4, replace=False)

    peaks = {
        (lh, w): a0 + draw_peaks(lh, w) for lh in planted for w in range(num_words)
    }
    # Local heads glance at the current word too, but re-aim every step, so
    # their window-mean stays flat and only the per-step top-K sees it.
    def draw_local_peaks(w):
        in_span = word_start[w] + rng.choice(
            word_stop[w] - word_start[w], size=2, replace=False
        )
        roaming = a0 + rng.choice(n_audio, size=3, replace=False)
        return np.concatenate([in_span, roaming])

    # Diffuse audio attention for local heads drifts slowly: one noise draw
    # per head per 32-step phase, so it shapes the window mean but carries no
    # information about later phases.
    num_phases = (num_steps + 31) // 32
    local_drift = {
        (layer, head): rng.uniform(-1.0, 1.0, size=(num_phases, n_audio))
        for layer in range(layers)
        for head in range(heads)
        if (layer, head) not in planted
    }

    conf = _confidences(rng, num_words, low_count=3)
    words = [
        WordAlignment(
            text=f"word{w:02d}",
            t_start=w * duration / num_words,
            t_end=(w + 1) * duration / num_words,
            confidence=float(conf[w]),
        )
        for w in range(num_words)
    ]

    texts = []
    for w in range(num_words):
        texts.extend(_split_word_text(words[w].text, steps_per_word))

    steps = []
    for t in range(num_steps):
        current_word = t // steps_per_word
        context = base_context + t
        rows = np.empty((layers, heads, context), dtype=np.float64)
        non_audio_tail = context - (a0 + n_audio)
        for layer in range(layers):
            for head in range(heads):
                row = np.full(context, 0.01 / context)
                if (layer, head) in planted:
                    row[:a0] += np.array([0.0016, 0.0012, 0.0008, 0.0004])
                    audio = trend[(layer, head)] * (
                        1.0 + knobs["step_noise"] * rng.uniform(-1.0, 1.0, size=n_audio)
                    )
                    boundary = word_start[current_word] - a0
                    audio[:boundary] *= transcribed_decay
                    pk = peaks[((layer, head), current_word)] - a0
                    audio[pk] = peak_value
                    row[a0 : a0 + n_audio] += audio
                    # recency starts with generated tokens, so the evictable
                    # zone never inherits a lone hot boundary position
                    recent_len = min(32, max(non_audio_tail - n_post, 0))
                    if recent_len:
                        row[context - recent_len :] += knobs[
                            "recent_share"
                        ] * _exponential_recent(recent_len, 0.8)
                else:
                    row[:a0] += np.array([0.0032, 0.0024, 0.0016, 0.0008])
                    drift = local_drift[(layer, head)][t // 32]
                    row[a0 : a0 + n_audio] += 0.02 * (1.0 + 0.5 * drift) / n_audio
                    row[draw_local_peaks(current_word)] += 0.0045
                    recent_len = min(32, non_audio_tail)
                    row[context - recent_len :] += 0.45 * _exponential_recent(
                        recent_len, 0.8
                    )
                rows[layer, head] = row / row.sum()
        steps.append(
            DecodingStep(
                step_index=t,
                generated_token_text=texts[t],
                attention=rows.astype(np.float32),
            )
        )

    trace = AttentionTrace(
        num_layers=layers,
        num_heads=heads,
        steps=tuple(steps),
        audio_start=a0,
        num_audio_tokens=n_audio,
        total_duration_s=duration,
    )
    return Fixture("spike-plateau", seed, trace, words, planted)


def _specialized_or_uniform(seed: int, uniform: bool) -> Fixture:
    rng = np.random.default_rng(seed)
    layers, heads = 2, 10
    planted = () if uniform else ((0, 0), (1, 5))
    num_words = 16
    span = 24
    n_audio, a0, n_post = num_words * span, 4, 2
    duration = 8.0
    base_context = a0 + n_audio + n_post

    conf = _confidences(rng, num_words, low_count=2)
    words = [
        WordAlignment(
            text=f"word{w:02d}",
            t_start=w * duration / num_words,
            t_end=(w + 1) * duration / num_words,
            confidence=float(conf[w]),
        )
        for w in range(num_words)
    ]
    jitter = rng.uniform(0.0, 1e-4, size=(layers, heads))

    steps = []
    for t in range(num_words):
        context = base_context + t
        rows = np.empty((layers, heads, context), dtype=np.float64)
        span_lo = a0 + t * span
        non_audio_tail = context - (a0 + n_audio)
        for layer in range(layers):
            for head in range(heads):
                if not uniform and (layer, head) in planted:
                    row = np.full(context, 0.04 / context)
                    row[:a0] += np.array([0.008, 0.006, 0.004, 0.002])
                    row[span_lo : span_lo + span] += 0.90 / span
                    recent_len = min(12, non_audio_tail)
                    row[context - recent_len :] += 0.04 * _exponential_recent(
                        recent_len, 0.7
                    )
                else:
                    row = np.full(context, (0.13 + jitter[layer, head]) / context)
                    row[:a0] += np.array([0.048, 0.036, 0.024, 0.012])
                    if uniform:
                        wiggle = 1.0 + 0.12 * (float(jitter[layer, head]) * 1e4 - 0.5)
                        row[span_lo : span_lo + span] += 0.25 * wiggle / span
                    recent_len = min(24, non_audio_tail)
                    row[context - recent_len :] += 0.50 * _exponential_recent(
                        recent_len, 0.8
                    )
                rows[layer, head] = row / row.sum()
        steps.append(
            DecodingStep(
                step_index=t,
                generated_token_text=" " + words[t].text,
                attention=rows.astype(np.float32),
            )
        )

    trace = AttentionTrace(
        num_layers=layers,
        num_heads=heads,
        steps=tuple(steps),
        audio_start=a0,
        num_audio_tokens=n_audio,
        total_duration_s=duration,
    )
    profile = "uniform" if uniform else "specialized-heads"
    return Fixture(profile, seed, trace, words, planted)


def generate_fixture(profile: str, seed: int) -> Fixture:
    """Build one synthetic trace plus matching word alignments."""
    if profile == "spike-plateau":
        fixture = _spike_plateau(seed)
    elif profile == "specialized-heads":
        fixture = _specialized_or_uniform(seed, uniform=False)
    elif profile == "uniform":
        fixture = _specialized_or_uniform(seed, uniform=True)
    else:
        raise ValueError(f"unknown profile {profile!r}; choose from {PROFILES}")
    validate_trace(fixture.trace)
    return fixture
