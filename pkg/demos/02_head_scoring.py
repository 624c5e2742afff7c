"""Finding audio-critical heads from a trace plus word alignments.

Generates the specialized-heads fixture (two of twenty heads genuinely track
the word being transcribed), runs the scoring pipeline, and shows the planted
heads standing out.
"""

import numpy as np

from audiokv import (
    TopKConfig,
    align_generated_to_words,
    filter_words,
    generate_fixture,
    score_heads,
)

fixture = generate_fixture("specialized-heads", seed=0)
trace = fixture.trace
print(
    f"trace: {trace.num_layers} layers x {trace.num_heads} heads, "
    f"{trace.num_steps} steps, audio span {trace.audio_span}"
)

words = filter_words(fixture.words, tau=0.95)
print(f"alignment: {len(fixture.words)} words, {len(words)} above confidence 0.95")

mapping = align_generated_to_words(list(trace.steps), words)
print(f"greedy text alignment matched {len(mapping)} words to decoding steps")

matrix = score_heads(trace, words, mapping, TopKConfig(k=24))
print(f"scored {matrix.num_samples} aligned steps\n")

print("head scores (rows are layers):")
for layer in range(trace.num_layers):
    cells = " ".join(f"{matrix.scores[layer, h]:.2f}" for h in range(trace.num_heads))
    print(f"  layer {layer}: {cells}")

flat = matrix.scores.reshape(-1)
order = np.argsort(-flat)
print("\ntop heads:", [(int(i) // trace.num_heads, int(i) % trace.num_heads) for i in order[:3]])
print("planted:  ", list(fixture.planted_heads))
