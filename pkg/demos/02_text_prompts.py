"""Text conditioning without a language model.

Prompts are mapped to fixed 512-wide vectors by a deterministic hashing
encoder, so the conditioning plumbing (embedding files, masking during
training, guidance at sampling time) can be exercised offline.  Swap in
a real encoder by passing any callable with the same signature to the
training loop.
"""

from pathlib import Path

import numpy as np

from mdmp.textcond import load_embeddings, save_embeddings, stub_encode

OUT = Path(__file__).parent / "_out" / "textcond"
OUT.mkdir(parents=True, exist_ok=True)

prompts = [
    "a person walks forward",
    "a person walks forward",
    "a person walks forward then turns left",
    "a person crouches down",
]

vectors = [stub_encode(p) for p in prompts]

print("embedding width:", vectors[0].vector.shape[0])
print("unit norm:", round(float(np.linalg.norm(vectors[0].vector)), 12))

# Same prompt, same vector, every time and on every machine.
assert np.array_equal(vectors[0].vector, vectors[1].vector)
print("identical prompts agree bitwise")

# Prompts sharing words overlap more than unrelated ones, because the
# encoder hashes tokens; there is no semantics beyond that overlap.
for other in (2, 3):
    cos = float(vectors[0].vector @ vectors[other].vector)
    print(f"cosine vs prompt {other}: {cos:+.3f}")

# Embeddings travel as JSON lines keyed by record id.
path = OUT / "embeddings.jsonl"
save_embeddings(
    path,
    {
        "clip_a": (prompts[0], vectors[0].vector),
        "clip_c": (prompts[2], vectors[2].vector),
    },
)
back = load_embeddings(path)
assert np.array_equal(back["clip_a"].vector, vectors[0].vector)
print(f"round-tripped {len(back)} embeddings through {path.name}")
