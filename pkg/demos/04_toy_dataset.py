"""Generate the synthetic motion corpus and poke at what is in it.

Every sequence starts with the same kind of straight approach and then
commits to one of four continuations at the split frame.  The shared
prefix is what makes the corpus useful: given only the first 2.5
seconds, the continuation is genuinely ambiguous, so a predictive model
has something honest to be uncertain about.
"""

from pathlib import Path

import numpy as np

from mdmp.data import (
    ToyGenConfig,
    default_toy_classes,
    generate_toy_dataset,
    load_dataset,
    save_dataset,
)
from mdmp.kinematics import as_joint_positions

OUT = Path(__file__).parent / "_out" / "toy_dataset"

cfg = ToyGenConfig(num_sequences=16, frames=120, fps=20.0, split=50, seed=0)
records = generate_toy_dataset(cfg)

print("classes:")
for cls in default_toy_classes():
    traits = [
        f"turn_rate={cls.turn_rate:+.3f}" if cls.turn_rate else "",
        "stops" if cls.stop else "",
        "raises hand" if cls.raise_hand else "",
    ]
    detail = ", ".join(t for t in traits if t) or "keeps walking"
    print(f"  {cls.prompt!r} ({detail})")

rec = records[0]
print(f"\nfirst record: id={rec.id} prompt={rec.prompts[0]!r}")
print(f"motion shape {rec.motion.data.shape}, fps {rec.motion.fps}")

# Class membership round-robins through the ids, so any contiguous slice
# is balanced. The prefix really is shared in distribution: compare the
# spread of root positions before and after the split frame.
pos = np.stack([as_joint_positions(r.motion.data.astype(np.float64)) for r in records])
root = pos[:, :, 0, :]
spread_before = root[:, :50].std(axis=0).mean()
spread_after = root[:, 50:].std(axis=0).mean()
print(f"\nroot spread across sequences: prefix {spread_before:.3f} m,"
      f" continuation {spread_after:.3f} m")

# Records persist as one binary container per sequence plus a manifest
# that carries ids, prompts and file names.
save_dataset(records, OUT)
back = load_dataset(OUT / "manifest.json")
assert len(back) == len(records)
assert np.array_equal(back[0].motion.data, records[0].motion.data)
print(f"saved and reloaded {len(back)} records from {OUT}")
