"""Sample futures for one observed prefix and measure disagreement.

Run demos/05_training.py first; this script loads its checkpoint.

A single prediction hides how unsure the model is.  Drawing several
denoising chains for the same prefix exposes it: where the chains agree
the motion is pinned down by the observation, where they fan out it is
not.  Three different uncertainty readings come out of one batch of
chains, and each gets saved as a per-frame, per-joint CSV.
"""

import sys
from pathlib import Path

import numpy as np

from mdmp.data import ToyGenConfig, default_toy_tree, generate_toy_dataset
from mdmp.denoiser import Conditioning, load_checkpoint
from mdmp.diffusion import TrainConfig, sample
from mdmp.kinematics import as_joint_positions, positions_joint_map
from mdmp.schedule import build_cosine_schedule
from mdmp.textcond import stub_encode
from mdmp.uncertainty import (
    denoising_fluctuations,
    mode_divergence,
    predicted_variance,
    presence_zones,
    save_uncertainty_csv,
)

OUT = Path(__file__).parent / "_out" / "sampling"
CKPT = Path(__file__).parent / "_out" / "training" / "toy.ckpt"
if not CKPT.exists():
    sys.exit("checkpoint missing; run demos/05_training.py first")
OUT.mkdir(parents=True, exist_ok=True)

params, model_cfg, extra = load_checkpoint(CKPT)
T = int(extra["T"])
prefix_len = int(extra["prefix_len"])
frames = int(extra["frames"])

# A held-out sequence the model never saw: seed 1 instead of seed 0.
record = generate_toy_dataset(ToyGenConfig(num_sequences=4, seed=1))[1]
motion = record.motion.data.astype(np.float64)
print(f"prefix: first {prefix_len} of {frames} frames")
print(f"prompt: {record.prompts[0]!r}")

cond = Conditioning(
    prefix=motion[:prefix_len],
    text_embedding=stub_encode(record.prompts[0]).vector,
)
traces = sample(
    cond,
    params,
    model_cfg,
    build_cosine_schedule(T),
    TrainConfig(steps=1, T=T, prefix_len=prefix_len,
                guidance_scale=float(extra["guidance"])),
    rng_seed=0,
    num_chains=8,
    num_frames=frames,
)
print(f"{len(traces)} chains, {traces[0].forward_calls} denoiser calls each")

joint_map = positions_joint_map(motion.shape[1])

# Reading 1: where do independent chains disagree with each other?
mode = mode_divergence([t.final for t in traces], joint_map)

# Reading 2: how much was each cell still moving over the last steps of
# a single chain?
fluct = denoising_fluctuations(traces[0], joint_map, window=min(20, T))

# Reading 3: the variance channel the model itself emitted at the end.
var = predicted_variance(traces[0].final_variance, joint_map)

for name, grid in (("mode_divergence", mode),
                   ("denoising_fluctuations", fluct),
                   ("predicted_variance", var)):
    save_uncertainty_csv(OUT / f"{name}.csv", grid)
    before = grid.values[:prefix_len].mean()
    after = grid.values[prefix_len:].mean()
    print(f"{name:<24} prefix mean {before:.4f}   future mean {after:.4f}")

# The divergence grid also scales safety margins around each joint.
# Chains agree bitwise on the overwritten prefix, so margins there are
# zero by construction and only open up in the predicted future.
zones = presence_zones(
    as_joint_positions(traces[0].final), mode, tree=default_toy_tree(),
    radius_scale=2.0,
)
print(f"presence zones around joints {list(zones.joints)}: "
      f"prefix radius {zones.radii[:prefix_len].mean():.4f} m, "
      f"future radius {zones.radii[prefix_len:].mean():.4f} m")
