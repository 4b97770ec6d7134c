"""Score predictions against held-out futures.

Run demos/05_training.py first; this script loads its checkpoint.

Two questions get answered.  How wrong is the predicted motion, as
millimeters of joint error bucketed by how far ahead the frame lies?
And does the uncertainty signal actually know where the errors are,
measured by removing the most uncertain cells first and watching the
error curve fall?
"""

import sys
from pathlib import Path

import numpy as np

from mdmp.data import ToyGenConfig, generate_toy_dataset
from mdmp.denoiser import Conditioning, load_checkpoint
from mdmp.diffusion import TrainConfig, sample
from mdmp.evaluation import (
    evaluate_mpjpe,
    sparsification,
    write_horizon_csv,
    write_line_plot,
)
from mdmp.kinematics import as_joint_positions, positions_joint_map
from mdmp.schedule import build_cosine_schedule
from mdmp.textcond import stub_encode
from mdmp.uncertainty import mode_divergence

OUT = Path(__file__).parent / "_out" / "evaluation"
CKPT = Path(__file__).parent / "_out" / "training" / "toy.ckpt"
if not CKPT.exists():
    sys.exit("checkpoint missing; run demos/05_training.py first")
OUT.mkdir(parents=True, exist_ok=True)

params, model_cfg, extra = load_checkpoint(CKPT)
T = int(extra["T"])
n = int(extra["prefix_len"])
fps = float(extra["fps"])
sched = build_cosine_schedule(T)

held_out = generate_toy_dataset(ToyGenConfig(num_sequences=8, seed=2))
joint_map = positions_joint_map(held_out[0].motion.data.shape[1])

pairs = []
err_cells, unc_cells = [], []
for record in held_out:
    gt64 = record.motion.data.astype(np.float64)
    cond = Conditioning(
        prefix=gt64[:n],
        text_embedding=stub_encode(record.prompts[0]).vector,
    )
    traces = sample(
        cond, params, model_cfg, sched,
        TrainConfig(steps=1, T=T, prefix_len=n,
                    guidance_scale=float(extra["guidance"])),
        rng_seed=0, num_chains=4, num_frames=gt64.shape[0],
    )
    gt_pos = as_joint_positions(gt64)
    unc = mode_divergence([t.final for t in traces], joint_map).values[n:]
    for trace in traces:
        pred_pos = as_joint_positions(trace.final)
        pairs.append((pred_pos, gt_pos))
        err_cells.append(np.linalg.norm(pred_pos - gt_pos, axis=-1)[n:].ravel())
        unc_cells.append(unc.ravel())

table = evaluate_mpjpe(pairs, fps=fps, prefix_len=n)
write_horizon_csv(OUT / "mpjpe.csv", table)
print("horizon  mpjpe")
for edge, err, cnt in zip(table.edges, table.mpjpe_mm, table.counts):
    print(f"  {edge:>4.1f}s  {err:8.1f} mm  ({cnt} frames)")

res = sparsification(
    np.concatenate(err_cells), np.concatenate(unc_cells), M=20, seed=0
)
print(f"\nsparsification error vs oracle: {res.sparsification_error:.4f}")
print("(0 would mean the uncertainty ranks cells exactly like true error)")

write_line_plot(
    OUT / "mpjpe.svg",
    [("model", table.edges, table.mpjpe_mm)],
    title="Joint error by prediction horizon",
    x_label="seconds ahead",
    y_label="mpjpe (mm)",
)
write_line_plot(
    OUT / "sparsification.svg",
    [
        ("by uncertainty", res.fractions, res.curve),
        ("oracle", res.fractions, res.oracle_curve),
        ("random", res.fractions, res.random_curve),
    ],
    title="Error after removing the most uncertain cells",
    x_label="fraction removed",
    y_label="remaining error (relative)",
)
print(f"wrote mpjpe.csv and two SVG plots to {OUT}")
