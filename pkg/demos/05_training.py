"""Train a small denoiser on the toy corpus.

Short run, small model: the goal is to watch the machinery, not reach
the quality of the longer configuration used by the acceptance tests.
Expect roughly half a minute on a laptop CPU.  The checkpoint written
here feeds the sampling and evaluation demos.
"""

import time
from pathlib import Path

import numpy as np

from mdmp.data import ToyGenConfig, generate_toy_dataset
from mdmp.denoiser import DenoiserConfig, init_params, parameter_count, save_checkpoint
from mdmp.diffusion import TrainConfig, train, write_loss_csv
from mdmp.evaluation import write_line_plot
from mdmp.schedule import build_cosine_schedule

OUT = Path(__file__).parent / "_out" / "training"
OUT.mkdir(parents=True, exist_ok=True)

records = generate_toy_dataset(ToyGenConfig(num_sequences=32, seed=0))

model_cfg = DenoiserConfig(
    feature_width=records[0].motion.data.shape[1],
    latent=32,
    layers=1,
    heads=4,
    gcn_hidden=8,
    variance_learning=True,
    dropout=0.1,
)
train_cfg = TrainConfig(
    steps=400,
    T=50,
    batch_size=8,
    learning_rate=1e-3,
    prefix_len=50,
    seed=0,
)

params = init_params(model_cfg, seed=0)
print(f"model: {parameter_count(params):,} parameters")

sched = build_cosine_schedule(train_cfg.T)
start = time.perf_counter()
params, history = train(records, train_cfg, params, model_cfg, sched)
print(f"{train_cfg.steps} steps in {time.perf_counter() - start:.1f}s")

first = np.mean([row[1] for row in history[:20]])
last = np.mean([row[1] for row in history[-20:]])
print(f"reconstruction loss: {first:.3f} (start) -> {last:.3f} (end)")

# Persist everything a later session needs: weights, architecture, and
# the sampling defaults that match how the model was trained.
ckpt = OUT / "toy.ckpt"
save_checkpoint(
    ckpt,
    params,
    model_cfg,
    extra={
        "T": train_cfg.T,
        "frames": records[0].motion.data.shape[0],
        "prefix_len": train_cfg.prefix_len,
        "fps": records[0].motion.fps,
        "guidance": train_cfg.guidance_scale,
    },
)
write_loss_csv(OUT / "loss.csv", history)
print(f"wrote {ckpt} and loss.csv")

steps = np.array([row[0] for row in history], dtype=np.float64)
write_line_plot(
    OUT / "loss.svg",
    [
        ("L_simple", steps, np.array([row[1] for row in history])),
        ("L_hybrid", steps, np.array([row[3] for row in history])),
    ],
    title="Toy training losses",
    x_label="step",
    y_label="loss",
)
print(f"wrote {OUT / 'loss.svg'}")
