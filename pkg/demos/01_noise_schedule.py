"""Walk through the cosine noise schedule tables.

The schedule is the backbone of everything else: training draws random
steps from it, sampling walks it backwards, and the variance channel
interpolates between two of its columns.  This script builds a few
schedules, prints the quantities worth knowing, and plots how fast the
signal decays.
"""

from pathlib import Path

import numpy as np

from mdmp.evaluation import write_line_plot
from mdmp.schedule import build_cosine_schedule, posterior_mean, q_sample

OUT = Path(__file__).parent / "_out" / "schedule"
OUT.mkdir(parents=True, exist_ok=True)

# A schedule is just five aligned read-only tables indexed 0..T-1, where
# index 0 is the final, least-noisy step of the reverse walk.
for T in (50, 1000):
    sched = build_cosine_schedule(T)
    print(f"T={T}:")
    print(f"  beta range        [{sched.betas.min():.6f}, {sched.betas.max():.6f}]")
    print(f"  alpha_bar at end  {sched.alpha_bars[-1]:.2e}")
    print(f"  beta_tilde[0]     {sched.beta_tildes[0]} (degenerate first step)")

# The signal-to-noise story: alpha_bar is the squared fraction of the
# clean signal that survives at each step.
series = []
for T in (50, 200, 1000):
    sched = build_cosine_schedule(T)
    # plot against the normalized step so the three curves share an axis
    xs = np.linspace(0.0, 1.0, T)
    series.append((f"T={T}", xs, sched.alpha_bars))
write_line_plot(
    OUT / "alpha_bars.svg",
    series,
    title="Surviving signal fraction across the schedule",
    x_label="normalized step t/T",
    y_label="alpha_bar",
)
print(f"\nwrote {OUT / 'alpha_bars.svg'}")

# Forward corruption in one jump: q_sample perturbs a clean sequence to
# any step without simulating the chain.
rng = np.random.default_rng(0)
sched = build_cosine_schedule(50)
x0 = np.sin(np.linspace(0, 6, 120))[:, None] * np.ones((1, 4))
for t in (1, 10, 49):
    noisy = q_sample(x0, t, rng.standard_normal(x0.shape), sched)
    print(f"t={t:>2}  corrupted rms {np.sqrt(np.mean(noisy ** 2)):.3f}")

# And the matching reverse-direction quantity: the posterior mean pulls a
# noisy sample back toward a hypothesized clean sequence.
x_t = q_sample(x0, 25, rng.standard_normal(x0.shape), sched)
mu = posterior_mean(x_t, x0, 25, sched)
print(f"posterior mean moves rms {np.sqrt(np.mean((mu - x_t) ** 2)):.3f} toward x0")
