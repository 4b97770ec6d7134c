"""Forward-process noise schedule for the motion diffusion model.

Tables are 0-indexed: entry ``t`` describes the transition that produced
``x_{t+1}`` in one-based math notation.  Under the convention that the
cumulative signal fraction before the first step is 1, the posterior
variance table starts at exactly 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

COSINE_OFFSET = 0.008
MAX_BETA = 0.999


@dataclass(frozen=True)
class NoiseSchedule:
    """Immutable per-step tables of the diffusion forward process.

    betas[t] is the noise variance added at step t, alphas = 1 - betas,
    alpha_bars[t] the cumulative product of alphas, and beta_tildes[t]
    the variance of the true reverse-step posterior.
    """

    T: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    beta_tildes: np.ndarray

    def alpha_bar_prev(self, t: int) -> float:
        """Cumulative signal fraction one step earlier (1.0 at t=0)."""
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])


def build_cosine_schedule(T: int) -> NoiseSchedule:
    """Construct the squared-cosine schedule with offset 0.008.

    Per-step betas come from ratios of f(t) = cos^2(((t/T)+s)/(1+s) * pi/2),
    capped at 0.999 so no step destroys all signal; cumulative products are
    then rebuilt from the capped betas so the tables stay self-consistent.
    """
    if T < 2:
        raise ValueError(f"schedule needs at least 2 steps, got T={T}")
    steps = np.arange(T + 1, dtype=np.float64)
    f = np.cos((steps / T + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * np.pi / 2.0) ** 2
    betas = np.minimum(1.0 - f[1:] / f[:-1], MAX_BETA)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    alpha_bars_prev = np.concatenate(([1.0], alpha_bars[:-1]))
    beta_tildes = (1.0 - alpha_bars_prev) / (1.0 - alpha_bars) * betas
    for arr in (betas, alphas, alpha_bars, beta_tildes):
        arr.flags.writeable = False
    return NoiseSchedule(
        T=T,
        betas=betas,
        alphas=alphas,
        alpha_bars=alpha_bars,
        beta_tildes=beta_tildes,
    )


def q_sample(
    x0: np.ndarray, t: int, noise: np.ndarray, sched: NoiseSchedule
) -> np.ndarray:
    """Jump the clean signal directly to noise level t in one draw."""
    x0 = np.asarray(x0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if x0.shape != noise.shape:
        raise ValueError(f"noise shape {noise.shape} != x0 shape {x0.shape}")
    if not 0 <= t < sched.T:
        raise ValueError(f"step index {t} outside [0, {sched.T})")
    ab = sched.alpha_bars[t]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise


def posterior_mean(
    x_t: np.ndarray, x0_hat: np.ndarray, t: int, sched: NoiseSchedule
) -> np.ndarray:
    """Mean of the reverse-step posterior given the noisy frame and a clean estimate.

    Weighted combination of x_t and x0_hat whose coefficients follow from
    Bayes' rule on the two Gaussian forward factors.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    x0_hat = np.asarray(x0_hat, dtype=np.float64)
    if x_t.shape != x0_hat.shape:
        raise ValueError(f"x0_hat shape {x0_hat.shape} != x_t shape {x_t.shape}")
    if not 1 <= t < sched.T:
        raise ValueError(f"no posterior step below t=1 (got t={t})")
    alpha_t = sched.alphas[t]
    ab_t = sched.alpha_bars[t]
    ab_prev = sched.alpha_bar_prev(t)
    coef_xt = np.sqrt(alpha_t) * (1.0 - ab_prev) / (1.0 - ab_t)
    coef_x0 = np.sqrt(ab_prev) * (1.0 - alpha_t) / (1.0 - ab_t)
    return coef_xt * x_t + coef_x0 * x0_hat
