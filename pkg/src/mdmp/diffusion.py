"""Training objective and sampling loop for the motion diffusion model.

The hybrid loss is the mean-squared signal reconstruction plus a small
variational term that trains the variance channels through a
stop-gradient on the step mean.  Sampling runs ancestral denoising from
pure noise with classifier-free guidance: every step evaluates the model
twice (with and without the text embedding) and extrapolates between the
two signal estimates.

Step indexing follows the schedule tables: an index in [0, T) where
index 0 is the final, least-noisy step.  The variational term at index 0
is the Gaussian decoder likelihood; every higher index contributes a KL
between the true reverse-step posterior and the model's.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .denoiser import (
    Conditioning,
    DenoiserConfig,
    DenoiserOutput,
    detach_params,
    forward_batch,
)
from .errors import NumericalError
from .schedule import NoiseSchedule
from .textcond import stub_encode

BETA_TILDE_FLOOR = 1e-20
LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class TrainConfig:
    steps: int
    T: int = 50
    lambda_vlb: float = 0.001
    guidance_scale: float = 2.5
    text_mask_prob: float = 0.1
    batch_size: int = 64
    learning_rate: float = 1e-4
    prefix_len: int = 50
    seed: int = 0
    grad_clip_norm: float = 1.0

    def __post_init__(self):
        if self.lambda_vlb < 0:
            raise ValueError("lambda_vlb must be nonnegative")
        if not 0.0 <= self.text_mask_prob <= 1.0:
            raise ValueError("text_mask_prob must lie in [0, 1]")
        if self.T < 2:
            raise ValueError("T must be at least 2")
        if self.batch_size < 1 or self.steps < 0:
            raise ValueError("batch_size must be positive and steps nonnegative")


@dataclass
class SampleTrace:
    snapshots: list  # per-step guided signal estimates, execution order
    final: np.ndarray  # (N, D) sampled motion, prefix imposed exactly
    final_variance: np.ndarray | None  # (N, D) last-step variance if learned
    forward_calls: int  # denoiser evaluations spent on this chain


# -- losses ----------------------------------------------------------------


def loss_simple(x0, x0_hat):
    """Mean squared error over every entry (and any batch axis)."""
    x0_t = x0 if isinstance(x0, Tensor) else Tensor(x0)
    x0_hat_t = x0_hat if isinstance(x0_hat, Tensor) else Tensor(x0_hat)
    if x0_t.shape != x0_hat_t.shape:
        raise ValueError(f"shape mismatch: {x0_t.shape} vs {x0_hat_t.shape}")
    return ad.tmean(ad.square(x0_hat_t - x0_t))


def gaussian_kl(mu_q, var_q, mu_p, var_p):
    """Elementwise KL(N(mu_q, var_q) || N(mu_p, var_p)) for diagonals."""
    mu_q = np.asarray(mu_q, dtype=np.float64)
    var_q = np.asarray(var_q, dtype=np.float64)
    mu_p = np.asarray(mu_p, dtype=np.float64)
    var_p = np.asarray(var_p, dtype=np.float64)
    return 0.5 * (
        np.log(var_p / var_q) + (var_q + (mu_q - mu_p) ** 2) / var_p - 1.0
    )


def sigma_theta(v0: np.ndarray, t: int, sched: NoiseSchedule) -> np.ndarray:
    """Log-space interpolation between beta_t and the posterior variance.

    The first table slot has zero posterior variance; it is floored at
    1e-20 before the log, which makes the interpolation collapse toward
    (numerical) zero there unless v0 is 1.
    """
    v0 = np.asarray(v0, dtype=np.float64)
    log_beta = np.log(sched.betas[t])
    log_tilde = np.log(max(float(sched.beta_tildes[t]), BETA_TILDE_FLOOR))
    return np.exp(v0 * log_beta + (1.0 - v0) * log_tilde)


def _posterior_coefs(tidx: np.ndarray, sched: NoiseSchedule):
    """Vectorized coefficients of the reverse-posterior mean.

    At index 0 they degenerate to (0, 1): the mean is the clean estimate.
    """
    tidx = np.asarray(tidx)
    alpha = sched.alphas[tidx]
    ab = sched.alpha_bars[tidx]
    ab_prev = np.where(tidx > 0, sched.alpha_bars[np.maximum(tidx - 1, 0)], 1.0)
    coef_xt = np.sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab)
    coef_x0 = np.sqrt(ab_prev) * (1.0 - alpha) / (1.0 - ab)
    return coef_xt, coef_x0


def _vlb_terms(
    x0: np.ndarray,
    x_t: np.ndarray,
    tidx: np.ndarray,
    out: DenoiserOutput,
    sched: NoiseSchedule,
) -> Tensor:
    """Variational term for a batch: entries summed, batch averaged.

    The model mean uses a stop-gradient on the signal estimate, so only
    the variance channels receive gradients from this term.
    """
    if out.v0 is None:
        raise ValueError("the variational term needs variance outputs")
    B = x0.shape[0]
    tidx = np.asarray(tidx)
    log_beta = np.log(sched.betas[tidx])[:, None, None]
    tilde = sched.beta_tildes[tidx]
    log_tilde = np.log(np.maximum(tilde, BETA_TILDE_FLOOR))[:, None, None]
    log_var_p = out.v0 * log_beta + (1.0 - out.v0) * log_tilde
    var_p_inv = ad.texp(-log_var_p)

    coef_xt, coef_x0 = _posterior_coefs(tidx, sched)
    mu_p = (
        coef_xt[:, None, None] * x_t + coef_x0[:, None, None] * out.x0_hat.detach()
    )

    total = None
    kl_rows = np.where(tidx > 0)[0]
    if kl_rows.size:
        mu_q = (
            coef_xt[kl_rows, None, None] * x_t[kl_rows]
            + coef_x0[kl_rows, None, None] * x0[kl_rows]
        )
        var_q = tilde[kl_rows][:, None, None]
        diff = mu_q - mu_p[kl_rows]
        kl = 0.5 * (
            log_var_p[kl_rows]
            - np.log(var_q)
            + (ad.square(diff) + var_q) * var_p_inv[kl_rows]
            - 1.0
        )
        total = kl.sum()
    nll_rows = np.where(tidx == 0)[0]
    if nll_rows.size:
        diff = Tensor(x0[nll_rows]) - mu_p[nll_rows]
        nll = 0.5 * (
            ad.square(diff) * var_p_inv[nll_rows] + log_var_p[nll_rows] + LOG_2PI
        )
        total = nll.sum() if total is None else total + nll.sum()
    return total * (1.0 / B)


def loss_vlb(x0, x_t, t: int, out: DenoiserOutput, sched: NoiseSchedule):
    """Single-sequence variational term at schedule index t.

    Index 0 evaluates the Gaussian decoder likelihood of the clean
    signal; higher indices the posterior KL.  Entries are summed.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    x_t = np.asarray(x_t, dtype=np.float64)
    if not np.all(np.isfinite(x0)) or not np.all(np.isfinite(x_t)):
        raise NumericalError("non-finite inputs to the variational term")
    batched = DenoiserOutput(
        x0_hat=out.x0_hat.reshape(1, *out.x0_hat.shape),
        v0=out.v0.reshape(1, *out.v0.shape) if out.v0 is not None else None,
    )
    return _vlb_terms(x0[None], x_t[None], np.array([t]), batched, sched)


def loss_hybrid(l_simple, l_vlb, lambda_vlb: float):
    """Weighted sum of the reconstruction and variational terms."""
    return l_simple + lambda_vlb * l_vlb


# -- optimizer ---------------------------------------------------------------


class Adam:
    """Standard Adam with bias correction, acting on parameter dicts."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = self.m[name] / (1 - b1**self.t)
            v_hat = self.v[name] / (1 - b2**self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
    return norm


# -- training -----------------------------------------------------------------


def draw_text_masks(rng, batch_size: int, prob: float) -> np.ndarray:
    return rng.random(batch_size) < prob


def train(
    dataset,
    config: TrainConfig,
    params,
    model_cfg: DenoiserConfig,
    sched: NoiseSchedule,
    text_encoder=None,
    log_every: int = 1,
):
    """Optimize params in place; returns (params, history).

    history rows are (step, L_simple, L_VLB, L_hybrid).  Fully
    deterministic given config.seed: one generator drives batch
    selection, step sampling, noising, text masking, and dropout.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    encode = text_encoder or (lambda prompt: stub_encode(prompt).vector)
    motions = np.stack(
        [r.motion.data.astype(np.float64) for r in dataset]
    )  # requires equal shapes
    embeddings = [
        np.stack([np.asarray(encode(p), dtype=np.float64) for p in r.prompts])
        for r in dataset
    ]
    n = config.prefix_len
    if n >= motions.shape[1]:
        raise ValueError(
            f"prefix of {n} frames leaves nothing to predict "
            f"(sequences have {motions.shape[1]} frames)"
        )

    rng = np.random.default_rng(config.seed)
    opt = Adam(params, lr=config.learning_rate)
    history = []
    B = config.batch_size
    for step in range(config.steps):
        idx = rng.integers(0, len(dataset), size=B)
        prompt_pick = rng.integers(0, 2**31, size=B)
        t_steps = rng.integers(1, config.T + 1, size=B)  # one-based
        tidx = t_steps - 1
        x0 = motions[idx]
        eps = rng.standard_normal(x0.shape)
        ab = sched.alpha_bars[tidx][:, None, None]
        x_t = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
        text = np.stack(
            [
                embeddings[i][prompt_pick[k] % len(embeddings[i])]
                for k, i in enumerate(idx)
            ]
        )
        masked = draw_text_masks(rng, B, config.text_mask_prob)
        text[masked] = 0.0
        prefix = x0[:, :n, :]

        out = forward_batch(
            x_t, tidx, prefix, text, params, model_cfg, rng=rng, train=True
        )
        l_simple = loss_simple(x0, out.x0_hat)
        if model_cfg.variance_learning:
            l_vlb = _vlb_terms(x0, x_t, tidx, out, sched)
        else:
            l_vlb = Tensor(0.0)
        loss = loss_hybrid(l_simple, l_vlb, config.lambda_vlb)
        values = (float(l_simple.data), float(l_vlb.data), float(loss.data))
        if not all(math.isfinite(v) for v in values):
            raise NumericalError(
                f"training diverged at step {step}: "
                f"L_simple={values[0]}, L_VLB={values[1]}, L_hybrid={values[2]}"
            )
        loss.backward()
        clip_grad_norm(params, config.grad_clip_norm)
        opt.step()
        opt.zero_grad()
        if step % log_every == 0:
            history.append((step, *values))
    return params, history


def write_loss_csv(path, history) -> None:
    """Loss history as CSV; float repr keeps reruns byte-identical."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("step,L_simple,L_VLB,L_hybrid\n")
        for step, ls, lv, lh in history:
            fh.write(f"{step},{float(ls)!r},{float(lv)!r},{float(lh)!r}\n")


def read_loss_csv(path):
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if header.strip() != "step,L_simple,L_VLB,L_hybrid":
            raise ValueError(f"{path}: unexpected loss CSV header")
        for line in fh:
            step, ls, lv, lh = line.strip().split(",")
            rows.append((int(step), float(ls), float(lv), float(lh)))
    return rows


# -- sampling -----------------------------------------------------------------


def guided_estimate(cond_est: np.ndarray, uncond_est: np.ndarray, scale: float):
    """Classifier-free extrapolation in signal space."""
    return uncond_est + scale * (cond_est - uncond_est)


def sample(
    cond: Conditioning,
    params,
    model_cfg: DenoiserConfig,
    sched: NoiseSchedule,
    config: TrainConfig,
    rng_seed: int,
    num_chains: int,
    num_frames: int,
) -> list[SampleTrace]:
    """Ancestral sampling with classifier-free guidance.

    Each chain owns the generator default_rng([rng_seed, chain]), so
    chain c's draw stream does not depend on how many chains run.  All
    chains share every denoiser call as one batch: per step the model
    runs once on the conditional half and once on the text-masked half,
    two evaluations per chain per step.
    """
    if num_chains < 1:
        raise ValueError("need at least one chain")
    n = cond.prefix_len
    N = num_frames
    if n >= N:
        raise ValueError(f"prefix of {n} frames needs num_frames > {n}")
    D = model_cfg.feature_width
    S = num_chains
    frozen = detach_params(params)

    rngs = [np.random.default_rng([rng_seed, c]) for c in range(S)]
    x = np.stack([rng.standard_normal((N, D)) for rng in rngs])
    text = np.zeros((2 * S, model_cfg.text_dim))
    if not cond.text_masked:
        text[:S] = np.asarray(cond.text_embedding, dtype=np.float64)
    prefix = np.asarray(cond.prefix, dtype=np.float64)
    scale = config.guidance_scale

    snapshots: list[list[np.ndarray]] = [[] for _ in range(S)]
    final_var = None
    calls_per_chain = 0
    for tidx in range(sched.T - 1, -1, -1):
        if n:
            x[:, :n] = prefix
        out = forward_batch(
            np.concatenate([x, x]),
            np.full(2 * S, tidx),
            prefix,
            text,
            frozen,
            model_cfg,
        )
        calls_per_chain += 2
        est = out.x0_hat.data
        x0_g = guided_estimate(est[:S], est[S:], scale)
        if model_cfg.variance_learning:
            v = out.v0.data
            v_g = np.clip(guided_estimate(v[:S], v[S:], scale), 0.0, 1.0)
            var = sigma_theta(v_g, tidx, sched)
        else:
            var = np.full_like(x0_g, sched.beta_tildes[tidx])
        for c in range(S):
            snapshots[c].append(x0_g[c].copy())
        if tidx == 0:
            x = x0_g
            final_var = var if model_cfg.variance_learning else None
        else:
            coef_xt, coef_x0 = _posterior_coefs(np.array([tidx]), sched)
            mu = coef_xt[0] * x + coef_x0[0] * x0_g
            z = np.stack([rng.standard_normal((N, D)) for rng in rngs])
            x = mu + np.sqrt(var) * z
    if n:
        x[:, :n] = prefix
    return [
        SampleTrace(
            snapshots=snapshots[c],
            final=x[c].copy(),
            final_variance=None if final_var is None else final_var[c].copy(),
            forward_calls=calls_per_chain,
        )
        for c in range(S)
    ]
