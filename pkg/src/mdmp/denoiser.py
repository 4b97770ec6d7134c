"""The denoising network: graph-convolutional frame encoder with a
trainable adjacency, transformer backbone, and projections for the
diffusion step and the text embedding.

Layout of one forward pass (batch axis elided): the noisy motion has its
first n frames overwritten by the clean prefix, every frame is encoded by
two stacked graph convolutions over its D feature channels (each channel
is a graph node), flattened and projected to the latent width, and summed
with a sinusoidal positional embedding.  A single conditioning token
(step embedding plus projected text embedding) is prepended, the token
sequence runs through pre-norm transformer encoder layers, and the frame
tokens are projected back to motion features.  With variance learning
enabled the latent is split in half: one half decodes the signal
estimate, the other the variance-interpolation coefficients, clamped to
[0, 1].
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import FormatError

CHECKPOINT_MAGIC = b"MDCK"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class DenoiserConfig:
    feature_width: int
    latent: int = 512
    layers: int = 8
    heads: int = 4
    gcn_hidden: int = 8
    ffn_mult: int = 4
    text_dim: int = 512
    variance_learning: bool = False
    dropout: float = 0.1
    encoder: str = "gcn"  # "gcn" or "linear" (ablation without the graph)

    def __post_init__(self):
        if self.latent % self.heads != 0:
            raise ValueError(
                f"latent {self.latent} must divide into {self.heads} heads"
            )
        if self.variance_learning and self.latent % 2 != 0:
            raise ValueError("variance learning needs an even latent width")
        if self.encoder not in ("gcn", "linear"):
            raise ValueError(f"unknown encoder kind {self.encoder!r}")


@dataclass
class Conditioning:
    prefix: np.ndarray  # (n, D) clean observed frames; n may be 0
    text_embedding: np.ndarray  # (text_dim,)
    text_masked: bool = False

    @property
    def prefix_len(self) -> int:
        return self.prefix.shape[0]


@dataclass
class DenoiserOutput:
    x0_hat: Tensor  # (N, D) or (B, N, D)
    v0: Tensor | None  # same shape, in [0, 1]; None without variance learning


# -- parameters ----------------------------------------------------------


def _param_specs(cfg: DenoiserConfig):
    """Ordered (name, shape, init kind) list; order fixes rng consumption."""
    K, F, d = cfg.feature_width, cfg.gcn_hidden, cfg.latent
    if cfg.encoder == "gcn":
        specs = [
            ("gcn0.A", (K, K), "adjacency"),
            ("gcn0.W", (1, F), "fanin"),
            ("gcn1.A", (K, K), "adjacency"),
            ("gcn1.W", (F, F), "fanin"),
            ("enc.W", (K * F, d), "fanin"),
        ]
    else:
        specs = [("enc.W", (K, d), "fanin")]
    specs += [
        ("enc.b", (d,), "zeros"),
        ("time.W1", (d, d), "fanin"),
        ("time.b1", (d,), "zeros"),
        ("time.W2", (d, d), "fanin"),
        ("time.b2", (d,), "zeros"),
        ("text.W1", (cfg.text_dim, d), "fanin"),
        ("text.W2", (d, d), "fanin"),
    ]
    for i in range(cfg.layers):
        p = f"layer{i}."
        specs += [
            (p + "ln1.g", (d,), "ones"),
            (p + "ln1.b", (d,), "zeros"),
            (p + "attn.Wq", (d, d), "fanin"),
            (p + "attn.bq", (d,), "zeros"),
            (p + "attn.Wk", (d, d), "fanin"),
            (p + "attn.bk", (d,), "zeros"),
            (p + "attn.Wv", (d, d), "fanin"),
            (p + "attn.bv", (d,), "zeros"),
            (p + "attn.Wo", (d, d), "fanin"),
            (p + "attn.bo", (d,), "zeros"),
            (p + "ln2.g", (d,), "ones"),
            (p + "ln2.b", (d,), "zeros"),
            (p + "ffn.W1", (d, cfg.ffn_mult * d), "fanin"),
            (p + "ffn.b1", (cfg.ffn_mult * d,), "zeros"),
            (p + "ffn.W2", (cfg.ffn_mult * d, d), "fanin"),
            (p + "ffn.b2", (d,), "zeros"),
        ]
    specs += [("final_ln.g", (d,), "ones"), ("final_ln.b", (d,), "zeros")]
    D = cfg.feature_width
    if cfg.variance_learning:
        half = d // 2
        specs += [
            ("out_x.W", (half, D), "fanin"),
            ("out_x.b", (D,), "zeros"),
            ("out_v.W", (half, D), "fanin"),
            ("out_v.b", (D,), "half"),
        ]
    else:
        specs += [("out_x.W", (d, D), "fanin"), ("out_x.b", (D,), "zeros")]
    return specs


def init_params(cfg: DenoiserConfig, seed: int) -> dict[str, Tensor]:
    """Deterministic parameter construction from (config, seed)."""
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    for name, shape, kind in _param_specs(cfg):
        if kind == "fanin":
            bound = 1.0 / np.sqrt(shape[0])
            data = rng.uniform(-bound, bound, size=shape)
        elif kind == "adjacency":
            # start each feature trajectory depending mostly on itself
            data = np.eye(shape[0]) + rng.uniform(-1e-3, 1e-3, size=shape)
        elif kind == "zeros":
            data = np.zeros(shape)
        elif kind == "ones":
            data = np.ones(shape)
        elif kind == "half":
            # centers raw v0 inside the clamp range so its gradient is
            # alive from the first step
            data = np.full(shape, 0.5)
        else:
            raise AssertionError(kind)
        params[name] = Tensor(data, requires_grad=True)
    return params


def parameter_count(params: dict[str, Tensor]) -> int:
    return sum(p.data.size for p in params.values())


def detach_params(params: dict[str, Tensor]) -> dict[str, Tensor]:
    """Constant view of the parameters; forward passes build no graph."""
    return {k: v.detach() for k, v in params.items()}


# -- building blocks ------------------------------------------------------


def gcn_layer_forward(H_in, A, W):
    """One graph convolution: A @ H_in @ W.

    H_in carries one row per graph node; leading batch axes broadcast.
    """
    H_in = H_in if isinstance(H_in, Tensor) else Tensor(H_in)
    A = A if isinstance(A, Tensor) else Tensor(A)
    W = W if isinstance(W, Tensor) else Tensor(W)
    if H_in.shape[-2] != A.shape[-1]:
        raise ValueError(
            f"adjacency is {A.shape} but input has {H_in.shape[-2]} nodes"
        )
    if H_in.shape[-1] != W.shape[0]:
        raise ValueError(
            f"weight expects {W.shape[0]} features, input has {H_in.shape[-1]}"
        )
    return (A @ H_in) @ W


def sinusoidal_embedding(positions: np.ndarray, dim: int) -> np.ndarray:
    """Interleaved sin/cos embedding with base 10000."""
    positions = np.asarray(positions, dtype=np.float64)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    angles = positions[..., None] * freqs
    emb = np.empty(positions.shape + (dim,))
    emb[..., 0::2] = np.sin(angles)
    emb[..., 1::2] = np.cos(angles)
    return emb


def _dropout(x: Tensor, p: float, rng, train: bool) -> Tensor:
    if not train or p <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * keep


def _attention(x: Tensor, params, prefix: str, cfg: DenoiserConfig, rng, train):
    B, T, d = x.shape
    H = cfg.heads
    hd = d // H
    q = x @ params[prefix + "Wq"] + params[prefix + "bq"]
    k = x @ params[prefix + "Wk"] + params[prefix + "bk"]
    v = x @ params[prefix + "Wv"] + params[prefix + "bv"]

    def split(m):
        return ad.transpose(m.reshape(B, T, H, hd), (0, 2, 1, 3))

    q, k, v = split(q), split(k), split(v)
    scores = (q @ ad.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(hd))
    ctx = ad.softmax(scores, axis=-1) @ v
    ctx = ad.transpose(ctx, (0, 2, 1, 3)).reshape(B, T, d)
    out = ctx @ params[prefix + "Wo"] + params[prefix + "bo"]
    return _dropout(out, cfg.dropout, rng, train)


def _encoder_layer(x: Tensor, params, i: int, cfg: DenoiserConfig, rng, train):
    p = f"layer{i}."
    h = ad.layernorm(x, params[p + "ln1.g"], params[p + "ln1.b"])
    x = x + _attention(h, params, p + "attn.", cfg, rng, train)
    h = ad.layernorm(x, params[p + "ln2.g"], params[p + "ln2.b"])
    h = ad.gelu(h @ params[p + "ffn.W1"] + params[p + "ffn.b1"])
    h = h @ params[p + "ffn.W2"] + params[p + "ffn.b2"]
    return x + _dropout(h, cfg.dropout, rng, train)


def _conditioning_token(t: np.ndarray, text: np.ndarray, params, cfg):
    t_feats = Tensor(sinusoidal_embedding(np.asarray(t, dtype=np.float64), cfg.latent))
    h = ad.gelu(t_feats @ params["time.W1"] + params["time.b1"])
    time_tok = h @ params["time.W2"] + params["time.b2"]
    # bias-free text path: a zeroed embedding contributes exactly nothing
    # and leaves zero gradients on these weights
    text_tok = ad.gelu(Tensor(text) @ params["text.W1"]) @ params["text.W2"]
    return time_tok + text_tok


def forward_batch(
    x_t: np.ndarray,
    t: np.ndarray,
    prefix: np.ndarray,
    text: np.ndarray,
    params: dict[str, Tensor],
    cfg: DenoiserConfig,
    rng=None,
    train: bool = False,
) -> DenoiserOutput:
    """Batched forward pass.

    x_t is (B, N, D); t one step index per element; prefix is (n, D) or
    (B, n, D) and overwrites the first n frames; text is (B, text_dim),
    already zeroed for masked elements.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    B, N, D = x_t.shape
    if D != cfg.feature_width:
        raise ValueError(f"model expects width {cfg.feature_width}, got {D}")
    prefix = np.asarray(prefix, dtype=np.float64)
    n = prefix.shape[-2]
    if n >= N:
        raise ValueError(f"prefix of {n} frames leaves no frames to predict (N={N})")
    x = x_t.copy()
    if n:
        x[:, :n, :] = prefix

    K, F, d = cfg.feature_width, cfg.gcn_hidden, cfg.latent
    if cfg.encoder == "gcn":
        h = gcn_layer_forward(
            x.reshape(B, N, K, 1), params["gcn0.A"], params["gcn0.W"]
        )
        h = ad.gelu(h)
        h = gcn_layer_forward(h, params["gcn1.A"], params["gcn1.W"])
        tokens = h.reshape(B, N, K * F) @ params["enc.W"] + params["enc.b"]
    else:
        tokens = Tensor(x) @ params["enc.W"] + params["enc.b"]
    tokens = tokens + sinusoidal_embedding(np.arange(N), d)[None]

    cond = _conditioning_token(t, text, params, cfg)
    seq = ad.concat([cond.reshape(B, 1, d), tokens], axis=1)
    for i in range(cfg.layers):
        seq = _encoder_layer(seq, params, i, cfg, rng, train)
    seq = ad.layernorm(seq, params["final_ln.g"], params["final_ln.b"])
    frames = seq[:, 1:, :]

    if cfg.variance_learning:
        half = d // 2
        x0_hat = frames[:, :, :half] @ params["out_x.W"] + params["out_x.b"]
        raw_v = frames[:, :, half:] @ params["out_v.W"] + params["out_v.b"]
        return DenoiserOutput(x0_hat=x0_hat, v0=ad.clip(raw_v, 0.0, 1.0))
    x0_hat = frames @ params["out_x.W"] + params["out_x.b"]
    return DenoiserOutput(x0_hat=x0_hat, v0=None)


def forward(
    x_t: np.ndarray,
    t: int,
    cond: Conditioning,
    params: dict[str, Tensor],
    cfg: DenoiserConfig,
    rng=None,
    train: bool = False,
) -> DenoiserOutput:
    """Single-sequence forward pass; see forward_batch."""
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.ndim != 2:
        raise ValueError(f"expected (N, D) motion, got shape {x_t.shape}")
    text = np.zeros(cfg.text_dim) if cond.text_masked else cond.text_embedding
    out = forward_batch(
        x_t[None],
        np.array([t]),
        cond.prefix[None],
        np.asarray(text, dtype=np.float64)[None],
        params,
        cfg,
        rng=rng,
        train=train,
    )
    return DenoiserOutput(
        x0_hat=out.x0_hat[0], v0=None if out.v0 is None else out.v0[0]
    )


# -- checkpoints -----------------------------------------------------------


def save_checkpoint(
    path,
    params: dict[str, Tensor],
    cfg: DenoiserConfig,
    extra: dict | None = None,
) -> None:
    """Write parameters as float32 payloads behind a JSON header.

    File layout: magic, version u32, header length u32, UTF-8 JSON header,
    then each tensor's row-major little-endian float32 data in header
    order.
    """
    tensors = [
        {"name": name, "shape": list(p.data.shape)} for name, p in params.items()
    ]
    header = json.dumps(
        {
            "version": CHECKPOINT_VERSION,
            "model": asdict(cfg),
            "extra": extra or {},
            "tensors": tensors,
        }
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for p in params.values():
            fh.write(p.data.astype("<f4").tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns (params, config, extra)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint file")
    version, header_len = struct.unpack_from("<II", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(blob[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header ({exc})") from exc
    try:
        cfg = DenoiserConfig(**header["model"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: bad model config ({exc})") from exc
    params: dict[str, Tensor] = {}
    offset = 12 + header_len
    for entry in header.get("tensors", []):
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + count * 4
        if end > len(blob):
            raise FormatError(f"{path}: truncated tensor {entry['name']!r}")
        data = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        params[entry["name"]] = Tensor(
            data.astype(np.float64).reshape(shape), requires_grad=True
        )
        offset = end
    if offset != len(blob):
        raise FormatError(f"{path}: {len(blob) - offset} trailing bytes")
    expected = [name for name, _, _ in _param_specs(cfg)]
    if list(params) != expected:
        raise FormatError(f"{path}: tensor names do not match the model config")
    return params, cfg, header.get("extra", {})
