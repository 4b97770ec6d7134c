"""Prediction metrics: horizon-bucketed joint error and sparsification.

Positions are in meters everywhere inside this module; only the reported
tables convert to millimeters.  Horizons are measured from the first
predicted frame, which sits one frame period past the end of the prefix,
and are grouped into half-second buckets labeled by their upper edge.
"""

from __future__ import annotations

from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

BUCKET_SECONDS = 0.5


@dataclass(frozen=True)
class HorizonTable:
    edges: np.ndarray  # upper bucket edges, seconds, ascending
    mpjpe_mm: np.ndarray  # mean joint error per bucket, millimeters
    counts: np.ndarray  # frames aggregated into each bucket


@dataclass(frozen=True)
class SparsificationResult:
    fractions: np.ndarray  # removed fraction per point, starting at 0
    curve: np.ndarray  # remaining error, uncertainty-ranked, normalized
    oracle_curve: np.ndarray  # same but ranked by the true error
    random_curve: np.ndarray  # mean over seeded random rankings
    sparsification_error: float  # mean gap between curve and oracle


def mpjpe_per_frame(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Mean over joints of the Euclidean distance, one value per frame."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    if pred.ndim != 3 or pred.shape[-1] != 3:
        raise ValueError(f"expected (N, J, 3) positions, got {pred.shape}")
    return np.linalg.norm(pred - gt, axis=-1).mean(axis=-1)


def _bucket_of(lead_seconds: np.ndarray) -> np.ndarray:
    """Index of the half-second bucket owning each lead time."""
    return np.ceil(lead_seconds / BUCKET_SECONDS - 1e-9).astype(int)


def evaluate_mpjpe(pairs, fps: float, prefix_len: int) -> HorizonTable:
    """Aggregate joint error over (prediction, ground truth) pairs.

    Every frame past the prefix contributes to the bucket holding its
    lead time; bucket means are frame-weighted across all sequences.
    """
    if fps <= 0:
        raise ValueError("fps must be positive")
    sums: dict[int, float] = {}
    counts: dict[int, int] = {}
    total = 0
    for pred, gt in pairs:
        errors = mpjpe_per_frame(pred, gt)
        N = errors.shape[0]
        if prefix_len >= N:
            raise ValueError(
                f"prefix of {prefix_len} frames leaves nothing to score (N={N})"
            )
        frames = np.arange(prefix_len, N)
        lead = (frames - prefix_len + 1) / fps
        buckets = _bucket_of(lead)
        for b in np.unique(buckets):
            chunk = errors[frames[buckets == b]]
            sums[b] = sums.get(b, 0.0) + float(chunk.sum())
            counts[b] = counts.get(b, 0) + chunk.size
        total += 1
    if total == 0:
        raise ValueError("no sequences to evaluate")
    keys = sorted(sums)
    return HorizonTable(
        edges=np.array([k * BUCKET_SECONDS for k in keys]),
        mpjpe_mm=np.array([1000.0 * sums[k] / counts[k] for k in keys]),
        counts=np.array([counts[k] for k in keys]),
    )


def write_horizon_csv(path, table: HorizonTable) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("horizon_s,mpjpe_mm,frames\n")
        for edge, err, cnt in zip(table.edges, table.mpjpe_mm, table.counts):
            fh.write(f"{float(edge)!r},{float(err)!r},{int(cnt)}\n")


# -- sparsification -------------------------------------------------------


def _removal_curve(errors: np.ndarray, order: np.ndarray, M: int) -> np.ndarray:
    """Remaining mean error after removing leading slices of ``order``."""
    m = errors.size
    vals = np.empty(M)
    for k in range(M):
        removed = int(round(k / M * m))
        vals[k] = errors[order[removed:]].mean()
    return vals / vals[0]


def sparsification(
    errors,
    uncertainty,
    M: int = 20,
    random_draws: int = 10,
    seed: int = 0,
) -> SparsificationResult:
    """Error-retention curves for an uncertainty ranking.

    All cells are pooled; at each fraction k/M the most uncertain cells
    are dropped and the mean of the rest recorded, normalized by the
    keep-everything mean.  The oracle ranks by the true error; the
    random baseline averages seeded shuffles.  The sparsification error
    is the mean gap to the oracle over all fractions.
    """
    err = np.asarray(errors, dtype=np.float64).ravel()
    unc = np.asarray(uncertainty, dtype=np.float64).ravel()
    if err.size == 0:
        raise ValueError("no cells to rank")
    if err.shape != unc.shape:
        raise ValueError(
            f"{err.size} error cells but {unc.size} uncertainty cells"
        )
    if M < 2 or M > err.size:
        raise ValueError(f"M={M} must lie in [2, {err.size}]")
    if not (np.all(np.isfinite(err)) and np.all(np.isfinite(unc))):
        raise ValueError("errors and uncertainties must be finite")

    by_uncertainty = np.argsort(-unc, kind="stable")
    by_error = np.argsort(-err, kind="stable")
    curve = _removal_curve(err, by_uncertainty, M)
    oracle = _removal_curve(err, by_error, M)
    rand = np.zeros(M)
    for draw in range(random_draws):
        rng = np.random.default_rng([seed, draw])
        rand += _removal_curve(err, rng.permutation(err.size), M)
    rand /= random_draws
    return SparsificationResult(
        fractions=np.arange(M) / M,
        curve=curve,
        oracle_curve=oracle,
        random_curve=rand,
        sparsification_error=float(np.mean(curve - oracle)),
    )


# -- plots ---------------------------------------------------------------

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2")


def write_line_plot(
    path,
    series,
    title: str = "",
    x_label: str = "",
    y_label: str = "",
    width: int = 640,
    height: int = 420,
) -> None:
    """Minimal standalone SVG line chart.

    series is a list of (label, x values, y values).  Output depends
    only on the arguments, so rewrites are byte-identical.
    """
    if not series:
        raise ValueError("nothing to plot")
    margin = 54
    xs = np.concatenate([np.asarray(x, dtype=np.float64) for _, x, _ in series])
    ys = np.concatenate([np.asarray(y, dtype=np.float64) for _, _, y in series])
    if xs.size == 0:
        raise ValueError("series are empty")
    x_lo, x_hi = float(xs.min()), float(xs.max())
    y_lo, y_hi = float(ys.min()), float(ys.max())
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 0.5, x_hi + 0.5
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    pad = 0.04 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    def px(v):
        return margin + (v - x_lo) / (x_hi - x_lo) * (width - 2 * margin)

    def py(v):
        return height - margin - (v - y_lo) / (y_hi - y_lo) * (height - 2 * margin)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="#444" stroke-width="1"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" '
        f'y2="{height - margin}" stroke="#444" stroke-width="1"/>',
    ]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        xv = x_lo + frac * (x_hi - x_lo)
        yv = y_lo + frac * (y_hi - y_lo)
        parts.append(
            f'<text x="{px(xv):.2f}" y="{height - margin + 16}" '
            f'font-size="11" text-anchor="middle" fill="#333">{xv:.4g}</text>'
        )
        parts.append(
            f'<text x="{margin - 6}" y="{py(yv):.2f}" font-size="11" '
            f'text-anchor="end" dominant-baseline="middle" '
            f'fill="#333">{yv:.4g}</text>'
        )
    if title:
        parts.append(
            f'<text x="{width / 2:.1f}" y="22" font-size="14" '
            f'text-anchor="middle" fill="#111">{escape(title)}</text>'
        )
    if x_label:
        parts.append(
            f'<text x="{width / 2:.1f}" y="{height - 12}" font-size="12" '
            f'text-anchor="middle" fill="#111">{escape(x_label)}</text>'
        )
    if y_label:
        parts.append(
            f'<text x="16" y="{height / 2:.1f}" font-size="12" '
            f'text-anchor="middle" fill="#111" '
            f'transform="rotate(-90 16 {height / 2:.1f})">{escape(y_label)}</text>'
        )
    for i, (label, x, y) in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(
            f"{px(float(a)):.2f},{py(float(b)):.2f}" for a, b in zip(x, y)
        )
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" '
            f'stroke-width="1.8"/>'
        )
        parts.append(
            f'<text x="{width - margin}" y="{margin + 16 * i}" font-size="11" '
            f'text-anchor="end" fill="{color}">{escape(str(label))}</text>'
        )
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(parts) + "\n")
