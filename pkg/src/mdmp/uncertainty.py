"""Per-frame, per-joint uncertainty indices over sampled motion.

Three indices share one container shape (frames x joints):

* mode divergence: spread of the final samples across chains;
* denoising fluctuations: spread of the signal estimates over the last
  steps of a single chain;
* predicted variance: the model's own variance output.

All of them reduce feature channels to joints through a joint map, an
integer per feature channel naming the joint it belongs to (-1 for
channels that belong to no joint, which are dropped).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .diffusion import SampleTrace
from .kinematics import JointTree


class IndexKind(enum.Enum):
    MODE_DIVERGENCE = "mode_divergence"
    DENOISING_FLUCTUATIONS = "denoising_fluctuations"
    PREDICTED_VARIANCE = "predicted_variance"


@dataclass(frozen=True)
class UncertaintyGrid:
    values: np.ndarray  # (frames, joints), nonnegative
    kind: IndexKind

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"expected a (frames, joints) grid, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("uncertainty values must be finite")
        if np.any(values < 0):
            raise ValueError("uncertainty values must be nonnegative")
        object.__setattr__(self, "values", values)

    @property
    def frame_count(self) -> int:
        return self.values.shape[0]

    @property
    def joint_count(self) -> int:
        return self.values.shape[1]


def _group_by_joint(per_feature: np.ndarray, joint_map: np.ndarray) -> np.ndarray:
    """Mean the feature axis into joints; -1 entries are left out."""
    per_feature = np.asarray(per_feature, dtype=np.float64)
    joint_map = np.asarray(joint_map)
    if joint_map.ndim != 1 or per_feature.shape[-1] != joint_map.shape[0]:
        raise ValueError(
            f"joint map covers {joint_map.shape[0]} features, "
            f"data has {per_feature.shape[-1]}"
        )
    used = joint_map[joint_map >= 0]
    if used.size == 0:
        raise ValueError("joint map assigns no feature to any joint")
    J = int(used.max()) + 1
    counts = np.bincount(used, minlength=J)
    if np.any(counts == 0):
        missing = np.where(counts == 0)[0]
        raise ValueError(f"joints {missing.tolist()} own no feature channel")
    out = np.zeros(per_feature.shape[:-1] + (J,))
    for j in range(J):
        out[..., j] = per_feature[..., joint_map == j].mean(axis=-1)
    return out


def mode_divergence(samples, joint_map) -> UncertaintyGrid:
    """Spread of independently sampled futures, per frame and joint.

    samples: sequence of (N, D) arrays (or one (S, N, D) array), S >= 2.
    The per-feature population standard deviation across samples is
    averaged within each joint.
    """
    stack = np.asarray(samples, dtype=np.float64)
    if stack.ndim != 3:
        raise ValueError(f"expected S stacked (N, D) samples, got {stack.shape}")
    if stack.shape[0] < 2:
        raise ValueError("mode divergence needs at least two samples")
    spread = stack.std(axis=0)
    return UncertaintyGrid(
        values=_group_by_joint(spread, joint_map), kind=IndexKind.MODE_DIVERGENCE
    )


def denoising_fluctuations(
    trace: SampleTrace, joint_map, window: int = 20
) -> UncertaintyGrid:
    """Spread of the chain's signal estimates over its final steps."""
    if window < 2:
        raise ValueError("window must cover at least two steps")
    if window > len(trace.snapshots):
        raise ValueError(
            f"window of {window} exceeds the {len(trace.snapshots)} recorded steps"
        )
    tail = np.stack(trace.snapshots[-window:])
    spread = tail.std(axis=0)
    return UncertaintyGrid(
        values=_group_by_joint(spread, joint_map),
        kind=IndexKind.DENOISING_FLUCTUATIONS,
    )


def predicted_variance(final_variance, joint_map) -> UncertaintyGrid:
    """The model's own last-step variance, averaged into joints."""
    if final_variance is None:
        raise ValueError(
            "no variance channel in this sample; the model was built "
            "without variance learning"
        )
    var = np.asarray(final_variance, dtype=np.float64)
    if var.ndim != 2:
        raise ValueError(f"expected an (N, D) variance array, got {var.shape}")
    return UncertaintyGrid(
        values=_group_by_joint(var, joint_map), kind=IndexKind.PREDICTED_VARIANCE
    )


# -- presence zones ---------------------------------------------------------


@dataclass(frozen=True)
class PresenceZones:
    """Spheres of likely presence around selected joints."""

    joints: tuple  # joint indices the zones cover
    centers: np.ndarray  # (frames, len(joints), 3)
    radii: np.ndarray  # (frames, len(joints))


def presence_zones(
    positions: np.ndarray,
    grid: UncertaintyGrid,
    joints=None,
    tree: JointTree | None = None,
    radius_scale: float = 1.0,
) -> PresenceZones:
    """Wrap selected joints in spheres sized by their uncertainty.

    positions is (N, J, 3).  When joints is omitted the end effectors
    (leaves of the joint tree) are used, so a tree must be given.
    """
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim != 3 or positions.shape[-1] != 3:
        raise ValueError(f"expected (N, J, 3) positions, got {positions.shape}")
    N, J, _ = positions.shape
    if grid.values.shape != (N, J):
        raise ValueError(
            f"grid is {grid.values.shape}, positions imply {(N, J)}"
        )
    if joints is None:
        if tree is None:
            raise ValueError("give either explicit joints or a joint tree")
        joints = tree.leaves()
    joints = tuple(int(j) for j in joints)
    if not joints:
        raise ValueError("no joints selected")
    for j in joints:
        if not 0 <= j < J:
            raise ValueError(f"joint {j} outside [0, {J})")
    sel = list(joints)
    return PresenceZones(
        joints=joints,
        centers=positions[:, sel, :].copy(),
        radii=grid.values[:, sel] * radius_scale,
    )


# -- CSV form -----------------------------------------------------------------


def save_uncertainty_csv(path, grid: UncertaintyGrid) -> None:
    """One row per frame; float repr keeps rewrites byte-identical."""
    J = grid.joint_count
    header = "frame," + ",".join(f"joint_{j}" for j in range(J))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for i, row in enumerate(grid.values):
            fh.write(str(i) + "," + ",".join(repr(float(v)) for v in row) + "\n")


def load_uncertainty_csv(path, kind: IndexKind) -> UncertaintyGrid:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if header[0] != "frame" or any(
            name != f"joint_{j}" for j, name in enumerate(header[1:])
        ):
            raise ValueError(f"{path}: unexpected uncertainty CSV header")
        J = len(header) - 1
        rows = []
        for line_no, line in enumerate(fh):
            cells = line.strip().split(",")
            if len(cells) != J + 1 or int(cells[0]) != line_no:
                raise ValueError(f"{path}: malformed row {line_no}")
            rows.append([float(c) for c in cells[1:]])
    return UncertaintyGrid(values=np.array(rows).reshape(len(rows), J), kind=kind)
