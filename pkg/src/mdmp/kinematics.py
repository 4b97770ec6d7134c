"""Skeleton math: pose-feature layout, root recovery, 6D rotations, and
forward kinematics.

The rich pose representation packs, per frame: root yaw rate (1), root
linear velocity in the horizontal plane expressed in the root frame (2),
root height (1), root-relative joint positions ((J-1)*3), joint rotations
in 6D form ((J-1)*6), joint velocities (J*3), and four binary foot-contact
flags.  For the 22-joint skeleton that is 263 features.  The world is
Y-up; yaw is rotation about +Y.

The alternative flat layout stores global joint positions directly
(3 numbers per joint) and needs no transform.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, NumericalError


# -- joint tree --------------------------------------------------------


@dataclass(frozen=True)
class JointTree:
    """Skeleton topology: parent indices and rest-pose bone offsets."""

    parents: np.ndarray  # int[J], parents[0] == -1
    offsets: np.ndarray  # float[J, 3], meters

    def __post_init__(self):
        parents = np.asarray(self.parents, dtype=np.int64)
        offsets = np.asarray(self.offsets, dtype=np.float64)
        if parents.ndim != 1 or offsets.shape != (parents.size, 3):
            raise ValueError(
                f"offsets shape {offsets.shape} does not match {parents.size} joints"
            )
        if parents[0] != -1:
            raise ValueError("joint 0 must be the root (parent -1)")
        for j in range(1, parents.size):
            if not 0 <= parents[j] < j:
                raise ValueError(
                    f"parent of joint {j} is {parents[j]}; joints must be in topological order"
                )
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "offsets", offsets)

    @property
    def joint_count(self) -> int:
        return self.parents.size

    def leaves(self) -> list[int]:
        """Joints with no children (end effectors), in index order."""
        has_child = np.zeros(self.joint_count, dtype=bool)
        has_child[self.parents[1:]] = True
        return [j for j in range(self.joint_count) if not has_child[j]]


def load_joint_tree(path) -> JointTree:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict) or "parents" not in doc or "offsets" not in doc:
        raise FormatError(f"{path}: expected object with 'parents' and 'offsets'")
    try:
        return JointTree(
            parents=np.asarray(doc["parents"]), offsets=np.asarray(doc["offsets"])
        )
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def save_joint_tree(path, tree: JointTree) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            {"parents": tree.parents.tolist(), "offsets": tree.offsets.tolist()},
            fh,
            indent=2,
        )
        fh.write("\n")


# -- feature layout ----------------------------------------------------


@dataclass(frozen=True)
class PoseLayout:
    """Named block offsets into the per-frame feature vector."""

    joint_count: int
    root_angular_vel: slice
    root_linear_vel_xz: slice
    root_height: slice
    local_joint_positions: slice
    joint_rotations_6d: slice
    local_joint_velocities: slice
    foot_contacts: slice
    width: int

    def joint_map(self) -> np.ndarray:
        """Owning joint per feature index; -1 for features tied to no joint.

        Root-only channels (yaw rate, linear velocity, height) belong to
        joint 0; foot contacts belong to no joint.
        """
        J = self.joint_count
        owner = np.full(self.width, -1, dtype=np.int64)
        owner[self.root_angular_vel] = 0
        owner[self.root_linear_vel_xz] = 0
        owner[self.root_height] = 0
        owner[self.local_joint_positions] = np.repeat(np.arange(1, J), 3)
        owner[self.joint_rotations_6d] = np.repeat(np.arange(1, J), 6)
        owner[self.local_joint_velocities] = np.repeat(np.arange(J), 3)
        return owner


def rich_pose_layout(joint_count: int = 22) -> PoseLayout:
    """Block layout of the velocity/rotation representation (263 wide at J=22)."""
    J = joint_count
    sizes = [1, 2, 1, (J - 1) * 3, (J - 1) * 6, J * 3, 4]
    edges = np.concatenate(([0], np.cumsum(sizes)))
    blocks = [slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]
    return PoseLayout(
        joint_count=J,
        root_angular_vel=blocks[0],
        root_linear_vel_xz=blocks[1],
        root_height=blocks[2],
        local_joint_positions=blocks[3],
        joint_rotations_6d=blocks[4],
        local_joint_velocities=blocks[5],
        foot_contacts=blocks[6],
        width=int(edges[-1]),
    )


def positions_joint_map(width: int) -> np.ndarray:
    """Owning joint per feature for the flat global-position layout."""
    if width % 3 != 0:
        raise ValueError(f"position layout width must be divisible by 3, got {width}")
    return np.repeat(np.arange(width // 3), 3)


def as_joint_positions(seq: np.ndarray) -> np.ndarray:
    """View an (N, J*3) position sequence as (N, J, 3)."""
    seq = np.asarray(seq)
    if seq.ndim != 2 or seq.shape[1] % 3 != 0:
        raise ValueError(f"expected (N, 3J) position features, got {seq.shape}")
    return seq.reshape(seq.shape[0], -1, 3)


def flatten_positions(pos: np.ndarray) -> np.ndarray:
    """Inverse of as_joint_positions."""
    pos = np.asarray(pos)
    if pos.ndim != 3 or pos.shape[2] != 3:
        raise ValueError(f"expected (N, J, 3) positions, got {pos.shape}")
    return pos.reshape(pos.shape[0], -1)


# -- quaternions --------------------------------------------------------


@dataclass(frozen=True)
class Quaternion:
    w: float
    x: float
    y: float
    z: float

    @classmethod
    def identity(cls) -> "Quaternion":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_yaw(cls, angle: float) -> "Quaternion":
        """Rotation by ``angle`` radians about the +Y (up) axis."""
        return cls(np.cos(angle / 2.0), 0.0, np.sin(angle / 2.0), 0.0)

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> "Quaternion":
        axis = np.asarray(axis, dtype=np.float64)
        axis = axis / np.linalg.norm(axis)
        half = angle / 2.0
        s = np.sin(half)
        return cls(np.cos(half), axis[0] * s, axis[1] * s, axis[2] * s)

    def normalized(self) -> "Quaternion":
        n = np.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)
        return Quaternion(self.w / n, self.x / n, self.y / n, self.z / n)

    def __mul__(self, other: "Quaternion") -> "Quaternion":
        w1, x1, y1, z1 = self.w, self.x, self.y, self.z
        w2, x2, y2, z2 = other.w, other.x, other.y, other.z
        return Quaternion(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        )

    def rotate(self, v) -> np.ndarray:
        """Rotate a 3-vector: v + 2w(q x v) + 2 q x (q x v)."""
        v = np.asarray(v, dtype=np.float64)
        qv = np.array([self.x, self.y, self.z])
        t = 2.0 * np.cross(qv, v)
        return v + self.w * t + np.cross(qv, t)

    def to_matrix(self) -> np.ndarray:
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )


# -- core transforms -----------------------------------------------------


def recover_root(seq: np.ndarray, layout: PoseLayout | None = None):
    """Integrate root velocity channels into world-frame root poses.

    Forward-Euler: the velocities stored at frame i move frame i to frame
    i+1, so frame 0 starts at yaw 0 and the origin.  Linear velocities are
    expressed in the root frame and rotated into the world by the yaw
    current at their frame.  Returns (rotations, positions): a list of N
    yaw Quaternions and an (N, 3) array of root positions.
    """
    layout = layout or rich_pose_layout()
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[1] != layout.width:
        raise ValueError(
            f"expected (N, {layout.width}) feature sequence, got {seq.shape}"
        )
    n_frames = seq.shape[0]
    omega = seq[:, layout.root_angular_vel][:, 0]
    vel_xz = seq[:, layout.root_linear_vel_xz]
    height = seq[:, layout.root_height][:, 0]

    yaw = np.zeros(n_frames)
    yaw[1:] = np.cumsum(omega[:-1])
    cos_y, sin_y = np.cos(yaw), np.sin(yaw)
    # Ry(yaw) applied to the local (vx, 0, vz) velocity.
    world_vx = cos_y * vel_xz[:, 0] + sin_y * vel_xz[:, 1]
    world_vz = -sin_y * vel_xz[:, 0] + cos_y * vel_xz[:, 1]

    positions = np.zeros((n_frames, 3))
    positions[1:, 0] = np.cumsum(world_vx[:-1])
    positions[1:, 2] = np.cumsum(world_vz[:-1])
    positions[:, 1] = height
    rotations = [Quaternion.from_yaw(a) for a in yaw]
    return rotations, positions


def rot6d_to_matrix(r: np.ndarray) -> np.ndarray:
    """Gram-Schmidt a 6D rotation parameterization into SO(3).

    The six numbers are two 3-vectors; the output columns are the
    orthonormalized first vector, the second vector with its component
    along the first removed, and their cross product.
    """
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (6,):
        raise ValueError(f"expected 6 numbers, got shape {r.shape}")
    a1, a2 = r[:3], r[3:]
    n1 = np.linalg.norm(a1)
    if n1 < 1e-8:
        raise NumericalError("first rotation vector is numerically zero")
    b1 = a1 / n1
    a2_perp = a2 - np.dot(b1, a2) * b1
    n2 = np.linalg.norm(a2_perp)
    if n2 < 1e-8:
        raise NumericalError("rotation vectors are numerically parallel")
    b2 = a2_perp / n2
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=1)


def forward_kinematics(
    local_rotations: np.ndarray,
    root_rotation: Quaternion,
    root_position: np.ndarray,
    tree: JointTree,
) -> np.ndarray:
    """Propagate local joint rotations down the tree to global positions.

    ``local_rotations`` holds one 3x3 matrix per non-root joint (index j-1
    for joint j).  Each joint sits at its parent's position plus the rest
    offset rotated by the parent's accumulated rotation.
    """
    J = tree.joint_count
    local_rotations = np.asarray(local_rotations, dtype=np.float64)
    if local_rotations.shape != (J - 1, 3, 3):
        raise ValueError(
            f"expected {(J - 1, 3, 3)} local rotations, got {local_rotations.shape}"
        )
    global_rot = np.empty((J, 3, 3))
    positions = np.empty((J, 3))
    global_rot[0] = root_rotation.to_matrix()
    positions[0] = np.asarray(root_position, dtype=np.float64)
    for j in range(1, J):
        p = tree.parents[j]
        positions[j] = positions[p] + global_rot[p] @ tree.offsets[j]
        global_rot[j] = global_rot[p] @ local_rotations[j - 1]
    return positions


def features_to_positions(
    seq: np.ndarray, tree: JointTree, layout: PoseLayout | None = None
) -> np.ndarray:
    """Full decode: velocity/rotation features to global joint positions.

    Output is (N, J*3), the flat position layout consumed by the error
    metrics.  Foot-contact channels are ignored.
    """
    layout = layout or rich_pose_layout(tree.joint_count)
    if tree.joint_count != layout.joint_count:
        raise ValueError(
            f"tree has {tree.joint_count} joints but layout expects {layout.joint_count}"
        )
    seq = np.asarray(seq, dtype=np.float64)
    root_rots, root_pos = recover_root(seq, layout)
    J = tree.joint_count
    out = np.empty((seq.shape[0], J * 3))
    for i in range(seq.shape[0]):
        r6 = seq[i, layout.joint_rotations_6d].reshape(J - 1, 6)
        local = np.stack([rot6d_to_matrix(r) for r in r6])
        pos = forward_kinematics(local, root_rots[i], root_pos[i], tree)
        out[i] = pos.reshape(-1)
    return out
