"""From pose features to joint positions in meters.

Two feature layouts are supported.  The plain one stores xyz joint
positions directly and needs no decoding.  The rich one stores root
velocities plus per-joint 6D rotations, and has to be integrated and
pushed through forward kinematics before any error can be measured in
meters.  This script does both by hand.
"""

import numpy as np

from mdmp.data import default_toy_tree
from mdmp.kinematics import (
    JointTree,
    Quaternion,
    as_joint_positions,
    features_to_positions,
    forward_kinematics,
    positions_joint_map,
    rich_pose_layout,
    rot6d_to_matrix,
)


def first_two_columns(m):
    """The 6D rotation encoding is just the first two matrix columns."""
    return np.concatenate([m[:, 0], m[:, 1]])

# --- plain position features -------------------------------------------

tree = default_toy_tree()
print(f"toy skeleton: {tree.joint_count} joints, leaves at {tree.leaves()}")

# A flat (N, J*3) sequence reshapes to (N, J, 3) and back; the joint map
# says which joint owns each feature column.
flat = np.arange(2 * tree.joint_count * 3, dtype=np.float64).reshape(2, -1)
pos = as_joint_positions(flat)
print("positions shape:", pos.shape)
print("joint map:", positions_joint_map(flat.shape[1]))

# --- forward kinematics --------------------------------------------------

# Bend the first child joint 90 degrees about z and watch its subtree
# swing while bone lengths stay put.
local = np.tile(np.eye(3), (tree.joint_count - 1, 1, 1))
local[0] = Quaternion.from_axis_angle([0, 0, 1], np.pi / 2).to_matrix()
posed = forward_kinematics(local, Quaternion.identity(), np.zeros(3), tree)
rest = forward_kinematics(
    np.tile(np.eye(3), (tree.joint_count - 1, 1, 1)),
    Quaternion.identity(),
    np.zeros(3),
    tree,
)
moved = np.linalg.norm(posed - rest, axis=1)
print("per-joint displacement after the bend:", np.round(moved, 3))
for j in range(1, tree.joint_count):
    a = np.linalg.norm(posed[j] - posed[tree.parents[j]])
    b = np.linalg.norm(tree.offsets[j])
    assert abs(a - b) < 1e-12
print("bone lengths unchanged")

# --- 6D rotation encoding ------------------------------------------------

# Two matrix columns survive the trip; the third is rebuilt by a cross
# product, so the result is exactly orthonormal even from noisy input.
q = Quaternion.from_axis_angle([1, 2, 0.5], 1.1)
r6 = first_two_columns(q.to_matrix())
noisy = r6 + 0.05 * np.random.default_rng(7).standard_normal(6)
M = rot6d_to_matrix(noisy)
print("orthonormality error:", f"{np.max(np.abs(M.T @ M - np.eye(3))):.2e}")

# --- rich features decoded end to end ------------------------------------

layout = rich_pose_layout()
J = layout.joint_count
chain = JointTree(
    parents=np.arange(-1, J - 1),
    offsets=np.concatenate([np.zeros((1, 3)), np.tile([[0.0, 0.07, 0.0]], (J - 1, 1))]),
)
n = 40
seq = np.zeros((n, layout.width))
seq[:, layout.root_angular_vel] = 0.05          # constant turn rate
seq[:, layout.root_linear_vel_xz] = [0.12, 0.0]  # forward speed
seq[:, layout.root_height] = 0.95
rest6d = first_two_columns(np.eye(3))
seq[:, layout.joint_rotations_6d] = np.tile(rest6d, (n, J - 1))

decoded = as_joint_positions(features_to_positions(seq, chain, layout))
root = decoded[:, 0]
print("root path starts", np.round(root[0], 3), "ends", np.round(root[-1], 3))
heading = np.degrees(np.arctan2(root[-1, 0] - root[-2, 0], root[-1, 2] - root[-2, 2]))
print(f"final heading {heading:.1f} degrees after {n} frames of constant turning")
