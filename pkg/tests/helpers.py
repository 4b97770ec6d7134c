"""Shared test oracles, independent of the package implementations.

The quaternion oracle here deliberately avoids rotation matrices and the
cross-product rotation shortcut: vectors are rotated with the full
sandwich product q * (0, v) * conj(q).
"""

import numpy as np

from mdmp.kinematics import PoseLayout, rich_pose_layout


def qmul(a, b):
    """Hamilton product of two (w, x, y, z) tuples."""
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return (
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    )


def qconj(q):
    return (q[0], -q[1], -q[2], -q[3])


def qrotate(q, v):
    """Rotate 3-vector v by quaternion q via the sandwich product."""
    _, x, y, z = qmul(qmul(q, (0.0, v[0], v[1], v[2])), qconj(q))
    return np.array([x, y, z])


def quat_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    half = angle / 2.0
    s = np.sin(half)
    return (np.cos(half), axis[0] * s, axis[1] * s, axis[2] * s)


def fk_oracle(local_quats, root_quat, root_pos, parents, offsets):
    """Brute-force forward kinematics in pure quaternion arithmetic.

    local_quats[j-1] is the local rotation of joint j; parents/offsets
    describe the tree.
    """
    J = len(parents)
    g_quat = [None] * J
    g_pos = [None] * J
    g_quat[0] = root_quat
    g_pos[0] = np.asarray(root_pos, dtype=np.float64)
    for j in range(1, J):
        p = parents[j]
        g_pos[j] = g_pos[p] + qrotate(g_quat[p], offsets[j])
        g_quat[j] = qmul(g_quat[p], local_quats[j - 1])
    return np.stack(g_pos)


def matrix_to_rot6d(m):
    """First two columns of a rotation matrix, concatenated."""
    m = np.asarray(m, dtype=np.float64)
    return np.concatenate([m[:, 0], m[:, 1]])


def build_rich_features(
    omega, vel_xz, height, local_r6, layout: PoseLayout | None = None
):
    """Assemble a feature sequence from known root motion and rotations.

    Blocks not consumed by the position decode (root-relative positions,
    velocities, contacts) are zero-filled.  local_r6 has shape
    (N, J-1, 6).
    """
    layout = layout or rich_pose_layout()
    n = len(omega)
    seq = np.zeros((n, layout.width))
    seq[:, layout.root_angular_vel] = np.asarray(omega).reshape(n, 1)
    seq[:, layout.root_linear_vel_xz] = vel_xz
    seq[:, layout.root_height] = np.asarray(height).reshape(n, 1)
    seq[:, layout.joint_rotations_6d] = np.asarray(local_r6).reshape(n, -1)
    return seq


def random_unit_quat(rng):
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    return tuple(q)
