"""Motion container I/O, dataset manifests, prefix splitting, and the
synthetic toy-motion generator used for desk-scale training.

Container format (little-endian throughout): magic b"MDMP", version u32,
frame count N u32, feature width D u32, fps f32, layout tag u32, then
N*D float32 values in row-major order.  Layout tags: 0 = raw, 1 = the
263-wide velocity/rotation pose encoding, 2 = flat 3D joint positions.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError
from .kinematics import JointTree, Quaternion, forward_kinematics

MAGIC = b"MDMP"
CONTAINER_VERSION = 1

LAYOUT_RAW = 0
LAYOUT_RICH_263 = 1
LAYOUT_POSITIONS_3D = 2

_HEADER = struct.Struct("<4sIIIfI")


@dataclass
class MotionContainer:
    data: np.ndarray  # (N, D) float32
    fps: float
    layout: int = LAYOUT_RAW

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 2:
            raise ValueError(f"motion data must be 2-D (N, D), got {data.shape}")
        _check_layout_width(self.layout, data.shape[1])
        self.data = data

    @property
    def frame_count(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def duration(self) -> float:
        return self.frame_count / self.fps


def _check_layout_width(layout: int, width: int) -> None:
    if layout == LAYOUT_RICH_263 and width != 263:
        raise ValueError(f"layout tag 1 requires width 263, got {width}")
    if layout == LAYOUT_POSITIONS_3D and width % 3 != 0:
        raise ValueError(f"layout tag 2 requires width divisible by 3, got {width}")
    if layout not in (LAYOUT_RAW, LAYOUT_RICH_263, LAYOUT_POSITIONS_3D):
        raise ValueError(f"unknown layout tag {layout}")


def write_container(path, container: MotionContainer) -> None:
    n, d = container.data.shape
    header = _HEADER.pack(
        MAGIC, CONTAINER_VERSION, n, d, container.fps, container.layout
    )
    payload = container.data.astype("<f4", copy=False).tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_container(path) -> MotionContainer:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: too short for a container header")
    magic, version, n, d, fps, layout = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != CONTAINER_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    expected = n * d * 4
    got = len(blob) - _HEADER.size
    if got != expected:
        raise FormatError(
            f"{path}: payload is {got} bytes, header promises {expected}"
        )
    data = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size).reshape(n, d)
    try:
        return MotionContainer(data=data.copy(), fps=fps, layout=layout)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


@dataclass
class DatasetRecord:
    id: str
    motion: MotionContainer
    prompts: list[str]

    def __post_init__(self):
        if len(self.prompts) < 1:
            raise ValueError(f"record {self.id!r} needs at least one prompt")


def save_dataset(records: list[DatasetRecord], out_dir, manifest_name="manifest.json"):
    """Write one container per record plus a manifest that indexes them."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for rec in records:
        fname = f"{rec.id}.mdmp"
        write_container(out_dir / fname, rec.motion)
        entries.append(
            {"id": rec.id, "motion_path": fname, "prompts": list(rec.prompts)}
        )
    manifest_path = out_dir / manifest_name
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump({"records": entries}, fh, indent=2)
        fh.write("\n")
    return manifest_path


def load_dataset(manifest_path) -> list[DatasetRecord]:
    manifest_path = Path(manifest_path)
    with open(manifest_path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{manifest_path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict) or "records" not in doc:
        raise FormatError(f"{manifest_path}: expected object with 'records'")
    records = []
    seen = set()
    for entry in doc["records"]:
        for key in ("id", "motion_path", "prompts"):
            if key not in entry:
                raise FormatError(f"{manifest_path}: record missing field {key!r}")
        if entry["id"] in seen:
            raise FormatError(f"{manifest_path}: duplicate record id {entry['id']!r}")
        seen.add(entry["id"])
        motion = read_container(manifest_path.parent / entry["motion_path"])
        records.append(
            DatasetRecord(id=entry["id"], motion=motion, prompts=entry["prompts"])
        )
    return records


def split_prefix(seq: np.ndarray, n: int):
    """Split off the observed prefix; the target stays the full sequence.

    The model predicts all N frames with the first n imposed, so the
    second return value is the sequence itself.
    """
    seq = np.asarray(seq)
    if not 0 <= n < seq.shape[0]:
        raise ValueError(
            f"prefix length {n} must be in [0, {seq.shape[0]}) for this sequence"
        )
    return seq[:n].copy(), seq


def filter_min_duration(records: list[DatasetRecord], min_seconds: float):
    """Keep records strictly longer than the duration floor."""
    return [r for r in records if r.motion.duration > min_seconds]


# -- toy dataset ---------------------------------------------------------


def default_toy_tree() -> JointTree:
    """Five-joint chain: hip, spine, neck, elbow, hand."""
    return JointTree(
        parents=np.array([-1, 0, 1, 2, 3]),
        offsets=np.array(
            [
                [0.0, 0.0, 0.0],
                [0.0, 0.3, 0.0],
                [0.0, 0.3, 0.0],
                [0.25, 0.0, 0.0],
                [0.25, 0.0, 0.0],
            ]
        ),
    )


@dataclass(frozen=True)
class ToyMotionClass:
    """Post-split behavior of one action class.

    turn_rate is radians per frame applied after the split frame; stop
    ramps the walking speed to zero; raise_hand swings the arm chain
    upward.  Before the split every class walks straight, so only the
    prompt distinguishes them on the prefix.
    """

    prompt: str
    turn_rate: float = 0.0
    stop: bool = False
    raise_hand: bool = False


def default_toy_classes(frames: int = 120, split: int = 50) -> list[ToyMotionClass]:
    full_turn = 2.0 * np.pi / (frames - split)
    return [
        ToyMotionClass("walk forward in a straight line"),
        ToyMotionClass("turn left and walk in a circle", turn_rate=full_turn),
        ToyMotionClass("turn right and walk in a circle", turn_rate=-full_turn),
        ToyMotionClass(
            "stop walking and raise the right hand", stop=True, raise_hand=True
        ),
    ]


@dataclass
class ToyGenConfig:
    num_sequences: int = 512
    frames: int = 120
    fps: float = 20.0
    split: int = 50
    tree: JointTree = field(default_factory=default_toy_tree)
    classes: list[ToyMotionClass] = field(default_factory=default_toy_classes)
    seed: int = 0
    id_prefix: str = "toy"

    def __post_init__(self):
        if self.frames <= self.split:
            raise ValueError("frames must exceed the split point")
        prompts = [c.prompt for c in self.classes]
        if len(set(prompts)) != len(prompts):
            raise ValueError("toy classes must have distinct prompts")


def _toy_sequence(cfg: ToyGenConfig, cls: ToyMotionClass, rng) -> np.ndarray:
    """Simulate one sequence; returns (frames, J*3) global positions."""
    n, split, fps = cfg.frames, cfg.split, cfg.fps
    heading = rng.uniform(0.0, 2.0 * np.pi)
    speed = rng.uniform(0.8, 1.2)
    gait_phase = rng.uniform(0.0, 2.0 * np.pi)
    gait_hz = 1.6

    # Traits the prefix cannot reveal, so the future stays genuinely
    # spread out even once heading and speed are observed: a per-sequence
    # turn-rate scale, a small post-split heading drift that integrates
    # into a widening fan of paths, and the height the hand ends up at.
    # Drawn for every sequence so the rng stream layout is class-blind.
    rate_scale = 1.0 + rng.uniform(-0.02, 0.02)
    drift = 0.0015 * rng.standard_normal(n)
    raise_target = rng.uniform(0.95, 1.25)

    J = cfg.tree.joint_count
    out = np.empty((n, J * 3))
    yaw = heading
    pos = np.array([0.0, 0.9, 0.0])
    ramp_frames = 10
    raise_frames = 30
    for i in range(n):
        t = i / fps
        if cls.stop and i >= split:
            frac = max(0.0, 1.0 - (i - split) / ramp_frames)
        else:
            frac = 1.0
        step = speed * frac / fps

        # arm pose: hangs low while walking with a gait-locked swing;
        # the raise ramps it overhead after the split
        swing = 0.25 * np.sin(2.0 * np.pi * gait_hz * t + gait_phase) * frac
        shoulder = -1.4 + swing
        if cls.raise_hand and i >= split:
            lift = min(1.0, (i - split) / raise_frames)
            shoulder = -1.4 + lift * (raise_target - (-1.4))
        local = np.stack(
            [
                np.eye(3),
                np.eye(3),
                Quaternion.from_axis_angle([0, 0, 1], shoulder).to_matrix(),
                Quaternion.from_axis_angle([0, 0, 1], -0.2).to_matrix(),
            ]
        )
        joints = forward_kinematics(
            local, Quaternion.from_yaw(yaw), pos, cfg.tree
        )
        out[i] = joints.reshape(-1)

        # advance the unicycle: local +x forward, then turn
        direction = np.array([np.cos(yaw), 0.0, -np.sin(yaw)])
        pos = pos + step * direction
        if i >= split:
            yaw += cls.turn_rate * rate_scale + drift[i]
    return out


def generate_toy_dataset(cfg: ToyGenConfig) -> list[DatasetRecord]:
    """Deterministic synthetic walking dataset in the position layout.

    Classes share an identical straight-walk distribution up to the split
    frame and diverge after it, so the prefix reveals heading and speed
    while only the prompt reveals the future.  Sequences cycle through
    the classes so every class is equally represented.
    """
    rng = np.random.default_rng(cfg.seed)
    records = []
    for i in range(cfg.num_sequences):
        cls = cfg.classes[i % len(cfg.classes)]
        seq = _toy_sequence(cfg, cls, rng)
        records.append(
            DatasetRecord(
                id=f"{cfg.id_prefix}{i:04d}",
                motion=MotionContainer(
                    data=seq.astype(np.float32),
                    fps=cfg.fps,
                    layout=LAYOUT_POSITIONS_3D,
                ),
                prompts=[cls.prompt],
            )
        )
    return records
