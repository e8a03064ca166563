"""On-disk formats: scenes, voxel sidecars, training datasets, path files.

Scene files are JSON (seed, generator parameters, explicit obstacle list,
endpoint pairs) with the occupancy grid in a sibling binary sidecar.

Voxel sidecar layout (integers little-endian):

    0   4   magic b"VOXB"
    4   4   u32 format version (1)
    8   6   three u16 grid dimensions
    14  ... occupancy bits, C-order, packed 8 cells per byte (numpy packbits)

Dataset files are JSON Lines, one training tuple per line:
    {"scene_id": ..., "voxel_ref": ..., "q_curr": [...], "q_targ": [...], "q_next": [...]}
with voxel_ref naming the scene's sidecar relative to the dataset file.

Path files are CSV with one configuration per row; floats are written
with repr so they parse back bit-exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from manifoldplan.environments import SphereScene
from manifoldplan.nn.train import PlanningDataset

VOX_MAGIC = b"VOXB"
VOX_VERSION = 1


def save_voxels(path, grid: np.ndarray) -> None:
    grid = np.asarray(grid)
    if grid.ndim != 3:
        raise ValueError("voxel grid must be 3-D")
    with open(path, "wb") as f:
        f.write(VOX_MAGIC)
        f.write(struct.pack("<I", VOX_VERSION))
        f.write(struct.pack("<HHH", *grid.shape))
        f.write(np.packbits(grid.astype(bool).ravel(order="C")).tobytes())


def load_voxels(path) -> np.ndarray:
    with open(path, "rb") as f:
        if f.read(4) != VOX_MAGIC:
            raise ValueError(f"{path} is not a voxel sidecar")
        (version,) = struct.unpack("<I", f.read(4))
        if version != VOX_VERSION:
            raise ValueError(f"unsupported voxel format version {version}")
        dims = struct.unpack("<HHH", f.read(6))
        n = int(np.prod(dims))
        bits = np.unpackbits(np.frombuffer(f.read(), dtype=np.uint8), count=n)
    return bits.reshape(dims).astype(np.uint8)


def save_scene(path, scene: SphereScene, pairs: Sequence[Tuple[np.ndarray, np.ndarray]]) -> None:
    """Scene JSON plus its voxel sidecar (same stem, .voxels suffix)."""
    path = Path(path)
    doc = scene.to_dict()
    doc["pairs"] = [[list(map(float, a)), list(map(float, b))] for a, b in pairs]
    doc["voxel_ref"] = path.with_suffix(".voxels").name
    save_voxels(path.with_suffix(".voxels"), scene.voxels)
    path.write_text(json.dumps(doc, indent=1), encoding="utf-8")


def load_scene(path) -> Tuple[SphereScene, List[Tuple[np.ndarray, np.ndarray]]]:
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    scene = SphereScene.from_dict(doc)
    sidecar = path.parent / doc.get("voxel_ref", path.with_suffix(".voxels").name)
    if sidecar.exists():
        scene._voxels = load_voxels(sidecar)
    pairs = [(np.array(a), np.array(b)) for a, b in doc.get("pairs", [])]
    return scene, pairs


def write_dataset(path, records: Iterable[dict]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")
            count += 1
    return count


def read_dataset(path) -> PlanningDataset:
    """Load a JSONL dataset, pulling each referenced voxel sidecar once."""
    path = Path(path)
    voxels: Dict[str, np.ndarray] = {}
    scene_ids: List[str] = []
    q_curr, q_targ, q_next = [], [], []
    with open(path, encoding="utf-8") as f:
        for line in f:
            rec = json.loads(line)
            sid = rec["scene_id"]
            if sid not in voxels:
                voxels[sid] = load_voxels(path.parent / rec["voxel_ref"]).astype(float)
            scene_ids.append(sid)
            q_curr.append(rec["q_curr"])
            q_targ.append(rec["q_targ"])
            q_next.append(rec["q_next"])
    if not scene_ids:
        raise ValueError(f"dataset {path} is empty")
    return PlanningDataset(
        voxels=voxels,
        scene_ids=scene_ids,
        q_curr=np.asarray(q_curr, dtype=float),
        q_targ=np.asarray(q_targ, dtype=float),
        q_next=np.asarray(q_next, dtype=float),
    )


def write_path_file(path, waypoints: Sequence[np.ndarray]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        n = len(waypoints[0]) if waypoints else 0
        f.write(",".join(f"q{i}" for i in range(n)) + "\n")
        for w in waypoints:
            f.write(",".join(repr(float(x)) for x in w) + "\n")


def read_path_file(path) -> List[np.ndarray]:
    waypoints = []
    with open(path, encoding="utf-8") as f:
        next(f)  # header
        for line in f:
            line = line.strip()
            if line:
                waypoints.append(np.array([float(x) for x in line.split(",")]))
    return waypoints
