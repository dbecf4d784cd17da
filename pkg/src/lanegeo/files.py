"""JSON dataset and solve-output files.

Floats are written with ``repr`` precision, so reading a written file gives
back the same numbers bit for bit.  Every document carries a ``version``
string; readers refuse an unknown major version.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import LaneGeoError
from .geometry import CameraPose, Intrinsics
from .lane_model import Frame, Lane3D, LanePolyline
from .observations import ObservedLane, Observation
from .synth import Scene, SceneConfig

DATASET_VERSION = "1.0"
SOLVE_VERSION = "1.0"
RNG_NAME = "numpy Philox4x64-10, key = seed * 2**64 + scene_id"


class FileFormatError(LaneGeoError):
    """Unreadable, malformed or unsupported file."""


def _check_version(doc: dict, expected: str, what: str) -> None:
    if not isinstance(doc, dict) or "version" not in doc:
        raise FileFormatError(f"{what}: missing version field")
    major = str(doc["version"]).split(".")[0]
    if major != expected.split(".")[0]:
        raise FileFormatError(f"{what}: unsupported version {doc['version']!r} (reader handles {expected})")


def _load_json(path, what: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise FileFormatError(f"{what}: cannot read {path}: {e.strerror}") from e
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise FileFormatError(f"{what}: invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from e


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=1, sort_keys=False, allow_nan=True) + "\n"


def _write(doc: dict, path) -> None:
    try:
        Path(path).write_text(dumps(doc))
    except OSError as e:
        raise FileFormatError(f"cannot write {path}: {e.strerror}") from e


# ---------------------------------------------------------------------------
# model <-> plain dicts


def pose_to_dict(p: CameraPose) -> dict:
    return {"height_m": p.height_m, "pitch_rad": p.pitch_rad}


def pose_from_dict(d: dict) -> CameraPose:
    return CameraPose(float(d["height_m"]), float(d["pitch_rad"]))


def lane_to_dict(lane: Lane3D) -> dict:
    return {"a": list(lane.a), "b": list(lane.b), "t1": lane.t1, "t2": lane.t2}


def lane_from_dict(d: dict) -> Lane3D:
    return Lane3D(tuple(d["a"]), tuple(d["b"]), d["t1"], d["t2"])


def _points(arr: np.ndarray) -> list:
    return [[float(x) for x in row] for row in arr]


def observation_to_dict(obs: Observation) -> dict:
    k = obs.intrinsics
    polylines = []
    for ob in obs.image_polylines:
        d = {"lane_index": ob.lane_index, "points": _points(ob.image.points),
             "y_positions": list(ob.y_positions)}
        if ob.ground is not None:
            d["ground_points"] = _points(ob.ground.points)
        polylines.append(d)
    return {"intrinsics": {"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy}, "polylines": polylines}


def observation_from_dict(d: dict) -> Observation:
    lanes = []
    for p in d["polylines"]:
        ground = LanePolyline(Frame.GROUND, p["ground_points"]) if "ground_points" in p else None
        lanes.append(ObservedLane(LanePolyline(Frame.IMAGE, p["points"]), tuple(p["y_positions"]),
                                  p.get("lane_index"), ground))
    return Observation(tuple(lanes), Intrinsics(**d["intrinsics"]))


def scene_to_dict(s: Scene) -> dict:
    return {"id": s.scene_id, "pose": pose_to_dict(s.pose), "lanes": [lane_to_dict(ln) for ln in s.lanes],
            "observations": observation_to_dict(s.observations)}


def scene_from_dict(d: dict, cfg: SceneConfig) -> Scene:
    return Scene(int(d["id"]), pose_from_dict(d["pose"]), tuple(lane_from_dict(x) for x in d["lanes"]),
                 observation_from_dict(d["observations"]), cfg)


# ---------------------------------------------------------------------------
# dataset files


@dataclass
class Dataset:
    config: SceneConfig
    scenes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"version": DATASET_VERSION, "kind": "dataset", "rng": RNG_NAME,
                "config": self.config.as_dict(), "scenes": [scene_to_dict(s) for s in self.scenes]}

    @classmethod
    def from_dict(cls, doc: dict) -> "Dataset":
        _check_version(doc, DATASET_VERSION, "dataset")
        try:
            cfg = SceneConfig.from_dict(doc["config"])
            scenes = [scene_from_dict(s, cfg) for s in doc["scenes"]]
        except (KeyError, TypeError, ValueError) as e:
            raise FileFormatError(f"dataset: malformed content ({type(e).__name__}: {e})") from e
        ids = [s.scene_id for s in scenes]
        if len(set(ids)) != len(ids):
            raise FileFormatError("dataset: duplicate scene ids")
        return cls(cfg, scenes)


def write_dataset(ds: Dataset, path) -> None:
    _write(ds.to_dict(), path)


def read_dataset(path) -> Dataset:
    return Dataset.from_dict(_load_json(path, "dataset"))


# ---------------------------------------------------------------------------
# solve output


@dataclass
class SceneSolution:
    scene_id: int
    pose: Optional[CameraPose]
    lanes: list  # of (confidence, Lane3D)
    iterations: int = 0
    converged: bool = False
    final_loss: dict = field(default_factory=dict)
    history: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    error: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "id": self.scene_id,
            "pose": pose_to_dict(self.pose) if self.pose is not None else None,
            "lanes": [dict(lane_to_dict(ln), confidence=c) for c, ln in self.lanes],
            "iterations": self.iterations,
            "converged": self.converged,
            "final_loss": self.final_loss,
            "history": [[int(i), float(f)] for i, f in self.history],
            "warnings": list(self.warnings),
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSolution":
        pose = pose_from_dict(d["pose"]) if d.get("pose") is not None else None
        lanes = [(float(x.get("confidence", 1.0)), lane_from_dict(x)) for x in d.get("lanes", [])]
        return cls(int(d["id"]), pose, lanes, int(d.get("iterations", 0)), bool(d.get("converged", False)),
                   dict(d.get("final_loss", {})), [tuple(h) for h in d.get("history", [])],
                   list(d.get("warnings", [])), d.get("error"))


@dataclass
class SolveOutput:
    metadata: dict
    scenes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"version": SOLVE_VERSION, "kind": "solve", "metadata": self.metadata,
                "scenes": [s.to_dict() for s in self.scenes]}

    @classmethod
    def from_dict(cls, doc: dict) -> "SolveOutput":
        _check_version(doc, SOLVE_VERSION, "solve output")
        try:
            return cls(dict(doc.get("metadata", {})), [SceneSolution.from_dict(s) for s in doc["scenes"]])
        except (KeyError, TypeError, ValueError) as e:
            raise FileFormatError(f"solve output: malformed content ({type(e).__name__}: {e})") from e


def write_solve_output(out: SolveOutput, path) -> None:
    _write(out.to_dict(), path)


def read_predictions(path) -> dict:
    """Scene id -> list of (confidence, Lane3D), from a solve output or a dataset (truth as prediction)."""
    doc = _load_json(path, "predictions")
    if isinstance(doc, dict) and doc.get("kind") == "dataset":
        ds = Dataset.from_dict(doc)
        return {s.scene_id: [(1.0, ln) for ln in s.lanes] for s in ds.scenes}
    out = SolveOutput.from_dict(doc)
    return {s.scene_id: list(s.lanes) for s in out.scenes}


def read_solve_output(path) -> SolveOutput:
    return SolveOutput.from_dict(_load_json(path, "solve output"))


def config_hash(*parts: dict) -> str:
    blob = json.dumps(parts, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def finite_or_none(x: float):
    return None if x is None or not math.isfinite(x) else x
