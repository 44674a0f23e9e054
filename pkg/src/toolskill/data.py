"""Trajectory containers, JSON-Lines serialization, and content hashing.

A trajectory file is one header line (metadata) followed by one JSON object
per 20 Hz frame. A dataset is a directory of trajectory files plus a
manifest carrying provenance and a content hash, so reruns with identical
seeds can be checked byte-for-byte.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .envsim import EnvironmentSpec, ToolSpec
from .errors import InputError, MissingInputError

SCHEMA_VERSION = 1


def spec_to_json(spec) -> dict:
    d = dataclasses.asdict(spec)
    d["_type"] = type(spec).__name__
    return d


def spec_from_json(d: dict):
    d = dict(d)
    kind = d.pop("_type")
    cls = {"EnvironmentSpec": EnvironmentSpec, "ToolSpec": ToolSpec}[kind]
    return cls(**d)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def json_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class Trajectory:
    """Columnar record of one 10 s trial: sensing, actions, and wrenches."""

    t: np.ndarray  # (N,)
    ee: np.ndarray  # (N, 2) end-effector x, z
    tactile_raw: np.ndarray  # (N, 96) flattened 2x4x4x3 taxel forces
    tactile_feat: np.ndarray  # (N, 10)
    prox: np.ndarray  # (N, 6)
    act: np.ndarray  # (N, 2) executed u_x, u_z
    wrench: np.ndarray  # (N, 2) f_x, f_z
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)

    def observations(self) -> np.ndarray:
        """(N, 16) policy observation: tactile feature then proximity."""
        return np.concatenate([self.tactile_feat, self.prox], axis=1)

    def ee_positions(self) -> np.ndarray:
        return self.ee

    def actions(self) -> np.ndarray:
        return self.act

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(json.dumps({"header": {"schema": SCHEMA_VERSION, **self.meta}}) + "\n")
            for i in range(len(self)):
                fh.write(
                    json.dumps(
                        {
                            "t": float(self.t[i]),
                            "ee_x": float(self.ee[i, 0]),
                            "ee_z": float(self.ee[i, 1]),
                            "tac": self.tactile_raw[i].tolist(),
                            "tac_feat": self.tactile_feat[i].tolist(),
                            "prox": self.prox[i].tolist(),
                            "u_x": float(self.act[i, 0]),
                            "u_z": float(self.act[i, 1]),
                            "f_x": float(self.wrench[i, 0]),
                            "f_z": float(self.wrench[i, 1]),
                        }
                    )
                    + "\n"
                )

    @classmethod
    def load(cls, path) -> "Trajectory":
        with open(path) as fh:
            first = json.loads(fh.readline())
            if "header" not in first:
                raise InputError(f"{path}: missing trajectory header line")
            meta = {k: v for k, v in first["header"].items() if k != "schema"}
            rows = [json.loads(line) for line in fh if line.strip()]
        if not rows:
            raise InputError(f"{path}: trajectory has no frames")
        return cls(
            t=np.array([r["t"] for r in rows]),
            ee=np.array([[r["ee_x"], r["ee_z"]] for r in rows]),
            tactile_raw=np.array([r["tac"] for r in rows]),
            tactile_feat=np.array([r["tac_feat"] for r in rows]),
            prox=np.array([r["prox"] for r in rows]),
            act=np.array([[r["u_x"], r["u_z"]] for r in rows]),
            wrench=np.array([[r["f_x"], r["f_z"]] for r in rows]),
            meta=meta,
        )


@dataclass
class Dataset:
    """An ordered collection of trajectories plus provenance metadata."""

    trajectories: list
    provenance: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.trajectories)

    def save(self, out_dir) -> str:
        """Write trajectory files and manifest; return the content hash."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        names = []
        for i, traj in enumerate(self.trajectories):
            name = f"traj_{i:03d}.jsonl"
            traj.save(out_dir / name)
            names.append(name)
        content = hashlib.sha256()
        for name in names:
            content.update(file_hash(out_dir / name).encode())
        digest = content.hexdigest()
        manifest = {
            "schema": SCHEMA_VERSION,
            "files": names,
            "content_hash": digest,
            "provenance": self.provenance,
        }
        with open(out_dir / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=1, sort_keys=True)
        return digest

    @classmethod
    def load(cls, in_dir) -> "Dataset":
        in_dir = Path(in_dir)
        manifest_path = in_dir / "manifest.json"
        if not manifest_path.exists():
            raise MissingInputError(f"no dataset manifest at {manifest_path}")
        with open(manifest_path) as fh:
            manifest = json.load(fh)
        trajs = [Trajectory.load(in_dir / name) for name in manifest["files"]]
        return cls(trajectories=trajs, provenance=manifest.get("provenance", {}))

    @staticmethod
    def content_hash(in_dir) -> str:
        with open(Path(in_dir) / "manifest.json") as fh:
            return json.load(fh)["content_hash"]
