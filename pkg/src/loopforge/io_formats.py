"""File formats shared by every module and the descriptor exporter.

Formats:

* LCDB: little-endian binary descriptor container. 24-byte header
  (magic "LCDB", version u32, frame count u32, kind u32 with 0=local
  1=global, n u32, d u32) followed by one block per frame:
  frame_id u64, timestamp f64, row-major f32 n x d matrix. Every frame
  in a file carries the same (n, d).
* TUM trajectory text: "timestamp tx ty tz qx qy qz qw" per line,
  9 significant digits, timestamps strictly increasing.
* Correspondence text: "frame_a frame_b px py pz qx qy qz" per line
  (p in frame_a's keyframe frame, q in frame_b's).
* Pose graph text: "NODE id s qw qx qy qz tx ty tz" and
  "EDGE from to s qw qx qy qz tx ty tz weight kind" lines; the first
  NODE is the gauge.
* JSON for run configs (strict keys, content-hashed), vocabularies,
  event logs, and the database index.

Parsers reject anything malformed instead of guessing; text round-trips
are stable at the declared 9 significant digits, binary ones bit-exact.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
import types
import typing
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagic,
    ConfigSchemaError,
    DimMismatch,
    InvalidConfig,
    ParseError,
    TruncatedPayload,
    UnsupportedVersion,
)
from .geometry import Rotation, Sim3Transform
from .pose_graph import PoseEdge, PoseGraph, TrajectoryEntry
from .verification import Correspondence

LCDB_MAGIC = b"LCDB"
LCDB_VERSION = 1
_KIND_CODES = {"local": 0, "global": 1}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}
_HEADER = struct.Struct("<4sIIIII")
_BLOCK_HEAD = struct.Struct("<Qd")


def _fmt(x: float) -> str:
    return f"{float(x):.9g}"


# ---------------------------------------------------------------------------
# LCDB binary descriptors


@dataclass(frozen=True)
class LcdbRecord:
    frame_id: int
    timestamp: float
    data: np.ndarray  # (n, d) float32


@dataclass(frozen=True)
class LcdbFile:
    kind: str
    records: list[LcdbRecord]


def write_lcdb(path, records: list[LcdbRecord], kind: str = "local") -> None:
    if kind not in _KIND_CODES:
        raise ValueError(f"kind must be one of {sorted(_KIND_CODES)}")
    shapes = {r.data.shape for r in records}
    if len(shapes) > 1:
        raise DimMismatch(f"records disagree on shape: {sorted(shapes)}")
    n, d = shapes.pop() if shapes else (0, 0)
    chunks = [_HEADER.pack(LCDB_MAGIC, LCDB_VERSION, len(records),
                           _KIND_CODES[kind], n, d)]
    for r in records:
        chunks.append(_BLOCK_HEAD.pack(r.frame_id, r.timestamp))
        chunks.append(np.ascontiguousarray(r.data, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def read_lcdb(path) -> LcdbFile:
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < _HEADER.size:
        raise TruncatedPayload(f"{path}: file shorter than the 24-byte header")
    magic, version, frames, kind_code, n, d = _HEADER.unpack_from(buf, 0)
    if magic != LCDB_MAGIC:
        raise BadMagic(f"{path}: magic {magic!r} is not {LCDB_MAGIC!r}")
    if version != LCDB_VERSION:
        raise UnsupportedVersion(f"{path}: version {version}, supported: {LCDB_VERSION}")
    if kind_code not in _KIND_NAMES:
        raise ParseError(f"{path}: unknown descriptor kind code {kind_code}")
    block = _BLOCK_HEAD.size + 4 * n * d
    expected = _HEADER.size + frames * block
    if len(buf) != expected:
        raise TruncatedPayload(
            f"{path}: payload is {len(buf) - _HEADER.size} bytes, "
            f"header implies {expected - _HEADER.size}"
        )
    records = []
    offset = _HEADER.size
    for _ in range(frames):
        frame_id, timestamp = _BLOCK_HEAD.unpack_from(buf, offset)
        offset += _BLOCK_HEAD.size
        data = np.frombuffer(buf, dtype="<f4", count=n * d, offset=offset)
        offset += 4 * n * d
        records.append(LcdbRecord(frame_id, timestamp, data.reshape(n, d).copy()))
    return LcdbFile(kind=_KIND_NAMES[kind_code], records=records)


# ---------------------------------------------------------------------------
# TUM trajectories


def write_tum(path, trajectory: list[TrajectoryEntry]) -> None:
    lines = []
    prev = None
    for entry in trajectory:
        if prev is not None and entry.timestamp <= prev:
            raise ValueError(f"timestamps not strictly increasing at {entry.timestamp}")
        prev = entry.timestamp
        w, x, y, z = entry.pose.rotation.quat
        tx, ty, tz = entry.pose.translation
        lines.append(" ".join(_fmt(v) for v in
                              (entry.timestamp, tx, ty, tz, x, y, z, w)))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))


def read_tum(path) -> list[TrajectoryEntry]:
    trajectory: list[TrajectoryEntry] = []
    prev = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise ParseError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
            try:
                ts, tx, ty, tz, qx, qy, qz, qw = (float(p) for p in parts)
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            if prev is not None and ts <= prev:
                raise ParseError(f"{path}:{lineno}: timestamps must strictly increase")
            prev = ts
            norm = float(np.sqrt(qw * qw + qx * qx + qy * qy + qz * qz))
            if abs(norm - 1.0) > 1e-6:
                raise ParseError(f"{path}:{lineno}: quaternion norm {norm:.9f} not 1")
            pose = Sim3Transform(
                rotation=Rotation.from_quat(qw, qx, qy, qz),
                translation=np.array([tx, ty, tz]),
            )
            trajectory.append(TrajectoryEntry(len(trajectory), ts, pose))
    return trajectory


# ---------------------------------------------------------------------------
# correspondences

CorrespondenceSet = dict[tuple[int, int], list[Correspondence]]


def write_correspondences(path, pairs: CorrespondenceSet) -> None:
    lines = []
    for (frame_a, frame_b), corr in pairs.items():
        for c in corr:
            fields = [str(int(frame_a)), str(int(frame_b))]
            fields += [_fmt(v) for v in c.p] + [_fmt(v) for v in c.q]
            lines.append(" ".join(fields))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))


def read_correspondences(path) -> CorrespondenceSet:
    out: CorrespondenceSet = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise ParseError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
            try:
                frame_a, frame_b = int(parts[0]), int(parts[1])
                values = [float(p) for p in parts[2:]]
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            out.setdefault((frame_a, frame_b), []).append(
                Correspondence(p=np.array(values[:3]), q=np.array(values[3:]))
            )
    return out


# ---------------------------------------------------------------------------
# pose graphs


def _pose_fields(pose: Sim3Transform) -> list[str]:
    w, x, y, z = pose.rotation.quat
    tx, ty, tz = pose.translation
    return [_fmt(v) for v in (pose.scale, w, x, y, z, tx, ty, tz)]


def _pose_from_tokens(tokens: list[str]) -> Sim3Transform:
    s, w, x, y, z, tx, ty, tz = (float(t) for t in tokens)
    return Sim3Transform(
        scale=s,
        rotation=Rotation.from_quat(w, x, y, z),
        translation=np.array([tx, ty, tz]),
    )


def write_graph(path, graph: PoseGraph) -> None:
    # gauge first so the reader can restore it; the rest in id order
    ordered = sorted(graph.nodes)
    if graph.gauge_id is not None:
        ordered.remove(graph.gauge_id)
        ordered.insert(0, graph.gauge_id)
    lines = []
    for fid in ordered:
        lines.append(" ".join(["NODE", str(fid), *_pose_fields(graph.nodes[fid])]))
    for e in graph.edges:
        lines.append(" ".join(
            ["EDGE", str(e.from_id), str(e.to_id), *_pose_fields(e.measurement),
             _fmt(e.weight), e.kind]
        ))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))


def read_graph(path) -> PoseGraph:
    graph = PoseGraph()
    edges: list[tuple[int, list[str]]] = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            try:
                if tag == "NODE":
                    if len(parts) != 10:
                        raise ValueError(f"expected 10 fields, got {len(parts)}")
                    graph.add_node(int(parts[1]), _pose_from_tokens(parts[2:10]))
                elif tag == "EDGE":
                    if len(parts) != 13:
                        raise ValueError(f"expected 13 fields, got {len(parts)}")
                    edges.append((lineno, parts))
                else:
                    raise ValueError(f"unknown record tag {tag!r}")
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
    for lineno, parts in edges:
        from_id, to_id = int(parts[1]), int(parts[2])
        for endpoint in (from_id, to_id):
            if endpoint not in graph.nodes:
                raise ParseError(f"{path}:{lineno}: edge endpoint {endpoint} has no NODE")
        try:
            graph.add_edge(PoseEdge(
                from_id=from_id,
                to_id=to_id,
                measurement=_pose_from_tokens(parts[3:11]),
                weight=float(parts[11]),
                kind=parts[12],
            ))
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
    return graph


# ---------------------------------------------------------------------------
# run configuration


@dataclass(frozen=True)
class RunConfig:
    pipeline: "object"
    world: "object"

    def to_dict(self) -> dict:
        return {
            "pipeline": dataclasses.asdict(self.pipeline),
            "world": dataclasses.asdict(self.world),
        }

    @property
    def hash(self) -> str:
        return config_hash(self.to_dict())


def config_hash(d: dict) -> str:
    canonical = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def _check_type(value, hint, where: str):
    origin = typing.get_origin(hint)
    if origin in (typing.Union, types.UnionType):
        last: Exception | None = None
        for arm in typing.get_args(hint):
            try:
                return _check_type(value, arm, where)
            except ConfigSchemaError as exc:
                last = exc
        raise last
    if hint is type(None):
        if value is not None:
            raise ConfigSchemaError(f"{where}: expected null, got {value!r}")
        return None
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigSchemaError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigSchemaError(f"{where}: expected an integer, got {value!r}")
        return value
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigSchemaError(f"{where}: expected a boolean, got {value!r}")
        return value
    if hint is str:
        if not isinstance(value, str):
            raise ConfigSchemaError(f"{where}: expected a string, got {value!r}")
        return value
    raise ConfigSchemaError(f"{where}: unsupported config value {value!r}")


def dataclass_from_dict(cls, data: dict, where: str):
    """Strict dataclass loader: unknown keys rejected, defaults filled."""
    if not isinstance(data, dict):
        raise ConfigSchemaError(f"{where}: expected an object, got {data!r}")
    hints = typing.get_type_hints(cls)
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigSchemaError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for name, f in fields.items():
        if name not in data:
            if (f.default is dataclasses.MISSING
                    and f.default_factory is dataclasses.MISSING):
                raise ConfigSchemaError(f"{where}: missing required key {name!r}")
            continue
        hint = hints[name]
        if dataclasses.is_dataclass(hint):
            kwargs[name] = dataclass_from_dict(hint, data[name], f"{where}.{name}")
        else:
            kwargs[name] = _check_type(data[name], hint, f"{where}.{name}")
    try:
        return cls(**kwargs)
    except (ValueError, InvalidConfig) as exc:
        raise ConfigSchemaError(f"{where}: {exc}") from None


def write_config(path, config: RunConfig) -> None:
    payload = config.to_dict()
    payload["hash"] = config.hash
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_config(path) -> RunConfig:
    from .harness import WorldConfig
    from .pipeline import PipelineConfig

    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigSchemaError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigSchemaError(f"{path}: top level must be an object")
    claimed = raw.pop("hash", None)
    unknown = sorted(set(raw) - {"pipeline", "world"})
    if unknown:
        raise ConfigSchemaError(f"{path}: unknown key(s) {', '.join(unknown)}")
    config = RunConfig(
        pipeline=dataclass_from_dict(PipelineConfig, raw.get("pipeline", {}), "pipeline"),
        world=dataclass_from_dict(WorldConfig, raw.get("world", {}), "world"),
    )
    if claimed is not None and claimed != config.hash:
        raise ConfigSchemaError(
            f"{path}: content hash mismatch (file says {claimed[:12]}..., "
            f"content gives {config.hash[:12]}...)"
        )
    return config


# ---------------------------------------------------------------------------
# vocabulary


def write_vocabulary(path, vocab) -> None:
    payload = {
        "k": vocab.k,
        "d": vocab.d,
        "seed": vocab.seed,
        "centers": [[float(v) for v in row] for row in vocab.centers],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def read_vocabulary(path):
    from .descriptors import Vocabulary

    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON: {exc}") from None
    for key in ("k", "d", "seed", "centers"):
        if key not in raw:
            raise ParseError(f"{path}: missing key {key!r}")
    centers = np.asarray(raw["centers"], dtype=np.float64)
    if centers.ndim != 2 or centers.shape != (raw["k"], raw["d"]):
        raise ParseError(
            f"{path}: centers shape {centers.shape} does not match "
            f"k={raw['k']}, d={raw['d']}"
        )
    return Vocabulary(centers=centers, seed=int(raw["seed"]))


# ---------------------------------------------------------------------------
# event logs


def write_events(path, log) -> None:
    payload = {
        "config_hash": log.config_hash,
        "events": [
            {"kind": e.kind, "frame_id": e.frame_id, "payload": e.payload}
            for e in log.events
        ],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_events(path):
    from .pipeline import EventLog, PipelineEvent

    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON: {exc}") from None
    try:
        events = [
            PipelineEvent(kind=e["kind"], frame_id=e["frame_id"], payload=e["payload"])
            for e in raw["events"]
        ]
        return EventLog(config_hash=raw["config_hash"], events=events)
    except (KeyError, TypeError) as exc:
        raise ParseError(f"{path}: malformed event log: {exc}") from None


# ---------------------------------------------------------------------------
# keyframe database snapshots


def _pose_to_json(pose: Sim3Transform) -> dict:
    return {
        "scale": pose.scale,
        "quat": [float(v) for v in pose.rotation.quat],
        "translation": [float(v) for v in pose.translation],
    }


def _pose_from_json(d: dict) -> Sim3Transform:
    return Sim3Transform(
        scale=float(d["scale"]),
        rotation=Rotation(np.asarray(d["quat"], dtype=np.float64)),
        translation=np.asarray(d["translation"], dtype=np.float64),
    )


def write_database(db, lcdb_path, index_path) -> None:
    """Snapshot a keyframe database: global descriptors to LCDB (f32),
    ids/timestamps/poses to a JSON index."""
    records = db.records()
    write_lcdb(
        lcdb_path,
        [
            LcdbRecord(r.frame_id, r.timestamp,
                       np.asarray(r.descriptor, dtype=np.float32).reshape(1, -1))
            for r in records
        ],
        kind="global",
    )
    index = {
        "frames": [
            {"frame_id": r.frame_id, "timestamp": r.timestamp,
             "pose": _pose_to_json(r.pose)}
            for r in records
        ]
    }
    with open(index_path, "w") as fh:
        json.dump(index, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_database(lcdb_path, index_path):
    from .database import KeyframeDatabase, KeyframeRecord

    blob = read_lcdb(lcdb_path)
    if blob.kind != "global":
        raise DimMismatch(f"{lcdb_path}: expected global descriptors, got {blob.kind}")
    with open(index_path) as fh:
        try:
            index = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{index_path}: invalid JSON: {exc}") from None
    frames = index.get("frames")
    if frames is None or len(frames) != len(blob.records):
        raise ParseError(
            f"{index_path}: index lists {len(frames or [])} frames, "
            f"LCDB holds {len(blob.records)}"
        )
    db = KeyframeDatabase()
    for rec, meta in zip(blob.records, frames):
        if meta["frame_id"] != rec.frame_id:
            raise ParseError(
                f"{index_path}: frame id {meta['frame_id']} does not match "
                f"LCDB id {rec.frame_id}"
            )
        db.insert(KeyframeRecord(
            frame_id=rec.frame_id,
            timestamp=rec.timestamp,
            descriptor=rec.data.ravel().astype(np.float64),
            pose=_pose_from_json(meta["pose"]),
        ))
    return db
