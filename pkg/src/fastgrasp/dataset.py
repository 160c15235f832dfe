"""Grasp records, closing-region extracts and their on-disk formats.

Text format (``jsonl``): a header line ``{"format": "fastgrasp", "version": 1}``
followed by one JSON object per grasp with the keys in ``TEXT_KEYS``.
``fc_mu_star`` is ``null`` when the grasp never closes on the friction
ladder. Region extracts go to a sidecar file ``<path>.regions.jsonl`` with
one line per extract: ``record_ref``, ``points`` (grasp frame) and
``side_labels`` (0 left, 1 right).

Binary format, all little-endian::

    b"GFD1"  u32 record_count
    per record:
        7 f64   px py pz qw qx qy qz
        6 f64   score fc_mu_star d1 d2 weight final_score
        u8      flag bits (dedup_survivor 1, symmetric 2, torque_ok 4, removed 8)
        u8      provenance code (index into PROVENANCES)
        u16     object_id byte length
        u32     region point count k (0 when no extract)
        bytes   object_id, utf-8
        k*3 f32 region points, grasp frame
        k u8    side labels

Both writers validate every record first and write through a temporary
file renamed into place, so a failed export leaves nothing behind.
"""
from __future__ import annotations

import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .gripper import PROVENANCES, GraspPose, GripperConfig
from .scoring import N_BINS, histogram, histogram_csv, score

MAGIC = b"GFD1"
TEXT_KEYS = ("object_id", "px", "py", "pz", "qw", "qx", "qy", "qz", "score", "fc_mu_star",
             "d1", "d2", "weight", "final_score", "flags", "provenance")
FLAG_BITS = {"dedup_survivor": 1, "symmetric": 2, "torque_ok": 4, "removed": 8}
_HEADER = struct.Struct("<13dBBHI")
_COUNT = struct.Struct("<I")
QUAT_TOL = 1e-9
REPROJECT_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class GraspRecord:
    """One dataset row. ``quat`` is a unit quaternion ``(w, x, y, z)``."""

    object_id: str
    point: np.ndarray
    quat: np.ndarray
    score: float
    fc_mu_star: float
    d1: float
    d2: float
    weight: float = 0.5
    final_score: float = math.nan
    flags: frozenset = frozenset()
    provenance: str = "orientation_sampled"

    def __post_init__(self):
        object.__setattr__(self, "point", np.array(self.point, float).reshape(3))
        object.__setattr__(self, "quat", np.array(self.quat, float).reshape(4))
        object.__setattr__(self, "flags", frozenset(self.flags))
        if math.isnan(self.final_score):
            object.__setattr__(self, "final_score", float(self.score))

    @property
    def pose(self) -> GraspPose:
        return GraspPose.from_quaternion(self.point, self.quat, self.provenance)

    def _values(self):
        return (self.object_id, *self.point.tolist(), *self.quat.tolist(), self.score,
                self.fc_mu_star, self.d1, self.d2, self.weight, self.final_score,
                tuple(sorted(self.flags)), self.provenance)

    def __eq__(self, other):
        if not isinstance(other, GraspRecord):
            return NotImplemented
        return self._values() == other._values()

    def __hash__(self):
        return hash(self._values())


@dataclass(frozen=True, eq=False)
class ClosingRegionExtract:
    """Region points in the grasp frame of record ``record_ref``.

    Points are float32, the precision of the binary payload.
    """

    record_ref: int
    points: np.ndarray
    side_labels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", np.asarray(self.points, np.float32).reshape(-1, 3))
        object.__setattr__(self, "side_labels", np.asarray(self.side_labels, np.uint8).reshape(-1))
        if len(self.points) != len(self.side_labels):
            raise ValidationError("one side label per region point is required")

    def __eq__(self, other):
        if not isinstance(other, ClosingRegionExtract):
            return NotImplemented
        return (self.record_ref == other.record_ref
                and np.array_equal(self.points, other.points)
                and np.array_equal(self.side_labels, other.side_labels))


def record_from_candidate(object_id: str, cand, flags=("dedup_survivor",)) -> GraspRecord:
    """Record for a freshly generated grasp, before any rescoring."""
    q = score(cand.contacts)
    pose = cand.pose
    return GraspRecord(object_id, pose.point, pose.quaternion, q.score, q.fc_mu_star,
                       cand.contacts.d1, cand.contacts.d2, 0.5, q.score, frozenset(flags),
                       pose.provenance)


def extract_from_candidate(record_ref: int, cand, cloud) -> ClosingRegionExtract:
    region = cand.region
    idx = np.concatenate([region.left, region.right])
    labels = np.concatenate([np.zeros(len(region.left)), np.ones(len(region.right))])
    return ClosingRegionExtract(record_ref, cand.pose.to_local(cloud.points[idx]), labels)


# ------------------------------------------------------------- validation


def validate_record(rec: GraspRecord) -> None:
    if abs(float(np.linalg.norm(rec.quat)) - 1.0) > QUAT_TOL:
        raise ValidationError(f"{rec.object_id}: quaternion is not unit norm")
    if not np.all(np.isfinite(rec.point)):
        raise ValidationError(f"{rec.object_id}: non-finite position")
    for name in ("score", "d1", "d2", "weight", "final_score"):
        if not math.isfinite(getattr(rec, name)):
            raise ValidationError(f"{rec.object_id}: non-finite {name}")
    if math.isnan(rec.fc_mu_star):
        raise ValidationError(f"{rec.object_id}: fc_mu_star is NaN")
    if not 0.0 <= rec.final_score <= rec.score:
        raise ValidationError(f"{rec.object_id}: final_score outside [0, score]")
    unknown = rec.flags - FLAG_BITS.keys()
    if unknown:
        raise ValidationError(f"{rec.object_id}: unknown flags {sorted(unknown)}")
    if "removed" in rec.flags:
        raise ValidationError(f"{rec.object_id}: removed records cannot be exported")
    if rec.provenance not in PROVENANCES:
        raise ValidationError(f"{rec.object_id}: unknown provenance {rec.provenance!r}")


def check_extract(extract: ClosingRegionExtract, record: GraspRecord,
                  g: GripperConfig | None = None, tol: float = REPROJECT_TOL) -> bool:
    """True iff the points, sent to world and back, lie between the jaws."""
    g = g or GripperConfig()
    pose = record.pose
    local = pose.to_local(pose.to_world(extract.points.astype(float)))
    half = np.array([g.finger_length, g.max_width, g.finger_height]) / 2 + tol
    return bool(np.all(np.abs(local) <= half))


def _validate(records, regions):
    for rec in records:
        validate_record(rec)
    for ex in regions:
        if not 0 <= ex.record_ref < len(records):
            raise ValidationError(f"region refers to missing record {ex.record_ref}")
    refs = [ex.record_ref for ex in regions]
    if len(set(refs)) != len(refs):
        raise ValidationError("at most one region extract per record")


# ------------------------------------------------------------- writers


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def regions_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".regions.jsonl")


def _num(x: float):
    return None if math.isinf(x) else float(x)


def _text_line(rec: GraspRecord) -> str:
    vals = dict(zip(TEXT_KEYS, (rec.object_id, *map(float, rec.point), *map(float, rec.quat),
                                float(rec.score), _num(rec.fc_mu_star), float(rec.d1),
                                float(rec.d2), float(rec.weight), float(rec.final_score),
                                sorted(rec.flags), rec.provenance)))
    return json.dumps(vals, allow_nan=False)


def _encode_text(records, regions) -> tuple[bytes, bytes]:
    lines = [json.dumps({"format": "fastgrasp", "version": 1})]
    lines += [_text_line(r) for r in records]
    side = [json.dumps({"record_ref": ex.record_ref,
                        "points": ex.points.astype(float).tolist(),
                        "side_labels": ex.side_labels.tolist()})
            for ex in sorted(regions, key=lambda e: e.record_ref)]
    return ("\n".join(lines) + "\n").encode(), ("".join(s + "\n" for s in side)).encode()


def _encode_binary(records, regions) -> bytes:
    by_ref = {ex.record_ref: ex for ex in regions}
    out = [MAGIC, _COUNT.pack(len(records))]
    for i, rec in enumerate(records):
        ex = by_ref.get(i)
        k = 0 if ex is None else len(ex.points)
        oid = rec.object_id.encode()
        bits = sum(FLAG_BITS[f] for f in rec.flags)
        out.append(_HEADER.pack(*rec.point, *rec.quat, rec.score, rec.fc_mu_star, rec.d1,
                                rec.d2, rec.weight, rec.final_score, bits,
                                PROVENANCES.index(rec.provenance), len(oid), k))
        out.append(oid)
        if k:
            out.append(ex.points.astype("<f4").tobytes())
            out.append(ex.side_labels.astype(np.uint8).tobytes())
    return b"".join(out)


def export(records, regions, path, format: str = "jsonl") -> int:
    """Validate and write records (and optional region extracts).

    Returns the number of records written. Nothing is written when any
    record fails validation.
    """
    records, regions = list(records), list(regions or ())
    _validate(records, regions)
    path = Path(path)
    if format == "jsonl":
        main, side = _encode_text(records, regions)
        _atomic_write(path, main)
        _atomic_write(regions_path(path), side)
    elif format == "binary":
        _atomic_write(path, _encode_binary(records, regions))
    else:
        raise ValueError(f"unknown format {format!r}")
    return len(records)


# ------------------------------------------------------------- readers


def _record_from_text(obj) -> GraspRecord:
    missing = set(TEXT_KEYS) - obj.keys()
    if missing:
        raise ValidationError(f"record is missing keys {sorted(missing)}")
    mu = obj["fc_mu_star"]
    return GraspRecord(obj["object_id"], [obj["px"], obj["py"], obj["pz"]],
                       [obj["qw"], obj["qx"], obj["qy"], obj["qz"]], obj["score"],
                       math.inf if mu is None else mu, obj["d1"], obj["d2"], obj["weight"],
                       obj["final_score"], frozenset(obj["flags"]), obj["provenance"])


def _read_text(path: Path):
    lines = path.read_text().splitlines()
    try:
        header = json.loads(lines[0]) if lines else {}
        if header.get("format") != "fastgrasp":
            raise ValidationError(f"{path}: not a grasp dataset")
        records = [_record_from_text(json.loads(s)) for s in lines[1:] if s.strip()]
        regions = []
        side = regions_path(path)
        if side.exists():
            for s in side.read_text().splitlines():
                if s.strip():
                    obj = json.loads(s)
                    regions.append(ClosingRegionExtract(obj["record_ref"], obj["points"],
                                                        obj["side_labels"]))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ValidationError(f"{path}: malformed record ({exc})") from None
    return records, regions


def _read_binary(path: Path):
    data = path.read_bytes()
    if data[:4] != MAGIC:
        raise ValidationError(f"{path}: bad magic")
    try:
        (n,) = _COUNT.unpack_from(data, 4)
        off = 4 + _COUNT.size
        records, regions = [], []
        for i in range(n):
            vals = _HEADER.unpack_from(data, off)
            off += _HEADER.size
            bits, prov, n_id, k = vals[13:]
            oid = data[off:off + n_id].decode()
            off += n_id
            flags = frozenset(f for f, b in FLAG_BITS.items() if bits & b)
            records.append(GraspRecord(oid, vals[0:3], vals[3:7], *vals[7:13], flags,
                                       PROVENANCES[prov]))
            if k:
                pts = np.frombuffer(data, "<f4", 3 * k, off).reshape(k, 3)
                off += 12 * k
                labels = np.frombuffer(data, np.uint8, k, off)
                off += k
                regions.append(ClosingRegionExtract(i, pts, labels))
    except (struct.error, ValueError, IndexError, UnicodeDecodeError) as exc:
        raise ValidationError(f"{path}: truncated or corrupt ({exc})") from None
    if off != len(data):
        raise ValidationError(f"{path}: trailing bytes")
    return records, regions


def import_records(path, format: str | None = None):
    """Read ``(records, regions)`` written by :func:`export`.

    The format is sniffed from the magic bytes when not given.
    """
    path = Path(path)
    if format is None:
        with open(path, "rb") as fh:
            format = "binary" if fh.read(4) == MAGIC else "jsonl"
    if format == "binary":
        return _read_binary(path)
    if format == "jsonl":
        return _read_text(path)
    raise ValueError(f"unknown format {format!r}")


# ------------------------------------------------------------- statistics


@dataclass
class ScoreHistograms:
    n_records: int = 0
    n_removed: int = 0
    score_hist: np.ndarray = field(default_factory=lambda: np.zeros(N_BINS, int))
    final_hist: np.ndarray = field(default_factory=lambda: np.zeros(N_BINS, int))
    score_mean: float = math.nan
    score_median: float = math.nan
    final_mean: float = math.nan
    final_median: float = math.nan

    @property
    def removed_fraction(self) -> float:
        return self.n_removed / self.n_records if self.n_records else 0.0

    def to_text(self) -> str:
        rows = [("records", self.n_records), ("removed", self.n_removed),
                ("removed_fraction", self.removed_fraction),
                ("score_mean", self.score_mean), ("score_median", self.score_median),
                ("final_score_mean", self.final_mean), ("final_score_median", self.final_median)]
        return "".join(f"{k} = {v}\n" for k, v in rows)

    def hist_csv(self) -> str:
        return histogram_csv(self.score_hist, self.final_hist,
                             ("count_score", "count_final_score"))


def stats(records) -> ScoreHistograms:
    """Score and final-score histograms over the records not flagged removed."""
    records = list(records)
    kept = [r for r in records if "removed" not in r.flags]
    out = ScoreHistograms(len(records), len(records) - len(kept))
    if kept:
        s = np.array([r.score for r in kept])
        f = np.array([r.final_score for r in kept])
        out.score_hist, out.final_hist = histogram(s), histogram(f)
        out.score_mean, out.score_median = float(s.mean()), float(np.median(s))
        out.final_mean, out.final_median = float(f.mean()), float(np.median(f))
    return out
