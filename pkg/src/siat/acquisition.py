"""Stream acquisition and result publishing around the broker.

``run_vsas`` is the producer side: it drains a device-independent source,
chunks frames into mini-batches, and publishes them to ``RIVA_<id>``.
``next_batch`` is the consumer side used by running services, and
``publish_result`` routes intermediate results and anomalies to
``RIVA_IR_<id>`` / ``RIVA_A_<id>`` as one-line JSON.

Two source kinds exist at desk scale: SYNTHETIC (a scripted scene plan of
constant fills and linear fill ramps, fully deterministic) and RAWDIR (a
directory of ``.svb`` batch files and/or ``.raw`` single-frame files).
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Optional, Union

from .broker import Broker
from .errors import (
    BadParams,
    InvalidRecord,
    MissingPath,
    SourceError,
    UnknownKind,
    UnknownTopic,
)
from .framewire import (
    Compression,
    Frame,
    MiniBatch,
    PixelFormat,
    decode_minibatch,
    encode_minibatch,
)


class SourceKind(enum.Enum):
    SYNTHETIC = "SYNTHETIC"
    RAWDIR = "RAWDIR"


@dataclass(frozen=True)
class SourceSpec:
    """Declaration of a frame source.

    SYNTHETIC params: width, height, fps (default 25), format ("GRAY8" or
    "RGB24", default GRAY8), start_ts_micros (default 0), and scene_plan: a
    non-empty list of segments, each ``{"frames": n, "fill": v}`` or
    ``{"frames": n, "gradient": [start, end]}`` (per-frame constant fill
    ramped linearly across the segment).

    RAWDIR params: path (directory), plus width/height/format for ``.raw``
    single-frame files found there.
    """

    source_id: str
    kind: SourceKind
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"source_id": self.source_id, "kind": self.kind.value, "params": self.params}

    @staticmethod
    def from_dict(d: dict) -> "SourceSpec":
        return SourceSpec(d.get("source_id", ""), SourceKind(d["kind"]),
                          dict(d.get("params", {})))


def validate_spec(spec: SourceSpec) -> None:
    """Raise BadParams/MissingPath/UnknownKind if the spec is unusable."""
    if not isinstance(spec.kind, SourceKind):
        raise UnknownKind(str(spec.kind))
    p = spec.params
    if spec.kind is SourceKind.SYNTHETIC:
        plan = p.get("scene_plan")
        if not plan:
            raise BadParams("SYNTHETIC requires a non-empty scene_plan")
        for seg in plan:
            if not isinstance(seg, dict) or "frames" not in seg:
                raise BadParams(f"bad scene_plan segment {seg!r}")
            if int(seg["frames"]) < 0:
                raise BadParams("segment frame count must be >= 0")
            if ("fill" in seg) == ("gradient" in seg):
                raise BadParams("segment needs exactly one of fill/gradient")
        width, height = int(p.get("width", 0)), int(p.get("height", 0))
        if width < 1 or height < 1:
            raise BadParams("SYNTHETIC requires width and height >= 1")
        if float(p.get("fps", 25)) <= 0:
            raise BadParams("fps must be positive")
        fmt = p.get("format", "GRAY8")
        if fmt not in ("GRAY8", "RGB24"):
            raise BadParams(f"unknown pixel format {fmt!r}")
    elif spec.kind is SourceKind.RAWDIR:
        if not p.get("path"):
            raise MissingPath("RAWDIR requires a path")


class SourceHandle:
    """An opened source: a one-shot frame iterator plus timing metadata."""

    def __init__(self, spec: SourceSpec, frames: Iterator[Frame], interval_micros: int,
                 start_ts_micros: int):
        self.spec = spec
        self.source_id = spec.source_id
        self.frame_interval_micros = interval_micros
        self.start_ts_micros = start_ts_micros
        self._frames = frames

    def __iter__(self) -> Iterator[Frame]:
        return self._frames


def open_source(spec: SourceSpec) -> SourceHandle:
    validate_spec(spec)
    p = spec.params
    if spec.kind is SourceKind.SYNTHETIC:
        fps = float(p.get("fps", 25))
        interval = round(1_000_000 / fps)
        return SourceHandle(spec, _synthetic_frames(p), interval,
                            int(p.get("start_ts_micros", 0)))
    root = Path(p["path"])
    if not root.is_dir():
        raise MissingPath(f"{root} is not a directory")
    fps = float(p.get("fps", 25))
    return SourceHandle(spec, _rawdir_frames(root, p), round(1_000_000 / fps),
                        int(p.get("start_ts_micros", 0)))


def _synthetic_frames(p: dict) -> Iterator[Frame]:
    width, height = int(p["width"]), int(p["height"])
    fmt = PixelFormat[p.get("format", "GRAY8")]
    size = width * height * fmt.channels
    for seg in p["scene_plan"]:
        n = int(seg["frames"])
        if "fill" in seg:
            fills = [int(seg["fill"])] * n
        else:
            lo, hi = seg["gradient"]
            if n == 1:
                fills = [int(lo)]
            else:
                fills = [round(lo + (hi - lo) * i / (n - 1)) for i in range(n)]
        for v in fills:
            if not 0 <= v <= 255:
                raise SourceError(f"fill value {v} outside [0, 255]")
            yield Frame(width, height, fmt, bytes([v]) * size)


def _rawdir_frames(root: Path, p: dict) -> Iterator[Frame]:
    for path in sorted(root.iterdir()):
        if path.suffix == ".svb":
            try:
                batch = decode_minibatch(path.read_bytes())
            except Exception as e:
                raise SourceError(f"{path.name}: {e}") from e
            yield from batch.frames
        elif path.suffix == ".raw":
            width, height = int(p.get("width", 0)), int(p.get("height", 0))
            fmt = PixelFormat[p.get("format", "GRAY8")]
            if width < 1 or height < 1:
                raise BadParams("RAWDIR with .raw files requires width/height")
            data = path.read_bytes()
            try:
                yield Frame(width, height, fmt, data)
            except ValueError as e:
                raise SourceError(f"{path.name}: {e}") from e


def run_vsas(
    handle: SourceHandle,
    service_id: str,
    batch_size: int,
    compression: Compression,
    broker: Broker,
    max_frames: Optional[int] = None,
) -> int:
    """Drain a source into RIVA_<service_id> as encoded mini-batches.

    Frames are grouped into ceil(total/batch_size) batches with dense
    batch_seq 0,1,2,...; a trailing partial batch is published, not dropped.
    Returns the number of batches published.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    topic = f"RIVA_{service_id}"
    if not broker.has_topic(topic):
        raise UnknownTopic(topic)
    published = 0
    pending: list[Frame] = []
    seen = 0
    interval = handle.frame_interval_micros

    def flush():
        nonlocal published
        if not pending:
            return
        start = handle.start_ts_micros + (seen - len(pending)) * interval
        batch = MiniBatch(
            source_id=handle.source_id,
            batch_seq=published,
            start_ts_micros=start,
            frame_interval_micros=interval,
            frames=tuple(pending),
            compression=compression,
        )
        broker.publish(topic, handle.source_id, encode_minibatch(batch))
        published += 1
        pending.clear()

    for frame in handle:
        pending.append(frame)
        seen += 1
        if len(pending) == batch_size:
            flush()
        if max_frames is not None and seen >= max_frames:
            break
    flush()
    return published


def next_batch(group_id: str, service_id: str, broker: Broker) -> Optional[MiniBatch]:
    """Consume the next mini-batch for a group, or None when caught up."""
    topic = f"RIVA_{service_id}"
    messages = broker.poll(group_id, topic, 1)
    if not messages:
        return None
    msg = messages[0]
    try:
        return decode_minibatch(msg.payload)
    except Exception as e:
        raise type(e)(f"offset {msg.offset} on {topic}: {e}") from e


# --- result records ----------------------------------------------------------

class IRKind(enum.Enum):
    FEATURE = "feature"
    LABEL = "label"
    SCALAR = "scalar"
    BOUNDARY = "boundary"


_IR_KEYS = (
    "service_id", "algorithm_id", "source_id", "batch_seq", "frame_index",
    "ts_micros", "kind", "vector", "label", "score",
)
_ANOMALY_KEYS = (
    "service_id", "source_id", "batch_seq", "frame_index", "type", "score", "details",
)


@dataclass(frozen=True)
class IRRecord:
    """One intermediate result: a per-stage output tied to its provenance.

    ``frame_index`` is batch-relative; -1 marks a batch-level record.
    """

    service_id: str
    algorithm_id: str
    source_id: str
    batch_seq: int
    frame_index: int
    ts_micros: int
    kind: IRKind
    vector: Optional[list[float]] = None
    label: Optional[str] = None
    score: Optional[float] = None

    def validate(self):
        if self.kind is IRKind.FEATURE and self.vector is None:
            raise InvalidRecord("feature record without vector")
        if self.kind is IRKind.LABEL and self.label is None:
            raise InvalidRecord("label record without label")
        if self.kind is IRKind.SCALAR and self.score is None:
            raise InvalidRecord("scalar record without score")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in _IR_KEYS}
        d["kind"] = self.kind.value
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @staticmethod
    def from_json(text: str) -> "IRRecord":
        d = _load_record(text, _IR_KEYS, required=("service_id", "algorithm_id",
                                                   "source_id", "batch_seq",
                                                   "frame_index", "ts_micros", "kind"))
        d["kind"] = IRKind(d["kind"])
        if d.get("vector") is not None:
            d["vector"] = [float(x) for x in d["vector"]]
        rec = IRRecord(**d)
        rec.validate()
        return rec


@dataclass(frozen=True)
class AnomalyRecord:
    service_id: str
    source_id: str
    batch_seq: int
    frame_index: int
    type: str
    score: float
    details: str = ""

    def validate(self):
        if not math.isfinite(self.score):
            raise InvalidRecord(f"anomaly score {self.score} is not finite")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in _ANOMALY_KEYS}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @staticmethod
    def from_json(text: str) -> "AnomalyRecord":
        d = _load_record(text, _ANOMALY_KEYS,
                         required=[k for k in _ANOMALY_KEYS if k != "details"])
        rec = AnomalyRecord(**d)
        rec.validate()
        return rec


def _load_record(text: str, allowed, required) -> dict:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise InvalidRecord(f"not valid JSON: {e}") from None
    if not isinstance(d, dict):
        raise InvalidRecord("record must be a JSON object")
    unknown = set(d) - set(allowed)
    if unknown:
        raise InvalidRecord(f"unknown keys {sorted(unknown)}")
    missing = [k for k in required if k not in d]
    if missing:
        raise InvalidRecord(f"missing keys {missing}")
    return d


def publish_result(record: Union[IRRecord, AnomalyRecord], broker: Broker) -> int:
    """Route a result record to its service's IR or anomaly queue."""
    record.validate()
    if isinstance(record, IRRecord):
        topic = f"RIVA_IR_{record.service_id}"
    elif isinstance(record, AnomalyRecord):
        topic = f"RIVA_A_{record.service_id}"
    else:
        raise InvalidRecord(f"unsupported record type {type(record).__name__}")
    return broker.publish(topic, record.source_id, record.to_json().encode("utf-8"))


def with_source_id(spec: SourceSpec, source_id: str) -> SourceSpec:
    return replace(spec, source_id=source_id)
