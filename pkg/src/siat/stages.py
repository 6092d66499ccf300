"""Typed pipeline stages and the built-in algorithm registry.

A stage consumes and produces one of four value streams, always carried as
lists of tuples keyed by batch-relative frame index:

    FRAMES    [(index, Frame), ...]
    VECTORS   [(index, [float, ...]), ...]
    LABELS    [(index, label, score), ...]
    ANOMALIES [(index, type, score, details), ...]

The stage table fixes which conversions each stage kind may perform;
DETECT additionally accepts VECTORS so score-like values can be
thresholded directly.  Stages that look at neighboring frames
(frame_select, motion_energy, boundary_detector) are non-partitionable:
the data-parallel runner keeps them on the whole batch.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Optional

from . import mining, processing
from .acquisition import IRKind
from .errors import BadParam, KindMismatch, UnknownImplementation
from .mining import KMeansModel, KnnModel, LinRegModel
from .processing import PCAModel


class StageKind(enum.Enum):
    PREPROCESS = "PREPROCESS"
    FEATURE = "FEATURE"
    REDUCE = "REDUCE"
    MODEL = "MODEL"
    DETECT = "DETECT"


class DataKind(enum.Enum):
    FRAMES = "FRAMES"
    VECTORS = "VECTORS"
    LABELS = "LABELS"
    ANOMALIES = "ANOMALIES"


# allowed (input, output) pairs per stage kind
STAGE_IO: dict[StageKind, tuple[tuple[DataKind, DataKind], ...]] = {
    StageKind.PREPROCESS: ((DataKind.FRAMES, DataKind.FRAMES),),
    StageKind.FEATURE: ((DataKind.FRAMES, DataKind.VECTORS),),
    StageKind.REDUCE: ((DataKind.VECTORS, DataKind.VECTORS),),
    StageKind.MODEL: ((DataKind.VECTORS, DataKind.LABELS),),
    StageKind.DETECT: (
        (DataKind.LABELS, DataKind.ANOMALIES),
        (DataKind.VECTORS, DataKind.ANOMALIES),
    ),
}

_PARAM_TYPES = {
    "int": int,
    "float": (int, float),
    "str": str,
    "bool": bool,
}


@dataclass(frozen=True)
class ParamSpec:
    """One declared stage parameter; default None means required."""

    name: str
    type: str
    default: object = None

    def to_dict(self) -> dict:
        return {"name": self.name, "type": self.type, "default": self.default}

    @staticmethod
    def from_dict(d: dict) -> "ParamSpec":
        return ParamSpec(d["name"], d["type"], d.get("default"))


def bind_params(schema: list[ParamSpec], given: dict) -> dict:
    """Fill defaults and type-check caller bindings against a schema."""
    by_name = {p.name: p for p in schema}
    unknown = set(given) - set(by_name)
    if unknown:
        raise BadParam(f"unknown params {sorted(unknown)}")
    bound = {}
    for spec in schema:
        if spec.name in given:
            value = given[spec.name]
            expected = _PARAM_TYPES[spec.type]
            if spec.type != "bool" and isinstance(value, bool):
                raise BadParam(f"param {spec.name!r} expects {spec.type}")
            if not isinstance(value, expected):
                raise BadParam(
                    f"param {spec.name!r} expects {spec.type}, got {type(value).__name__}"
                )
            bound[spec.name] = float(value) if spec.type == "float" else value
        elif spec.default is None:
            raise BadParam(f"param {spec.name!r} is required")
        else:
            bound[spec.name] = spec.default
    return bound


class Stage:
    """A bound, executable pipeline stage."""

    NAME = ""
    STAGE_KIND: StageKind
    IO: tuple[tuple[DataKind, DataKind], ...] = ()
    SCHEMA: tuple[ParamSpec, ...] = ()
    PARTITIONABLE = True
    IR_KIND: Optional[IRKind] = None
    MODEL_KIND: Optional[type] = None

    def __init__(self, algorithm_id: str, params: dict, model=None,
                 input_kind: Optional[DataKind] = None,
                 schema: Optional[list[ParamSpec]] = None):
        self.algorithm_id = algorithm_id
        self.input_kind = input_kind if input_kind is not None else self.IO[0][0]
        io = dict(self.IO)
        if self.input_kind not in io:
            raise KindMismatch(
                f"{self.NAME!r} does not accept {self.input_kind.value} input"
            )
        self.output_kind = io[self.input_kind]
        self.model = model
        effective = list(schema) if schema is not None else list(self.SCHEMA)
        if self.IR_KIND is not None:
            effective.append(ParamSpec("emit_ir", "bool", True))
        self.params = bind_params(effective, params)
        self.emit_ir = bool(self.params.get("emit_ir", False))
        self._configure()

    def _configure(self):
        pass

    def apply(self, items: list) -> list:
        raise NotImplementedError

    @property
    def name(self) -> str:
        return self.NAME


# --- pre-processing stages ---------------------------------------------------

class GrayscaleStage(Stage):
    NAME = "grayscale"
    STAGE_KIND = StageKind.PREPROCESS
    IO = STAGE_IO[StageKind.PREPROCESS]

    def apply(self, items):
        return [(i, processing.to_grayscale(f)) for i, f in items]


class ResizeStage(Stage):
    NAME = "resize"
    STAGE_KIND = StageKind.PREPROCESS
    IO = STAGE_IO[StageKind.PREPROCESS]
    SCHEMA = (
        ParamSpec("width", "int"),
        ParamSpec("height", "int"),
        ParamSpec("method", "str", "NEAREST"),
    )

    def apply(self, items):
        w, h, m = self.params["width"], self.params["height"], self.params["method"]
        return [(i, processing.resize(f, w, h, m)) for i, f in items]


class AdjustStage(Stage):
    NAME = "adjust"
    STAGE_KIND = StageKind.PREPROCESS
    IO = STAGE_IO[StageKind.PREPROCESS]
    SCHEMA = (ParamSpec("alpha", "float", 1.0), ParamSpec("beta", "float", 0.0))

    def apply(self, items):
        a, b = self.params["alpha"], self.params["beta"]
        return [(i, processing.adjust(f, a, b)) for i, f in items]


class EqualizeStage(Stage):
    NAME = "equalize"
    STAGE_KIND = StageKind.PREPROCESS
    IO = STAGE_IO[StageKind.PREPROCESS]

    def apply(self, items):
        return [(i, processing.equalize(f)) for i, f in items]


class CropStage(Stage):
    NAME = "crop"
    STAGE_KIND = StageKind.PREPROCESS
    IO = STAGE_IO[StageKind.PREPROCESS]
    SCHEMA = (
        ParamSpec("x", "int"),
        ParamSpec("y", "int"),
        ParamSpec("width", "int"),
        ParamSpec("height", "int"),
    )

    def apply(self, items):
        p = self.params
        return [
            (i, processing.crop(f, p["x"], p["y"], p["width"], p["height"]))
            for i, f in items
        ]


class FrameSelectStage(Stage):
    NAME = "frame_select"
    STAGE_KIND = StageKind.PREPROCESS
    IO = STAGE_IO[StageKind.PREPROCESS]
    SCHEMA = (
        ParamSpec("policy", "str", "ALL"),
        ParamSpec("step", "int", 1),
        ParamSpec("tau", "float", 0.0),
    )
    PARTITIONABLE = False  # STEP/KEY depend on stream position and adjacency

    def _configure(self):
        if self.params["policy"] not in ("ALL", "STEP", "KEY"):
            raise BadParam(f"unknown frame_select policy {self.params['policy']!r}")
        if self.params["policy"] == "STEP" and self.params["step"] < 1:
            raise BadParam("step must be >= 1")
        if self.params["policy"] == "KEY" and self.params["tau"] < 0:
            raise BadParam("tau must be >= 0")

    def apply(self, items):
        policy = self.params["policy"]
        if policy == "ALL" or not items:
            return list(items)
        if policy == "STEP":
            return list(items[:: self.params["step"]])
        gray = [processing.to_grayscale(f) for _, f in items]
        keep = {0, *processing.detect_shot_boundaries(gray, self.params["tau"])}
        return [item for pos, item in enumerate(items) if pos in keep]


# --- feature stages ------------------------------------------------------------

class HistogramStage(Stage):
    NAME = "histogram"
    STAGE_KIND = StageKind.FEATURE
    IO = STAGE_IO[StageKind.FEATURE]
    SCHEMA = (ParamSpec("bins", "int", 16),)
    IR_KIND = IRKind.FEATURE

    def apply(self, items):
        bins = self.params["bins"]
        return [(i, processing.histogram_feature(f, bins)) for i, f in items]


class MotionEnergyStage(Stage):
    NAME = "motion_energy"
    STAGE_KIND = StageKind.FEATURE
    IO = STAGE_IO[StageKind.FEATURE]
    PARTITIONABLE = False
    IR_KIND = IRKind.FEATURE

    def apply(self, items):
        if len(items) < 2:
            return []
        frames = [f for _, f in items]
        energies = processing.motion_energy(frames)
        return [(items[t + 1][0], [energies[t]]) for t in range(len(energies))]


class BoundaryDetectorStage(Stage):
    NAME = "boundary_detector"
    STAGE_KIND = StageKind.FEATURE
    IO = STAGE_IO[StageKind.FEATURE]
    SCHEMA = (ParamSpec("tau", "float", 50.0),)
    PARTITIONABLE = False
    IR_KIND = IRKind.BOUNDARY

    def apply(self, items):
        frames = [f for _, f in items]
        if len(frames) < 2:
            return []
        energies = processing.motion_energy(frames)
        tau = self.params["tau"]
        return [
            (items[t + 1][0], [energies[t]])
            for t in range(len(energies))
            if energies[t] > tau
        ]


# --- reduce / model stages ------------------------------------------------------

class PcaTransformStage(Stage):
    NAME = "pca_transform"
    STAGE_KIND = StageKind.REDUCE
    IO = STAGE_IO[StageKind.REDUCE]
    SCHEMA = (ParamSpec("model", "str"),)
    IR_KIND = IRKind.FEATURE
    MODEL_KIND = PCAModel

    def apply(self, items):
        if not items:
            return []
        indices = [i for i, _ in items]
        out = processing.pca_transform(self.model, [v for _, v in items])
        return [(i, [float(x) for x in row]) for i, row in zip(indices, out)]


class KMeansScorerStage(Stage):
    NAME = "kmeans_scorer"
    STAGE_KIND = StageKind.MODEL
    IO = STAGE_IO[StageKind.MODEL]
    SCHEMA = (ParamSpec("model", "str"),)
    IR_KIND = IRKind.LABEL
    MODEL_KIND = KMeansModel

    def apply(self, items):
        out = []
        for i, vec in items:
            cluster, dist = mining.kmeans_assign(self.model, vec)
            out.append((i, str(cluster), dist))
        return out


class KnnClassifierStage(Stage):
    NAME = "knn_classifier"
    STAGE_KIND = StageKind.MODEL
    IO = STAGE_IO[StageKind.MODEL]
    SCHEMA = (ParamSpec("model", "str"), ParamSpec("k", "int", 1))
    IR_KIND = IRKind.LABEL
    MODEL_KIND = KnnModel

    def apply(self, items):
        k = self.params["k"]
        out = []
        for i, vec in items:
            label, fraction = mining.knn_predict(self.model, vec, k)
            out.append((i, label, fraction))
        return out


class LinRegPredictorStage(Stage):
    NAME = "linreg_predictor"
    STAGE_KIND = StageKind.MODEL
    IO = STAGE_IO[StageKind.MODEL]
    SCHEMA = (ParamSpec("model", "str"),)
    IR_KIND = IRKind.SCALAR
    MODEL_KIND = LinRegModel

    def apply(self, items):
        if not items:
            return []
        ys = mining.linreg_predict(self.model, [v for _, v in items])
        return [(i, str(float(y)), float(y)) for (i, _), y in zip(items, ys)]


# --- detect -----------------------------------------------------------------------

class ThresholdStage(Stage):
    """The single built-in anomaly bridge: flag items whose value exceeds theta.

    field=score reads the score of LABELS items; field=boundary reads the
    first component of VECTORS items (as produced by boundary_detector).
    """

    NAME = "threshold"
    STAGE_KIND = StageKind.DETECT
    IO = STAGE_IO[StageKind.DETECT]
    SCHEMA = (
        ParamSpec("field", "str", "score"),
        ParamSpec("theta", "float", 0.0),
        ParamSpec("type", "str", "anomaly"),
    )

    def _configure(self):
        f = self.params["field"]
        if f not in ("score", "boundary"):
            raise BadParam(f"threshold field must be score or boundary, got {f!r}")
        want = DataKind.LABELS if f == "score" else DataKind.VECTORS
        if self.input_kind != want:
            raise BadParam(
                f"threshold field {f!r} requires {want.value} input,"
                f" descriptor declares {self.input_kind.value}"
            )

    def apply(self, items):
        theta = self.params["theta"]
        atype = self.params["type"]
        out = []
        if self.params["field"] == "score":
            for i, label, score in items:
                if score > theta:
                    out.append((i, atype, float(score), label))
        else:
            for i, vec in items:
                if vec and vec[0] > theta:
                    out.append((i, atype, float(vec[0]), ""))
        return out


REGISTRY: dict[str, type[Stage]] = {
    cls.NAME: cls
    for cls in (
        GrayscaleStage, ResizeStage, AdjustStage, EqualizeStage, CropStage,
        FrameSelectStage, HistogramStage, MotionEnergyStage,
        BoundaryDetectorStage, PcaTransformStage, KMeansScorerStage,
        KnnClassifierStage, LinRegPredictorStage, ThresholdStage,
    )
}


def implementation_for(name: str) -> type[Stage]:
    cls = REGISTRY.get(name)
    if cls is None:
        raise UnknownImplementation(f"no built-in algorithm named {name!r}")
    return cls


def check_descriptor_kinds(name: str, stage_kind: StageKind,
                           input_kind: DataKind, output_kind: DataKind) -> None:
    """Validate a descriptor's declared kinds against the implementation."""
    cls = implementation_for(name)
    if stage_kind != cls.STAGE_KIND:
        raise KindMismatch(
            f"{name!r} is a {cls.STAGE_KIND.value} stage, not {stage_kind.value}"
        )
    if (input_kind, output_kind) not in cls.IO:
        allowed = ", ".join(f"{a.value}->{b.value}" for a, b in cls.IO)
        raise KindMismatch(
            f"{name!r} cannot map {input_kind.value}->{output_kind.value}"
            f" (allowed: {allowed})"
        )


def default_schema(name: str) -> list[ParamSpec]:
    return list(implementation_for(name).SCHEMA)


def validate_schema(name: str, schema: list[ParamSpec]) -> None:
    """A custom descriptor schema may change defaults, not names or types."""
    builtin = {p.name: p.type for p in implementation_for(name).SCHEMA}
    declared = {p.name: p.type for p in schema}
    if builtin != declared:
        raise BadParam(
            f"schema for {name!r} must declare exactly {sorted(builtin.items())}"
        )


def make_stage(descriptor, params: dict, model=None) -> Stage:
    """Bind an algorithm descriptor plus caller params into an executable stage.

    ``descriptor`` needs algorithm_id/name/input_kind/params_schema fields;
    pass ``model=None`` to validate bindings without resolving models.
    """
    cls = implementation_for(descriptor.name)
    return cls(descriptor.algorithm_id, params, model=model,
               input_kind=descriptor.input_kind, schema=descriptor.params_schema)


def load_model(blob: bytes):
    """Deserialize a stored model blob by its kind marker."""
    d = json.loads(blob.decode("utf-8"))
    kind = d.get("kind")
    loaders = {
        "kmeans": KMeansModel.from_json_dict,
        "knn": KnnModel.from_json_dict,
        "linreg": LinRegModel.from_json_dict,
        "pca": PCAModel.from_json_dict,
    }
    if kind not in loaders:
        raise BadParam(f"unknown model kind {kind!r}")
    return loaders[kind](d)


def dump_model(model) -> bytes:
    return json.dumps(model.to_json_dict(), sort_keys=True).encode("utf-8")
