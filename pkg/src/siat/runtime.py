"""Pipeline execution: typed stage chains over mini-batches.

``build_pipeline`` turns a stored service spec into executable stages
(resolving algorithm descriptors and model blobs), ``process_batch`` runs
one batch through them, and ``parallel_process`` does the same with the
frames partitioned into contiguous non-overlapping slices that workers
process independently before an order-preserving merge — outputs are
byte-identical to the sequential run.  Stages that need frame adjacency
are marked non-partitionable and always run on the whole batch.

``run_service`` is the consuming loop for a real-time service: read a
batch, process, publish and record every result, then commit the offset —
so a crash between publish and commit replays the in-flight batch
(at-least-once; duplicates are deduplicable by (service, source,
batch_seq, frame_index, algorithm)).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

from .acquisition import AnomalyRecord, IRKind, IRRecord, publish_result
from .broker import Broker
from .catalog import Catalog, ServiceMode, ServiceSpec
from .errors import (
    BadParam,
    KindMismatch,
    MissingModel,
    NoSubscription,
    NotFound,
    PipelineTypeError,
    StageError,
)
from .framewire import MiniBatch, decode_minibatch
from .stages import DataKind, Stage, implementation_for, load_model, make_stage
from .userspace import Space, Userspace


@dataclass
class ExecutablePipeline:
    service_id: str
    source_mode: ServiceMode
    stages: list[Stage]

    @property
    def input_kind(self) -> DataKind:
        return self.stages[0].input_kind


@dataclass
class BatchContext:
    """Provenance carried onto every record emitted for one batch."""

    service_id: str
    source_id: str
    batch_seq: int
    ts_of: Callable[[int], int]


@dataclass
class RunSummary:
    batches: int = 0
    ir_records: int = 0
    anomalies: int = 0

    def to_dict(self) -> dict:
        return {"batches": self.batches, "ir_records": self.ir_records,
                "anomalies": self.anomalies}


def build_pipeline(spec: ServiceSpec, catalog: Catalog,
                   userspace: Optional[Userspace]) -> ExecutablePipeline:
    """Resolve and type-check a service spec into executable stages."""
    stages: list[Stage] = []
    for algorithm_id, params in spec.pipeline:
        descriptor = catalog.get_algorithm(algorithm_id)
        cls = implementation_for(descriptor.name)
        model = None
        if cls.MODEL_KIND is not None:
            path = params.get("model")
            if not isinstance(path, str) or not path:
                raise BadParam(f"stage {descriptor.name!r} needs a model path")
            if userspace is None:
                raise MissingModel(f"no userspace to load {path!r} from")
            try:
                blob = userspace.get_object(spec.owner, spec.owner, Space.MODEL, path)
            except NotFound:
                raise MissingModel(
                    f"{path!r} not in {spec.owner!r}'s model space") from None
            model = load_model(blob)
            if not isinstance(model, cls.MODEL_KIND):
                raise BadParam(
                    f"model {path!r} is a {type(model).__name__},"
                    f" {descriptor.name!r} needs {cls.MODEL_KIND.__name__}")
        stages.append(make_stage(descriptor, params, model=model))
    if not stages:
        raise PipelineTypeError("pipeline must have at least one stage")
    for i, (prev, nxt) in enumerate(zip(stages, stages[1:])):
        if prev.output_kind != nxt.input_kind:
            raise PipelineTypeError(
                f"stage {i} emits {prev.output_kind.value} but stage {i + 1}"
                f" consumes {nxt.input_kind.value}")
    return ExecutablePipeline(service_id=spec.service_id, source_mode=spec.mode,
                              stages=stages)


# --- batch execution ----------------------------------------------------------

def _apply_stage(stage: Stage, index: int, items: list) -> list:
    try:
        return stage.apply(items)
    except StageError:
        raise
    except Exception as e:
        raise StageError(index, stage.name, e) from e


def _split_slices(items: list, workers: int) -> list[list]:
    n = len(items)
    base, extra = divmod(n, workers)
    slices, start = [], 0
    for w in range(workers):
        size = base + (1 if w < extra else 0)
        slices.append(items[start:start + size])
        start += size
    return slices


def _run_stages(pipeline: ExecutablePipeline, items: list,
                n_workers: int) -> list[list]:
    """Apply all stages, returning each stage's full output in order."""
    stages = pipeline.stages
    outputs: list[list] = [[] for _ in stages]
    i = 0
    while i < len(stages):
        if n_workers <= 1 or not stages[i].PARTITIONABLE or len(items) <= 1:
            items = _apply_stage(stages[i], i, items)
            outputs[i] = items
            i += 1
            continue
        j = i
        while j < len(stages) and stages[j].PARTITIONABLE:
            j += 1
        run = list(range(i, j))
        workers = min(n_workers, len(items))
        slices = _split_slices(items, workers)

        def work(chunk: list) -> list[list]:
            per_stage = []
            for idx in run:
                chunk = _apply_stage(stages[idx], idx, chunk)
                per_stage.append(chunk)
            return per_stage

        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, slices))
        for offset, idx in enumerate(run):
            outputs[idx] = [item for res in results for item in res[offset]]
        items = outputs[j - 1]
        i = j
    return outputs


def _records_from(pipeline: ExecutablePipeline, ctx: BatchContext,
                  outputs: list[list]) -> tuple[list[IRRecord], list[AnomalyRecord]]:
    irs: list[IRRecord] = []
    anomalies: list[AnomalyRecord] = []
    for stage, items in zip(pipeline.stages, outputs):
        if stage.output_kind is DataKind.ANOMALIES:
            for idx, atype, score, details in items:
                anomalies.append(AnomalyRecord(
                    service_id=ctx.service_id, source_id=ctx.source_id,
                    batch_seq=ctx.batch_seq, frame_index=idx, type=atype,
                    score=score, details=details))
        elif stage.emit_ir and stage.IR_KIND is not None:
            for item in items:
                idx = item[0]
                common = dict(service_id=ctx.service_id,
                              algorithm_id=stage.algorithm_id,
                              source_id=ctx.source_id, batch_seq=ctx.batch_seq,
                              frame_index=idx, ts_micros=ctx.ts_of(idx),
                              kind=stage.IR_KIND)
                if stage.IR_KIND in (IRKind.FEATURE, IRKind.BOUNDARY):
                    irs.append(IRRecord(**common, vector=list(item[1])))
                elif stage.IR_KIND is IRKind.LABEL:
                    irs.append(IRRecord(**common, label=item[1], score=item[2]))
                else:  # SCALAR
                    irs.append(IRRecord(**common, score=item[2]))
    return irs, anomalies


def _batch_context(pipeline: ExecutablePipeline, batch: MiniBatch) -> BatchContext:
    return BatchContext(service_id=pipeline.service_id, source_id=batch.source_id,
                        batch_seq=batch.batch_seq, ts_of=batch.frame_ts_micros)


def process_batch(pipeline: ExecutablePipeline,
                  batch: MiniBatch) -> tuple[list[IRRecord], list[AnomalyRecord]]:
    """Run one batch through the chain, emitting IR and anomaly records."""
    if pipeline.input_kind is not DataKind.FRAMES:
        raise KindMismatch("pipeline does not consume frames")
    outputs = _run_stages(pipeline, list(enumerate(batch.frames)), 1)
    return _records_from(pipeline, _batch_context(pipeline, batch), outputs)


def parallel_process(pipeline: ExecutablePipeline, batch: MiniBatch,
                     n_workers: int) -> tuple[list[IRRecord], list[AnomalyRecord]]:
    """Data-distributed process_batch: same records, any worker count."""
    if n_workers < 1:
        raise ValueError("n_workers must be positive")
    if pipeline.input_kind is not DataKind.FRAMES:
        raise KindMismatch("pipeline does not consume frames")
    outputs = _run_stages(pipeline, list(enumerate(batch.frames)), n_workers)
    return _records_from(pipeline, _batch_context(pipeline, batch), outputs)


# --- service loops ----------------------------------------------------------------

def _sink_records(irs, anomalies, broker, catalog, knowledge, publish_topics=True):
    for rec in irs:
        if publish_topics:
            publish_result(rec, broker)
        catalog.record_ir(rec)
        if knowledge is not None:
            knowledge.observe_ir(rec)
    for rec in anomalies:
        if publish_topics:
            publish_result(rec, broker)
        catalog.record_anomaly(rec)


def run_service(service_id: str, broker: Broker, catalog: Catalog,
                userspace: Optional[Userspace] = None,
                max_batches: Optional[int] = None,
                knowledge=None,
                after_publish: Optional[Callable[[int], None]] = None) -> RunSummary:
    """Drain RIVA_<id>: process each batch, publish and record results, commit.

    ``after_publish`` is a fault-injection hook called with the batch_seq
    after results are out but before the offset commit; an exception there
    leaves the batch uncommitted so a rerun reprocesses it.
    """
    service = catalog.get_service(service_id)
    if service.mode is not ServiceMode.RIVA:
        raise KindMismatch(f"service {service_id} is {service.mode.value}, not RIVA")
    if not catalog.active_subscriptions(service_id):
        raise NoSubscription(f"service {service_id} has no active subscription")
    pipeline = build_pipeline(service, catalog, userspace)
    group = f"svc_{service_id}"
    topic = f"RIVA_{service_id}"
    broker.reset_to_committed(group, topic)
    summary = RunSummary()
    while max_batches is None or summary.batches < max_batches:
        messages = broker.poll(group, topic, 1)
        if not messages:
            break
        msg = messages[0]
        batch = next_batch_from_payload(msg.payload, topic, msg.offset)
        irs, anomalies = process_batch(pipeline, batch)
        _sink_records(irs, anomalies, broker, catalog, knowledge)
        if after_publish is not None:
            after_publish(batch.batch_seq)
        broker.commit(group, topic, msg.offset)
        summary.batches += 1
        summary.ir_records += len(irs)
        summary.anomalies += len(anomalies)
    return summary


def next_batch_from_payload(payload: bytes, topic: str, offset: int) -> MiniBatch:
    try:
        return decode_minibatch(payload)
    except Exception as e:
        raise type(e)(f"offset {offset} on {topic}: {e}") from e


def run_biva(service_id: str, objects: list, catalog: Catalog,
             userspace: Userspace, knowledge=None) -> RunSummary:
    """Process stored SVB1 objects through a BIVA service, in listed order.

    Results go to the catalog only; batch services have no queues.
    """
    service = catalog.get_service(service_id)
    if service.mode is not ServiceMode.BIVA:
        raise KindMismatch(f"service {service_id} is {service.mode.value}, not BIVA")
    pipeline = build_pipeline(service, catalog, userspace)
    summary = RunSummary()
    for ref in objects:
        data = userspace.get_object(ref.user_id, ref.user_id, ref.space, ref.path)
        try:
            batch = decode_minibatch(data)
        except Exception as e:
            raise type(e)(f"object {ref.path}: {e}") from e
        irs, anomalies = process_batch(pipeline, batch)
        _sink_records(irs, anomalies, None, catalog, knowledge, publish_topics=False)
        summary.batches += 1
        summary.ir_records += len(irs)
        summary.anomalies += len(anomalies)
    return summary


@dataclass
class ChainSummary:
    upstream_id: str
    downstream_id: str
    group_id: str
    records_consumed: int = 0
    ir_records: int = 0
    anomalies: int = 0

    def to_dict(self) -> dict:
        return {"upstream_id": self.upstream_id, "downstream_id": self.downstream_id,
                "group_id": self.group_id, "records_consumed": self.records_consumed,
                "ir_records": self.ir_records, "anomalies": self.anomalies}


def chain_services(upstream_id: str, downstream_id: str, broker: Broker,
                   catalog: Catalog, userspace: Optional[Userspace] = None,
                   max_records: Optional[int] = None,
                   knowledge=None) -> ChainSummary:
    """Feed a downstream service from an upstream service's IR queue.

    Feature records are adapted into single-item vector streams; the
    downstream pipeline then behaves exactly as in run_service (publish,
    record, commit).  The downstream's first stage must consume VECTORS.
    """
    upstream = catalog.get_service(upstream_id)
    downstream = catalog.get_service(downstream_id)
    if upstream.mode is not ServiceMode.RIVA or downstream.mode is not ServiceMode.RIVA:
        raise KindMismatch("service chaining requires two RIVA services")
    pipeline = build_pipeline(downstream, catalog, userspace)
    if pipeline.input_kind is not DataKind.VECTORS:
        raise KindMismatch(
            f"downstream first stage consumes {pipeline.input_kind.value},"
            f" chaining needs VECTORS")
    group = f"svc_{downstream_id}_from_{upstream_id}"
    topic = f"RIVA_IR_{upstream_id}"
    broker.reset_to_committed(group, topic)
    summary = ChainSummary(upstream_id, downstream_id, group)
    while max_records is None or summary.records_consumed < max_records:
        messages = broker.poll(group, topic, 1)
        if not messages:
            break
        msg = messages[0]
        rec = IRRecord.from_json(msg.payload.decode("utf-8"))
        summary.records_consumed += 1
        if rec.kind is IRKind.FEATURE and rec.vector is not None:
            ctx = BatchContext(service_id=downstream_id, source_id=rec.source_id,
                               batch_seq=rec.batch_seq,
                               ts_of=lambda _i, ts=rec.ts_micros: ts)
            outputs = _run_stages(pipeline, [(rec.frame_index, list(rec.vector))], 1)
            irs, anomalies = _records_from(pipeline, ctx, outputs)
            _sink_records(irs, anomalies, broker, catalog, knowledge)
            summary.ir_records += len(irs)
            summary.anomalies += len(anomalies)
        broker.commit(group, topic, msg.offset)
    return summary
