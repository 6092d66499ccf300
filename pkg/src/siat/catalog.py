"""Catalog control plane: the meta-stores behind the business-logic managers.

Holds users (with role-based action logs), data sources, algorithm
descriptors, services, subscriptions, and the IR/anomaly result stores.
Every store is persisted as an append-only JSON-lines journal
(``<store>.jsonl`` under ``<data_dir>/catalog/``, one ``{"op": put|delete,
"value": entity}`` object per line) and replayed at startup, so a restart
reproduces the exact same state.

Role matrix: ADMIN may do everything; DEVELOPER manages algorithms,
services, sources, and subscriptions and queries what they own or
subscribe to; CONSUMER manages sources and subscriptions and queries what
they subscribe to.  Deleting a referenced entity is rejected rather than
cascaded.
"""

from __future__ import annotations

import enum
import json
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .acquisition import AnomalyRecord, IRKind, IRRecord, SourceSpec, validate_spec
from .broker import Broker
from .errors import (
    AccessDenied,
    BadSpec,
    DuplicateName,
    EntityInUse,
    KindMismatch,
    PipelineTypeError,
    SiatError,
    UnknownAlgorithm,
    UnknownService,
    UnknownSource,
    UnknownUser,
)
from .stages import (
    DataKind,
    ParamSpec,
    StageKind,
    check_descriptor_kinds,
    default_schema,
    make_stage,
    validate_schema,
)
from .userspace import Userspace


def _now_micros() -> int:
    return time.time_ns() // 1000


class Role(enum.Enum):
    ADMIN = "ADMIN"
    DEVELOPER = "DEVELOPER"
    CONSUMER = "CONSUMER"


class SourceClass(enum.Enum):
    STREAM = "STREAM"
    BATCH = "BATCH"


class ServiceMode(enum.Enum):
    RIVA = "RIVA"
    BIVA = "BIVA"


@dataclass
class User:
    user_id: str
    name: str
    role: Role
    created_ts: int
    log: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"user_id": self.user_id, "name": self.name, "role": self.role.value,
                "created_ts": self.created_ts, "log": self.log}

    @staticmethod
    def from_dict(d: dict) -> "User":
        return User(d["user_id"], d["name"], Role(d["role"]), d["created_ts"],
                    list(d.get("log", [])))


@dataclass
class DataSource:
    source_id: str
    owner: str
    kind: SourceClass
    spec: SourceSpec
    access: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"source_id": self.source_id, "owner": self.owner,
                "kind": self.kind.value, "spec": self.spec.to_dict(),
                "access": self.access}

    @staticmethod
    def from_dict(d: dict) -> "DataSource":
        return DataSource(d["source_id"], d["owner"], SourceClass(d["kind"]),
                          SourceSpec.from_dict(d["spec"]), list(d.get("access", [])))


@dataclass
class AlgorithmDescriptor:
    algorithm_id: str
    owner: str
    name: str
    version: str
    stage_kind: StageKind
    input_kind: DataKind
    output_kind: DataKind
    params_schema: list[ParamSpec] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"algorithm_id": self.algorithm_id, "owner": self.owner,
                "name": self.name, "version": self.version,
                "stage_kind": self.stage_kind.value,
                "input_kind": self.input_kind.value,
                "output_kind": self.output_kind.value,
                "params_schema": [p.to_dict() for p in self.params_schema]}

    @staticmethod
    def from_dict(d: dict) -> "AlgorithmDescriptor":
        return AlgorithmDescriptor(
            d["algorithm_id"], d["owner"], d["name"], d["version"],
            StageKind(d["stage_kind"]), DataKind(d["input_kind"]),
            DataKind(d["output_kind"]),
            [ParamSpec.from_dict(p) for p in d.get("params_schema", [])])


@dataclass
class ServiceSpec:
    service_id: str
    owner: str
    mode: ServiceMode
    pipeline: list[tuple[str, dict]]  # (algorithm_id, param bindings)
    topics: list[str] = field(default_factory=list)
    name: str = ""

    def to_dict(self) -> dict:
        return {"service_id": self.service_id, "owner": self.owner,
                "mode": self.mode.value,
                "pipeline": [[aid, params] for aid, params in self.pipeline],
                "topics": self.topics, "name": self.name}

    @staticmethod
    def from_dict(d: dict) -> "ServiceSpec":
        return ServiceSpec(d["service_id"], d["owner"], ServiceMode(d["mode"]),
                           [(aid, dict(params)) for aid, params in d["pipeline"]],
                           list(d.get("topics", [])), d.get("name", ""))


class SubscriptionStatus(enum.Enum):
    ACTIVE = "ACTIVE"
    STOPPED = "STOPPED"


@dataclass
class Subscription:
    subscription_id: str
    user_id: str
    source_id: str
    service_id: str
    status: SubscriptionStatus
    created_ts: int

    def to_dict(self) -> dict:
        return {"subscription_id": self.subscription_id, "user_id": self.user_id,
                "source_id": self.source_id, "service_id": self.service_id,
                "status": self.status.value, "created_ts": self.created_ts}

    @staticmethod
    def from_dict(d: dict) -> "Subscription":
        return Subscription(d["subscription_id"], d["user_id"], d["source_id"],
                            d["service_id"], SubscriptionStatus(d["status"]),
                            d["created_ts"])


class _Store:
    """One journaled meta-store: an id-keyed map with put/delete replay."""

    def __init__(self, path: Path, id_field: str, from_dict):
        self.path = path
        self.id_field = id_field
        self.from_dict = from_dict
        self.items: dict[str, object] = {}
        self._fh = None
        self._replay()
        self._fh = open(path, "a", encoding="utf-8")

    def _replay(self):
        if not self.path.exists():
            return
        with open(self.path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                entry = json.loads(line)
                value = entry["value"]
                key = value[self.id_field]
                if entry["op"] == "put":
                    self.items[key] = self.from_dict(value)
                elif entry["op"] == "delete":
                    self.items.pop(key, None)

    def _write(self, op: str, value: dict):
        self._fh.write(json.dumps({"op": op, "value": value},
                                  sort_keys=True) + "\n")
        self._fh.flush()

    def put(self, entity):
        self.items[getattr(entity, self.id_field)] = entity
        self._write("put", entity.to_dict())

    def delete(self, entity):
        self.items.pop(getattr(entity, self.id_field), None)
        self._write("delete", entity.to_dict())

    def next_id(self) -> str:
        numeric = [int(k) for k in self.items if k.isdigit()]
        return str(max(numeric, default=0) + 1)

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None


class _RecordStore:
    """Append-only result store (IR or anomalies), grouped by service."""

    def __init__(self, path: Path, from_json):
        self.path = path
        self.from_json = from_json
        self.by_service: dict[str, list] = {}
        self._fh = None
        self._replay()
        self._fh = open(path, "a", encoding="utf-8")

    def _replay(self):
        if not self.path.exists():
            return
        with open(self.path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    rec = self.from_json(line)
                    self.by_service.setdefault(rec.service_id, []).append(rec)

    def append(self, rec):
        self.by_service.setdefault(rec.service_id, []).append(rec)
        self._fh.write(rec.to_json() + "\n")
        self._fh.flush()

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None


class Catalog:
    """The meta-store family plus role checks; wires the broker (service
    topic lifecycle) and userspace (user space creation, admin check)."""

    def __init__(self, data_dir: str | Path, broker: Optional[Broker] = None,
                 userspace: Optional[Userspace] = None):
        self._lock = threading.RLock()
        self.broker = broker
        self.userspace = userspace
        root = Path(data_dir) / "catalog"
        root.mkdir(parents=True, exist_ok=True)
        self.users = _Store(root / "users.jsonl", "user_id", User.from_dict)
        self.sources = _Store(root / "sources.jsonl", "source_id", DataSource.from_dict)
        self.algorithms = _Store(root / "algorithms.jsonl", "algorithm_id",
                                 AlgorithmDescriptor.from_dict)
        self.services = _Store(root / "services.jsonl", "service_id",
                               ServiceSpec.from_dict)
        self.subscriptions = _Store(root / "subscriptions.jsonl", "subscription_id",
                                    Subscription.from_dict)
        self.ir = _RecordStore(root / "ir.jsonl", IRRecord.from_json)
        self.anomalies = _RecordStore(root / "anomalies.jsonl", AnomalyRecord.from_json)
        if userspace is not None:
            userspace.admin_check = self.is_admin
        if not self.users.items:
            self._bootstrap_root()

    def _bootstrap_root(self):
        root = User(user_id=self.users.next_id(), name="root", role=Role.ADMIN,
                    created_ts=_now_micros(),
                    log=[{"ts": _now_micros(), "op": "bootstrap", "outcome": "ok"}])
        self.users.put(root)
        if self.userspace is not None and not self.userspace.has_user_space(root.user_id):
            self.userspace.create_user_space(root.user_id)

    def close(self):
        for store in (self.users, self.sources, self.algorithms, self.services,
                      self.subscriptions, self.ir, self.anomalies):
            store.close()

    # -- identity helpers ------------------------------------------------------

    def get_user(self, user_id: str) -> User:
        user = self.users.items.get(user_id)
        if user is None:
            raise UnknownUser(user_id)
        return user

    def find_user_by_name(self, name: str) -> Optional[User]:
        return next((u for u in self.users.items.values() if u.name == name), None)

    def is_admin(self, user_id: str) -> bool:
        user = self.users.items.get(user_id)
        return user is not None and user.role is Role.ADMIN

    def _actor(self, user_id: str) -> User:
        user = self.users.items.get(user_id)
        if user is None:
            raise AccessDenied(f"unknown actor {user_id!r}")
        return user

    def _log_action(self, actor: User, op: str):
        actor.log.append({"ts": _now_micros(), "op": op, "outcome": "ok"})
        self.users.put(actor)

    # -- users -----------------------------------------------------------------

    def register_user(self, actor: str, name: str, role: Role | str) -> User:
        with self._lock:
            acting = self._actor(actor)
            if acting.role is not Role.ADMIN:
                raise AccessDenied("only ADMIN may register users")
            if self.find_user_by_name(name) is not None:
                raise DuplicateName(f"user name {name!r}")
            role = Role(role)
            user = User(user_id=self.users.next_id(), name=name, role=role,
                        created_ts=_now_micros())
            if self.userspace is not None:
                space = self.userspace.create_user_space(user.user_id)
                user.log.append({"ts": _now_micros(), "op": "user_space_created",
                                 "outcome": str(space.root)})
            self.users.put(user)
            self._log_action(acting, "register_user")
            return user

    # -- data sources -------------------------------------------------------------

    def add_data_source(self, actor: str, kind: SourceClass | str,
                        spec: SourceSpec) -> DataSource:
        with self._lock:
            acting = self._actor(actor)
            kind = SourceClass(kind)
            try:
                validate_spec(spec)
            except SiatError as e:
                raise BadSpec(str(e)) from e
            source_id = self.sources.next_id()
            source = DataSource(source_id=source_id, owner=acting.user_id, kind=kind,
                                spec=replace(spec, source_id=source_id))
            self.sources.put(source)
            self._log_action(acting, "add_data_source")
            return source

    def get_source(self, source_id: str) -> DataSource:
        source = self.sources.items.get(source_id)
        if source is None:
            raise UnknownSource(source_id)
        return source

    def source_readable(self, actor: str, source: DataSource) -> bool:
        return (actor == source.owner or actor in source.access
                or self.is_admin(actor))

    def grant_source_access(self, actor: str, source_id: str, user_id: str) -> DataSource:
        with self._lock:
            acting = self._actor(actor)
            source = self.get_source(source_id)
            if acting.user_id != source.owner and acting.role is not Role.ADMIN:
                raise AccessDenied("only the owner or ADMIN may grant access")
            self.get_user(user_id)
            if user_id not in source.access:
                source.access.append(user_id)
                self.sources.put(source)
            self._log_action(acting, "grant_source_access")
            return source

    def delete_source(self, actor: str, source_id: str) -> None:
        with self._lock:
            acting = self._actor(actor)
            source = self.get_source(source_id)
            if acting.user_id != source.owner and acting.role is not Role.ADMIN:
                raise AccessDenied("only the owner or ADMIN may delete a source")
            if any(s.source_id == source_id
                   for s in self.subscriptions.items.values()):
                raise EntityInUse(f"source {source_id} has subscriptions")
            self.sources.delete(source)
            self._log_action(acting, "delete_source")

    def list_sources(self, actor: str) -> list[DataSource]:
        self._actor(actor)
        return [s for s in self.sources.items.values()
                if self.source_readable(actor, s)]

    # -- algorithms ---------------------------------------------------------------

    def register_algorithm(self, actor: str, name: str, version: str,
                           stage_kind: StageKind | str, input_kind: DataKind | str,
                           output_kind: DataKind | str,
                           params_schema: Optional[list[ParamSpec]] = None
                           ) -> AlgorithmDescriptor:
        with self._lock:
            acting = self._actor(actor)
            if acting.role not in (Role.ADMIN, Role.DEVELOPER):
                raise AccessDenied("only ADMIN and DEVELOPER may register algorithms")
            stage_kind = StageKind(stage_kind)
            input_kind = DataKind(input_kind)
            output_kind = DataKind(output_kind)
            check_descriptor_kinds(name, stage_kind, input_kind, output_kind)
            if params_schema is not None:
                validate_schema(name, params_schema)
                schema = params_schema
            else:
                schema = default_schema(name)
            descriptor = AlgorithmDescriptor(
                algorithm_id=self.algorithms.next_id(), owner=acting.user_id,
                name=name, version=version, stage_kind=stage_kind,
                input_kind=input_kind, output_kind=output_kind,
                params_schema=list(schema))
            self.algorithms.put(descriptor)
            self._log_action(acting, "register_algorithm")
            return descriptor

    def get_algorithm(self, algorithm_id: str) -> AlgorithmDescriptor:
        descriptor = self.algorithms.items.get(algorithm_id)
        if descriptor is None:
            raise UnknownAlgorithm(algorithm_id)
        return descriptor

    def list_algorithms(self) -> list[AlgorithmDescriptor]:
        return list(self.algorithms.items.values())

    # -- services -----------------------------------------------------------------

    def create_service(self, actor: str, mode: ServiceMode | str,
                       pipeline: list[tuple[str, dict]], name: str = "") -> ServiceSpec:
        with self._lock:
            acting = self._actor(actor)
            if acting.role not in (Role.ADMIN, Role.DEVELOPER):
                raise AccessDenied("only ADMIN and DEVELOPER may create services")
            mode = ServiceMode(mode)
            if not pipeline:
                raise PipelineTypeError("pipeline must have at least one stage")
            descriptors = [self.get_algorithm(aid) for aid, _ in pipeline]
            if descriptors[0].input_kind not in (DataKind.FRAMES, DataKind.VECTORS):
                raise PipelineTypeError(
                    f"first stage must consume FRAMES or VECTORS,"
                    f" not {descriptors[0].input_kind.value}")
            for prev, nxt in zip(descriptors, descriptors[1:]):
                if prev.output_kind != nxt.input_kind:
                    raise PipelineTypeError(
                        f"stage {prev.name!r} emits {prev.output_kind.value} but"
                        f" {nxt.name!r} consumes {nxt.input_kind.value}")
            for descriptor, (_, params) in zip(descriptors, pipeline):
                # validate bindings now; models are resolved at build time
                make_stage(descriptor, params, model=None)
            service_id = self.services.next_id()
            topics: list[str] = []
            if mode is ServiceMode.RIVA:
                if self.broker is None:
                    raise BadSpec("catalog has no broker; cannot create RIVA services")
                topics = self.broker.provision_service_topics(service_id)
            service = ServiceSpec(service_id=service_id, owner=acting.user_id,
                                  mode=mode,
                                  pipeline=[(aid, dict(p)) for aid, p in pipeline],
                                  topics=topics, name=name)
            self.services.put(service)
            self._log_action(acting, "create_service")
            return service

    def get_service(self, service_id: str) -> ServiceSpec:
        service = self.services.items.get(service_id)
        if service is None:
            raise UnknownService(service_id)
        return service

    def delete_service(self, actor: str, service_id: str) -> None:
        with self._lock:
            acting = self._actor(actor)
            service = self.get_service(service_id)
            if acting.user_id != service.owner and acting.role is not Role.ADMIN:
                raise AccessDenied("only the owner or ADMIN may delete a service")
            if any(s.service_id == service_id
                   for s in self.subscriptions.items.values()):
                raise EntityInUse(f"service {service_id} has subscriptions")
            if service.mode is ServiceMode.RIVA and self.broker is not None:
                self.broker.delete_service_topics(service_id)
            self.services.delete(service)
            self._log_action(acting, "delete_service")

    def discover_services(self, actor: str,
                          filter: Optional[dict] = None) -> list[ServiceSpec]:
        """All services matching the optional mode/name/owner filter."""
        services = list(self.services.items.values())
        if filter:
            if "mode" in filter:
                mode = ServiceMode(filter["mode"])
                services = [s for s in services if s.mode is mode]
            if "name" in filter:
                services = [s for s in services if s.name == filter["name"]]
            if "owner" in filter:
                services = [s for s in services if s.owner == filter["owner"]]
        return services

    # -- subscriptions ----------------------------------------------------------------

    def subscribe(self, actor: str, source_id: str, service_id: str) -> Subscription:
        with self._lock:
            acting = self._actor(actor)
            source = self.get_source(source_id)
            service = self.get_service(service_id)
            if not self.source_readable(actor, source):
                raise AccessDenied(f"source {source_id} is not readable by {actor!r}")
            ok = (source.kind, service.mode) in (
                (SourceClass.STREAM, ServiceMode.RIVA),
                (SourceClass.BATCH, ServiceMode.BIVA),
            )
            if not ok:
                raise KindMismatch(
                    f"{source.kind.value} source cannot feed a {service.mode.value} service")
            sub = Subscription(subscription_id=self.subscriptions.next_id(),
                               user_id=acting.user_id, source_id=source_id,
                               service_id=service_id,
                               status=SubscriptionStatus.ACTIVE,
                               created_ts=_now_micros())
            self.subscriptions.put(sub)
            self._log_action(acting, "subscribe")
            return sub

    def active_subscriptions(self, service_id: str) -> list[Subscription]:
        return [s for s in self.subscriptions.items.values()
                if s.service_id == service_id and s.status is SubscriptionStatus.ACTIVE]

    def _may_query(self, actor: str, service: ServiceSpec) -> bool:
        if self.is_admin(actor) or actor == service.owner:
            return True
        return any(s.user_id == actor
                   for s in self.active_subscriptions(service.service_id))

    # -- results ---------------------------------------------------------------------

    def record_ir(self, record: IRRecord) -> None:
        record.validate()
        with self._lock:
            self.ir.append(record)

    def query_ir(self, actor: str, service_id: str, kind: IRKind | str | None = None,
                 min_seq: Optional[int] = None, max_seq: Optional[int] = None,
                 limit: Optional[int] = None) -> list[IRRecord]:
        self._actor(actor)
        service = self.get_service(service_id)
        if not self._may_query(actor, service):
            raise AccessDenied(f"user {actor!r} may not query service {service_id}")
        records = self.ir.by_service.get(service_id, [])
        if kind is not None:
            kind = IRKind(kind)
            records = [r for r in records if r.kind is kind]
        if min_seq is not None:
            records = [r for r in records if r.batch_seq >= min_seq]
        if max_seq is not None:
            records = [r for r in records if r.batch_seq <= max_seq]
        records = sorted(records, key=lambda r: (r.batch_seq, r.frame_index))
        return records[:limit] if limit is not None else records

    def record_anomaly(self, record: AnomalyRecord) -> None:
        record.validate()
        with self._lock:
            self.anomalies.append(record)

    def query_anomalies(self, actor: str, service_id: str,
                        limit: Optional[int] = None) -> list[AnomalyRecord]:
        self._actor(actor)
        service = self.get_service(service_id)
        if not self._may_query(actor, service):
            raise AccessDenied(f"user {actor!r} may not query service {service_id}")
        records = sorted(self.anomalies.by_service.get(service_id, []),
                         key=lambda r: (r.batch_seq, r.frame_index))
        return records[:limit] if limit is not None else records
