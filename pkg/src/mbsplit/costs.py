"""Kernel cost sources: analytic models, a persistent cost database, and the
per-micro-batch queries the optimizers are built on.
"""

from __future__ import annotations

import configparser
import csv
import enum
import io
import math
import os
import re
import tempfile
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Optional

from .domain import (
    AlgorithmId,
    KernelDescriptor,
    MicroConfiguration,
    OpType,
    format_hash,
)


class BatchSizePolicy(enum.Enum):
    All = "all"
    PowerOfTwo = "powerOfTwo"
    Undivided = "undivided"

    @classmethod
    def parse(cls, text: str) -> "BatchSizePolicy":
        for p in cls:
            if text == p.value or text.lower() == p.value.lower() or text == p.name:
                return p
        raise ValueError(f"unknown batch size policy {text!r}")


def enumerate_micro_batches(policy: BatchSizePolicy, B: int) -> list[int]:
    """Micro-batch sizes that get benchmarked for a mini-batch of ``B``.

    ``PowerOfTwo`` also admits ``B`` itself when it is not a power of two,
    so every policy can cover the full mini-batch.
    """
    if B < 1:
        raise ValueError("mini-batch size must be >= 1")
    if policy is BatchSizePolicy.All:
        return list(range(1, B + 1))
    if policy is BatchSizePolicy.Undivided:
        return [B]
    sizes = []
    b = 1
    while b <= B:
        sizes.append(b)
        b *= 2
    if sizes[-1] != B:
        sizes.append(B)
    return sizes


_UNITS = {"": 1, "b": 1, "kib": 1 << 10, "mib": 1 << 20, "gib": 1 << 30,
          "kb": 1000, "mb": 10**6, "gb": 10**9}


def parse_bytes(text: str) -> int:
    """Parse ``"4096"``, ``"64MiB"``, ``"1.5 GiB"`` into a byte count."""
    m = re.fullmatch(r"\s*([0-9]+(?:\.[0-9]+)?)\s*([A-Za-z]*)\s*", str(text))
    if not m or m.group(2).lower() not in _UNITS:
        raise ValueError(f"invalid byte size {text!r}")
    value = Fraction(m.group(1)) * _UNITS[m.group(2).lower()]
    if value.denominator != 1:
        raise ValueError(f"byte size {text!r} is not a whole number of bytes")
    return int(value)


def format_bytes(n: int) -> str:
    for unit, size in (("GiB", 1 << 30), ("MiB", 1 << 20), ("KiB", 1 << 10)):
        if n >= size:
            return f"{n / size:.1f} {unit}"
    return f"{n} B"


@dataclass(frozen=True)
class AlgorithmParams:
    """Analytic cost parameters of one algorithm.

    Time is ``time_setup + time_per_sample * ceil(b/quantum)*quantum * time_scale``
    and workspace is ``ws_fixed + ws_per_sample * b * ws_scale``.
    ``unit_stride_only`` and ``max_filter`` gate which kernel shapes the
    algorithm supports at all.
    """

    algorithm: AlgorithmId
    time_per_sample: Fraction
    time_setup: Fraction = Fraction(0)
    ws_per_sample: int = 0
    ws_fixed: int = 0
    min_batch: int = 1
    quantum: int = 1
    unit_stride_only: bool = False
    max_filter: Optional[int] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "time_per_sample", Fraction(self.time_per_sample))
        object.__setattr__(self, "time_setup", Fraction(self.time_setup))
        if self.time_per_sample <= 0:
            raise ValueError(f"{self.algorithm}: time_per_sample must be positive")
        if self.time_setup < 0 or self.ws_per_sample < 0 or self.ws_fixed < 0:
            raise ValueError(f"{self.algorithm}: cost parameters must be non-negative")
        if self.min_batch < 1 or self.quantum < 1:
            raise ValueError(f"{self.algorithm}: min_batch and quantum must be >= 1")

    def supports(self, k: KernelDescriptor) -> bool:
        if self.unit_stride_only and (k.stride_h != 1 or k.stride_w != 1):
            return False
        if self.max_filter is not None and max(k.kernel_h, k.kernel_v) > self.max_filter:
            return False
        return True


def time_scale(k: KernelDescriptor) -> Fraction:
    """Per-sample work in millions of multiply-accumulates."""
    macs = (k.in_channels * k.out_channels * k.out_height * k.out_width
            * k.kernel_h * k.kernel_v)
    return Fraction(macs, 10**6)


def ws_scale(k: KernelDescriptor) -> int:
    """Per-sample input tensor elements."""
    return k.in_channels * k.height * k.width


@dataclass
class CostModel:
    """A set of algorithm parameter records plus named budget tiers.

    With ``shape_scaling`` off every kernel has unit scale factors, which is
    convenient for hand-checkable models.
    """

    algorithms: dict[int, AlgorithmParams]
    shape_scaling: bool = True
    tiers: dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        names = [p.algorithm.name for p in self.algorithms.values()]
        if len(set(names)) != len(names):
            raise ValueError("algorithm names must be unique")
        for key, p in self.algorithms.items():
            if key != p.algorithm.id:
                raise ValueError("algorithm map keys must match ids")

    @classmethod
    def from_params(cls, params: Iterable[AlgorithmParams], **kwargs) -> "CostModel":
        return cls({p.algorithm.id: p for p in params}, **kwargs)

    @property
    def catalog(self) -> list[AlgorithmId]:
        return [self.algorithms[i].algorithm for i in sorted(self.algorithms)]

    def params(self, a: AlgorithmId | int) -> AlgorithmParams:
        key = a.id if isinstance(a, AlgorithmId) else a
        try:
            return self.algorithms[key]
        except KeyError:
            raise KeyError(f"unknown algorithm id {key}") from None

    # -- model file -------------------------------------------------------

    @classmethod
    def loads(cls, text: str, source: str = "<string>") -> "CostModel":
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read_string(text, source=source)
        except configparser.Error as exc:
            raise ValueError(f"{source}: {exc}") from None
        shape_scaling = True
        tiers: dict[str, int] = {}
        params = []
        for section in parser.sections():
            body = parser[section]
            try:
                if section == "model":
                    shape_scaling = body.getboolean("shape_scaling", fallback=True)
                elif section == "tiers":
                    tiers = {name: parse_bytes(value) for name, value in body.items()}
                elif section.startswith("algorithm."):
                    name = section[len("algorithm."):]
                    max_filter = body.get("max_filter", fallback="")
                    params.append(AlgorithmParams(
                        algorithm=AlgorithmId(body.getint("id"), name),
                        time_per_sample=Fraction(body["time_per_sample"]),
                        time_setup=Fraction(body.get("time_setup", "0")),
                        ws_per_sample=parse_bytes(body.get("ws_per_sample", "0")),
                        ws_fixed=parse_bytes(body.get("ws_fixed", "0")),
                        min_batch=body.getint("min_batch", fallback=1),
                        quantum=body.getint("quantum", fallback=1),
                        unit_stride_only=body.getboolean("unit_stride_only", fallback=False),
                        max_filter=int(max_filter) if max_filter else None,
                    ))
                else:
                    raise ValueError(f"unknown section [{section}]")
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{source}: section [{section}]: {exc}") from None
        if not params:
            raise ValueError(f"{source}: no [algorithm.*] sections")
        return cls.from_params(params, shape_scaling=shape_scaling, tiers=tiers)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "CostModel":
        return cls.loads(Path(path).read_text(encoding="utf-8"), source=str(path))

    @classmethod
    def default(cls) -> "CostModel":
        text = resources.files("mbsplit.data").joinpath("default_model.ini").read_text("utf-8")
        return cls.loads(text, source="default_model.ini")

    def dumps(self) -> str:
        out = io.StringIO()
        out.write("[model]\n")
        out.write(f"shape_scaling = {'true' if self.shape_scaling else 'false'}\n")
        if self.tiers:
            out.write("\n[tiers]\n")
            for name, value in self.tiers.items():
                out.write(f"{name} = {value}\n")
        for p in (self.algorithms[i] for i in sorted(self.algorithms)):
            out.write(f"\n[algorithm.{p.algorithm.name}]\n")
            out.write(f"id = {p.algorithm.id}\n")
            out.write(f"time_per_sample = {p.time_per_sample}\n")
            out.write(f"time_setup = {p.time_setup}\n")
            out.write(f"ws_per_sample = {p.ws_per_sample}\n")
            out.write(f"ws_fixed = {p.ws_fixed}\n")
            out.write(f"min_batch = {p.min_batch}\n")
            out.write(f"quantum = {p.quantum}\n")
            if p.unit_stride_only:
                out.write("unit_stride_only = true\n")
            if p.max_filter is not None:
                out.write(f"max_filter = {p.max_filter}\n")
        return out.getvalue()


@dataclass(frozen=True)
class CostRecord:
    kernel_hash: int
    op_type: OpType
    algorithm: AlgorithmId
    micro_batch: int
    time: Optional[Fraction]
    workspace: Optional[int]
    feasible: bool

    def __post_init__(self) -> None:
        if self.micro_batch < 1:
            raise ValueError("micro_batch must be >= 1")
        if self.feasible:
            if self.time is None or self.workspace is None:
                raise ValueError("feasible records need time and workspace")
            if self.time < 0 or self.workspace < 0:
                raise ValueError("time and workspace must be non-negative")
        else:
            object.__setattr__(self, "time", None)
            object.__setattr__(self, "workspace", None)

    @property
    def key(self) -> tuple:
        return (self.kernel_hash, self.op_type, self.algorithm.id, self.micro_batch)

    def micro(self) -> MicroConfiguration:
        assert self.feasible
        return MicroConfiguration(self.algorithm, self.micro_batch, self.time, self.workspace)


def query_cost(model: CostModel, k: KernelDescriptor, a: AlgorithmId | int, b: int) -> CostRecord:
    """Evaluate the analytic model for one (kernel, algorithm, micro-batch)."""
    if b < 1:
        raise ValueError("micro-batch size must be >= 1")
    p = model.params(a)
    base = dict(kernel_hash=k.canonical_hash(), op_type=k.op_type,
                algorithm=p.algorithm, micro_batch=b)
    if b < p.min_batch or not p.supports(k):
        return CostRecord(time=None, workspace=None, feasible=False, **base)
    if model.shape_scaling:
        tscale, wscale = time_scale(k), ws_scale(k)
    else:
        tscale, wscale = Fraction(1), 1
    charged = math.ceil(b / p.quantum) * p.quantum
    t = p.time_setup + p.time_per_sample * charged * tscale
    ws = p.ws_fixed + p.ws_per_sample * b * wscale
    return CostRecord(time=t, workspace=ws, feasible=True, **base)


class CostFileError(ValueError):
    def __init__(self, path: str, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


CSV_HEADER = ["kernel_hash", "op_type", "algorithm", "micro_batch",
              "time_us", "workspace_bytes", "feasible"]


class CostDatabase:
    """In-memory cost cache with an optional CSV backing file.

    Reads and writes are guarded by a lock; ``flush`` writes a temporary file
    next to the target and renames it into place.
    """

    def __init__(self, path: str | os.PathLike | None = None):
        self.path = Path(path) if path is not None else None
        self._records: dict[tuple, CostRecord] = {}
        self._names: dict[int, str] = {}
        self._lock = threading.RLock()

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[CostRecord]:
        with self._lock:
            return iter(sorted(self._records.values(), key=_record_order))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CostDatabase):
            return NotImplemented
        return self._records == other._records

    def get(self, key: tuple) -> Optional[CostRecord]:
        with self._lock:
            return self._records.get(key)

    def put(self, record: CostRecord) -> None:
        with self._lock:
            self._records[record.key] = record

    def algorithms(self) -> list[AlgorithmId]:
        with self._lock:
            ids = sorted({r.algorithm.id for r in self._records.values()})
        return [AlgorithmId(i, self._names.get(i, f"alg{i}")) for i in ids]

    def name_algorithms(self, catalog: Iterable[AlgorithmId]) -> None:
        """Attach display names to the bare ids read from a file."""
        with self._lock:
            for a in catalog:
                self._names[a.id] = a.name
            for key, r in list(self._records.items()):
                if r.algorithm.id in self._names and not r.algorithm.name:
                    self._records[key] = CostRecord(
                        r.kernel_hash, r.op_type,
                        AlgorithmId(r.algorithm.id, self._names[r.algorithm.id]),
                        r.micro_batch, r.time, r.workspace, r.feasible)

    def dumps(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in self:
            writer.writerow([
                format_hash(r.kernel_hash), r.op_type.value, r.algorithm.id, r.micro_batch,
                "" if r.time is None else str(r.time),
                "" if r.workspace is None else r.workspace,
                "1" if r.feasible else "0",
            ])
        return out.getvalue()

    def flush(self, path: str | os.PathLike | None = None) -> Path:
        target = Path(path) if path is not None else self.path
        if target is None:
            raise ValueError("cost database has no backing file")
        with self._lock:
            text = self.dumps()
        target.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=target.name + ".", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            os.replace(tmp, target)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return target

    @classmethod
    def loads(cls, text: str, source: str = "<string>") -> "CostDatabase":
        db = cls()
        lines = text.splitlines()
        if not lines:
            raise CostFileError(source, 1, "empty cost file (missing header)")
        for lineno, row in enumerate(csv.reader(lines), start=1):
            if lineno == 1:
                if row != CSV_HEADER:
                    raise CostFileError(source, 1, f"bad header {','.join(row)!r}")
                continue
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise CostFileError(source, lineno, f"expected {len(CSV_HEADER)} fields, got {len(row)}")
            try:
                khash, op, alg, mb, t, ws, feasible = row
                if not re.fullmatch(r"[0-9a-fA-F]{16}", khash):
                    raise ValueError(f"kernel_hash {khash!r} is not 16 hex digits")
                if feasible not in ("0", "1"):
                    raise ValueError(f"feasible must be 0 or 1, got {feasible!r}")
                ok = feasible == "1"
                record = CostRecord(
                    kernel_hash=int(khash, 16),
                    op_type=OpType.parse(op),
                    algorithm=AlgorithmId(int(alg)),
                    micro_batch=int(mb),
                    time=Fraction(t) if ok else None,
                    workspace=int(ws) if ok else None,
                    feasible=ok,
                )
            except (ValueError, ZeroDivisionError) as exc:
                raise CostFileError(source, lineno, str(exc)) from None
            db.put(record)
        return db

    @classmethod
    def load(cls, path: str | os.PathLike) -> "CostDatabase":
        p = Path(path)
        db = cls.loads(p.read_text(encoding="utf-8"), source=str(p))
        db.path = p
        return db

    @classmethod
    def open(cls, path: str | os.PathLike) -> "CostDatabase":
        """Load ``path`` if it exists, else start an empty database bound to it."""
        p = Path(path)
        return cls.load(p) if p.exists() else cls(p)


def _record_order(r: CostRecord) -> tuple:
    return (r.kernel_hash, r.op_type.value, r.algorithm.id, r.micro_batch)


# Functional aliases over CostDatabase.
def cache_get(db: CostDatabase, key: tuple) -> Optional[CostRecord]:
    return db.get(key)


def cache_put(db: CostDatabase, record: CostRecord) -> None:
    db.put(record)


def cache_flush(db: CostDatabase, path: str | os.PathLike | None = None) -> Path:
    return db.flush(path)


def cache_load(path: str | os.PathLike) -> CostDatabase:
    return CostDatabase.load(path)


class MissingCostError(LookupError):
    pass


class CostProvider:
    """Answers cost queries from a database, falling back to an analytic model.

    Either source may be absent; with neither a model nor a cached record the
    query raises :class:`MissingCostError`.
    """

    def __init__(self, model: CostModel | None = None, db: CostDatabase | None = None,
                 catalog: Iterable[AlgorithmId] | None = None):
        if model is None and db is None:
            raise ValueError("a cost provider needs a model or a cost database")
        self.model = model
        self.db = db
        if catalog is not None:
            self.catalog = sorted(catalog)
        elif model is not None:
            self.catalog = model.catalog
        else:
            self.catalog = db.algorithms()
        if db is not None:
            db.name_algorithms(self.catalog)
        self._by_id = {a.id: a for a in self.catalog}

    def cost(self, k: KernelDescriptor, a: AlgorithmId | int, b: int) -> CostRecord:
        aid = a.id if isinstance(a, AlgorithmId) else a
        if aid not in self._by_id:
            raise KeyError(f"unknown algorithm id {aid}")
        if self.db is not None:
            hit = self.db.get((k.canonical_hash(), k.op_type, aid, b))
            if hit is not None:
                return hit
        if self.model is None:
            raise MissingCostError(
                f"no cost for {k.describe()} algorithm {aid} micro-batch {b}")
        record = query_cost(self.model, k, aid, b)
        if self.db is not None:
            self.db.put(record)
        return record

    def candidates(self, k: KernelDescriptor, b: int, M: int) -> list[MicroConfiguration]:
        """Every algorithm that runs micro-batch ``b`` within ``M`` bytes."""
        out = []
        for a in self.catalog:
            r = self.cost(k, a, b)
            if r.feasible and r.workspace <= M:
                out.append(r.micro())
        return out

    def fastest_micro_config(self, k: KernelDescriptor, b: int, M: int) -> Optional[MicroConfiguration]:
        """Fastest algorithm for micro-batch ``b`` fitting ``M``; ``None`` if none fits.

        Ties go to the smaller workspace, then the smaller algorithm id.
        """
        best = None
        for m in self.candidates(k, b, M):
            if best is None or (m.time, m.workspace, m.algorithm.id) < (best.time, best.workspace, best.algorithm.id):
                best = m
        return best

    def micro_config_set(self, k: KernelDescriptor, b: int, M: int) -> list[MicroConfiguration]:
        """Undominated (time, workspace) micro-configurations for ``b``, fastest first."""
        ordered = sorted(self.candidates(k, b, M),
                         key=lambda m: (m.workspace, m.time, m.algorithm.id))
        front: list[MicroConfiguration] = []
        for m in ordered:
            if not front or m.time < front[-1].time:
                front.append(m)
        front.reverse()
        return front


def fastest_micro_config(provider: CostProvider, k: KernelDescriptor, b: int, M: int):
    return provider.fastest_micro_config(k, b, M)


def micro_config_set(provider: CostProvider, k: KernelDescriptor, b: int, M: int):
    return provider.micro_config_set(k, b, M)
