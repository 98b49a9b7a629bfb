"""Core value types: kernels, algorithms, micro-configurations and configurations.

Times are exact :class:`fractions.Fraction` values in microseconds and
workspaces are integer byte counts, so optimizer results can be compared
for exact equality against brute-force oracles.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field, fields
from fractions import Fraction
from typing import Iterable


class OpType(enum.Enum):
    Forward = "Forward"
    BackwardData = "BackwardData"
    BackwardFilter = "BackwardFilter"

    @classmethod
    def parse(cls, text: str) -> "OpType":
        try:
            return cls(text)
        except ValueError:
            raise ValueError(f"unknown op type {text!r}") from None


@dataclass(frozen=True)
class KernelDescriptor:
    """One convolution kernel instance.

    ``kernel_h`` is the horizontal filter extent (U, filter width) and
    ``kernel_v`` the vertical one (V, filter height).  ``layer_name`` is a
    label only; it does not take part in equality or hashing, so replicated
    layers share cached costs.
    """

    op_type: OpType
    batch: int
    in_channels: int
    height: int
    width: int
    out_channels: int
    kernel_h: int
    kernel_v: int
    pad_h: int = 0
    pad_w: int = 0
    stride_h: int = 1
    stride_w: int = 1
    layer_name: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        if not isinstance(self.op_type, OpType):
            raise TypeError("op_type must be an OpType")
        for f in fields(self):
            if f.name in ("op_type", "layer_name"):
                continue
            value = getattr(self, f.name)
            if not isinstance(value, int) or isinstance(value, bool):
                raise TypeError(f"{f.name} must be an int, got {value!r}")
            lower = 0 if f.name.startswith("pad") else 1
            if value < lower:
                raise ValueError(f"{f.name} must be >= {lower}, got {value}")
        if self.out_height < 1 or self.out_width < 1:
            raise ValueError(
                f"filter {self.kernel_v}x{self.kernel_h} does not fit input "
                f"{self.height}x{self.width} with padding {self.pad_h},{self.pad_w}"
            )

    @property
    def out_height(self) -> int:
        return (self.height + 2 * self.pad_h - self.kernel_v) // self.stride_h + 1

    @property
    def out_width(self) -> int:
        return (self.width + 2 * self.pad_w - self.kernel_h) // self.stride_w + 1

    def field_tuple(self) -> tuple:
        return (
            self.op_type.value,
            self.batch,
            self.in_channels,
            self.height,
            self.width,
            self.out_channels,
            self.kernel_h,
            self.kernel_v,
            self.pad_h,
            self.pad_w,
            self.stride_h,
            self.stride_w,
        )

    def canonical_hash(self) -> int:
        """Stable 64-bit hash of the field tuple in declaration order.

        The tuple (without ``layer_name``) is rendered as comma-separated
        decimal text, UTF-8 encoded, and hashed with BLAKE2b at an 8-byte
        digest, read big-endian.
        """
        text = ",".join(str(v) for v in self.field_tuple())
        digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "big")

    def with_op(self, op_type: OpType) -> "KernelDescriptor":
        from dataclasses import replace

        return replace(self, op_type=op_type)

    def describe(self) -> str:
        return (
            f"{self.layer_name or '<anon>'}:{self.op_type.value}"
            f"(N={self.batch},C={self.in_channels},H={self.height},W={self.width},"
            f"K={self.out_channels},V={self.kernel_v},U={self.kernel_h})"
        )


def format_hash(value: int) -> str:
    return f"{value:016x}"


@dataclass(frozen=True, order=True)
class AlgorithmId:
    id: int
    name: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        if self.id < 0:
            raise ValueError("algorithm id must be non-negative")

    def __str__(self) -> str:
        return self.name or f"alg{self.id}"


@dataclass(frozen=True)
class MicroConfiguration:
    """An (algorithm, micro-batch size) pair with its cost."""

    algorithm: AlgorithmId
    micro_batch: int
    time: Fraction
    workspace: int

    def __post_init__(self) -> None:
        if self.micro_batch < 1:
            raise ValueError("micro_batch must be >= 1")
        if self.workspace < 0 or self.time < 0:
            raise ValueError("time and workspace must be non-negative")
        object.__setattr__(self, "time", Fraction(self.time))

    def sort_key(self) -> tuple:
        return (-self.micro_batch, self.algorithm.id, self.time, self.workspace)


class Configuration:
    """An ordered list of micro-configurations covering a batch.

    The list is kept in canonical order (micro-batch descending, then
    algorithm id ascending), so two configurations with the same multiset of
    micros compare equal.
    """

    __slots__ = ("micros", "covered_batch", "_time", "_workspace")

    def __init__(self, micros: Iterable[MicroConfiguration]):
        ordered = tuple(sorted(micros, key=MicroConfiguration.sort_key))
        if not ordered:
            raise ValueError("a configuration needs at least one micro-configuration")
        self.micros = ordered
        self.covered_batch = sum(m.micro_batch for m in ordered)
        self._time = sum((m.time for m in ordered), Fraction(0))
        self._workspace = max(m.workspace for m in ordered)

    @property
    def time(self) -> Fraction:
        return self._time

    @property
    def workspace(self) -> int:
        return self._workspace

    def key(self) -> tuple:
        """Canonical comparison key; lexicographic order on this is the tie-break."""
        return tuple((-m.micro_batch, m.algorithm.id) for m in self.micros)

    def __len__(self) -> int:
        return len(self.micros)

    def __iter__(self):
        return iter(self.micros)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Configuration):
            return NotImplemented
        return self.micros == other.micros

    def __hash__(self) -> int:
        return hash(self.micros)

    def __add__(self, other: "Configuration") -> "Configuration":
        return concat(self, other)

    def __repr__(self) -> str:
        return "Configuration(" + self.compact() + ")"

    def compact(self) -> str:
        """Run-length text form, e.g. ``FFT@32x2+GEMM@64``."""
        parts: list[str] = []
        i = 0
        while i < len(self.micros):
            m = self.micros[i]
            j = i
            while (
                j < len(self.micros)
                and self.micros[j].micro_batch == m.micro_batch
                and self.micros[j].algorithm == m.algorithm
            ):
                j += 1
            run = j - i
            parts.append(f"{m.algorithm}@{m.micro_batch}" + (f"x{run}" if run > 1 else ""))
            i = j
        return "+".join(parts)


def config_time(c: Configuration) -> Fraction:
    """Total time: micro-batches run one after another."""
    return c.time


def config_workspace(c: Configuration) -> int:
    """Peak workspace: micro-batches of one kernel reuse a single slot."""
    return c.workspace


def concat(c1: Configuration, c2: Configuration) -> Configuration:
    return Configuration(c1.micros + c2.micros)
