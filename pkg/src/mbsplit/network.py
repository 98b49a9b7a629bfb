"""Network description files.

Line-oriented text; ``#`` starts a comment::

    mini_batch 256
    layer conv2 C=96 H=27 W=27 K=256 V=5 U=5 pad=2 stride=1

``pad``/``stride`` set both directions; ``pad_h``, ``pad_w``, ``stride_h``
and ``stride_w`` set one.  Each layer expands to a Forward, BackwardData and
BackwardFilter kernel.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

from .domain import KernelDescriptor, OpType

FIXTURES = {"alexnet": "alexnet.net", "resnet18": "resnet18.net"}

_REQUIRED = ("C", "H", "W", "K", "V", "U")
_OPTIONAL = ("pad", "pad_h", "pad_w", "stride", "stride_h", "stride_w")


class NetworkParseError(ValueError):
    def __init__(self, source: str, line: int, column: int, message: str):
        super().__init__(f"{source}:{line}:{column}: {message}")
        self.source = source
        self.line = line
        self.column = column


@dataclass(frozen=True)
class LayerSpec:
    name: str
    C: int
    H: int
    W: int
    K: int
    V: int
    U: int
    pad_h: int = 0
    pad_w: int = 0
    stride_h: int = 1
    stride_w: int = 1

    def kernel(self, op: OpType, batch: int) -> KernelDescriptor:
        return KernelDescriptor(
            op_type=op, batch=batch, in_channels=self.C, height=self.H, width=self.W,
            out_channels=self.K, kernel_h=self.U, kernel_v=self.V,
            pad_h=self.pad_h, pad_w=self.pad_w, stride_h=self.stride_h, stride_w=self.stride_w,
            layer_name=self.name,
        )


@dataclass
class NetworkDescription:
    layers: list[LayerSpec]
    mini_batch: int
    name: str = ""

    def kernels(self, batch: Optional[int] = None) -> list[KernelDescriptor]:
        B = self.mini_batch if batch is None else batch
        return [layer.kernel(op, B) for layer in self.layers for op in OpType]


def loads_network(text: str, source: str = "<string>") -> NetworkDescription:
    layers: list[LayerSpec] = []
    names: dict[str, int] = {}
    mini_batch = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        tokens = [(m.start() + 1, m.group()) for m in re.finditer(r"\S+", line)]
        if not tokens:
            continue
        col, head = tokens[0]
        if head == "mini_batch":
            if len(tokens) != 2:
                raise NetworkParseError(source, lineno, col, "expected 'mini_batch <N>'")
            mini_batch = _positive(source, lineno, *tokens[1], "mini_batch")
        elif head == "layer":
            if len(tokens) < 2:
                raise NetworkParseError(source, lineno, col, "layer needs a name")
            ncol, name = tokens[1]
            if "=" in name:
                raise NetworkParseError(source, lineno, ncol, "layer needs a name before its fields")
            if name in names:
                raise NetworkParseError(
                    source, lineno, ncol, f"duplicate layer name {name!r} (first on line {names[name]})")
            fields: dict[str, int] = {}
            for fcol, tok in tokens[2:]:
                key, sep, value = tok.partition("=")
                if not sep or key not in _REQUIRED + _OPTIONAL:
                    raise NetworkParseError(source, lineno, fcol, f"unexpected token {tok!r}")
                if key in fields:
                    raise NetworkParseError(source, lineno, fcol, f"field {key} given twice")
                vcol = fcol + len(key) + 1
                if key.startswith("pad"):
                    fields[key] = _non_negative(source, lineno, vcol, value, key)
                else:
                    fields[key] = _positive(source, lineno, vcol, value, key)
            missing = [k for k in _REQUIRED if k not in fields]
            if missing:
                raise NetworkParseError(source, lineno, col, f"layer {name!r} missing {', '.join(missing)}")
            spec = LayerSpec(
                name=name, **{k: fields[k] for k in _REQUIRED},
                pad_h=fields.get("pad_h", fields.get("pad", 0)),
                pad_w=fields.get("pad_w", fields.get("pad", 0)),
                stride_h=fields.get("stride_h", fields.get("stride", 1)),
                stride_w=fields.get("stride_w", fields.get("stride", 1)),
            )
            try:
                spec.kernel(OpType.Forward, 1)
            except ValueError as exc:
                raise NetworkParseError(source, lineno, col, str(exc)) from None
            names[name] = lineno
            layers.append(spec)
        else:
            raise NetworkParseError(source, lineno, col, f"unknown directive {head!r}")
    if not layers:
        raise NetworkParseError(source, 1, 1, "network has no layers")
    if mini_batch is None:
        raise NetworkParseError(source, 1, 1, "missing 'mini_batch' line")
    return NetworkDescription(layers, mini_batch, name=Path(source).stem)


def _positive(source, lineno, col, value, key) -> int:
    if not re.fullmatch(r"[0-9]+", value) or int(value) < 1:
        raise NetworkParseError(source, lineno, col, f"{key} must be a positive integer, got {value!r}")
    return int(value)


def _non_negative(source, lineno, col, value, key) -> int:
    if not re.fullmatch(r"[0-9]+", value):
        raise NetworkParseError(source, lineno, col, f"{key} must be a non-negative integer, got {value!r}")
    return int(value)


def load_network(path: str | os.PathLike) -> NetworkDescription:
    """Load a network file, or a bundled fixture by name (``alexnet``, ``resnet18``)."""
    if str(path) in FIXTURES:
        name = FIXTURES[str(path)]
        text = resources.files("mbsplit.data").joinpath(name).read_text("utf-8")
        return loads_network(text, source=name)
    p = Path(path)
    return loads_network(p.read_text(encoding="utf-8"), source=str(p))
