"""Optimization reports: a text table for people and a stable JSON document
for scripts.

Machine report schema (``mbsplit.report/1``), keys in this order::

    schema, mode, policy, network, batch_size, workspace_limit_bytes,
    kernels: [ {layer, op, kernel_hash, configuration: [{algorithm,
               algorithm_id, micro_batch, count}], compact, time_us,
               time_us_exact, workspace_bytes, baseline_compact,
               baseline_time_us, baseline_workspace_bytes} ],
    totals: {time_us, time_us_exact, workspace_bytes, baseline_time_us,
             baseline_workspace_bytes},
    speedup,
    workspace_division: [ {layer, op, workspace_bytes, share} ]   (wd only)
    notes

Times are floats plus exact ``p/q`` strings.  Wall-clock time is text-only
so machine reports stay byte-identical across runs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .costs import format_bytes
from .domain import Configuration, KernelDescriptor, format_hash

SCHEMA = "mbsplit.report/1"

MODEL_NOTE = ("times are sums of modeled kernel costs for one pass over each kernel, "
              "not measured repetitions")


@dataclass
class KernelRow:
    kernel: KernelDescriptor
    config: Configuration
    baseline: Optional[Configuration]

    @property
    def time(self) -> Fraction:
        return self.config.time

    @property
    def workspace(self) -> int:
        return self.config.workspace


@dataclass
class OptimizationReport:
    mode: str
    policy: str
    network: str
    batch_size: int
    workspace_limit: int
    rows: list[KernelRow]
    wall_time: float = 0.0
    notes: list[str] = field(default_factory=lambda: [MODEL_NOTE])

    @property
    def total_time(self) -> Fraction:
        return sum((r.time for r in self.rows), Fraction(0))

    @property
    def total_workspace(self) -> int:
        # WR gives each kernel its own slot, WD carves one budget: both sum.
        return sum(r.workspace for r in self.rows)

    @property
    def baseline_time(self) -> Optional[Fraction]:
        if any(r.baseline is None for r in self.rows):
            return None
        return sum((r.baseline.time for r in self.rows), Fraction(0))

    @property
    def baseline_workspace(self) -> Optional[int]:
        if any(r.baseline is None for r in self.rows):
            return None
        return sum(r.baseline.workspace for r in self.rows)

    @property
    def speedup(self) -> Optional[Fraction]:
        base = self.baseline_time
        if base is None or self.total_time == 0:
            return None
        return base / self.total_time

    def check(self) -> None:
        assert self.total_time == sum((r.time for r in self.rows), Fraction(0))
        if self.mode == "wd":
            assert self.total_workspace <= self.workspace_limit
        else:
            assert all(r.workspace <= self.workspace_limit for r in self.rows)
        for r in self.rows:
            assert r.config.covered_batch == r.kernel.batch

    # -- rendering ----------------------------------------------------------

    def to_dict(self) -> dict:
        def t(v):
            return None if v is None else float(v)

        def exact(v):
            return None if v is None else str(v)

        kernels = []
        for r in self.rows:
            kernels.append({
                "layer": r.kernel.layer_name,
                "op": r.kernel.op_type.value,
                "kernel_hash": format_hash(r.kernel.canonical_hash()),
                "configuration": _runs(r.config),
                "compact": r.config.compact(),
                "time_us": t(r.time),
                "time_us_exact": exact(r.time),
                "workspace_bytes": r.workspace,
                "baseline_compact": None if r.baseline is None else r.baseline.compact(),
                "baseline_time_us": None if r.baseline is None else t(r.baseline.time),
                "baseline_workspace_bytes": None if r.baseline is None else r.baseline.workspace,
            })
        doc = {
            "schema": SCHEMA,
            "mode": self.mode,
            "policy": self.policy,
            "network": self.network,
            "batch_size": self.batch_size,
            "workspace_limit_bytes": self.workspace_limit,
            "kernels": kernels,
            "totals": {
                "time_us": t(self.total_time),
                "time_us_exact": exact(self.total_time),
                "workspace_bytes": self.total_workspace,
                "baseline_time_us": t(self.baseline_time),
                "baseline_workspace_bytes": self.baseline_workspace,
            },
            "speedup": t(self.speedup),
        }
        if self.mode == "wd":
            doc["workspace_division"] = [
                {
                    "layer": r.kernel.layer_name,
                    "op": r.kernel.op_type.value,
                    "workspace_bytes": r.workspace,
                    "share": float(Fraction(r.workspace, self.workspace_limit)) if self.workspace_limit else 0.0,
                }
                for r in self.rows
            ]
        doc["notes"] = list(self.notes)
        return doc

    def machine(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def text(self) -> str:
        limit_kind = "per kernel" if self.mode == "wr" else "total"
        lines = [
            f"network {self.network}  mode {self.mode}  policy {self.policy}  "
            f"batch {self.batch_size}  workspace {format_bytes(self.workspace_limit)} ({limit_kind})",
            "",
        ]
        header = ("layer", "op", "configuration", "time us", "workspace", "baseline us")
        table = [header]
        for r in self.rows:
            table.append((
                r.kernel.layer_name,
                r.kernel.op_type.value,
                r.config.compact(),
                f"{float(r.time):.1f}",
                format_bytes(r.workspace),
                "-" if r.baseline is None else f"{float(r.baseline.time):.1f}",
            ))
        widths = [max(len(row[i]) for row in table) for i in range(len(header))]
        for row in table:
            lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        lines.append("")
        lines.append(f"total time       {float(self.total_time):.1f} us")
        lines.append(f"total workspace  {format_bytes(self.total_workspace)}")
        if self.baseline_time is not None:
            lines.append(f"undivided        {float(self.baseline_time):.1f} us")
            lines.append(f"speedup          {float(self.speedup):.3f}x")
        if self.mode == "wd" and self.workspace_limit:
            lines.append("")
            lines.append("workspace division")
            for r in sorted(self.rows, key=lambda r: -r.workspace):
                if r.workspace:
                    share = 100 * r.workspace / self.workspace_limit
                    lines.append(f"  {r.kernel.layer_name}:{r.kernel.op_type.value:<15} "
                                 f"{format_bytes(r.workspace):>10}  {share:5.1f}%")
        lines.append(f"optimizer wall time {self.wall_time:.3f} s")
        lines.extend(f"note: {n}" for n in self.notes)
        return "\n".join(lines) + "\n"


def _runs(c: Configuration) -> list[dict]:
    out: list[dict] = []
    for m in c.micros:
        if out and out[-1]["micro_batch"] == m.micro_batch and out[-1]["algorithm_id"] == m.algorithm.id:
            out[-1]["count"] += 1
        else:
            out.append({"algorithm": str(m.algorithm), "algorithm_id": m.algorithm.id,
                        "micro_batch": m.micro_batch, "count": 1})
    return out
