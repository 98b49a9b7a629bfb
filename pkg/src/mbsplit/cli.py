"""Command line entry point.

Every ``run`` flag can also come from an environment variable named
``MBSPLIT_`` plus the upper-cased flag name with dashes as underscores
(``--batch-policy`` -> ``MBSPLIT_BATCH_POLICY``).  Flags win over the
environment.

Exit codes: 0 success, 2 usage or input error, 3 infeasible, 4 oracle
mismatch.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Optional, Sequence

import numpy as np

from .costs import BatchSizePolicy, CostDatabase, CostFileError, CostModel, CostProvider
from .domain import AlgorithmId, Configuration, MicroConfiguration, OpType
from .harness import resolve_limit, run_optimization
from .network import NetworkParseError, load_network
from .oracle import OracleBoundsError, check_bounds, wd_trial, wr_trial
from .refconv import conv_backward_data, conv_backward_filter, conv_forward, execute_plan
from .wr import InfeasibleError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INFEASIBLE = 3
EXIT_MISMATCH = 4

ENV_PREFIX = "MBSPLIT_"


def _env(name: str, default=None):
    return os.environ.get(ENV_PREFIX + name.upper().replace("-", "_"), default)


def _int_env(name: str, default: Optional[int]) -> Optional[int]:
    value = _env(name)
    if value is None:
        return default
    try:
        return int(value)
    except ValueError:
        raise SystemExit(f"mbsplit: {ENV_PREFIX}{name.upper().replace('-', '_')} must be an integer")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mbsplit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="optimize a network's convolution kernels")
    run.add_argument("--network", default=_env("network", "alexnet"),
                     help="network file, or a bundled fixture: alexnet, resnet18")
    run.add_argument("--batch-size", type=int, default=_int_env("batch-size", None),
                     help="mini-batch size (default: the network file's)")
    run.add_argument("--mode", choices=["wr", "wd"], default=_env("mode", "wr"))
    run.add_argument("--batch-policy", choices=[p.value for p in BatchSizePolicy],
                     default=_env("batch-policy", "all"))
    run.add_argument("--workspace-limit", default=_env("workspace-limit", "moderate"),
                     help="bytes (units like 64MiB allowed) or a model tier name; "
                          "per kernel in wr mode, total in wd mode")
    run.add_argument("--cost-model", default=_env("cost-model"),
                     help="model file (default: the bundled synthetic model)")
    run.add_argument("--cost-db", default=_env("cost-db"),
                     help="CSV cost cache; records there take precedence over the model")
    run.add_argument("--report", choices=["text", "machine"], default=_env("report", "text"))
    run.add_argument("--jobs", type=int, default=_int_env("jobs", 1))
    run.add_argument("--seed", type=int, default=_int_env("seed", 0),
                     help="accepted for reproducibility bookkeeping; runs are deterministic")
    run.add_argument("--output", "-o", help="write the report here instead of stdout")
    run.set_defaults(func=cmd_run)

    orc = sub.add_parser("oracle", help="compare optimizers with exhaustive search")
    orc.add_argument("--kind", choices=["wr", "wd"], default="wr")
    orc.add_argument("--trials", type=int, default=100)
    orc.add_argument("--seed", type=int, default=0, help="first seed; trials use seed..seed+trials-1")
    orc.add_argument("--batch-size", type=int, default=None,
                     help="largest mini-batch drawn (default 16 for wr, 8 for wd)")
    orc.add_argument("--kernels", type=int, default=3)
    orc.add_argument("--algorithms", type=int, default=3)
    orc.add_argument("--batch-policy", choices=[p.value for p in BatchSizePolicy], default="all")
    orc.add_argument("--verbose", "-v", action="store_true")
    orc.set_defaults(func=cmd_oracle)

    ref = sub.add_parser("refcheck", help="check a micro-batch split against undivided execution")
    ref.add_argument("--op", choices=[o.value for o in OpType], default="Forward")
    ref.add_argument("--split", default="2,2", help="comma-separated micro-batch sizes")
    ref.add_argument("--channels", type=int, default=2)
    ref.add_argument("--filters", type=int, default=3)
    ref.add_argument("--size", type=int, default=5)
    ref.add_argument("--kernel", type=int, default=3)
    ref.add_argument("--pad", type=int, default=0)
    ref.add_argument("--stride", type=int, default=1)
    ref.add_argument("--seed", type=int, default=0)
    ref.set_defaults(func=cmd_refcheck)

    mdl = sub.add_parser("model", help="print the bundled cost model")
    mdl.set_defaults(func=cmd_model)
    return parser


def cmd_run(args) -> int:
    try:
        network = load_network(args.network)
        model = CostModel.load(args.cost_model) if args.cost_model else CostModel.default()
        db = CostDatabase.open(args.cost_db) if args.cost_db else None
        policy = BatchSizePolicy.parse(args.batch_policy)
        n_kernels = 3 * len(network.layers)
        limit = resolve_limit(args.workspace_limit, model, args.mode, n_kernels)
    except (OSError, ValueError) as exc:
        print(f"mbsplit: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.batch_size is not None and args.batch_size < 1:
        print("mbsplit: --batch-size must be positive", file=sys.stderr)
        return EXIT_USAGE
    if args.jobs < 1:
        print("mbsplit: --jobs must be positive", file=sys.stderr)
        return EXIT_USAGE
    provider = CostProvider(model=model, db=db)
    try:
        report = run_optimization(network, provider, args.mode, policy, limit,
                                  batch=args.batch_size, jobs=args.jobs)
    except InfeasibleError as exc:
        print(f"mbsplit: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    if db is not None:
        db.flush()
    text = report.machine() if args.report == "machine" else report.text()
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_oracle(args) -> int:
    policy = BatchSizePolicy.parse(args.batch_policy)
    B = args.batch_size if args.batch_size is not None else (16 if args.kind == "wr" else 8)
    try:
        check_bounds(B, args.kernels if args.kind == "wd" else 1, args.algorithms)
        if B < 1 or args.kernels < 1 or args.algorithms < 1 or args.trials < 1:
            raise OracleBoundsError("batch size, kernels, algorithms and trials must be positive")
    except OracleBoundsError as exc:
        print(f"mbsplit: {exc}", file=sys.stderr)
        return EXIT_USAGE
    equal = 0
    for seed in range(args.seed, args.seed + args.trials):
        if args.kind == "wr":
            ok, expected, got = wr_trial(seed, B, args.algorithms, policy)
            detail = f"exhaustive={expected} optimizer={got}"
        else:
            ok, expected, full, pruned = wd_trial(seed, B, args.kernels, args.algorithms, policy)
            detail = f"exhaustive={expected} unpruned={full} pruned={pruned}"
        equal += ok
        if args.verbose or not ok:
            print(f"seed {seed}: {'equal' if ok else 'UNEQUAL'} {detail}")
    print(f"{args.kind} oracle: {equal}/{args.trials} equal")
    return EXIT_OK if equal == args.trials else EXIT_MISMATCH


def cmd_refcheck(args) -> int:
    try:
        sizes = [int(s) for s in args.split.split(",") if s.strip()]
        if not sizes or min(sizes) < 1:
            raise ValueError("split sizes must be positive integers")
    except ValueError as exc:
        print(f"mbsplit: {exc}", file=sys.stderr)
        return EXIT_USAGE
    op = OpType.parse(args.op)
    N = sum(sizes)
    rng = np.random.default_rng(args.seed)
    C, K, S, V = args.channels, args.filters, args.size, args.kernel
    X = rng.integers(-3, 4, size=(N, C, S, S)).astype(np.float64)
    F = rng.integers(-3, 4, size=(K, C, V, V)).astype(np.float64)
    try:
        Y = conv_forward(X, F, args.pad, args.stride)
    except ValueError as exc:
        print(f"mbsplit: {exc}", file=sys.stderr)
        return EXIT_USAGE
    dY = rng.integers(-3, 4, size=Y.shape).astype(np.float64)
    plan = Configuration(MicroConfiguration(AlgorithmId(0, "REF"), b, 0, 0) for b in sizes)
    tensors = {"X": X, "F": F, "dY": dY, "in_hw": (S, S), "filter_hw": (V, V)}
    if op is OpType.Forward:
        whole = Y
    elif op is OpType.BackwardData:
        whole = conv_backward_data(dY, F, args.pad, args.stride, in_hw=(S, S))
    else:
        whole = conv_backward_filter(X, dY, args.pad, args.stride, filter_hw=(V, V))
    split = execute_plan(op, plan, tensors, args.pad, args.stride)
    ok = split.shape == whole.shape and np.array_equal(split, whole)
    print(f"{op.value} split {plan.compact()} vs undivided N={N}: {'identical' if ok else 'DIFFERENT'}")
    return EXIT_OK if ok else EXIT_MISMATCH


def cmd_model(args) -> int:
    sys.stdout.write(CostModel.default().dumps())
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CostFileError, NetworkParseError) as exc:
        print(f"mbsplit: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
