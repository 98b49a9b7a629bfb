from fractions import Fraction

import pytest

from mbsplit.costs import AlgorithmParams, CostModel, CostProvider
from mbsplit.domain import AlgorithmId, KernelDescriptor, OpType

CHEAP = AlgorithmId(0, "CHEAP")
FAST = AlgorithmId(1, "FAST")
SLOWBIG = AlgorithmId(2, "SLOWBIG")

ACCEPTANCE_LINES: list[str] = []


def unit_kernel(batch=64, name="k", op=OpType.Forward, channels=1):
    return KernelDescriptor(op, batch, channels, 4, 4, 1, 1, 1, layer_name=name)


def linear_model(*params: AlgorithmParams) -> CostModel:
    return CostModel.from_params(params, shape_scaling=False)


@pytest.fixture
def cheap_fast():
    """CHEAP: 1 us/sample, no workspace.  FAST: 0.5 us/sample, 10 B/sample."""
    model = linear_model(
        AlgorithmParams(CHEAP, Fraction(1)),
        AlgorithmParams(FAST, Fraction(1, 2), ws_per_sample=10),
    )
    return CostProvider(model)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
