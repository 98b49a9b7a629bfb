import pytest

from mbsplit.domain import OpType
from mbsplit.network import NetworkParseError, load_network, loads_network


def test_parse_example():
    net = loads_network("""
        # two layers
        mini_batch 32
        layer a C=3 H=8 W=8 K=4 V=3 U=3 pad=1
        layer b C=4 H=8 W=6 K=2 V=1 U=2 stride_h=2 pad_w=1   # trailing comment
    """, source="tiny.net")
    assert net.mini_batch == 32 and net.name == "tiny"
    a, b = net.layers
    assert (a.pad_h, a.pad_w, a.stride_h, a.stride_w) == (1, 1, 1, 1)
    assert (b.pad_h, b.pad_w, b.stride_h, b.stride_w) == (0, 1, 2, 1)
    ks = net.kernels()
    assert [k.op_type for k in ks[:3]] == list(OpType)
    assert all(k.batch == 32 for k in ks) and len(ks) == 6
    assert ks[3].kernel_h == 2 and ks[3].kernel_v == 1
    assert net.kernels(7)[0].batch == 7


def test_fixtures():
    alex = load_network("alexnet")
    assert alex.mini_batch == 256 and len(alex.layers) == 5
    assert alex.layers[0].stride_h == 4 and alex.layers[0].V == 11
    res = load_network("resnet18")
    assert res.mini_batch == 128 and len(res.layers) == 17
    hashes = {k.canonical_hash() for k in res.kernels()}
    assert len(hashes) < len(res.kernels())


def test_load_from_file(tmp_path):
    p = tmp_path / "n.net"
    p.write_text("mini_batch 4\nlayer x C=1 H=3 W=3 K=1 V=3 U=3\n")
    assert load_network(p).layers[0].name == "x"


@pytest.mark.parametrize("text,line,column,fragment", [
    ("mini_batch 4\nlayer a C=1 H=3 W=3 K=1 V=3 U=3\nlayer a C=1 H=3 W=3 K=1 V=3 U=3\n", 3, 7, "duplicate"),
    ("mini_batch 4\nlayer a C=0 H=3 W=3 K=1 V=3 U=3\n", 2, 11, "positive"),
    ("mini_batch 4\nlayer a C=1 H=3 W=3 K=1 V=3\n", 2, 1, "missing U"),
    ("mini_batch 4\nlayer a C=1 H=3 W=3 K=1 V=3 U=3 bogus=1\n", 2, 33, "unexpected"),
    ("mini_batch 4\nlayer a C=1 H=3 W=3 K=1 V=3 U=3 pad=-1\n", 2, 37, "non-negative"),
    ("mini_batch 4\nlayer a C=1 H=2 W=3 K=1 V=3 U=3\n", 2, 1, "does not fit"),
    ("mini_batch x\n", 1, 12, "positive"),
    ("mini_batch 4\npool a\n", 2, 1, "unknown directive"),
    ("# nothing\n", 1, 1, "no layers"),
    ("layer a C=1 H=3 W=3 K=1 V=3 U=3\n", 1, 1, "mini_batch"),
])
def test_parse_errors(text, line, column, fragment):
    with pytest.raises(NetworkParseError) as err:
        loads_network(text, source="bad.net")
    assert (err.value.line, err.value.column) == (line, column)
    assert fragment in str(err.value)
    assert str(err.value).startswith(f"bad.net:{line}:{column}:")
