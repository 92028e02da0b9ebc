import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from dpfedsim.errors import StructureError
from dpfedsim.params import Layout, ParamVector, flatten, unflatten


def make(shapes, values=None):
    segs = []
    offset = 0
    for i, shape in enumerate(shapes):
        n = int(np.prod(shape))
        data = np.arange(offset, offset + n, dtype=float) if values is None else values[offset:offset + n]
        segs.append((f"s{i}", np.asarray(data).reshape(shape)))
        offset += n
    return ParamVector.from_segments(segs)


def test_segments_are_views_into_flat():
    v = make([(2, 3), (4,)])
    v["s0"][1, 2] = -1.0
    assert v.flat[5] == -1.0
    assert v.total_len == 10


def test_duplicate_names_rejected():
    with pytest.raises(StructureError):
        ParamVector.from_segments([("a", np.zeros(2)), ("a", np.zeros(3))])


def test_mismatch_names_segment():
    a = make([(2, 3), (4,)])
    b = ParamVector.from_segments([("s0", np.zeros((2, 3))), ("s1", np.zeros(5))])
    with pytest.raises(StructureError) as info:
        a + b
    assert info.value.segment == "s1"


shapes = st.lists(st.lists(st.integers(1, 4), min_size=1, max_size=3).map(tuple), min_size=1, max_size=4)


@given(shapes=shapes, data=st.data())
def test_flatten_unflatten_round_trips_exactly(shapes, data):
    total = sum(int(np.prod(s)) for s in shapes)
    values = data.draw(hnp.arrays(np.float64, total, elements=st.floats(allow_nan=False, allow_infinity=False)))
    v = make(shapes, values)
    layout, flat = flatten(v)
    back = unflatten(layout, flat)
    assert back == v
    assert np.array_equal(flatten(back)[1], flat)
    assert [n for n, _ in back.segments()] == [n for n, _ in v.segments()]


def test_layout_rejects_non_positive_dims():
    with pytest.raises(StructureError):
        Layout(("a",), ((0, 2),))
