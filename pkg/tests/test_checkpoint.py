import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from yoeo.checkpoint import decode_tensors, encode_tensors, load_tensors, save_tensors
from yoeo.errors import LoadError

arrays = hnp.arrays(np.float64, hnp.array_shapes(min_dims=0, max_dims=3, max_side=4),
                    elements=st.floats(allow_nan=False, width=64))


@given(st.dictionaries(st.text(min_size=1, max_size=12), arrays, max_size=5))
def test_roundtrip_is_exact(tensors):
    back = decode_tensors(encode_tensors(tensors))
    assert list(back) == list(tensors)
    for k in tensors:
        assert back[k].shape == tensors[k].shape
        assert back[k].tobytes() == np.ascontiguousarray(tensors[k]).tobytes()


def test_truncated_and_garbage_files_raise(tmp_path):
    blob = encode_tensors({"w": np.arange(6.0).reshape(2, 3)})
    with pytest.raises(LoadError):
        decode_tensors(blob[:-3])
    with pytest.raises(LoadError):
        decode_tensors(blob + b"x")
    with pytest.raises(LoadError, match="magic"):
        decode_tensors(b"NOPE" + blob[4:])


def test_save_replaces_atomically(tmp_path):
    path = tmp_path / "model.ckpt"
    save_tensors(path, {"a": np.ones(2)})
    save_tensors(path, {"a": np.zeros(2)})
    np.testing.assert_array_equal(load_tensors(path)["a"], [0.0, 0.0])
    assert [p.name for p in tmp_path.iterdir()] == ["model.ckpt"]
