import struct

import numpy as np
import pytest

from skimba import checkpoint
from skimba.nn import Conv3d, Linear, Module


def test_exact_byte_layout():
    blob = checkpoint.dumps({"a.w": np.array([[1.0, 2.0]], dtype=np.float32)})
    expected = (b"SKBA" + struct.pack("<II", 1, 1) + struct.pack("<I", 3) + b"a.w" + struct.pack("<I", 2)
                + struct.pack("<QQ", 1, 2) + struct.pack("<ff", 1.0, 2.0))
    assert blob == expected


def test_roundtrip_preserves_names_shapes_values(rng):
    entries = {"x": rng.standard_normal((2, 3, 4)).astype(np.float32), "scalar": np.array(3.5, np.float32),
               "ünï": rng.standard_normal(5).astype(np.float32)}
    back = checkpoint.loads(checkpoint.dumps(entries))
    assert list(back) == list(entries)
    for k in entries:
        assert back[k].shape == entries[k].shape
        np.testing.assert_array_equal(back[k], entries[k])


@pytest.mark.parametrize("blob", [b"NOPE" + bytes(8), b"SKBA" + struct.pack("<II", 9, 0),
                                  b"SKBA" + struct.pack("<II", 1, 1) + struct.pack("<I", 50)])
def test_malformed_blobs_raise(blob):
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads(blob)


class Net(Module):
    def __init__(self, rng):
        self.conv = Conv3d(2, 3, 3, rng)
        self.heads = [Linear(3, 2, rng), Linear(2, 1, rng)]


def test_module_names_unique_and_state_roundtrip(rng, tmp_path):
    net = Net(rng)
    names = [n for n, _ in net.named_parameters()]
    assert len(names) == len(set(names))
    assert names[0] == "conv.weight" and "heads.1.bias" in names
    checkpoint.save(tmp_path / "n.skba", net.state_dict())
    other = Net(np.random.default_rng(99))
    other.load_state_dict(checkpoint.load(tmp_path / "n.skba"))
    for (n, a), (_, b) in zip(net.named_parameters(), other.named_parameters()):
        np.testing.assert_array_equal(a.data, b.data)


def test_load_state_dict_rejects_wrong_shape(rng):
    net = Net(rng)
    state = net.state_dict()
    state["conv.weight"] = np.zeros((1, 1, 1, 1, 1))
    with pytest.raises(ValueError, match="conv.weight"):
        net.load_state_dict(state)
