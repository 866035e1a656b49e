import numpy as np
import pytest

from skimba import tensor as T
from skimba.vae import DOWNSAMPLE_FACTOR, ConditionNetwork, VoxelGrid, VoxelVAE, latent_shape


@pytest.fixture
def vae(rng):
    return VoxelVAE(5, rng, channels=(4, 8), latent_channels=3)


def test_factor_four_latent_shape(vae, rng):
    assert DOWNSAMPLE_FACTOR == 4
    assert latent_shape((32, 32, 8)) == (8, 8, 2)
    rep = vae.encode(rng.integers(0, 5, (1, 32, 32, 8)))
    assert rep.mean.shape == (1, 3, 8, 8, 2)


def test_rejects_indivisible_extents(vae):
    with pytest.raises(ValueError):
        vae.encode(np.zeros((1, 8, 6, 4), int))


def test_rejects_out_of_range_labels(vae):
    with pytest.raises(ValueError):
        vae.encode(np.full((1, 4, 4, 4), 5))


def test_deterministic_mode_returns_mean(vae, rng):
    rep = vae.encode(rng.integers(0, 5, (1, 8, 8, 4)))
    assert rep.z is rep.mean


def test_same_seed_same_sample(vae, rng):
    labels = rng.integers(0, 5, (2, 8, 8, 4))
    a = vae.encode(labels, np.random.default_rng(3)).z.data
    b = vae.encode(labels, np.random.default_rng(3)).z.data
    np.testing.assert_array_equal(a, b)


def test_decode_shape_is_four_times_latent(vae, rng):
    out = vae.decode(T.Tensor(rng.standard_normal((2, 3, 2, 3, 1))))
    assert out.shape == (2, 5, 8, 12, 4)


def test_decode_rejects_wrong_latent_channels(vae):
    with pytest.raises(ValueError):
        vae.decode(T.Tensor(np.zeros((1, 4, 2, 2, 1))))


@pytest.mark.parametrize("shape", [(4, 4, 4), (8, 4, 12), (12, 8, 4)])
def test_roundtrip_label_shape(vae, rng, shape):
    labels = rng.integers(0, 5, shape)
    assert vae.reconstruct(labels).shape == (1,) + shape


def test_condition_network_matches_latent_geometry_without_shared_names(vae, rng):
    cn = ConditionNetwork(6, 3, rng, channels=(4, 8))
    assert cn(T.Tensor(rng.standard_normal((1, 6, 16, 8, 8)))).shape == (1, 3, 4, 2, 2)
    vae_names = {n for n, _ in vae.named_parameters("vae")}
    cn_names = {n for n, _ in cn.named_parameters("cond_net")}
    assert vae_names.isdisjoint(cn_names)
    assert all(p is not q for p in vae.parameters() for q in cn.parameters())


def test_condition_network_rejects_bad_geometry(rng):
    with pytest.raises(ValueError):
        ConditionNetwork(2, 2, rng)(T.Tensor(np.zeros((1, 2, 6, 8, 8))))


def test_voxl_roundtrip_and_layout(tmp_path, rng):
    grid = VoxelGrid(rng.integers(0, 5, (4, 8, 4)), 5, 0.2)
    blob = grid.to_bytes()
    assert blob[:4] == b"VOXL" and len(blob) == 28 + 4 * 8 * 4
    assert np.frombuffer(blob[4:24], "<u4").tolist() == [1, 5, 4, 8, 4]
    assert blob[28:] == grid.labels.tobytes()
    grid.save(tmp_path / "g.voxl")
    back = VoxelGrid.load(tmp_path / "g.voxl")
    np.testing.assert_array_equal(back.labels, grid.labels)
    assert back.num_classes == 5 and back.voxel_size == pytest.approx(0.2)


def test_voxl_rejects_corruption(rng):
    blob = VoxelGrid(np.zeros((4, 4, 4)), 5).to_bytes()
    with pytest.raises(ValueError):
        VoxelGrid.from_bytes(b"XXXX" + blob[4:])
    with pytest.raises(ValueError):
        VoxelGrid.from_bytes(blob[:-1])
    with pytest.raises(ValueError):
        VoxelGrid(np.full((4, 4, 4), 7), 5)
