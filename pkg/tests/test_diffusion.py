import numpy as np
import pytest

from skimba.diffusion import (DEFAULT_STEPS, MSCBFuse, NoiseSchedule, denoise_loss, forward_diffuse, sample,
                              timestep_embedding)
from skimba.tensor import Tensor


@pytest.fixture
def schedule():
    return NoiseSchedule.linear()


def test_schedule_invariants(schedule):
    assert schedule.T == DEFAULT_STEPS == 100
    assert np.all(np.diff(schedule.betas) > 0) and np.all((schedule.betas > 0) & (schedule.betas < 1))
    assert np.all(np.diff(schedule.alpha_bars) < 0)
    assert schedule.alpha_bar(0) == 1.0


def test_default_schedule_endpoints(schedule):
    assert schedule.betas[0] == pytest.approx(1e-3) and schedule.betas[-1] == pytest.approx(0.2)


def test_alpha_bar_final_small(schedule):
    prod = 1.0
    for b in np.linspace(1e-3, 0.2, 100):
        prod *= 1 - b
    assert schedule.alpha_bars[-1] == pytest.approx(prod, rel=1e-12)
    assert prod < 0.05


def test_unscaled_standard_range_leaves_signal():
    """1e-4..0.02 over only 100 steps keeps about a third of the signal variance."""
    s = NoiseSchedule.linear(100, 1e-4, 0.02)
    assert 0.3 < s.alpha_bars[-1] < 0.4


def test_noiseless_limit(schedule, rng):
    x0 = Tensor(rng.standard_normal((2, 3, 2, 2, 1)))
    xt = forward_diffuse(schedule, x0, 40, Tensor(np.zeros(x0.shape)))
    np.testing.assert_allclose(xt.data, np.sqrt(schedule.alpha_bar(40)) * x0.data, rtol=1e-6)


def test_forward_diffuse_rejects_bad_step(schedule):
    x = Tensor(np.zeros((1, 2)))
    for t in (0, 101):
        with pytest.raises(ValueError):
            forward_diffuse(schedule, x, t, x)


def test_forward_diffuse_superposition(schedule, rng, f64):
    a, b, e1, e2 = (Tensor(rng.standard_normal((1, 4))) for _ in range(4))
    t = np.array([17])
    lhs = forward_diffuse(schedule, a + b, t, e1 + e2).data
    rhs = forward_diffuse(schedule, a, t, e1).data + forward_diffuse(schedule, b, t, e2).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_per_sample_steps(schedule, rng):
    x0, eps = Tensor(np.ones((2, 1))), Tensor(np.zeros((2, 1)))
    xt = forward_diffuse(schedule, x0, np.array([1, 100]), eps).data.ravel()
    np.testing.assert_allclose(xt, np.sqrt(schedule.alpha_bars[[0, 99]]), rtol=1e-6)


def test_perfect_denoiser_has_zero_loss(schedule, rng):
    captured = {}

    def oracle(x_t, t, cond):
        ab = schedule.alpha_bar(t).reshape(-1, 1)
        return Tensor((x_t.data - np.sqrt(ab) * captured["x0"].data) / np.sqrt(1 - ab))

    x0 = Tensor(rng.standard_normal((4, 6)), dtype=np.float64)
    captured["x0"] = x0
    assert float(denoise_loss(oracle, schedule, x0, None, rng).data) < 1e-12


def test_random_network_loss_finite_positive(schedule, rng):
    fuse = MSCBFuse(2, 2, 2, rng, time_dim=8)
    net = lambda x, t, c: fuse(x, c, t)
    loss = float(denoise_loss(net, schedule, Tensor(rng.standard_normal((2, 2, 2, 2, 2))),
                              Tensor(rng.standard_normal((2, 2, 2, 2, 2))), rng).data)
    assert np.isfinite(loss) and loss > 0


def test_fuse_shape_geometry_and_time_sensitivity(rng):
    fuse = MSCBFuse(3, 2, 4, rng)
    x, c = Tensor(rng.standard_normal((1, 3, 4, 4, 2))), Tensor(rng.standard_normal((1, 2, 4, 4, 2)))
    out1, out2 = fuse(x, c, 1), fuse(x, c, 50)
    assert out1.shape == (1, 4, 4, 4, 2)
    assert not np.allclose(out1.data, out2.data)
    with pytest.raises(ValueError):
        fuse(x, Tensor(np.zeros((1, 2, 4, 2, 2))), 1)


def test_fuse_without_mscb_is_pointwise(rng):
    fuse = MSCBFuse(3, 2, 4, rng, use_mscb=False)
    assert not hasattr(fuse, "mscb") and fuse.proj.weight.shape[2:] == (1, 1, 1)


def test_timestep_embeddings_distinct():
    e = timestep_embedding(np.arange(1, 101), 32)
    assert len({tuple(np.round(r, 9)) for r in e}) == 100


class Counter:
    def __init__(self, fn):
        self.calls, self.fn = 0, fn

    def __call__(self, x, t, cond):
        self.calls += 1
        return self.fn(x, t, cond)


def test_sample_shape_calls_and_determinism(schedule):
    net = Counter(lambda x, t, c: Tensor(np.zeros(x.shape)))
    a = sample(net, schedule, None, (2, 3, 2, 2, 1), np.random.default_rng(4))
    b = sample(net, schedule, None, (2, 3, 2, 2, 1), np.random.default_rng(4))
    assert a.shape == (2, 3, 2, 2, 1) and net.calls == 2 * schedule.T
    np.testing.assert_array_equal(a.data, b.data)


def test_sampler_with_true_noise_oracle_recovers_memorised_point(schedule, f64):
    x0 = np.random.default_rng(1).standard_normal((1, 4, 2, 2, 1))

    def oracle(x_t, t, cond):
        ab = schedule.alpha_bar(t).reshape(-1, 1, 1, 1, 1)
        return Tensor((x_t.data - np.sqrt(ab) * x0) / np.sqrt(1 - ab))

    z = sample(oracle, schedule, None, x0.shape, np.random.default_rng(2)).data
    assert np.sqrt(np.mean((z - x0) ** 2)) < 0.1
