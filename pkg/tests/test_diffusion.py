import numpy as np
import pytest
import torch

from vidinfill.diffusion import (
    NoiseSchedule,
    diffuse,
    make_noised_batch,
    masked_loss,
    q_sample,
    sample_infill,
    sampling_timesteps,
)
from vidinfill.errors import DivergenceError, PartitionError, ShapeError, TimestepError
from vidinfill.media import ClipPartition

SCHED = NoiseSchedule.linear()


def test_schedule_invariants():
    ab = SCHED.alpha_bars
    assert SCHED.T == 1000
    assert np.all(np.diff(ab) < 0)
    assert ab[-1] < 0.01
    assert SCHED.alpha_bar(0) == 1.0
    assert SCHED.alpha_bar(1) == pytest.approx(1 - 1e-4)


@pytest.mark.parametrize("betas", [[0.0, 0.5, 0.999], [0.5, 1.0], [0.1, 0.1], [-0.1, 0.999]])
def test_schedule_rejects(betas):
    with pytest.raises(ValueError):
        NoiseSchedule(np.array(betas))


def test_q_sample_identity_and_limit():
    z0, eps = torch.randn(2, 3, 3, 4), torch.randn(2, 3, 3, 4)
    assert torch.equal(diffuse(z0, eps, 1.0), z0)
    assert torch.equal(diffuse(z0, eps, 0.0), eps)


def test_q_sample_quarter():
    sched = NoiseSchedule(np.array([0.75, 0.99]))
    assert sched.alpha_bar(1) == pytest.approx(0.25)
    out = q_sample(torch.ones(2, 2, 2, 3, dtype=torch.float64), 1, torch.zeros(2, 2, 2, 3, dtype=torch.float64), sched)
    assert torch.allclose(out, torch.full_like(out, 0.5), atol=1e-15)


def test_q_sample_errors():
    z = torch.zeros(1, 2, 2, 3)
    with pytest.raises(TimestepError):
        q_sample(z, 0, z, SCHED)
    with pytest.raises(TimestepError):
        q_sample(z, 1001, z, SCHED)
    with pytest.raises(ShapeError):
        q_sample(z, 5, torch.zeros(1, 2, 2, 4), SCHED)


def test_q_sample_statistics():
    N, t = 10_000, 300
    g = torch.Generator().manual_seed(0)
    z0 = torch.randn(1, 2, 2, 3, generator=g, dtype=torch.float64)
    eps = torch.randn((N,) + tuple(z0.shape[1:]), generator=g, dtype=torch.float64)
    zt = q_sample(z0.expand(N, -1, -1, -1), t, eps, SCHED)
    ab = SCHED.alpha_bar(t)
    sigma = np.sqrt(1 - ab)
    assert torch.all((zt.mean(0) - np.sqrt(ab) * z0[0]).abs() <= 3 * sigma / np.sqrt(N))
    assert torch.all((zt.var(0) / (1 - ab) - 1).abs() <= 0.05)


def test_noised_batch_counts():
    z0 = torch.randn(32, 4, 4, 6)
    b = make_noised_batch(z0, ClipPartition(11, 20, 32), 500, SCHED, torch.Generator().manual_seed(1))
    changed = [(b.z_t[i] != z0[i]).any().item() for i in range(32)]
    assert [i for i, c in enumerate(changed) if c] == list(range(12, 20))
    assert tuple(b.eps.shape) == (8, 4, 4, 6)
    assert torch.equal(b.z_t[12:20], q_sample(z0[12:20], 500, b.eps, SCHED))
    ref = torch.from_numpy(ClipPartition(11, 20, 32).reference_mask())
    assert (b.z_t[ref] - z0[ref]).abs().max() == 0


def test_noised_batch_single_frame():
    z0 = torch.randn(10, 2, 2, 3)
    b = make_noised_batch(z0, ClipPartition(3, 5, 10), 10, SCHED)
    assert b.eps.shape[0] == 1
    assert sum((b.z_t[i] != z0[i]).any().item() for i in range(10)) == 1


def test_noised_batch_partition_mismatch():
    with pytest.raises(PartitionError):
        make_noised_batch(torch.zeros(8, 2, 2, 3), ClipPartition(1, 5, 10), 10, SCHED)


def _brute_masked_mse(pred, eps, part):
    total, count = 0.0, 0
    for i in range(part.s + 1, part.e):
        for y in range(pred.shape[1]):
            for x in range(pred.shape[2]):
                for c in range(pred.shape[3]):
                    d = float(pred[i, y, x, c]) - float(eps[i - part.s - 1, y, x, c])
                    total += d * d
                    count += 1
    return total / count


@pytest.mark.parametrize("seed", range(3))
def test_masked_loss_matches_brute_force(seed):
    g = torch.Generator().manual_seed(seed)
    z0 = torch.randn(10, 3, 3, 4, generator=g, dtype=torch.float64)
    part = ClipPartition(2 + seed, 7, 10)
    b = make_noised_batch(z0, part, 100, SCHED, g)
    pred = torch.randn(z0.shape, generator=g, dtype=torch.float64)
    assert abs(float(masked_loss(pred, b)) - _brute_masked_mse(pred, b.eps, part)) < 1e-10


def test_masked_loss_ignores_references():
    z0 = torch.randn(12, 2, 2, 3, dtype=torch.float64)
    part = ClipPartition(3, 8, 12)
    b = make_noised_batch(z0, part, 50, SCHED)
    pred = torch.full(z0.shape, 1e6, dtype=torch.float64)
    pred[part.intermediate] = b.eps
    assert float(masked_loss(pred, b)) == 0.0
    base = torch.randn(z0.shape, dtype=torch.float64)
    perturbed = base.clone()
    perturbed[0] += 123.0
    perturbed[-1] -= 7.0
    assert float(masked_loss(base, b)) - float(masked_loss(perturbed, b)) == 0.0


def test_masked_loss_monte_carlo():
    z0 = torch.zeros(32, 16, 16, 48)
    part = ClipPartition(5, 26, 32)  # 20 * 16 * 16 * 48 > 1e5 cells
    b = make_noised_batch(z0, part, 500, SCHED, torch.Generator().manual_seed(0))
    assert abs(float(masked_loss(torch.zeros_like(z0), b)) - 1.0) < 0.05


def test_masked_loss_shape_error():
    b = make_noised_batch(torch.zeros(6, 2, 2, 3), ClipPartition(1, 4, 6), 5, SCHED)
    with pytest.raises(ShapeError):
        masked_loss(torch.zeros(5, 2, 2, 3), b)


def test_sampling_timesteps():
    ts = sampling_timesteps(SCHED, 50)
    assert ts[0] == 1000 and ts[-1] == 1 and len(ts) == 50
    assert all(a > b for a, b in zip(ts, ts[1:]))
    assert sampling_timesteps(SCHED, 0) == []


def _random_model(seed=0):
    w = torch.randn(3, 3, generator=torch.Generator().manual_seed(seed))

    def model(z, t, length, guidance):
        return torch.tanh(z @ w)

    return model


def test_zero_step_sampling_returns_init():
    z_ref = torch.randn(8, 2, 2, 3)
    part = ClipPartition(2, 6, 8)
    init = torch.randn(3, 2, 2, 3)
    out = sample_infill(_random_model(), z_ref, part, init, None, 0, SCHED)
    assert torch.equal(out[part.intermediate], init)
    assert torch.equal(out[:3], z_ref[:3]) and torch.equal(out[6:], z_ref[6:])


@pytest.mark.parametrize("eta", [0.0, 1.0])
def test_sampler_clamps_references_every_step(eta):
    z_ref = torch.randn(10, 2, 2, 3)
    part = ClipPartition(3, 7, 10)
    ref_mask = torch.from_numpy(part.reference_mask())
    seen = []
    inner = _random_model()

    def model(z, t, length, guidance):
        seen.append(torch.equal(z[ref_mask], z_ref[ref_mask]))
        assert length == 3
        return inner(z, t, length, guidance)

    out = sample_infill(model, z_ref, part, torch.randn(3, 2, 2, 3), None, 20, SCHED, eta=eta,
                        generator=torch.Generator().manual_seed(0))
    assert len(seen) == 20 and all(seen)
    assert torch.equal(out[ref_mask], z_ref[ref_mask])
    assert torch.isfinite(out).all()


def test_sampler_recovers_signal_with_perfect_noise_oracle():
    """A denoiser that knows z0 exactly predicts the true noise; deterministic DDIM must land on z0."""
    g = torch.Generator().manual_seed(0)
    z0 = torch.rand(10, 2, 2, 3, generator=g, dtype=torch.float64) * 1.6 - 0.8
    part = ClipPartition(2, 8, 10)

    def oracle(z, t, length, guidance):
        ab = SCHED.alpha_bar(t)
        return (z - np.sqrt(ab) * z0) / np.sqrt(1 - ab)

    init = torch.randn(5, 2, 2, 3, generator=g, dtype=torch.float64)
    out = sample_infill(oracle, z0, part, init, None, 25, SCHED)
    assert torch.allclose(out, z0, atol=1e-10)


def test_sampler_divergence():
    part = ClipPartition(1, 4, 6)

    def bad(z, t, length, guidance):
        return torch.full_like(z, float("nan"))

    with pytest.raises(DivergenceError):
        sample_infill(bad, torch.zeros(6, 2, 2, 3), part, torch.zeros(2, 2, 2, 3), None, 3, SCHED, clip_x0=False)


def test_sampler_shape_checks():
    with pytest.raises(ShapeError):
        sample_infill(_random_model(), torch.zeros(6, 2, 2, 3), ClipPartition(1, 4, 6), torch.zeros(3, 2, 2, 3), None, 1, SCHED)
