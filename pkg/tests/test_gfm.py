import math

import numpy as np
import pytest
import torch
from scipy import stats

from vidinfill.diffusion import NoiseSchedule, q_sample
from vidinfill.gfm import (
    GfmConfig,
    fft3,
    gaussian_mask,
    ifft3,
    mix_from_diffused,
    mix_init,
    stop_frequency,
)
from vidinfill.media import ClipPartition

SCHED = NoiseSchedule.linear()
ALL_PASS = lambda n: (math.inf, math.inf)


@pytest.mark.parametrize("dist,expected", [(1, 0.54), (2, 0.48), (5, 0.30), (9, 0.06), (10, 0.0), (12, 0.0)])
def test_stop_frequency_table(dist, expected):
    cfg = GfmConfig(0.6, 0.1)
    assert stop_frequency(dist, 0, 40, cfg) == pytest.approx(expected, abs=1e-12)
    assert stop_frequency(40 - dist, 0, 40, cfg) == pytest.approx(expected, abs=1e-12)


def test_stop_frequency_no_decay_and_errors():
    cfg = GfmConfig(0.6, 0.0)
    assert all(stop_frequency(n, 0, 20, cfg) == 0.6 for n in range(1, 20))
    for n in (0, 20, 25):
        with pytest.raises(ValueError):
            stop_frequency(n, 0, 20, cfg)
    with pytest.raises(ValueError):
        GfmConfig(1.5, 0.1)
    with pytest.raises(ValueError):
        GfmConfig(0.5, -0.1)


def test_stop_frequency_monotone():
    cfg = GfmConfig()
    freqs = [stop_frequency(n, 0, 30, cfg) for n in range(1, 16)]
    assert all(a >= b for a, b in zip(freqs, freqs[1:]))


def test_mask_limits():
    dims = (8, 16, 16)
    assert np.count_nonzero(gaussian_mask(0, 0, dims)) == 0
    assert np.count_nonzero(gaussian_mask(0.5, 0, dims)) == 0
    assert np.all(gaussian_mask(math.inf, math.inf, dims) == 1.0)
    # at the 1e3 cap, exp(-r^2 / 2e6) >= 1 - 1e-6 holds wherever the squared radius is <= 2;
    # only corner bins (r^2 up to 3) dip to 1 - 1.5e-6
    capped = gaussian_mask(1e3, 1e3, dims)
    rt, rh, rw = np.meshgrid(*(2.0 * np.fft.fftshift(np.fft.fftfreq(d)) for d in dims), indexing="ij")
    inner = rt**2 + rh**2 + rw**2 <= 2.0
    assert np.all(capped[inner] >= 1 - 1e-6)
    assert capped.min() >= math.exp(-1.5e-6)
    for f in (0.05, 0.3, 0.9):
        m = gaussian_mask(f, f, dims)
        assert m[4, 8, 8] == 1.0
        assert m.min() >= 0 and m.max() <= 1
    with pytest.raises(ValueError):
        gaussian_mask(-0.1, 0.3, dims)


def test_mask_formula_and_monotonicity():
    dims = (4, 8, 8)
    m = gaussian_mask(0.5, 0.25, dims)
    # bin (t=1, h=5, w=2): centred coordinates -0.5, 0.25, -0.5
    expected = math.exp(-0.5 * ((0.25**2 + 0.5**2) / 0.25 + 0.25 / 0.0625))
    assert m[1, 5, 2] == pytest.approx(expected, rel=1e-12)
    assert np.all(gaussian_mask(0.6, 0.6, dims) >= gaussian_mask(0.3, 0.3, dims))


@pytest.mark.parametrize("dims", [(5, 7, 9), (8, 16, 16)])
def test_mask_symmetric_under_negation(dims):
    m = gaussian_mask(0.4, 0.3, dims)
    # for even sizes the -1 bin (index 0) has no +1 partner, so compare the symmetric core
    sl = tuple(slice(1 - d % 2, None) for d in dims)
    core = m[sl]
    assert np.array_equal(core, core[::-1, ::-1, ::-1])


def test_mask_complementarity_exact():
    for f in (0.05, 0.3, 0.54, 0.9):
        m = gaussian_mask(f, f, (8, 16, 16))
        assert np.array_equal(m + (1.0 - m), np.ones_like(m))


def test_mask_cache_is_read_only():
    m = gaussian_mask(0.3, 0.3, (4, 4, 4))
    with pytest.raises(ValueError):
        m[0, 0, 0] = 5.0
    assert gaussian_mask(0.3, 0.3, (4, 4, 4)) is m


def test_fft_roundtrip_and_parseval():
    x = torch.randn(6, 8, 8, 5, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
    spec = fft3(x)
    assert (ifft3(spec).real - x).abs().max() < 1e-6
    assert ifft3(spec).imag.abs().max() < 1e-6
    rel = abs(float(spec.abs().pow(2).sum() - x.pow(2).sum())) / float(x.pow(2).sum())
    assert rel < 1e-6


def test_pure_noise_limit_ks():
    part = ClipPartition(0, 11, 12)
    g = torch.Generator().manual_seed(0)
    z_s, z_e = torch.rand(16, 16, 48, generator=g), torch.rand(16, 16, 48, generator=g)
    out = mix_init(z_s, z_e, part, 600, SCHED, GfmConfig(0.0, 0.1), generator=torch.Generator().manual_seed(1))
    # identical draw order: eps_s, eps_e, then the noise volume
    g2 = torch.Generator().manual_seed(1)
    torch.randn(z_s.shape, generator=g2), torch.randn(z_e.shape, generator=g2)
    noise = torch.randn((10, 16, 16, 48), generator=g2)
    assert (out - noise).abs().max() < 1e-6
    cells = out.reshape(-1).numpy()
    assert cells.size >= 100_000
    assert stats.kstest(cells, "norm").pvalue > 0.01


def test_all_pass_reproduces_diffused_boundary():
    part = ClipPartition(3, 12, 16)
    g = torch.Generator().manual_seed(2)
    zs_t, ze_t = torch.randn(8, 8, 6, generator=g, dtype=torch.float64), torch.randn(8, 8, 6, generator=g, dtype=torch.float64)
    noise = torch.randn(8, 8, 8, 6, generator=g, dtype=torch.float64)
    out = mix_from_diffused(zs_t, ze_t, noise, part, ALL_PASS)
    for k in range(part.length):
        n = part.s + 1 + k
        ref = zs_t if n <= (part.s + part.e) / 2 else ze_t
        assert (out[k] - ref).abs().max() < 1e-5


def test_all_pass_through_mix_init_with_lambda_zero():
    part = ClipPartition(0, 5, 6)
    z_s, z_e = torch.zeros(4, 4, 3, dtype=torch.float64), torch.ones(4, 4, 3, dtype=torch.float64)
    out = mix_init(z_s, z_e, part, 300, SCHED, GfmConfig(1.0, 0.0), torch.Generator().manual_seed(0), stop_fn=ALL_PASS)
    g = torch.Generator().manual_seed(0)
    zs_t = q_sample(z_s, 300, torch.randn(z_s.shape, generator=g, dtype=z_s.dtype), SCHED)
    ze_t = q_sample(z_e, 300, torch.randn(z_e.shape, generator=g, dtype=z_e.dtype), SCHED)
    assert (out[0] - zs_t).abs().max() < 1e-5 and (out[1] - zs_t).abs().max() < 1e-5
    assert (out[2] - ze_t).abs().max() < 1e-5 and (out[3] - ze_t).abs().max() < 1e-5


def test_midpoint_tie_uses_preceding_boundary():
    part = ClipPartition(0, 4, 5)  # n = 2 is exactly the midpoint
    zs_t, ze_t = torch.zeros(4, 4, 2, dtype=torch.float64), torch.ones(4, 4, 2, dtype=torch.float64)
    out = mix_from_diffused(zs_t, ze_t, torch.zeros(3, 4, 4, 2, dtype=torch.float64), part, ALL_PASS)
    assert out[1].abs().max() < 1e-5
    assert (out[2] - 1).abs().max() < 1e-5


def test_output_is_real():
    part = ClipPartition(1, 10, 12)
    g = torch.Generator().manual_seed(4)
    z = torch.randn(16, 16, 48, generator=g)
    cfg = GfmConfig()
    stop = lambda n: (stop_frequency(n, 1, 10, cfg),) * 2
    _, imag = mix_from_diffused(z, -z, torch.randn(8, 16, 16, 48, generator=g), part, stop, return_imag=True)
    assert imag < 1e-6


def test_influence_decreases_with_distance():
    """Mean correlation with the diffused boundary, over 100 seeds, is non-increasing in distance (l = 8)."""
    part = ClipPartition(0, 9, 10)
    cfg = GfmConfig()
    stop = lambda n: (stop_frequency(n, 0, 9, cfg),) * 2
    corrs = np.zeros((100, 4))
    for seed in range(100):
        g = torch.Generator().manual_seed(seed)
        zs_t = torch.randn(8, 8, 4, generator=g, dtype=torch.float64)
        ze_t = torch.randn(8, 8, 4, generator=g, dtype=torch.float64)
        noise = torch.randn(8, 8, 8, 4, generator=g, dtype=torch.float64)
        out = mix_from_diffused(zs_t, ze_t, noise, part, stop)
        for d in range(1, 5):
            corrs[seed, d - 1] = np.corrcoef(out[d - 1].reshape(-1), zs_t.reshape(-1))[0, 1]
    means = corrs.mean(axis=0)
    assert np.all(np.diff(means) <= 0)
    rho = stats.spearmanr(np.arange(1, 5), means).statistic
    assert rho == pytest.approx(-1.0)
