import numpy as np
import pytest
import torch

from sitsfuse.encoders.utae import UTAE, UTAEConfig
from sitsfuse.models import init_parameters

from gradcheck import fd_gradient_check

CFG = UTAEConfig(level_widths=(4, 8, 8), n_heads=2, d_k=4)


def _inputs(seed=0, b=2, t=5, c=3, h=16, w=16, dtype=torch.float32):
    rng = np.random.default_rng(seed)
    x = torch.from_numpy(rng.normal(size=(b, t, c, h, w))).to(dtype)
    dates = torch.from_numpy(np.sort(rng.choice(np.arange(1, 367), size=(b, t)), axis=1)).long()
    mask = torch.ones(b, t, dtype=torch.bool)
    return x, dates, mask


def test_full_resolution_output_shape():
    utae = init_parameters(UTAE(3, CFG), seed=0)
    x, dates, mask = _inputs()
    out = utae(x, dates, mask)
    assert out.full_res.shape == (2, 4, 16, 16)
    assert [f.shape[-1] for f in out.features] == [8, 4, 2]
    assert [d.shape[1] for d in out.decoded] == [4, 8, 8]


def test_attention_sums_survive_upsampling():
    utae = init_parameters(UTAE(3, CFG), seed=1)
    x, dates, mask = _inputs(seed=2)
    mask[0, 3:] = False
    out = utae(x, dates, mask)
    for maps in out.attention:
        sums = maps.temporal_sums()
        assert torch.allclose(sums, torch.ones_like(sums), atol=1e-5)
        assert torch.all(maps.weights[0, :, 3:] == 0)
    shapes = [tuple(m.weights.shape[-2:]) for m in out.attention]
    assert shapes == [(8, 8), (4, 4), (2, 2)]


def test_constant_in_time_input_averages_to_per_date_features():
    utae = init_parameters(UTAE(3, CFG), seed=3)
    x, dates, mask = _inputs(seed=4)
    x = x[:, :1].expand_as(x).contiguous()
    out = utae(x, dates, mask)
    single = utae(x[:, :1], dates[:, :1], mask[:, :1])
    for got, expect in zip(out.features, single.features):
        assert torch.allclose(got, expect, atol=1e-5)


def test_indivisible_spatial_dims_rejected():
    utae = init_parameters(UTAE(3, CFG), seed=5)
    x, dates, mask = _inputs(h=12, w=12)
    with pytest.raises(ValueError, match="divisible"):
        utae(x, dates, mask)


def test_masked_frames_do_not_affect_outputs():
    utae = init_parameters(UTAE(3, CFG), seed=6).double()
    x, dates, mask = _inputs(seed=7, dtype=torch.float64)
    mask[:, 4:] = False
    base = utae(x, dates, mask).full_res
    perturbed = x.clone()
    perturbed[:, 4:] += torch.from_numpy(np.random.default_rng(8).normal(size=(2, 1, 3, 16, 16)))
    assert torch.equal(base, utae(perturbed, dates, mask).full_res)


def test_gradients_match_finite_differences():
    utae = init_parameters(UTAE(2, CFG), seed=9).double()
    x, dates, mask = _inputs(seed=10, b=1, t=3, c=2, h=8, w=8, dtype=torch.float64)
    mask[0, 2] = False

    def loss_fn():
        return (utae(x, dates, mask).full_res ** 2).sum()

    worst = fd_gradient_check(utae, loss_fn, rel_tol=1e-3, coords_per_tensor=3)
    assert worst <= 1e-3


def test_level_width_divisibility_enforced():
    with pytest.raises(ValueError):
        UTAEConfig(level_widths=(6, 8, 8), n_heads=4).validate()
