import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from simit.errors import ModelError, NumericError
from simit.nets import (Discriminator, Generator, ProjectionHeads, demodulate, encoder_features,
                        gather_features, generator_forward, image_to_label_config, inject_noise,
                        label_to_image_config, sample_locations)


def small_g(c=3, ch=3, width=4, **kw):
    torch.manual_seed(0)
    return Generator(label_to_image_config(c, ch, width, num_resblocks=1, **kw))


def test_demodulate_hand_value():
    out = demodulate(torch.tensor([[3.0, 4.0]]), eps=1e-12)
    np.testing.assert_allclose(out.numpy(), [[0.6, 0.8]], rtol=1e-6)


def test_demodulate_with_scales():
    w = torch.tensor([[[[1.0]], [[1.0]]]])
    out = demodulate(w, torch.tensor([3.0, 4.0]), eps=1e-12)
    np.testing.assert_allclose(out.flatten().numpy(), [0.6, 0.8], rtol=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.sampled_from([1, 3]), st.integers(0, 10_000))
def test_demodulate_unit_norm(cout, cin, k, seed):
    w = torch.randn(cout, cin, k, k, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)
    out = demodulate(w)
    norms = out.pow(2).sum(dim=(1, 2, 3))
    expected = w.pow(2).sum(dim=(1, 2, 3)) / (w.pow(2).sum(dim=(1, 2, 3)) + 1e-8)
    np.testing.assert_allclose(norms.numpy(), expected.numpy(), rtol=1e-12)


def test_demodulate_zero_and_nonfinite():
    assert torch.all(demodulate(torch.zeros(2, 3, 3, 3)) == 0)
    with pytest.raises(NumericError):
        demodulate(torch.tensor([[float("nan"), 1.0]]))


def test_noise_injection_variance():
    feat = torch.zeros(4, 3, 160, 160)
    out = inject_noise(feat, 0.7, torch.Generator().manual_seed(0))
    var = out.var().item()
    assert abs(var - 0.49) / 0.49 < 0.05
    # one noise image shared by all channels
    torch.testing.assert_close(out[:, 0], out[:, 2])


def test_noise_weight_zero_is_identity():
    feat = torch.randn(2, 3, 8, 8)
    torch.testing.assert_close(inject_noise(feat, 0.0), feat)


def test_generator_shapes_and_range():
    g = small_g()
    x = torch.nn.functional.one_hot(torch.randint(0, 3, (2, 64, 64)), 3).permute(0, 3, 1, 2).float()
    y = g(x)
    assert y.shape == (2, 3, 64, 64)
    torch.manual_seed(0)
    f = Generator(image_to_label_config(3, 3, 4, num_resblocks=1))
    s = f(torch.rand(2, 3, 64, 64))
    assert s.shape == (2, 3, 64, 64)
    assert torch.all((s > 0) & (s < 1))


def test_generator_zero_input_is_finite():
    g = small_g()
    assert torch.isfinite(g(torch.zeros(1, 3, 64, 64))).all()


def test_generator_single_and_batched():
    g = small_g(noise_injection=False)
    x = torch.rand(3, 64, 64)
    torch.testing.assert_close(generator_forward(g, x), generator_forward(g, x[None])[0])


def test_generator_noise_reproducible():
    g = small_g()
    with torch.no_grad():
        for m in g.noise:
            m.weight.fill_(0.5)
    x = torch.rand(1, 3, 64, 64)
    a = g(x, torch.Generator().manual_seed(1))
    b = g(x, torch.Generator().manual_seed(1))
    c = g(x, torch.Generator().manual_seed(2))
    torch.testing.assert_close(a, b)
    assert not torch.allclose(a, c)


def test_noise_weights_start_at_zero():
    g = small_g()
    assert all(float(m.weight.detach()) == 0.0 for m in g.noise)


def test_generator_rejects_bad_input():
    g = small_g()
    with pytest.raises(ModelError):
        g(torch.rand(1, 4, 64, 64))
    with pytest.raises(ModelError):
        g(torch.rand(1, 3, 60, 64))
    f = Generator(image_to_label_config(3, 3, 4, num_resblocks=1))
    with pytest.raises(ModelError):
        f.taps(torch.rand(1, 3, 64, 64), stem="image")


def test_tap_spatial_sizes_256():
    g = small_g(width=2)
    taps = g.taps(torch.rand(1, 3, 256, 256))
    assert [t.shape[-1] for t in taps] == [128, 64, 32, 16]
    assert [t.shape[1] for t in taps] == g.tap_channels


def test_image_stem_shares_trunk():
    g = small_g()
    x = torch.rand(1, 3, 64, 64)
    main = g.taps(x, [0])[0]
    image = g.taps(x, [0], stem="image")[0]
    assert main.shape == image.shape
    # same downsampling weights: copying the stem over makes them agree
    with torch.no_grad():
        g.image_stem.weight.zero_()
        g.image_stem.weight[:, :, 0, 0] = g.stem.weight[:, :, 1, 1]
        g.image_stem.bias.copy_(g.stem.bias)
        g.stem.weight[:, :, [0, 0, 0, 1, 1, 2, 2, 2], [0, 1, 2, 0, 2, 0, 1, 2]] = 0
    torch.testing.assert_close(g.taps(x, [2])[0], g.taps(x, [2], stem="image")[0])


def test_encoder_features_reuse_locations():
    g = small_g()
    x = torch.rand(2, 3, 64, 64)
    gen = torch.Generator().manual_seed(0)
    a = encoder_features(g, x, [0, 1], num_locations=10, generator=gen)
    b = encoder_features(g, x, [0, 1], locations=a.locations)
    for sa, sb in zip(a.samples, b.samples):
        torch.testing.assert_close(sa, sb)
    assert a.samples[0].shape == (2, 10, g.tap_channels[0])


def test_sample_locations_clamped_and_distinct():
    loc = sample_locations(16, 100, torch.Generator().manual_seed(0))
    assert len(loc) == 16
    assert len(set(loc.tolist())) == 16


def test_gather_features_matches_indexing():
    fmap = torch.arange(2 * 3 * 4 * 5, dtype=torch.float32).view(2, 3, 4, 5)
    loc = torch.tensor([0, 7, 19])
    out = gather_features(fmap, loc)
    for n in range(2):
        for i, l in enumerate(loc.tolist()):
            torch.testing.assert_close(out[n, i], fmap[n, :, l // 5, l % 5])
    with pytest.raises(ModelError):
        gather_features(fmap, torch.tensor([20]))


def test_projection_heads():
    ident = ProjectionHeads()
    x = torch.rand(2, 5, 7)
    assert ident(0, x) is x
    mlp = ProjectionHeads([7, 9])
    assert mlp(1, torch.rand(2, 5, 9)).shape == (2, 5, 256)


def test_discriminator_shapes():
    d = Discriminator(3, 4)
    assert d(torch.rand(2, 3, 64, 64)).shape == (2,)
    assert d.cell_logits(torch.rand(1, 3, 128, 128)).shape == (1, 1, 8, 8)
    with pytest.raises(ModelError):
        d(torch.rand(1, 3, 32, 32))
    with pytest.raises(ModelError):
        d(torch.rand(1, 1, 64, 64))


def test_discriminator_receptive_field():
    size, stride, offset = Discriminator(3, 4).receptive_field()
    assert size <= 64
    assert stride == 16
    d = Discriminator(3, 4).double()
    x = torch.rand(1, 3, 128, 128, dtype=torch.float64, requires_grad=True)
    i, j = 4, 3
    d.cell_logits(x)[0, 0, i, j].backward()
    touched = (x.grad[0].abs().sum(0) > 0).nonzero()
    rows, cols = touched[:, 0], touched[:, 1]
    assert rows.min() >= offset + i * stride and rows.max() < offset + i * stride + size
    assert cols.min() >= offset + j * stride and cols.max() < offset + j * stride + size


def test_discriminator_ignores_pixels_outside_window():
    d = Discriminator(3, 4).double()
    size, stride, offset = d.receptive_field()
    x = torch.rand(1, 3, 128, 128, dtype=torch.float64)
    y = x.clone()
    top = offset + 2 * stride
    y[..., top + size :, :] = torch.rand_like(y[..., top + size :, :])
    with torch.no_grad():
        assert d.cell_logits(x)[0, 0, 2, 2] == d.cell_logits(y)[0, 0, 2, 2]
