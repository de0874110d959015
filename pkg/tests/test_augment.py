import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from simit.augment import ALL_OPS, GEOMETRIC_OPS, AdaState, apply_ada, update_ada


def test_p_zero_is_identity():
    x = torch.rand(3, 3, 16, 16)
    assert apply_ada(x, 0.0) is x


def test_p_one_only_selected_ops():
    x = torch.rand(4, 3, 16, 16)
    out, masks = apply_ada(x, 1.0, torch.Generator().manual_seed(0), ops=("hflip",), return_params=True)
    assert masks["hflip"].all()
    assert not any(masks[k].any() for k in ALL_OPS if k != "hflip")
    torch.testing.assert_close(out, x.flip(-1))


def test_hflip_is_involution():
    x = torch.rand(2, 3, 8, 8)
    once = apply_ada(x, 1.0, torch.Generator().manual_seed(0), ops=("hflip",))
    torch.testing.assert_close(apply_ada(once, 1.0, torch.Generator().manual_seed(0), ops=("hflip",)), x)


def test_fire_rate_matches_p():
    x = torch.rand(10_000, 1, 8, 8)
    _, masks = apply_ada(x, 0.5, torch.Generator().manual_seed(0), ops=("hflip",), return_params=True)
    rate = masks["hflip"].float().mean().item()
    assert abs(rate - 0.5) < 0.02


def test_translate_bounded_and_replicate_padded():
    x = torch.zeros(1, 1, 16, 16)
    x[..., 8, 8] = 1.0
    out = apply_ada(x, 1.0, torch.Generator().manual_seed(3), ops=("translate",))
    ys, xs = torch.nonzero(out[0, 0], as_tuple=True)
    assert len(ys) == 1
    assert abs(int(ys[0]) - 8) <= 2 and abs(int(xs[0]) - 8) <= 2


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 1.0), st.integers(0, 2**31))
def test_range_and_shape_preserved(p, seed):
    x = torch.rand(4, 3, 16, 16, generator=torch.Generator().manual_seed(seed))
    out = apply_ada(x, p, torch.Generator().manual_seed(seed))
    assert out.shape == x.shape
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_geometric_ops_preserve_value_multiset():
    x = torch.rand(4, 1, 16, 16)
    out = apply_ada(x, 1.0, torch.Generator().manual_seed(0), ops=("hflip", "rot90"))
    for a, b in zip(x, out):
        torch.testing.assert_close(a.flatten().sort().values, b.flatten().sort().values)


def test_one_hot_stays_one_hot_under_geometric_ops():
    lab = torch.nn.functional.one_hot(torch.randint(0, 3, (4, 16, 16)), 3).permute(0, 3, 1, 2).float()
    out = apply_ada(lab, 1.0, torch.Generator().manual_seed(0), ops=GEOMETRIC_OPS)
    torch.testing.assert_close(out.sum(1), torch.ones(4, 16, 16))


def test_gradient_flows_through_augmentation():
    x = torch.rand(2, 3, 16, 16, requires_grad=True)
    apply_ada(x, 1.0, torch.Generator().manual_seed(0)).sum().backward()
    assert x.grad is not None and torch.isfinite(x.grad).all()


def test_same_seed_same_draws():
    x = torch.rand(4, 3, 16, 16)
    a = apply_ada(x, 0.7, torch.Generator().manual_seed(9))
    b = apply_ada(x, 0.7, torch.Generator().manual_seed(9))
    torch.testing.assert_close(a, b)


def test_bad_arguments():
    with pytest.raises(ValueError):
        apply_ada(torch.rand(1, 1, 8, 8), 1.5)
    with pytest.raises(ValueError):
        apply_ada(torch.rand(1, 1, 8, 8), 0.5, ops=("shear",))


def test_update_equilibrium_keeps_p():
    state = AdaState(p=0.3, target_rt=0.6, rt_estimate=0.6)
    logits = torch.tensor([1.0, 1.0, 1.0, 1.0, -1.0])  # mean sign 0.6
    assert update_ada(state, logits).p == pytest.approx(0.3, abs=1e-15)


def test_update_direction():
    up = update_ada(AdaState(p=0.3, adjustment_speed=0.01, rt_estimate=1.0), torch.ones(4))
    down = update_ada(AdaState(p=0.3, adjustment_speed=0.01, rt_estimate=-1.0), -torch.ones(4))
    assert up.p == pytest.approx(0.31)
    assert down.p == pytest.approx(0.29)


def test_update_alternating_logits_stays_near_start():
    state = AdaState(p=0.5, target_rt=0.0, adjustment_speed=0.01)
    for i in range(100):
        state = update_ada(state, torch.full((4,), 1.0 if i % 2 else -1.0))
    assert abs(state.p - 0.5) <= 0.02


def test_p_clamped():
    state = AdaState(p=0.999, adjustment_speed=0.01, rt_estimate=1.0)
    assert update_ada(state, torch.ones(2)).p == 1.0
    assert AdaState(p=-3).p == 0.0
    np.testing.assert_equal(update_ada(AdaState(p=0.0), -torch.ones(2)).p, 0.0)
