import numpy as np
import pytest
import torch

from simit.datagen import load_dataset, read_split
from simit.errors import ConfigError, UsageError
from simit.losses import total_G
from simit.trainer import Trainer, fit, step_generator, translate


def _batch(manifest, cfg, index=0):
    return load_dataset(manifest, "train", cfg.batch_size, cfg.crop, cfg.seed).batch(0, index)


def _params(module):
    return [p.detach().clone() for p in module.parameters()]


def _same(a, b):
    return all(torch.equal(x, y) for x, y in zip(a, b))


def test_wiring_counters_per_variant(tiny_dataset, tiny_cfg):
    seen = {}
    for variant in ("simit", "simit-c", "simit-cs"):
        t = Trainer(tiny_cfg.replace(variant=variant), 3)
        for i in range(2):
            t.train_step(_batch(tiny_dataset, tiny_cfg, i))
        seen[variant] = t.stats
    assert seen["simit"].sim_reads == 2 and seen["simit"].reconstructions == 2
    assert seen["simit"].steps_G == seen["simit"].steps_F == 2
    assert seen["simit-c"].sim_reads == 2 and seen["simit-c"].reconstructions == 0
    assert seen["simit-cs"].sim_reads == 0 and seen["simit-cs"].reconstructions == 0
    assert seen["simit-cs"].steps_F == 0


def test_ablations_build_no_second_translator(tiny_cfg):
    t = Trainer(tiny_cfg.replace(variant="simit-c"), 3)
    assert t.nets.F is None and t.nets.D_L is None
    assert t.train_step_F(None, step_generator(0, 0)) == {}


def test_F_step_leaves_G_untouched(tiny_dataset, tiny_cfg):
    from simit.trainer import WiringStats, _StepBatch
    t = Trainer(tiny_cfg, 3)
    before = _params(t.nets.G)
    f_before = _params(t.nets.F)
    t.train_step_F(_StepBatch(_batch(tiny_dataset, tiny_cfg), WiringStats()), step_generator(0, 0))
    assert _same(before, _params(t.nets.G))
    assert not _same(f_before, _params(t.nets.F))


def test_G_step_leaves_F_untouched(tiny_dataset, tiny_cfg):
    from simit.trainer import WiringStats, _StepBatch
    t = Trainer(tiny_cfg, 3)
    f_before, dl_before = _params(t.nets.F), _params(t.nets.D_L)
    t.train_step_G(_StepBatch(_batch(tiny_dataset, tiny_cfg), WiringStats()), step_generator(0, 0))
    assert _same(f_before, _params(t.nets.F))
    assert _same(dl_before, _params(t.nets.D_L))


def test_lambda_zero_heads_untouched(tiny_dataset, tiny_cfg):
    t = Trainer(tiny_cfg.replace(lambda_G=0.0), 3)
    before = _params(t.nets.H_G)
    t.train_step(_batch(tiny_dataset, tiny_cfg))
    assert _same(before, _params(t.nets.H_G))
    assert t.history[-1]["cl"] == 0.0


def test_one_G_step_lowers_objective_on_same_batch(tiny_dataset, tiny_cfg):
    cfg = tiny_cfg.replace(lr_G=1e-4, ada=False)
    t = Trainer(cfg, 3)
    b = _batch(tiny_dataset, cfg)
    labels, sim = torch.from_numpy(b.labels), torch.from_numpy(b.sim)

    def objective():
        return total_G(t.nets, labels, cfg.weights, cfg.nce, cfg.variant, sim, step_generator(0, 0))[0]

    before = objective()
    t.opt_G.zero_grad()
    before.backward()
    t.opt_G.step()
    assert objective().item() < before.item()


def test_nonfinite_step_rolls_back(tiny_dataset, tiny_cfg, monkeypatch):
    t = Trainer(tiny_cfg, 3)
    t.train_step(_batch(tiny_dataset, tiny_cfg))
    before = {k: _params(m) for k, m in t.nets.modules().items()}
    import simit.trainer as tr

    def poisoned(*args, **kw):
        total, terms = total_G(*args, **kw)
        return total * float("nan"), terms

    monkeypatch.setattr(tr, "total_G", poisoned)
    rec = t.train_step(_batch(tiny_dataset, tiny_cfg, 1))
    assert rec["aborted"] == 1.0
    for k, m in t.nets.modules().items():
        assert _same(before[k], _params(m)), k
    assert t.step == 2


def test_same_seed_same_history(tiny_dataset, tiny_cfg):
    a = fit(tiny_dataset, tiny_cfg, max_steps=4)
    b = fit(tiny_dataset, tiny_cfg, max_steps=4)
    assert a.history == b.history
    for (ka, ma), (kb, mb) in zip(a.trainer.nets.modules().items(), b.trainer.nets.modules().items()):
        assert _same(_params(ma), _params(mb)), ka


def test_resume_matches_uninterrupted(tiny_dataset, tiny_cfg, tmp_path):
    cfg = tiny_cfg.replace(epochs=2)
    full = fit(tiny_dataset, cfg, tmp_path / "full")
    part = fit(tiny_dataset, cfg, tmp_path / "part", max_steps=5)
    assert part.final_checkpoint is None
    resumed = fit(tiny_dataset, cfg, tmp_path / "part", resume=tmp_path / "part" / "last.pt")
    assert resumed.history == full.history
    for (k, m), (_, n) in zip(full.trainer.nets.modules().items(), resumed.trainer.nets.modules().items()):
        assert _same(_params(m), _params(n)), k


def test_resume_from_final_is_noop(tiny_dataset, tiny_cfg, tmp_path):
    done = fit(tiny_dataset, tiny_cfg, tmp_path)
    again = fit(tiny_dataset, tiny_cfg, tmp_path, resume=done.final_checkpoint)
    assert again.trainer.step == done.trainer.step
    assert again.history == done.history


def test_checkpoint_round_trip(tiny_dataset, tiny_cfg, tmp_path):
    t = Trainer(tiny_cfg, 3)
    t.train_step(_batch(tiny_dataset, tiny_cfg))
    path = t.save(tmp_path / "ck.pt")
    u = Trainer.load(path)
    for k, m in t.nets.modules().items():
        assert _same(_params(m), _params(u.nets.modules()[k])), k
    assert u.step == t.step and u.ada_I == t.ada_I and u.stats == t.stats
    b = _batch(tiny_dataset, tiny_cfg, 1)
    assert t.train_step(b) == u.train_step(b)


def test_checkpoint_version_mismatch(tiny_cfg, tmp_path):
    t = Trainer(tiny_cfg, 3)
    state = t.state_dict()
    state["format_version"] = 99
    torch.save(state, tmp_path / "old.pt")
    with pytest.raises(ConfigError, match="version"):
        Trainer.load(tmp_path / "old.pt")


def test_fit_outputs(tiny_dataset, tiny_cfg, tmp_path):
    res = fit(tiny_dataset, tiny_cfg.replace(epochs=2), tmp_path)
    assert len(res.validation) == 2
    assert sorted(p.name for p in (tmp_path / "val").iterdir()) == ["epoch_0001.png", "epoch_0002.png"]
    for name in ("last.pt", "final.pt", "best.pt", "log.jsonl"):
        assert (tmp_path / name).is_file()
    lines = (tmp_path / "log.jsonl").read_text().splitlines()
    assert any('"term": "cl_0"' in line for line in lines)
    assert any('"term": "val_ssim"' in line for line in lines)
    assert res.trainer.step == 2 * 8


def test_translate_directions(tiny_dataset, tiny_cfg):
    res = fit(tiny_dataset, tiny_cfg, max_steps=1)
    test = read_split(tiny_dataset, "test")
    imgs = translate(res.trainer, test.labels, "label2image", seed=3)
    assert imgs.shape == test.sim.shape
    np.testing.assert_array_equal(imgs, translate(res.trainer, test.labels, "label2image", seed=3))
    labels = translate(res.trainer, test.real, "image2label")
    assert labels.shape == test.labels.shape and labels.max() < 3
    with pytest.raises(UsageError):
        translate(res.trainer, test.labels, "sideways")


def test_image2label_needs_full_variant(tiny_dataset, tiny_cfg):
    t = Trainer(tiny_cfg.replace(variant="simit-cs"), 3)
    with pytest.raises(UsageError):
        t.translate_images(np.zeros((1, 3, 64, 64), np.float32))
