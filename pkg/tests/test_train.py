import numpy as np
import pytest
import torch

from flashglass.config import OptimConfig, toy_profile
from flashglass.core import GlassMask, ImagePair, Sample
from flashglass.errors import ConfigError, DataError, EmptyDataset, ShapeError
from flashglass.model import build_model
from flashglass.synth import SynthParams, generate_scene
from flashglass.train import evaluate, predict, train


def tiny(**kw):
    opt = kw.pop("optimizer", OptimConfig(lr=1e-3, epochs=2, max_steps=3))
    return toy_profile(input_size=(32, 32), base_channels=4, optimizer=opt, **kw)


@pytest.fixture(scope="module")
def scenes():
    return [generate_scene(np.random.default_rng(i), SynthParams(size=(32, 32))) for i in range(4)]


@pytest.mark.parametrize("ablation", ["base", "rcmm_only", "rgam_only", "dual_unet", "cbam", "full"])
def test_forward_every_ablation(ablation):
    cfg = tiny(ablation=ablation)
    m = build_model(cfg, 0)
    x = torch.rand(2, 3, 32, 32)
    refl = (torch.rand(2, 3, 32, 32), torch.rand(2, 3, 32, 32)) if ablation == "rgam_only" else None
    out = m(x, x.flip(-1), reflections=refl)
    assert out.g_glass.shape == (2, 1, 32, 32)
    assert [tuple(g.shape[-2:]) for g in out.g_side] == [(8, 8), (4, 4), (2, 2), (1, 1)]
    if cfg.predicts_reflections:
        assert [tuple(r.shape[-3:]) for r in out.refl["flash"]] == [(3, 8, 8), (3, 4, 4), (3, 2, 2), (3, 1, 1)]
    else:
        assert out.refl is None


def test_rgam_only_needs_reflections():
    m = build_model(tiny(ablation="rgam_only"), 0)
    with pytest.raises(ConfigError):
        m(torch.rand(1, 3, 32, 32), torch.rand(1, 3, 32, 32))


def test_pair_shape_mismatch():
    m = build_model(tiny(ablation="base"), 0)
    with pytest.raises(ShapeError):
        m(torch.rand(1, 3, 32, 32), torch.rand(1, 3, 64, 64))


def test_epochs_zero_is_initialization(scenes):
    cfg = tiny(optimizer=OptimConfig(epochs=0))
    res = train(cfg, None, samples=scenes, seed=5)
    assert res.checkpoint.step == 0 and res.losses == []
    init = build_model(cfg, 5).state_dict()
    for k, v in res.checkpoint.tensors.items():
        np.testing.assert_array_equal(v, init[k].numpy())


def test_same_seed_same_loss(scenes):
    a = train(tiny(), None, samples=scenes, seed=2)
    b = train(tiny(), None, samples=scenes, seed=2)
    assert len(a.losses) == 3
    assert abs(a.losses[-1] - b.losses[-1]) <= 1e-6
    for k in a.checkpoint.tensors:
        np.testing.assert_array_equal(a.checkpoint.tensors[k], b.checkpoint.tensors[k])


def test_missing_reflection_targets(scenes):
    bare = [Sample(s.pair, s.mask) for s in scenes]
    with pytest.raises(DataError):
        train(tiny(), None, samples=bare)
    # the base model never needs them
    train(tiny(ablation="base"), None, samples=bare)


def test_empty_training_set():
    with pytest.raises(EmptyDataset):
        train(tiny(), None, samples=[])


def test_checkpoints_written(tmp_path, scenes):
    cfg = tiny(optimizer=OptimConfig(lr=1e-3, epochs=2, batch=2))
    res = train(cfg, None, out_dir=tmp_path, samples=scenes)
    assert res.checkpoint.step == 4
    assert (tmp_path / "last.nfgl").is_file() and (tmp_path / "final.nfgl").is_file()
    assert len((tmp_path / "train.log").read_text().splitlines()) == 4


def test_predict_keeps_input_resolution():
    m = build_model(tiny(ablation="base"), 0)
    img = np.random.default_rng(0).random((48, 40, 3)).astype(np.float32)
    prob, refl = predict(m, ImagePair(img, img))
    assert prob.shape == (48, 40)
    assert 0 <= prob.min() and prob.max() <= 1
    assert refl is None


def test_evaluate_single_sample(scenes):
    m = build_model(tiny(ablation="base"), 0)
    rep = evaluate(m, samples=scenes[:1])
    assert len(rep.per_image) == 1
    e = rep.per_image[0]
    assert (rep.iou, rep.f_beta, rep.mae, rep.ber, rep.acc) == (e.iou, e.f_beta, e.mae, e.ber, e.acc)
    with pytest.raises(EmptyDataset):
        evaluate(m, samples=[])


def test_evaluate_perfect_model_on_constant_mask():
    m = build_model(tiny(ablation="base"), 0)
    with torch.no_grad():
        m.dec.final.weight.zero_()
        m.dec.final.bias.fill_(20.0)
    img = np.zeros((32, 32, 3), np.float32)
    s = Sample(ImagePair(img, img), GlassMask(np.ones((32, 32, 1))))
    rep = evaluate(m, samples=[s])
    assert rep.iou == 1.0 and rep.ber == 0.0
