from dataclasses import replace

import numpy as np
import pytest
import torch

from calipso.anchors import assign_anchors, build_anchor_grid
from calipso.network import (
    CalipsoNet, CheckpointError, ConfigError, NetworkConfig, count_forward_ops, forward,
    interaction_parameter_count, load_checkpoint, save_checkpoint,
)
from calipso.synthetic import DEFAULT_VOCABULARY, HOLD, SceneGenConfig, STAND_V, generate_dataset, layout_to_scene, crowd_layout
from calipso.training import TrainConfig, build_training_targets, train
from calipso.types import Box, InteractionTriplet, expected_level_shape
from conftest import make_scene

SMALL = NetworkConfig(channels=16, blocks=2, T=4, backbone_channels=(8, 8, 16, 16, 16))


@pytest.fixture(scope="module")
def net():
    torch.manual_seed(0)
    return CalipsoNet(NetworkConfig()).eval()


def test_level_shapes_128(net):
    out = forward(np.zeros((128, 128, 3), np.uint8), net)
    lv3 = out.levels[0]
    assert lv3.level == 3
    assert lv3.verb_scores.shape == (16, 16, 9, 12)
    assert lv3.target_scores.shape == (16, 16, 9, 12)
    assert lv3.embeddings.shape == (16, 16, 9, 6, 8)
    for lv in out.levels:
        assert (lv.verb_scores >= 0).all() and (lv.verb_scores <= 1).all()
        assert np.isfinite(lv.embeddings).all()


@pytest.mark.parametrize("W,H", [(100, 60), (64, 96), (37, 45)])
def test_floor_shape_contract(W, H):
    model = CalipsoNet(SMALL).eval()
    out = forward(np.zeros((H, W, 3), np.uint8), model)
    for lv in out.levels:
        assert lv.verb_scores.shape[:2] == expected_level_shape(W, H, lv.level)
    grid = build_anchor_grid((W, H), SMALL.levels)
    assert out.flat_verb_scores().shape[0] == grid.num_anchors


def test_image_too_small():
    with pytest.raises(ConfigError):
        forward(np.zeros((16, 64, 3), np.uint8), CalipsoNet(SMALL))


def test_op_count_independent_of_scene_content(net):
    cfg = SceneGenConfig()
    rng = np.random.default_rng(0)
    one = layout_to_scene(crowd_layout(cfg, rng, 1, 1), rng)
    many = layout_to_scene(crowd_layout(cfg, rng, 3, 6), rng)
    assert count_forward_ops(net, one.image) == count_forward_ops(net, many.image)


def test_shared_weights_param_count_independent_of_levels():
    a = CalipsoNet(replace(SMALL, levels=(3, 4)))
    b = CalipsoNet(replace(SMALL, levels=(2, 5)))
    assert interaction_parameter_count(a) == interaction_parameter_count(b)
    c = CalipsoNet(replace(SMALL, levels=(2, 5), share_weights_across_levels=False))
    assert interaction_parameter_count(c) == 4 * interaction_parameter_count(b)


def test_head_disable_removes_exactly_their_channels():
    full = CalipsoNet(SMALL)
    nop = CalipsoNet(replace(SMALL, passive_head_enabled=False))
    nt = CalipsoNet(replace(SMALL, target_head_enabled=False))
    x = torch.zeros(1, 3, 64, 64)
    of, op, ot = full(x), nop(x), nt(x)
    assert of["verb"].shape[-1] == 2 * SMALL.V and op["verb"].shape[-1] == SMALL.V
    assert ot["target"] is None and of["target"].shape == op["target"].shape
    assert of["emb"].shape == op["emb"].shape == ot["emb"].shape
    n = lambda m: sum(p.numel() for p in m.parameters())
    k = SMALL.head_kernel ** 2 * SMALL.channels
    A, V = SMALL.A, SMALL.V
    assert n(full) - n(nop) == A * V * (k + 1)
    assert n(full) - n(nt) == A * 2 * V * (k + 1)


def test_training_targets():
    grid = build_anchor_grid((64, 64), (3, 4))
    person = Box(*grid.anchor_box(40).coords(), 0)
    cup = Box(*grid.anchor_box(700).coords(), 1)
    idle = Box(*grid.anchor_box(300).coords(), 0)
    scene = make_scene([person, cup, idle], [InteractionTriplet(0, HOLD, 1), InteractionTriplet(0, STAND_V, None)])
    tt = build_training_targets(scene, grid, assign_anchors(grid, scene.boxes), DEFAULT_VOCABULARY)
    V = DEFAULT_VOCABULARY.V
    rows = {b: tt.verb_labels[tt.box_index == b] for b in range(3)}
    assert (rows[0][:, HOLD] == 1).all() and (rows[0][:, STAND_V] == 1).all()
    assert rows[0][:, V:].sum() == 0
    assert (rows[1][:, V + HOLD] == 1).all() and rows[1][:, :V].sum() == 0
    assert rows[2].sum() == 0
    tl = {b: tt.target_labels[tt.box_index == b] for b in range(3)}
    assert (tl[0][:, HOLD] == 1).all() and tl[0][:, STAND_V].sum() == 0 and tl[0][:, V + STAND_V].sum() == 0
    assert tl[0].sum() == len(tl[0])
    assert tt.human.tolist() == [scene.boxes[b].class_id == 0 for b in tt.box_index]
    hold = tt.classes[HOLD]
    assert hold.interacting.sum() == 1


def test_training_descends_and_is_deterministic():
    scenes = generate_dataset(SceneGenConfig(image_size=(64, 64), humans=(1, 1)), 24, seed=0)
    tc = TrainConfig(steps=40, batch_size=4, warmup_steps=5, log_every=0)
    r1 = train(scenes, DEFAULT_VOCABULARY, SMALL, tc, seed=3)
    r2 = train(scenes, DEFAULT_VOCABULARY, SMALL, tc, seed=3)
    t1 = [h["total"] for h in r1.history]
    assert t1 == [h["total"] for h in r2.history]
    assert np.mean(t1[-5:]) < np.mean(t1[:5])
    for h in r1.history:
        assert h["total"] == pytest.approx(h["verb"] + h["target"] + sum(p + q for p, q in zip(h["pull"], h["push"])) / 6)


def test_checkpoint_roundtrip_and_hash_check(tmp_path):
    model = CalipsoNet(SMALL).eval()
    path = save_checkpoint(tmp_path / "m.npz", model, {"note": 1})
    loaded, extra = load_checkpoint(path)
    assert extra == {"note": 1}
    x = np.random.default_rng(0).integers(0, 255, (64, 64, 3)).astype(np.uint8)
    np.testing.assert_array_equal(forward(x, model).flat_verb_scores(), forward(x, loaded).flat_verb_scores())
    assert load_checkpoint(path, SMALL)[0] is not None
    with pytest.raises(CheckpointError):
        load_checkpoint(path, replace(SMALL, blocks=3))


def test_config_dict_rejects_unknown():
    assert NetworkConfig.from_dict(SMALL.to_dict()) == SMALL
    with pytest.raises(ConfigError):
        NetworkConfig.from_dict({"depth": 3})
    with pytest.raises(ConfigError):
        NetworkConfig(blocks=0)
