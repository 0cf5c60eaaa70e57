import math

import numpy as np
import pytest

import salfau


def test_shape_plan_default_network():
    plan = {name: (c, h, w) for name, c, h, w in salfau.shape_plan()}
    assert plan["enc0"] == (64, 288, 288)
    assert plan["enc4"] == (1024, 18, 18)
    assert plan["fuse"] == (1, 288, 288)


def test_forward_shapes_and_range():
    net = salfau.Network(base_channels=2, input_size=32, seed=1)
    x = np.random.default_rng(0).random((2, 3, 32, 32), dtype=np.float32)
    out = net.forward(x)
    assert out["fused"].shape == (2, 1, 32, 32)
    assert len(out["side"]) == 4
    for m in [out["fused"], *out["side"]]:
        assert m.shape == (2, 1, 32, 32)
        assert np.all((m > 0) & (m < 1))


def test_forward_rejects_indivisible_size():
    net = salfau.Network(base_channels=2, input_size=32)
    with pytest.raises(ValueError):
        net.forward(np.zeros((1, 3, 30, 30), dtype=np.float32))


def test_same_seed_same_weights():
    x = np.full((1, 3, 16, 16), 0.5, dtype=np.float32)
    a = salfau.Network(2, 16, seed=4).forward(x)["fused"]
    b = salfau.Network(2, 16, seed=4).forward(x)["fused"]
    c = salfau.Network(2, 16, seed=5).forward(x)["fused"]
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_bce_matches_numpy():
    p = np.full((1, 1, 4, 4), 0.5, dtype=np.float32)
    g = np.zeros_like(p)
    assert salfau.bce_sum(p, g) == pytest.approx(16 * math.log(2), rel=1e-6)


def test_metrics_on_perfect_prediction():
    g = np.zeros((20, 20))
    g[5:15, 5:15] = 1.0
    assert salfau.mae(g, g) == 0.0
    assert salfau.max_f_beta(g, g) == pytest.approx(1.0)
    assert salfau.s_measure(g, g) >= 0.99
    assert salfau.e_measure(g, g) == pytest.approx(1.0)
    assert salfau.mae(1.0 - g, g) == pytest.approx(1.0)


def test_train_save_load_predict(tmp_path):
    assert salfau.gen_synthetic(4, 16, 3, str(tmp_path / "data")) == 4
    net = salfau.Network(base_channels=2, input_size=16, seed=2)
    losses = net.train(str(tmp_path / "data" / "manifest.tsv"), iters=2, batch=2, seed=1)
    assert len(losses) == 2 and all(math.isfinite(v) for v in losses)

    ckpt = str(tmp_path / "model.ckpt")
    net.save(ckpt)
    x = np.random.default_rng(1).random((1, 3, 32, 32), dtype=np.float32)
    restored = salfau.Network.load(ckpt, input_size=32)
    assert restored.parameter_names == net.parameter_names
    assert np.array_equal(restored.forward(x)["fused"], net.forward(x)["fused"])


def test_pgm_round_trip(tmp_path):
    m = np.linspace(0, 1, 48, dtype=np.float32).reshape(6, 8)
    path = str(tmp_path / "map.pgm")
    salfau.write_pgm(path, m)
    back = salfau.read_image(path)
    assert back.shape == (6, 8)
    assert np.array_equal(back, np.floor(m * 255 + 0.5).astype(np.uint8))


def test_cli_usage_error_exit_code():
    code, _, err = salfau.run_cli(["train"])
    assert code == 2
    assert err
