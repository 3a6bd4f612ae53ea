import math

import numpy as np
import pytest

import cea_kit


def test_identity_factors_reduce_to_scaled_projection():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((5, 4))
    a = np.eye(4)
    b = np.eye(4)
    delta = cea_kit.assemble_residual(x, a, b)
    np.testing.assert_allclose(delta, x / 4.0, rtol=0, atol=1e-5)


def test_assembly_matches_numpy_oracle():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((7, 6))
    a = rng.standard_normal((6, 3))
    b = rng.standard_normal((3, 5))
    an = a / (np.linalg.norm(a, axis=0, keepdims=True) + 1e-6)
    bn = b / (np.linalg.norm(b, axis=1, keepdims=True) + 1e-6)
    expected = (x @ an @ bn) / 3.0
    np.testing.assert_allclose(cea_kit.assemble_residual(x, a, b), expected, atol=1e-12)
    na, nb = cea_kit.rank_norm(a, b)
    np.testing.assert_allclose(na, an, atol=1e-15)
    np.testing.assert_allclose(nb, bn, atol=1e-15)


def test_topk_weights_sum_to_one():
    x = np.array([[math.log(2.0), 0.0]])
    delta = cea_kit.assemble_residual(x, np.eye(2), np.eye(2), routing="topk_softmax", top_k=2,
                                      normalize=False)
    np.testing.assert_allclose(delta, [[2.0 / 3.0, 1.0 / 3.0]], atol=1e-12)


def test_rank_mismatch_raises():
    with pytest.raises(ValueError):
        cea_kit.assemble_residual(np.zeros((2, 4)), np.zeros((4, 3)), np.zeros((2, 4)))


def test_assembly_cost():
    c = cea_kit.assembly_cost(256, 64, 64, 8)
    assert c["lowrank"] == 262144
    assert c["dense"] == 1048576
    assert c["ratio"] == 4.0


def test_metrics_closed_forms():
    y = np.random.default_rng(2).random((16, 16, 3))
    assert cea_kit.psnr(y, y) == math.inf
    assert cea_kit.ssim(y, y) == pytest.approx(1.0, abs=1e-12)
    z = np.zeros((10, 10))
    e = z.copy()
    e[0, 0] = 1.0
    assert cea_kit.psnr(e, z) == pytest.approx(20.0, abs=1e-12)


def test_bootstrap_constant_and_deterministic():
    r = cea_kit.paired_bootstrap([1.0] * 50, n_resamples=1000)
    assert r["lo"] == r["hi"] == 1.0
    assert r["p_boot"] == 0.0 and r["p_below_resolution"]
    d = list(np.random.default_rng(3).normal(0.5, 1.0, 200))
    assert cea_kit.paired_bootstrap(d, seed=4) == cea_kit.paired_bootstrap(d, seed=4)


def test_props_and_fault_injection():
    ok = cea_kit.run_props(["ranknorm_scale_invariance"])
    bad = cea_kit.run_props(["ranknorm_scale_invariance"], fault="skip-ranknorm")
    assert ok["passed"] is True
    assert bad["passed"] is False


def test_generate_train_evaluate(tmp_path):
    cfg = cea_kit.default_config()
    cfg["dataset"].update(height=16, width=16, n_train=8, n_test=4)
    cfg["dataset"]["path"] = str(tmp_path / "data")
    cfg["optim"]["steps"] = 2
    cea_kit.generate(cfg, str(tmp_path / "data"))
    rep = cea_kit.train(cfg, str(tmp_path / "run"))
    assert (tmp_path / "run" / "checkpoint.ceak").exists()
    ev = cea_kit.evaluate(cfg, str(tmp_path / "run" / "checkpoint.ceak"))
    assert math.isfinite(ev["eval"]["groups"]["Avg"]["psnr_db"])
    assert rep is not None


def test_missing_dataset_is_value_error(tmp_path):
    cfg = cea_kit.default_config()
    cfg["dataset"]["path"] = str(tmp_path / "nowhere")
    with pytest.raises(ValueError):
        cea_kit.train(cfg, str(tmp_path / "run"))
