"""Unit tests for the MLP model, AdamW, and the binary checkpoint format."""

import numpy as np
import pytest

from softsil.errors import (
    CheckpointFormatError,
    InvalidState,
    NumericalFailure,
    ShapeError,
    TruncatedPayload,
)
from softsil.model import (
    CHECKPOINT_MAGIC,
    AdamW,
    MlpModel,
    ModelConfig,
    load_checkpoint,
    save_checkpoint,
)
from softsil.numerics import finite_diff_grad, rel_error


def _model(dropout=0.0, head_hidden=4):
    cfg = ModelConfig(
        input_dim=3, encoder_widths=(6, 5), head_hidden=head_hidden, embed_dim=4,
        dropout_rate=dropout,
    )
    return MlpModel(cfg, np.random.default_rng(0)), cfg


class TestConfig:
    def test_dims(self):
        _, cfg = _model()
        assert cfg.feature_dim == 5
        assert cfg.projection_dim == 4

    def test_identity_head_dims(self):
        _, cfg = _model(head_hidden=0)
        assert cfg.projection_dim == cfg.feature_dim

    def test_validation(self):
        with pytest.raises(ValueError):
            ModelConfig(input_dim=3, encoder_widths=())
        with pytest.raises(ValueError):
            ModelConfig(input_dim=3, dropout_rate=1.0)


class TestForward:
    def test_shapes_and_normalized_projections(self):
        model, cfg = _model()
        x = np.random.default_rng(1).random((7, 3))
        feats, projs, tape = model.forward(x)
        assert feats.shape == (7, cfg.feature_dim)
        assert projs.z.shape == (7, cfg.projection_dim)
        assert projs.normalized
        assert np.allclose(np.linalg.norm(projs.z, axis=1), 1.0, atol=1e-12)

    def test_eval_deterministic(self):
        model, _ = _model(dropout=0.5)
        x = np.random.default_rng(2).random((4, 3))
        f1, p1, _ = model.forward(x, "eval")
        f2, p2, _ = model.forward(x, "eval")
        assert np.array_equal(f1, f2)
        assert np.array_equal(p1.z, p2.z)

    def test_identity_head_projections_are_normalized_features(self):
        model, _ = _model(head_hidden=0)
        x = np.random.default_rng(3).random((4, 3))
        feats, projs, _ = model.forward(x)
        assert np.allclose(projs.z, feats / np.linalg.norm(feats, axis=1, keepdims=True))

    def test_input_validation(self):
        model, _ = _model()
        with pytest.raises(ShapeError):
            model.forward(np.ones((2, 4)))
        with pytest.raises(ValueError):
            model.forward(np.ones((2, 3)), mode="predict")

    def test_train_dropout_needs_rng(self):
        model, _ = _model(dropout=0.3)
        with pytest.raises(InvalidState):
            model.forward(np.ones((2, 3)), mode="train")

    def test_encode_matches_eval_forward(self):
        model, _ = _model()
        x = np.random.default_rng(4).random((3, 3))
        assert np.array_equal(model.encode(x).z, model.forward(x, "eval")[1].z)


class TestBackward:
    def test_matches_finite_differences(self):
        model, cfg = _model(dropout=0.0)
        rng = np.random.default_rng(5)
        # nonzero biases keep the instance away from relu kinks
        for name in model.params:
            if name.endswith("_b"):
                model.params[name][:] = rng.uniform(0.05, 0.2, size=model.params[name].shape)
        x = rng.random((5, 3)) + 0.1
        wf = rng.standard_normal((5, cfg.feature_dim))
        wp = rng.standard_normal((5, cfg.projection_dim))

        names = sorted(model.params)
        shapes = {n: model.params[n].shape for n in names}

        def set_params(vec):
            off = 0
            for n in names:
                size = int(np.prod(shapes[n]))
                model.params[n] = vec[off : off + size].reshape(shapes[n])
                off += size
            model.bump_version()

        def f(vec):
            set_params(vec)
            feats, projs, _ = model.forward(x)
            return float(np.sum(wf * feats) + np.sum(wp * projs.z))

        x0 = np.concatenate([model.params[n].ravel() for n in names])
        set_params(x0)
        feats, projs, tape = model.forward(x)
        grads = model.backward(tape, grad_features=wf, grad_projections=wp)
        analytic = np.concatenate([grads[n].ravel() for n in names])
        numeric = finite_diff_grad(f, x0.copy())
        assert rel_error(analytic, numeric) < 1e-5

    def test_stale_tape_rejected(self):
        model, _ = _model()
        _, _, tape = model.forward(np.ones((2, 3)))
        model.bump_version()
        with pytest.raises(InvalidState):
            model.backward(tape, grad_features=np.zeros((2, 5)))

    def test_projection_only_gradients_fill_head(self):
        model, cfg = _model()
        x = np.random.default_rng(6).random((3, 3))
        _, projs, tape = model.forward(x)
        grads = model.backward(tape, grad_projections=np.ones_like(projs.z))
        assert set(grads) == set(model.params)


class TestAdamW:
    def test_minimizes_quadratic(self):
        params = {"w": np.array([5.0, -3.0])}
        opt = AdamW(lr=0.1, weight_decay=0.0)
        for _ in range(500):
            opt.step(params, {"w": 2.0 * params["w"]})
        assert np.all(np.abs(params["w"]) < 1e-3)

    def test_nonfinite_gradient_rejected_before_state_change(self):
        params = {"w": np.ones(2)}
        opt = AdamW()
        with pytest.raises(NumericalFailure):
            opt.step(params, {"w": np.array([1.0, np.nan])})
        assert opt.t == 0

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            AdamW().step({"w": np.ones(2)}, {"w": np.ones(3)})

    def test_decay_is_decoupled_and_skippable(self):
        p1 = {"w": np.array([1.0])}
        p2 = {"w": np.array([1.0])}
        AdamW(lr=0.1, weight_decay=0.5).step(p1, {"w": np.array([0.1])})
        AdamW(lr=0.1, weight_decay=0.5).step(p2, {"w": np.array([0.1])}, no_decay=("w",))
        assert p1["w"][0] == pytest.approx(p2["w"][0] - 0.1 * 0.5 * p2["w"][0], rel=1e-6)

    def test_untouched_params_left_alone(self):
        params = {"a": np.ones(2), "b": np.full(2, 7.0)}
        AdamW(lr=0.1).step(params, {"a": np.ones(2)})
        assert np.array_equal(params["b"], np.full(2, 7.0))


class TestCheckpoint:
    def _roundtrip_setup(self, tmp_path):
        rng = np.random.default_rng(7)
        params = {
            "enc0_W": rng.standard_normal((3, 4)),
            "enc0_b": rng.standard_normal(4),
            "cls_W": rng.standard_normal((4, 2)),
        }
        opt = AdamW()
        opt.step(params, {k: rng.standard_normal(v.shape) for k, v in params.items()})
        path = str(tmp_path / "ckpt.bin")
        save_checkpoint(path, params, opt, epoch=12, seed=99, )
        return path, params, opt

    def test_bit_exact_roundtrip(self, tmp_path):
        path, params, opt = self._roundtrip_setup(tmp_path)
        ckpt = load_checkpoint(path)
        assert ckpt.epoch == 12
        assert ckpt.seed == 99
        assert ckpt.opt_t == opt.t
        assert set(ckpt.params) == set(params)
        for name in params:
            assert np.array_equal(ckpt.params[name], params[name])
            assert np.array_equal(ckpt.opt_m[name], opt.m[name])
            assert np.array_equal(ckpt.opt_v[name], opt.v[name])

    def test_save_is_byte_deterministic(self, tmp_path):
        path, params, opt = self._roundtrip_setup(tmp_path)
        path2 = str(tmp_path / "ckpt2.bin")
        save_checkpoint(path2, params, opt, epoch=12, seed=99)
        assert open(path, "rb").read() == open(path2, "rb").read()

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "junk.bin"
        p.write_bytes(b"NOTACKPT" + b"\x00" * 32)
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(str(p))

    def test_bad_version(self, tmp_path):
        path, _, _ = self._roundtrip_setup(tmp_path)
        data = bytearray(open(path, "rb").read())
        data[8] = 0xFF  # version field
        p = tmp_path / "badver.bin"
        p.write_bytes(bytes(data))
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(str(p))

    def test_truncated_header_and_payload(self, tmp_path):
        path, _, _ = self._roundtrip_setup(tmp_path)
        data = open(path, "rb").read()
        for cut in (len(CHECKPOINT_MAGIC) + 4, len(data) - 16):
            p = tmp_path / f"cut{cut}.bin"
            p.write_bytes(data[:cut])
            with pytest.raises(TruncatedPayload):
                load_checkpoint(str(p))
