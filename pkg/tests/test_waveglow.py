import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aratts.audio.dsp import MelSpectrogram
from aratts.autodiff import Tensor, backward, no_grad, ops
from aratts.autodiff.gradcheck import check
from aratts.waveglow import (
    Coupling,
    InvConv,
    SingularWeight,
    VocoderConfig,
    WaveGlow,
    gradcheck_nll_case,
    squeeze,
    unsqueeze,
)

from _flowcases import roundtrip_error

TINY = dict(n_mels=5, hop=32, n_flows=3, wn_layers=2, wn_channels=8)


def tiny(seed=0, **kw):
    return WaveGlow(VocoderConfig(**{**TINY, **kw}), seed=seed)


def randomise(wg, rng, scale=0.3):
    for c in wg.couplings:
        c.wn.end.weight.data[...] = scale * rng.standard_normal(c.wn.end.weight.shape)
        c.wn.end.bias.data[...] = scale * rng.standard_normal(c.wn.end.bias.shape)
    return wg


class TestSqueeze:
    def test_shape(self):
        z, n = squeeze(np.arange(16.0))
        assert z.shape == (8, 2) and n == 16
        np.testing.assert_array_equal(z[:, 1], np.arange(8.0, 16.0))

    def test_padding(self):
        z, n = squeeze(np.arange(17.0))
        assert z.shape == (8, 3) and n == 17
        np.testing.assert_array_equal(z[1:, 2], 0.0)

    @given(st.integers(1, 300), st.integers(0, 2**31))
    @settings(max_examples=100, deadline=None)
    def test_round_trip_bit_exact(self, n, seed):
        x = np.random.default_rng(seed).standard_normal(n)
        z, length = squeeze(x)
        back = unsqueeze(z, length)
        assert back.dtype == x.dtype
        np.testing.assert_array_equal(back, x)


class TestInvConv:
    def test_orthogonal_init(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            w = InvConv(8, rng).weight.data
            assert np.abs(w.T @ w - np.eye(8)).max() < 1e-10
            assert np.linalg.det(w) > 0

    def test_identity(self):
        conv = InvConv(8, np.random.default_rng(0))
        conv.weight.data[...] = np.eye(8)
        z = np.random.default_rng(1).standard_normal((1, 8, 5))
        y, ld = conv(Tensor(z))
        np.testing.assert_array_equal(y.data, z)
        assert ld.item() == 0.0

    def test_scaled_identity_logdet(self):
        conv = InvConv(8, np.random.default_rng(0))
        conv.weight.data[...] = 2 * np.eye(8)
        _, ld = conv(Tensor(np.ones((1, 8, 1))))
        assert ld.item() == pytest.approx(8 * math.log(2), rel=1e-14)

    def test_orthogonal_inverse_is_transpose(self):
        conv = InvConv(8, np.random.default_rng(3))
        y = np.random.default_rng(4).standard_normal((1, 8, 9))
        np.testing.assert_allclose(conv.inverse(y), conv.weight.data.T @ y, atol=1e-12)

    def test_singular(self):
        conv = InvConv(8, np.random.default_rng(0))
        conv.weight.data[0] = 0.0
        with pytest.raises(SingularWeight):
            conv.inverse(np.zeros((1, 8, 2)))


class TestCoupling:
    def _coupling(self, zero_end=True):
        cfg = VocoderConfig(**TINY)
        rng = np.random.default_rng(0)
        c = Coupling(8, cfg.n_mels * 8, cfg, rng)
        if not zero_end:
            c.wn.end.weight.data[...] = 0.3 * rng.standard_normal(c.wn.end.weight.shape)
        cond = c.wn.project_condition(Tensor(rng.standard_normal((1, cfg.n_mels * 8, 6))))
        z = rng.standard_normal((1, 8, 6))
        return c, cond, z

    def test_zero_init_identity(self):
        c, cond, z = self._coupling()
        y, ld = c(Tensor(z), cond)
        np.testing.assert_array_equal(y.data, z)
        assert ld.item() == 0.0

    def test_pass_through_half(self):
        c, cond, z = self._coupling(zero_end=False)
        y, _ = c(Tensor(z), cond)
        np.testing.assert_array_equal(y.data[:, :4], z[:, :4])
        assert not np.allclose(y.data[:, 4:], z[:, 4:])

    def test_round_trip(self):
        c, cond, z = self._coupling(zero_end=False)
        y, _ = c(Tensor(z), cond)
        np.testing.assert_allclose(c.inverse(y, cond), z, rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize("dtype", ["float64", "float32"])
    def test_inference_path_matches_graph(self, dtype):
        cfg = VocoderConfig(**{**TINY, "wn_layers": 3, "dtype": dtype})
        rng = np.random.default_rng(1)
        c = Coupling(8, cfg.n_mels * 8, cfg, rng)
        for _, p in c.wn.named_parameters():
            p.data[...] = 0.3 * rng.standard_normal(p.data.shape)
        x = Tensor(rng.standard_normal((2, 4, 11)).astype(dtype))
        cond = c.wn.project_condition(Tensor(rng.standard_normal((2, cfg.n_mels * 8, 11)).astype(dtype)))
        graph = c.wn(x, cond)
        assert graph.requires_grad
        with no_grad():
            fast = c.wn(x, cond)
        assert fast.data.dtype == graph.data.dtype
        np.testing.assert_array_equal(fast.data, graph.data)

    def test_log_s_clamped(self):
        c, cond, z = self._coupling()
        c.wn.end.bias.data[:4] = 100.0
        y, ld = c(Tensor(z), cond)
        assert ld.item() == pytest.approx(7.0 * 4 * 6)
        np.testing.assert_allclose(y.data[:, 4:], z[:, 4:] * math.exp(7.0))


class TestFlow:
    def test_identity_flow(self):
        wg = tiny()
        for conv in wg.convs:
            conv.weight.data[...] = np.eye(8)
        audio = np.random.default_rng(0).uniform(-1, 1, (1, 64))
        res = wg.flow_forward(audio, np.zeros((1, 5, 2)))
        np.testing.assert_array_equal(res.z.data[0], squeeze(audio[0])[0])
        assert res.log_det.item() == 0.0

    @pytest.mark.parametrize("dtype,tol", [("float64", 1e-10), ("float32", 1e-6)])
    def test_round_trip(self, dtype, tol):
        rng = np.random.default_rng(1)
        wg = randomise(tiny(dtype=dtype), rng)
        audio = rng.uniform(-1, 1, (1, 200))
        mel = rng.standard_normal((1, 5, 7))
        with no_grad():
            assert max(roundtrip_error(wg, audio, mel)) < tol

    def test_log_det_additive(self):
        rng = np.random.default_rng(2)
        wg = randomise(tiny(), rng)
        res = wg.flow_forward(rng.uniform(-1, 1, (1, 96)), rng.standard_normal((1, 5, 3)))
        assert len(res.step_log_dets) == 2 * 3
        assert res.log_det.item() == pytest.approx(sum(res.step_log_dets), rel=1e-12)

    def test_length_padding(self):
        rng = np.random.default_rng(3)
        wg = randomise(tiny(), rng)
        audio = rng.uniform(-1, 1, (1, 61))
        mel = rng.standard_normal((1, 5, 2))
        cond = wg.condition(mel, 61)
        res = wg.flow_forward(audio, cond=cond)
        assert res.z.shape == (1, 8, 8) and res.length == 61
        np.testing.assert_allclose(wg.flow_inverse(res.z, cond=cond, length=61), audio, atol=1e-12)

    def test_too_few_frames(self):
        with pytest.raises(ValueError):
            tiny().condition(np.zeros((1, 5, 1)), 200)

    def test_load_rejects_singular(self):
        wg = tiny()
        state = wg.state_dict()
        state["convs.0.weight"] = np.zeros((8, 8))
        with pytest.raises(SingularWeight):
            wg.load_state_dict(state)


class TestNll:
    def test_identity_zero_audio(self):
        wg = tiny()
        for conv in wg.convs:
            conv.weight.data[...] = np.eye(8)
        assert wg.nll(np.zeros((1, 64)), np.zeros((1, 5, 2))).item() == 0.0

    def test_scaling_weights_by_two(self):
        rng = np.random.default_rng(4)
        wg = tiny()
        audio = rng.uniform(-1, 1, (1, 64))
        mel = rng.standard_normal((1, 5, 2))
        before = wg.flow_forward(audio, mel)
        for conv in wg.convs:
            conv.weight.data *= 2.0
        after = wg.flow_forward(audio, mel)
        groups = 64 // 8
        # zero-initialised couplings: only the mixes change the log-det
        delta_logdet = after.log_det.item() - before.log_det.item()
        assert delta_logdet == pytest.approx(3 * groups * 8 * math.log(2), rel=1e-12)
        # z is scaled by 2 per flow step
        np.testing.assert_allclose(after.z.data, before.z.data * 2.0 ** 3, rtol=1e-12)
        z_term = lambda r: 0.5 * float((r.z.data ** 2).sum())  # noqa: E731
        expected = z_term(after) - after.log_det.item()
        assert wg.nll(audio, mel).item() == pytest.approx(expected, rel=1e-12)

    def test_gradcheck(self):
        fn, arrays = gradcheck_nll_case(np.random.default_rng(5))
        assert check(fn, arrays) < 1e-4

    def test_sigma(self):
        wg = tiny()
        audio = np.random.default_rng(6).uniform(-1, 1, (1, 64))
        mel = np.zeros((1, 5, 2))
        res = wg.flow_forward(audio, mel)
        zz = float((res.z.data ** 2).sum())
        assert wg.nll(audio, mel, sigma=0.5).item() == pytest.approx(2 * zz - res.log_det.item())

    def test_float32_model_gradients(self):
        rng = np.random.default_rng(7)
        wg = randomise(tiny(dtype="float32"), rng)
        loss = wg.nll(rng.uniform(-1, 1, (1, 64)), rng.standard_normal((1, 5, 2)))
        backward(loss)
        for name, p in wg.named_parameters():
            assert p.grad.dtype == np.float32, name
        assert np.abs(wg.convs[0].weight.grad).sum() > 0

    def test_descent_lowers_nll(self):
        rng = np.random.default_rng(8)
        wg = tiny()
        audio = 0.1 * rng.standard_normal((1, 128))
        mel = rng.standard_normal((1, 5, 4))
        first = wg.nll(audio, mel)
        backward(first)
        for _, p in wg.named_parameters():
            p.data -= 1e-4 * p.grad
        assert wg.nll(audio, mel).item() < first.item()


def test_cast_gradient_dtype():
    x = Tensor(np.array([1.5, -2.0]), requires_grad=True)
    y = ops.cast(x, np.float32)
    assert y.dtype == np.float32
    backward(ops.sum(ops.mul(y, y)))
    assert x.grad.dtype == np.float64
    np.testing.assert_array_equal(x.grad, [3.0, -4.0])


class TestSynthesize:
    def test_length_contract(self):
        wg = randomise(tiny(), np.random.default_rng(9))
        clip = wg.synthesize(np.zeros((5, 7)), sigma=0.6, seed=1)
        assert len(clip) == 32 * 7 and clip.sample_rate == 22050
        assert np.abs(clip.samples).max() <= 1.0

    def test_sigma_zero_ignores_seed(self):
        wg = randomise(tiny(), np.random.default_rng(10))
        mel = np.random.default_rng(11).standard_normal((5, 4))
        a = wg.synthesize(mel, sigma=0.0, seed=1).samples
        b = wg.synthesize(mel, sigma=0.0, seed=2).samples
        np.testing.assert_array_equal(a, b)

    def test_seeded(self):
        wg = randomise(tiny(), np.random.default_rng(12))
        mel = np.zeros((5, 4))
        np.testing.assert_array_equal(wg.synthesize(mel, 0.6, seed=3).samples,
                                      wg.synthesize(mel, 0.6, seed=3).samples)
        assert not np.array_equal(wg.synthesize(mel, 0.6, seed=3).samples,
                                  wg.synthesize(mel, 0.6, seed=4).samples)

    def test_accepts_mel_spectrogram(self):
        wg = tiny()
        clip = wg.synthesize(MelSpectrogram(np.zeros((3, 5)), frame_hop=32), sigma=0.0)
        assert len(clip) == 96
