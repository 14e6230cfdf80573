import numpy as np
import pytest

from flowfront.autodiff import ComplexTensor, Tensor
from flowfront.beamformer import (
    BeamformerConfig,
    MaskNetwork,
    NeuralBeamformer,
    ReferenceEstimator,
    apply_beamformer,
    average_mask,
    compute_psd,
    estimate_mask,
    estimate_reference,
    mvdr_filter,
    oracle_masks,
)
from flowfront.dsp import ComplexSpectrogram, amplitude_features
from flowfront.errors import ContractViolation, DegenerateTraceError
from gradcheck import check_gradients
from oracles import bilstm_loop, complex_solve, random_hpd, sigmoid

TINY = BeamformerConfig(layers=1, hidden=3, projection=3, ref_hidden=3)


def make_spec(z):
    return ComplexSpectrogram(ComplexTensor.from_numpy(z), 1, 2 * (z.shape[-1] - 1), 2 * (z.shape[-1] - 1))


def random_spec(rng, C, T_, F):
    return make_spec(rng.normal(size=(C, T_, F)) + 1j * rng.normal(size=(C, T_, F)))


def as_psd(phi):
    return ComplexTensor.from_numpy(np.asarray(phi))


class TestMasks:
    def test_zero_network_gives_half(self, rng):
        net = MaskNetwork(5, TINY, rng)
        net.zero_parameters()
        m = estimate_mask(Tensor(rng.normal(size=(2, 4, 5))), net)
        np.testing.assert_array_equal(m.data, 0.5)

    def test_bounded(self, rng):
        net = MaskNetwork(6, BeamformerConfig(layers=2, hidden=4, projection=4), rng)
        for p in net.parameters():
            p.data *= 5
        m = estimate_mask(Tensor(rng.normal(size=(3, 7, 6)) * 10), net).data
        assert np.all(m > 0) and np.all(m < 1)

    def test_composition_oracle(self, rng):
        net = MaskNetwork(3, TINY, rng)
        feats = rng.normal(size=(1, 2, 3))
        got = estimate_mask(Tensor(feats), net).data
        hidden, _, _ = bilstm_loop(feats[0], net.blstm)
        expect = sigmoid(hidden @ net.fc.weight.data + net.fc.bias.data)
        np.testing.assert_allclose(got[0], expect, atol=1e-10)

    def test_bin_mismatch(self, rng):
        net = MaskNetwork(4, TINY, rng)
        with pytest.raises(ContractViolation):
            estimate_mask(Tensor(np.zeros((1, 2, 5))), net)

    def test_average_single_channel(self, rng):
        m = rng.uniform(size=(1, 3, 4))
        np.testing.assert_array_equal(average_mask(Tensor(m)).data, m[0])

    def test_average_two_values(self):
        m = np.stack([np.full((2, 2), 0.2), np.full((2, 2), 0.6)])
        np.testing.assert_allclose(average_mask(Tensor(m)).data, 0.4)

    def test_average_scalar_oracle(self, rng):
        m = rng.uniform(size=(5, 3, 4))
        got = average_mask(Tensor(m)).data
        for t in range(3):
            for f in range(4):
                assert abs(got[t, f] - sum(m[c, t, f] for c in range(5)) / 5) < 1e-15


class TestPsd:
    def test_single_frame(self, rng):
        z = rng.normal(size=(3, 1, 2)) + 1j * rng.normal(size=(3, 1, 2))
        phi = compute_psd(make_spec(z), np.ones((1, 2))).numpy()
        for f in range(2):
            s = z[:, 0, f]
            np.testing.assert_allclose(phi[f], np.outer(s, s.conj()), atol=1e-9)

    def test_constant_signal_weights_cancel(self, rng):
        s = rng.normal(size=(2, 1, 3)) + 1j * rng.normal(size=(2, 1, 3))
        z = np.repeat(s, 5, axis=1)
        phi = compute_psd(make_spec(z), rng.uniform(0.1, 1, size=(5, 3))).numpy()
        for f in range(3):
            np.testing.assert_allclose(phi[f], np.outer(s[:, 0, f], s[:, 0, f].conj()), atol=1e-9)

    def test_loop_oracle(self, rng):
        C, T_, F = 3, 4, 2
        z = rng.normal(size=(C, T_, F)) + 1j * rng.normal(size=(C, T_, F))
        m = rng.uniform(size=(T_, F))
        phi = compute_psd(make_spec(z), m).numpy()
        for f in range(F):
            for i in range(C):
                for j in range(C):
                    num = sum(m[t, f] * z[i, t, f] * np.conj(z[j, t, f]) for t in range(T_))
                    den = sum(m[t, f] for t in range(T_)) + 1e-10  # documented guard
                    assert abs(phi[f, i, j] - num / den) < 1e-10

    def test_hermitian_and_semidefinite(self, rng):
        spec = random_spec(rng, 4, 6, 5)
        phi = compute_psd(spec, rng.uniform(size=(6, 5))).numpy()
        np.testing.assert_allclose(phi, np.conj(np.swapaxes(phi, 1, 2)), atol=1e-10)
        assert np.linalg.eigvalsh(phi).min() >= -1e-8

    def test_zero_mask_is_guarded(self, rng):
        phi = compute_psd(random_spec(rng, 2, 3, 2), np.zeros((3, 2))).numpy()
        assert np.all(np.isfinite(phi))


class TestMvdr:
    def test_identity_pair(self):
        eye = as_psd(np.eye(5)[None])
        h = mvdr_filter(eye, eye, np.eye(5)[0]).numpy()
        np.testing.assert_allclose(h[0], [0.2, 0, 0, 0, 0], atol=1e-9)

    def test_rank_one_steering(self, rng):
        for _ in range(10):
            d = rng.normal(size=3) + 1j * rng.normal(size=3)
            h = mvdr_filter(as_psd(np.outer(d, d.conj())[None]), as_psd(np.eye(3)[None]), np.eye(3)[0]).numpy()
            np.testing.assert_allclose(h[0], d * np.conj(d[0]) / np.vdot(d, d).real, atol=1e-6)

    def test_matches_gaussian_elimination(self, rng):
        for _ in range(10):
            phi_s, phi_n = random_hpd(rng, 3), random_hpd(rng, 3)
            r = rng.dirichlet(np.ones(3))
            loaded = phi_n + 1e-6 * (np.trace(phi_n).real / 3 + 1e-10) * np.eye(3)
            ratio = complex_solve(loaded, phi_s)
            expect = ratio @ r / np.trace(ratio)
            h = mvdr_filter(as_psd(phi_s[None]), as_psd(phi_n[None]), r).numpy()[0]
            np.testing.assert_allclose(h, expect, atol=1e-8)

    def test_degenerate_trace(self):
        with pytest.raises(DegenerateTraceError):
            mvdr_filter(as_psd(np.zeros((1, 2, 2))), as_psd(np.eye(2)[None]), [1.0, 0.0])

    def test_degenerate_trace_zero_mode(self):
        phi_s = np.stack([np.zeros((2, 2)), np.eye(2)])
        phi_n = np.stack([np.eye(2)] * 2)
        h = mvdr_filter(as_psd(phi_s), as_psd(phi_n), [1.0, 0.0], on_degenerate="zero").numpy()
        np.testing.assert_array_equal(h[0], 0)
        np.testing.assert_allclose(h[1], [0.5, 0], atol=1e-9)


class TestApply:
    def test_one_hot_selects_channel(self, rng):
        spec = random_spec(rng, 3, 4, 5)
        h = np.zeros((5, 3))
        h[:, 1] = 1.0
        y = apply_beamformer(spec, ComplexTensor.from_numpy(h)).coeffs.numpy()
        np.testing.assert_array_equal(y[0], spec.coeffs.numpy()[1])

    def test_zero_weights(self, rng):
        spec = random_spec(rng, 2, 4, 5)
        y = apply_beamformer(spec, ComplexTensor.from_numpy(np.zeros((5, 2)))).coeffs.numpy()
        assert not y.any()

    def test_shape_mismatch(self, rng):
        with pytest.raises(ContractViolation):
            apply_beamformer(random_spec(rng, 2, 4, 5), ComplexTensor.from_numpy(np.zeros((5, 3))))

    def test_unconjugated_flag(self, rng):
        spec = random_spec(rng, 2, 3, 4)
        h = rng.normal(size=(4, 2)) + 1j * rng.normal(size=(4, 2))
        y = apply_beamformer(spec, ComplexTensor.from_numpy(h), conjugate=False).coeffs.numpy()[0]
        np.testing.assert_allclose(y, np.einsum("fc,ctf->tf", h, spec.coeffs.numpy()), atol=1e-12)

    @pytest.mark.parametrize("draw", range(50))
    def test_distortionless(self, draw):
        rng = np.random.default_rng(draw)
        C, T_ = int(rng.integers(2, 6)), 6
        d = rng.normal(size=C) + 1j * rng.normal(size=C)
        sigma2 = float(rng.uniform(0.1, 3.0))
        ref = int(rng.integers(C))
        a = rng.normal(size=T_) + 1j * rng.normal(size=T_)
        s = np.outer(d, a)[:, :, None]  # (C, T, 1)
        h = mvdr_filter(
            as_psd(np.outer(d, d.conj())[None]), as_psd(sigma2 * np.eye(C)[None]), np.eye(C)[ref]
        )
        y = apply_beamformer(make_spec(s), h).coeffs.numpy()[0, :, 0]
        np.testing.assert_allclose(y, d[ref] * a, atol=1e-8)

    def test_channel_permutation(self, rng):
        C, T_, F = 3, 5, 4
        z = rng.normal(size=(C, T_, F)) + 1j * rng.normal(size=(C, T_, F))
        m_s, m_n = rng.uniform(0.1, 1, size=(2, T_, F))
        r = rng.dirichlet(np.ones(C))
        perm = rng.permutation(C)

        def run(zz, rr):
            spec = make_spec(zz)
            h = mvdr_filter(compute_psd(spec, m_s), compute_psd(spec, m_n), rr)
            return apply_beamformer(spec, h).coeffs.numpy()

        np.testing.assert_allclose(run(z[perm], r[perm]), run(z, r), atol=1e-10)


class TestReference:
    def test_single_channel(self, rng):
        net = ReferenceEstimator(4, 3, rng)
        r = estimate_reference(Tensor(rng.normal(size=(1, 5, 4))), net)
        np.testing.assert_allclose(r.data, [1.0])

    def test_symmetric_channels_uniform(self, rng):
        net = ReferenceEstimator(4, 3, rng)
        x = np.repeat(rng.normal(size=(1, 5, 4)), 3, axis=0)
        np.testing.assert_allclose(estimate_reference(Tensor(x), net).data, np.full(3, 1 / 3), atol=1e-12)

    def test_composition_oracle(self, rng):
        net = ReferenceEstimator(4, 3, rng)
        x = rng.normal(size=(3, 5, 4))
        r = estimate_reference(Tensor(x), net).data
        pooled = x.mean(axis=1)
        s = np.tanh(pooled @ net.hidden.weight.data + net.hidden.bias.data) @ net.score.weight.data[:, 0]
        s = s + net.score.bias.data[0]
        expect = np.exp(s - s.max()) / np.exp(s - s.max()).sum()
        np.testing.assert_allclose(r, expect, atol=1e-12)
        assert abs(r.sum() - 1) < 1e-12


class TestEnhance:
    def test_single_channel_proportional(self, rng):
        nb = NeuralBeamformer(5, TINY, rng)
        spec = random_spec(rng, 1, 6, 5)
        y, _ = nb.enhance(spec)
        x = spec.coeffs.numpy()[0]
        ratio = y.coeffs.numpy()[0] / x
        # one complex gain per frequency, shared across frames
        np.testing.assert_allclose(ratio, np.broadcast_to(ratio[:1], ratio.shape), atol=1e-9)

    def test_zero_input(self, rng):
        nb = NeuralBeamformer(5, TINY, rng)
        y, _ = nb.enhance(make_spec(np.zeros((2, 4, 5), dtype=complex)))
        assert not y.coeffs.numpy().any()

    def test_composition_oracle(self, rng):
        nb = NeuralBeamformer(5, TINY, rng)
        spec = random_spec(rng, 2, 3, 5)
        y, diag = nb.enhance(spec)
        feats = amplitude_features(spec)
        m_s = average_mask(estimate_mask(feats, nb.speech))
        m_n = average_mask(estimate_mask(feats, nb.noise))
        _, hid = nb.speech(feats)
        r = estimate_reference(hid, nb.reference)
        h = mvdr_filter(compute_psd(spec, m_s), compute_psd(spec, m_n), r)
        expect = apply_beamformer(spec, h).coeffs.numpy()
        np.testing.assert_allclose(y.coeffs.numpy(), expect, atol=1e-10)
        assert set(diag.to_json()) >= {"reference", "weights_re", "weights_im"}

    def test_eval_mode_uses_hard_reference(self, rng):
        nb = NeuralBeamformer(5, TINY, rng).eval()
        _, diag = nb.enhance(random_spec(rng, 3, 4, 5))
        assert sorted(diag.reference.data.tolist()) == [0.0, 0.0, 1.0]

    def test_gradient_reaches_mask_network(self, rng):
        nb = NeuralBeamformer(3, BeamformerConfig(layers=1, hidden=2, projection=2, ref_hidden=2), rng)
        spec = random_spec(rng, 2, 3, 3)
        w = rng.normal(size=(1, 3, 3))

        def loss():
            y, _ = nb.enhance(spec)
            return (y.coeffs.abs2() * Tensor(w)).sum()

        params = [nb.speech.fc.weight, nb.noise.blstm.fwd[0].w_ih, nb.reference.score.weight]
        loss().backward()
        assert np.linalg.norm(nb.speech.fc.weight.grad) > 0
        assert check_gradients(loss, params) < 1e-3


class TestOracleMasks:
    def test_ratio_and_complement(self, rng):
        s = rng.normal(size=(2, 3, 4)) + 0j
        n = rng.normal(size=(2, 3, 4)) + 0j
        m_s, m_n = oracle_masks(s, n)
        np.testing.assert_allclose(m_s + m_n, 1.0)
        assert np.all((m_s >= 0) & (m_s <= 1))
