import math
import struct

import numpy as np
import pytest

from flowfront.autodiff import ComplexTensor, Tensor
from flowfront.dsp import (
    LOG_FLOOR,
    PAPER_STFT,
    ComplexSpectrogram,
    Waveform,
    WavFormatError,
    amplitude_features,
    beamformed_log_mel,
    hann,
    istft,
    log_mel,
    mel_filterbank,
    quantize,
    read_wav,
    stft,
    write_wav,
)
from flowfront.beamformer import apply_beamformer
from flowfront.errors import ConfigurationError, InputTooShortError
from gradcheck import check_gradients


def naive_dft(frame, n_fft):
    x = np.concatenate([frame, np.zeros(n_fft - frame.size)])
    k = np.arange(n_fft // 2 + 1)[:, None]
    n = np.arange(n_fft)[None, :]
    return (x[None, :] * np.exp(-2j * np.pi * k * n / n_fft)).sum(axis=1)


class TestStft:
    def test_zero_waveform(self):
        spec = stft(Waveform(np.zeros((2, 800))))
        assert not spec.coeffs.numpy().any()

    def test_cosine_at_bin_center(self):
        sr, n_fft, k = 16000, 128, 9
        t = np.arange(1600) / sr
        x = np.cos(2 * np.pi * k * sr / n_fft * t)
        spec = stft(Waveform(x, sr))
        mags = np.abs(spec.coeffs.numpy()[0])
        win = hann(spec.window)
        for f, row in enumerate(mags):
            frame = x[f * spec.frame_shift : f * spec.frame_shift + spec.window] * win
            np.testing.assert_allclose(spec.coeffs.numpy()[0, f], naive_dft(frame, n_fft), atol=1e-9)
            others = np.delete(row, k)
            assert row[k] > others.max()

    def test_paper_preset_bins(self):
        spec = stft(
            Waveform(np.random.default_rng(0).normal(size=(1, 16000)) * 0.1),
            PAPER_STFT.window_ms, PAPER_STFT.shift_ms, PAPER_STFT.fft_size,
        )
        assert spec.bins == 201
        assert spec.frames == 1 + (16000 - 400) // 160

    def test_desk_frame_arithmetic(self):
        spec = stft(Waveform(np.zeros((1, 1000))))
        assert spec.bins == 65
        assert spec.frames == 1 + (1000 - 128) // 64

    def test_too_short(self):
        with pytest.raises(InputTooShortError):
            stft(Waveform(np.zeros((1, 100))))

    def test_linearity(self, rng):
        x, y = rng.normal(size=(2, 900)), rng.normal(size=(2, 900))
        lhs = stft(Waveform(2.5 * x - 0.7 * y)).coeffs.numpy()
        rhs = 2.5 * stft(Waveform(x)).coeffs.numpy() - 0.7 * stft(Waveform(y)).coeffs.numpy()
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_parseval_per_frame(self, rng):
        x = rng.normal(size=1000)
        spec = stft(Waveform(x))
        z = spec.coeffs.numpy()[0]
        win = hann(spec.window)
        N = spec.fft_size
        for t in range(spec.frames):
            frame = x[t * spec.frame_shift : t * spec.frame_shift + spec.window] * win
            e = np.abs(z[t]) ** 2
            one_sided = (e[0] + 2 * e[1:-1].sum() + e[-1]) / N
            assert abs(np.sum(frame**2) - one_sided) < 1e-8

    def test_istft_reconstructs_interior(self, rng):
        x = rng.normal(size=(1, 2000)) * 0.1
        y = istft(stft(Waveform(x)), length=2000)
        np.testing.assert_allclose(y.samples[0, 128:1800], x[0, 128:1800], atol=1e-10)

    def test_filtered_edges_not_amplified(self, rng):
        x = rng.normal(size=(1, 2000)) * 0.1
        spec = stft(Waveform(x))
        z = spec.coeffs.numpy() * np.exp(1j * rng.uniform(0, 2 * np.pi, size=spec.bins))
        y = istft(ComplexSpectrogram(ComplexTensor.from_numpy(z), spec.frame_shift, spec.fft_size,
                                     spec.window, spec.sample_rate), length=2000)
        assert np.abs(y.samples).max() < 10 * np.abs(x).max()


class TestAmplitude:
    def test_three_four_five(self):
        spec = ComplexSpectrogram(ComplexTensor(Tensor([[[3.0]]]), Tensor([[[4.0]]])), 64, 128, 128)
        assert amplitude_features(spec).data[0, 0, 0] == pytest.approx(5.0, abs=1e-12)

    def test_zero(self):
        spec = ComplexSpectrogram(ComplexTensor(Tensor(np.zeros((1, 1, 1)))), 64, 128, 128)
        assert amplitude_features(spec).data[0, 0, 0] == pytest.approx(0.0, abs=1e-6)

    def test_matches_scalar_oracle(self, rng):
        z = rng.normal(size=(2, 3, 4)) + 1j * rng.normal(size=(2, 3, 4))
        spec = ComplexSpectrogram(ComplexTensor.from_numpy(z), 64, 128, 128)
        got = amplitude_features(spec).data
        for idx in np.ndindex(z.shape):
            expect = math.sqrt(z[idx].real ** 2 + z[idx].imag ** 2 + 1e-12)
            assert abs(got[idx] - expect) < 1e-12


class TestLogMel:
    def test_zero_spectrum_hits_floor(self):
        spec = stft(Waveform(np.zeros((1, 640))))
        out = log_mel(spec)
        np.testing.assert_allclose(out.data, math.log(1e-10))
        assert out.data[0, 0] == pytest.approx(-23.0259, abs=1e-4)

    def test_flat_power_gives_filter_sums(self):
        F, n_mels = 65, 16
        spec = ComplexSpectrogram(ComplexTensor(Tensor(np.ones((1, 3, F)))), 64, 128, 128)
        fb = mel_filterbank(n_mels, 128, 16000)
        # independent oracle: sum the triangle weights with a loop
        sums = [sum(fb[m, k] for k in range(F)) for m in range(n_mels)]
        np.testing.assert_allclose(log_mel(spec).data, np.log(np.array(sums))[:, None] * np.ones(3))

    def test_paper_shape(self, rng):
        x = rng.normal(size=(1, 8000)) * 0.1
        spec = stft(Waveform(x), 25.0, 10.0, 400)
        assert log_mel(spec, n_mels=80).shape == (80, spec.frames)

    def test_odd_mels_rejected(self):
        spec = stft(Waveform(np.zeros((1, 640))))
        with pytest.raises(ConfigurationError):
            log_mel(spec, n_mels=15)

    @pytest.mark.parametrize("n_mels,n_fft", [(16, 128), (80, 400)])
    def test_filterbank_rows(self, n_mels, n_fft):
        fb = mel_filterbank(n_mels, n_fft, 16000)
        assert np.all(fb >= 0)
        assert np.all(fb.max(axis=1) > 0)

    def test_fmax_above_nyquist(self):
        with pytest.raises(ConfigurationError):
            mel_filterbank(16, 128, 16000, fmax=9000)

    def test_values_above_floor(self, rng):
        spec = stft(Waveform(rng.normal(size=(1, 900))))
        assert np.all(log_mel(spec).data >= math.log(LOG_FLOOR))

    def test_gradient(self, rng):
        z = rng.normal(size=(1, 3, 65)) + 1j * rng.normal(size=(1, 3, 65))
        spec = ComplexSpectrogram(ComplexTensor.from_numpy(z, requires_grad=True), 64, 128, 128)
        w = Tensor(rng.normal(size=(16, 3)))
        loss = lambda: (log_mel(spec) * w).sum()
        assert check_gradients(loss, [spec.coeffs.re, spec.coeffs.im]) < 1e-4


class TestBeamformedLogMel:
    def test_single_channel_unit_weight(self, rng):
        spec = stft(Waveform(rng.normal(size=(1, 900))))
        h = ComplexTensor(Tensor(np.ones((65, 1))))
        np.testing.assert_allclose(beamformed_log_mel(spec, h).data, log_mel(spec).data, atol=1e-12)

    def test_zero_weights_floor(self, rng):
        spec = stft(Waveform(rng.normal(size=(2, 900))))
        h = ComplexTensor(Tensor(np.zeros((65, 2))))
        np.testing.assert_allclose(beamformed_log_mel(spec, h).data, math.log(1e-10))

    def test_composition(self, rng):
        spec = stft(Waveform(rng.normal(size=(2, 900))))
        h = ComplexTensor.from_numpy(rng.normal(size=(65, 2)) + 1j * rng.normal(size=(65, 2)))
        np.testing.assert_allclose(
            beamformed_log_mel(spec, h).data, log_mel(apply_beamformer(spec, h)).data, atol=1e-12
        )


class TestWav:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        x = quantize(rng.uniform(-1, 1, size=(3, 500)))
        write_wav(tmp_path / "a.wav", Waveform(x, 16000))
        back = read_wav(tmp_path / "a.wav")
        assert back.sample_rate == 16000
        np.testing.assert_array_equal(back.samples, x)
        write_wav(tmp_path / "b.wav", back)
        assert (tmp_path / "a.wav").read_bytes() == (tmp_path / "b.wav").read_bytes()

    def test_rejects_float_wav(self, tmp_path):
        data = np.zeros(10, dtype="<f4").tobytes()
        fmt = struct.pack("<HHIIHH", 3, 1, 16000, 64000, 4, 32)
        blob = (
            b"RIFF" + struct.pack("<I", 36 + len(data)) + b"WAVE"
            + b"fmt " + struct.pack("<I", 16) + fmt
            + b"data" + struct.pack("<I", len(data)) + data
        )
        path = tmp_path / "f.wav"
        path.write_bytes(blob)
        with pytest.raises(WavFormatError, match="f.wav"):
            read_wav(path)
