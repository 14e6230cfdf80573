import json

import numpy as np
import pytest

from flowfront.datasim import (
    CorpusCounts,
    MixConfig,
    SynthConfig,
    build_corpus,
    delay,
    load_audio,
    measured_snr,
    mix_multichannel,
    power,
    read_manifest,
    synth_clean,
)
from flowfront.dsp import read_wav
from flowfront.errors import ContractViolation, VocabularyError

SMALL = CorpusCounts(train_clean=10, train_noisy=10, dev=2, eval=2)


def peak_hz(x, sr):
    spec = np.abs(np.fft.rfft(x * np.hanning(x.size)))
    return np.argmax(spec) * sr / x.size


class TestSynth:
    def test_single_char_length(self, rng):
        cfg = SynthConfig()
        w = synth_clean("a", cfg, rng)
        edge = int(cfg.edge_ms * 16)
        assert w.num_samples == 1600 + 2 * edge
        active = w.samples[0, edge : edge + 1600]
        quiet = np.concatenate([w.samples[0, :edge], w.samples[0, -edge:]])
        assert power(active) > 1000 * power(quiet)

    def test_deterministic(self):
        a = synth_clean("abc", SynthConfig(), np.random.default_rng(5)).samples
        b = synth_clean("abc", SynthConfig(), np.random.default_rng(5)).samples
        np.testing.assert_array_equal(a, b)

    def test_distinct_peaks(self, rng):
        cfg = SynthConfig(f0_jitter=0.0)
        chars = [c for c in cfg.chars if c != " "]
        peaks = [peak_hz(synth_clean(c, cfg, rng).samples[0], cfg.sample_rate) for c in chars]
        for i in range(len(peaks)):
            for j in range(i + 1, len(peaks)):
                assert abs(peaks[i] - peaks[j]) > 40

    def test_unmapped_character(self, rng):
        with pytest.raises(VocabularyError):
            synth_clean("az", SynthConfig(), rng)

    def test_samples_in_range(self, rng):
        x = synth_clean("abcdefgh", SynthConfig(), rng).samples
        assert np.all(np.abs(x) <= 1)


class TestMix:
    def test_noise_free_identity(self, rng):
        clean = synth_clean("ab", SynthConfig(), rng)
        m = mix_multichannel(clean, MixConfig(max_delay=0, gain_range=(1.0, 1.0)), rng, noise_scale=0.0)
        for c in range(2):
            np.testing.assert_array_equal(m.wave.samples[c], clean.samples[0])

    def test_zero_db(self, rng):
        clean = synth_clean("abc", SynthConfig(), rng)
        m = mix_multichannel(clean, MixConfig(), rng, snr_db=0.0)
        assert abs(power(m.noise[0]) / power(m.images[0]) - 1) < 1e-6

    @pytest.mark.parametrize("seed", range(5))
    def test_measured_snr(self, seed):
        rng = np.random.default_rng(seed)
        clean = synth_clean("abcd", SynthConfig(), rng)
        m = mix_multichannel(clean, MixConfig(channels=3), rng)
        assert np.all(np.abs(measured_snr(m.images, m.noise) - m.snr_db) < 0.1)

    def test_linearity_with_delays(self, rng):
        clean = synth_clean("ab", SynthConfig(), rng)
        m = mix_multichannel(clean, MixConfig(gain_range=(1.0, 1.0)), rng, noise_scale=0.0)
        for c, d in enumerate(m.delays):
            np.testing.assert_array_equal(m.wave.samples[c], delay(clean.samples[0], d))

    @pytest.mark.parametrize(
        "kwargs", [{"channels": 1}, {"max_delay": -1}, {"gain_range": (0.0, 1.0)}, {"noise_type": "pink"}]
    )
    def test_invalid_config(self, kwargs):
        with pytest.raises(ContractViolation):
            MixConfig(**kwargs)

    def test_mono_input_required(self, rng):
        from flowfront.dsp import Waveform

        with pytest.raises(ContractViolation):
            mix_multichannel(Waveform(np.zeros((2, 100))), MixConfig(), rng)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    return build_corpus(tmp_path_factory.mktemp("c"), SMALL, seed=3)


class TestCorpus:
    def test_counts_and_channels(self, corpus):
        utts = read_manifest(corpus)
        assert len(utts) == 24
        by_split = {s: [u for u in utts if u.split == s] for s in ("train-clean", "train-noisy")}
        assert len(by_split["train-clean"]) == 10 and len(by_split["train-noisy"]) == 10
        for u in utts:
            w = load_audio(corpus, u)
            assert w.channels == u.channels == (1 if u.split == "train-clean" else 2)

    def test_non_parallel(self, corpus):
        utts = read_manifest(corpus)
        clean = [u for u in utts if u.split == "train-clean"]
        noisy = [u for u in utts if u.split == "train-noisy"]
        assert not {u.transcript for u in clean} & {u.transcript for u in noisy}
        assert not {u.utt_id for u in clean} & {u.utt_id for u in noisy}

    def test_default_seed_disjoint(self, tmp_path):
        counts = CorpusCounts(train_clean=60, train_noisy=60, dev=0, eval=0)
        utts = read_manifest(build_corpus(tmp_path, counts))
        clean = {u.transcript for u in utts if u.split == "train-clean"}
        noisy = {u.transcript for u in utts if u.split == "train-noisy"}
        assert not clean & noisy

    def test_rerun_identical(self, corpus, tmp_path):
        again = build_corpus(tmp_path, SMALL, seed=3)
        assert again.read_bytes() == corpus.read_bytes()
        for u in read_manifest(corpus):
            assert (corpus.parent / u.path).read_bytes() == (again.parent / u.path).read_bytes()

    def test_wavs_round_trip(self, corpus, tmp_path):
        from flowfront.dsp import write_wav

        for u in read_manifest(corpus)[:6]:
            src = corpus.parent / u.path
            w = read_wav(src)
            write_wav(tmp_path / "x.wav", w)
            assert (tmp_path / "x.wav").read_bytes() == src.read_bytes()

    def test_hidden_references(self, corpus):
        for u in read_manifest(corpus):
            if u.split in ("dev", "eval"):
                ref = load_audio(corpus, u, clean_ref=True)
                assert ref.channels == 1
                assert u.snr_db is not None
            else:
                assert u.clean_ref is None

    def test_manifest_is_json_lines(self, corpus):
        for line in corpus.read_text(encoding="utf-8").splitlines():
            row = json.loads(line)
            assert set(row) >= {"utt_id", "transcript", "path", "channels", "split", "snr_db"}
