import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bcpredict.features import (
    FeatureError,
    FeatureOptions,
    FeatureTrack,
    FrameSpec,
    WordEmbeddingTable,
    compute_tracks,
    context_length,
    context_window,
    mel_filterbank,
    mfcc_track,
    normalize,
    pitch_track,
    pitch_variation_track,
    power_track,
    raw_mfcc,
    raw_pitch,
    raw_power,
    read_track,
    stack_features,
    word_embedding_track,
    write_track,
)

from conftest import SR, glide, tone, utt

SPEC = FrameSpec()


def track(name, n, dim, value=0.0):
    return FeatureTrack(name, np.full((n, dim), value), SPEC)


class TestFraming:
    def test_frame_count(self):
        for n in (256, 257, 336, 8000, 12345):
            expected = (n - 256) // 80 + 1
            assert SPEC.n_frames(n, SR) == expected
            assert len(power_track(np.ones(n), SR)) == expected

    def test_too_short(self):
        assert SPEC.n_frames(255, SR) == 0

    def test_invalid_spec(self):
        with pytest.raises(FeatureError):
            FrameSpec(window=0.01, shift=0.01)

    def test_frame_index_floor(self):
        assert SPEC.frame_index(1.0) == 100
        assert SPEC.frame_index(1.0049) == 100
        assert SPEC.frame_index(0.3) == 30


class TestPower:
    def test_silence_is_constant_zero(self):
        np.testing.assert_allclose(power_track(np.zeros(8000), SR).frames, 0.0, atol=1e-9)

    def test_amplitude_ratio(self):
        full = raw_power(tone(200, 0.5, amp=1.0), SR, SPEC)
        half = raw_power(tone(200, 0.5, amp=0.5), SR, SPEC)
        np.testing.assert_allclose(full - half, np.log(4.0), atol=1e-6)

    def test_matches_direct_sum(self):
        x = np.random.default_rng(0).normal(size=2000)
        vals = raw_power(x, SR, SPEC)
        for t in (0, 5, len(vals) - 1):
            seg = x[t * 80 : t * 80 + 256]
            assert vals[t] == pytest.approx(np.log(1e-10 + np.sum(seg**2)), rel=1e-12)

    def test_normalized_moments(self):
        x = np.random.default_rng(1).normal(size=16000) * np.linspace(0.1, 1, 16000)
        f = power_track(x, SR).frames[:, 0]
        assert abs(f.mean()) < 1e-9 and abs(f.std() - 1) < 1e-9


class TestPitch:
    def test_pure_tone(self):
        f0 = raw_pitch(tone(200, 1.0), SR, SPEC)
        np.testing.assert_allclose(f0, 200.0, rtol=0.01)
        np.testing.assert_allclose(pitch_track(tone(200, 1.0), SR).frames, 0.0, atol=0.15)

    @pytest.mark.parametrize("f", [80.0, 123.0, 175.0, 260.0, 410.0])
    def test_harmonic_tones(self, f):
        f0 = raw_pitch(tone(f, 0.5, harmonics=8), SR, SPEC)
        np.testing.assert_allclose(np.median(f0), f, rtol=0.01)

    def test_silence_unvoiced(self):
        np.testing.assert_array_equal(pitch_track(np.zeros(8000), SR).frames, 0.0)

    def test_noise_mostly_unvoiced(self):
        x = np.random.default_rng(2).normal(size=8000)
        assert np.mean(raw_pitch(x, SR, SPEC) > 0) < 0.1

    def test_octave_glide(self):
        x = np.concatenate([tone(200, 1.0, harmonics=4), glide(200, 100, 1.0, harmonics=4), tone(100, 1.0, harmonics=4)])
        # reference is the median; measure the tail relative to the 200 Hz region
        f0 = raw_pitch(x, SR, SPEC)
        ref = np.median(f0[10:80])
        tail = 12 * np.log2(f0[-60:-5] / ref)
        np.testing.assert_allclose(tail, -12.0, atol=0.5)

    def test_hz_mode(self):
        np.testing.assert_allclose(pitch_track(tone(150, 0.5), SR, mode="hz").frames, 150.0, rtol=0.01)

    def test_running_reference_is_causal(self):
        x = glide(120, 240, 2.0)
        full = pitch_track(x, SR, normalization="running").frames
        part = pitch_track(x[: 8000], SR, normalization="running").frames
        np.testing.assert_array_equal(full[: len(part)], part)


class TestVariation:
    def test_dim_and_range(self):
        v = pitch_variation_track(tone(200, 0.5, harmonics=5), SR).frames
        assert v.shape[1] == 7
        assert v.min() >= -1 and v.max() <= 1

    def test_stationary_peaks_at_center(self):
        v = pitch_variation_track(tone(200, 0.5, harmonics=5), SR).frames
        assert np.all(np.argmax(v, axis=1) == 3)

    def test_silence_defined_zero(self):
        np.testing.assert_array_equal(pitch_variation_track(np.zeros(4000), SR).frames, 0.0)

    @pytest.mark.parametrize("rate_oct_per_s,expected_k", [(3.0, 1), (-3.0, -1), (6.0, 2), (-6.0, -2)])
    def test_glide_direction(self, rate_oct_per_s, expected_k):
        # halves are 16 ms apart, so the ratio is 2**(rate*0.016) and k = 16*rate*0.016
        f_start = 180.0 if rate_oct_per_s > 0 else 400.0
        x = glide(f_start, f_start * 2 ** (rate_oct_per_s * 0.3), 0.3, harmonics=6)
        v = pitch_variation_track(x, SR).frames
        k = np.argmax(v, axis=1) - 3
        assert np.median(k) == expected_k


class TestMfcc:
    def test_dim(self):
        for sr in (8000, 16000):
            assert mfcc_track(tone(300, 0.5, sr=sr), sr).dim == 13

    def test_silence_constant(self):
        f = mfcc_track(np.zeros(8000), SR).frames
        np.testing.assert_allclose(f, np.broadcast_to(f[0], f.shape), atol=1e-9)

    def test_filterbank_partition(self):
        fb = mel_filterbank(26, 512, 8000)
        assert fb.shape == (26, 257)
        assert fb.min() >= 0 and fb.max() <= 1

    @pytest.mark.parametrize("signal", ["noise", "tone"])
    def test_reference_implementation(self, signal):
        psf = pytest.importorskip("python_speech_features")
        rng = np.random.default_rng(3)
        x = rng.normal(size=SR) * 0.3 if signal == "noise" else tone(220, 1.0, harmonics=6) + 0.01 * rng.normal(size=SR)
        ours = raw_mfcc(x, SR, SPEC)
        ref = psf.mfcc(x, SR, winlen=0.032, winstep=0.01, numcep=13, nfilt=26, nfft=512, preemph=0.97,
                       ceplifter=0, appendEnergy=False, winfunc=np.hamming)
        n = min(len(ours), len(ref))
        assert abs(len(ours) - len(ref)) <= 1
        np.testing.assert_allclose(ours[:n], ref[:n], atol=1e-3)


class TestWords:
    def table(self):
        return WordEmbeddingTable(3, {"one": np.array([1.0, 0, 0]), "two": np.array([0, 1.0, 0])})

    def test_no_words(self):
        f = word_embedding_track([], self.table(), SPEC, 5.0).frames
        assert f.shape == (SPEC.n_frames_for_duration(5.0), 3)
        assert not f.any()

    def test_single_word(self):
        f = word_embedding_track([utt("A", ("one", 0.5, 1.0))], self.table(), SPEC, 5.0).frames
        # frame t sees words ending by t*0.01 + 0.032: first frame is 97 (0.97 + 0.032 >= 1.0)
        assert not f[:97].any()
        np.testing.assert_array_equal(f[97:], np.tile([1.0, 0, 0], (len(f) - 97, 1)))

    def test_two_words(self):
        u = [utt("A", ("one", 0.5, 1.0)), utt("A", ("two", 1.5, 2.0))]
        f = word_embedding_track(u, self.table(), SPEC, 5.0).frames
        np.testing.assert_array_equal(f[150], [1.0, 0, 0])
        np.testing.assert_array_equal(f[250], [0, 1.0, 0])

    def test_oov_stable_and_bucketed(self):
        a, b = WordEmbeddingTable(4), WordEmbeddingTable(4)
        np.testing.assert_array_equal(a["zebra"], b["zebra"])
        assert "zebra" not in a
        assert a.oov.shape == (1024, 4)

    def test_file_round_trip(self, tmp_path):
        t = self.table()
        t.save(tmp_path / "emb.txt")
        back = WordEmbeddingTable.load(tmp_path / "emb.txt")
        assert back.dim == 3
        np.testing.assert_array_equal(back["two"], t["two"])

    def test_file_errors(self, tmp_path):
        (tmp_path / "e.txt").write_text("2 3\nx 1 2 3\n")
        with pytest.raises(FeatureError, match="header says"):
            WordEmbeddingTable.load(tmp_path / "e.txt")
        (tmp_path / "e.txt").write_text("1 3\nx 1 2\n")
        with pytest.raises(FeatureError, match="expected 3"):
            WordEmbeddingTable.load(tmp_path / "e.txt")


class TestStacking:
    def test_paper_dims(self):
        s = stack_features([track("variation", 10, 7), track("power", 10, 1), track("pitch", 10, 1)])
        assert s.dim == 9
        assert s.name == "power+pitch+variation"

    def test_word_dims(self):
        assert stack_features([track("power", 5, 1), track("pitch", 5, 1), track("word", 5, 30)]).dim == 32

    def test_identity(self):
        t = FeatureTrack("power", np.arange(6.0)[:, None], SPEC)
        np.testing.assert_array_equal(stack_features([t]).frames, t.frames)

    def test_clips_to_shortest(self):
        assert len(stack_features([track("power", 10, 1), track("pitch", 9, 1)])) == 9

    def test_spec_mismatch(self):
        other = FeatureTrack("pitch", np.zeros((5, 1)), FrameSpec(0.025, 0.01))
        with pytest.raises(FeatureError):
            stack_features([track("power", 5, 1), other])

    def test_order(self):
        p = FeatureTrack("power", np.full((3, 1), 1.0), SPEC)
        q = FeatureTrack("pitch", np.full((3, 1), 2.0), SPEC)
        np.testing.assert_array_equal(stack_features([q, p]).frames[0], [1.0, 2.0])


class TestContextWindow:
    def test_row_counts(self):
        assert context_length(0.8, SPEC, 2) == 40
        assert context_length(1.5, SPEC, 2) == 75

    def test_single_row(self):
        t = FeatureTrack("power", np.arange(10.0)[:, None], SPEC)
        w = context_window(t, 4, 0.01, 1)
        np.testing.assert_array_equal(w.data, [[4.0]])

    def test_rows_oldest_first_and_causal(self):
        t = FeatureTrack("power", np.arange(300.0)[:, None], SPEC)
        w = context_window(t, 250, 0.8, 2)
        np.testing.assert_array_equal(w.data[:, 0], np.arange(250 - 78, 251, 2))
        assert w.data.max() == 250

    def test_underflow_and_overflow(self):
        t = FeatureTrack("power", np.arange(100.0)[:, None], SPEC)
        with pytest.raises(FeatureError):
            context_window(t, 77, 0.8, 2)
        context_window(t, 78, 0.8, 2)
        with pytest.raises(FeatureError):
            context_window(t, 100, 0.1, 1)

    @given(anchor=st.integers(0, 399), width=st.sampled_from([0.1, 0.5, 0.8, 1.5]), stride=st.integers(1, 4))
    @settings(max_examples=80, deadline=None)
    def test_never_reads_future(self, anchor, width, stride):
        data = np.arange(400.0)[:, None]
        n = context_length(width, SPEC, stride)
        if anchor < (n - 1) * stride:
            return
        poisoned = data.copy()
        poisoned[anchor + 1 :] = np.nan
        w = context_window(FeatureTrack("power", poisoned, SPEC), anchor, width, stride)
        assert w.data.shape == (n, 1)
        assert np.isfinite(w.data).all()


class TestCausality:
    def test_running_normalization_prefix_stable(self, generated):
        conv = generated[0].conversation
        audio = conv.audio("A")
        opts = FeatureOptions(("power", "pitch", "variation", "mfcc"), SPEC, "running")
        full = compute_tracks(conv, "A", opts)
        cut = 20 * SR
        conv.audio_a = audio[:cut]
        try:
            part = compute_tracks(conv, "A", opts)
        finally:
            conv.audio_a = audio
        for name in full:
            n = len(part[name])
            np.testing.assert_allclose(full[name].frames[:n], part[name].frames, rtol=0, atol=1e-9)

    def test_frame_counts_agree(self, generated):
        conv = generated[0].conversation
        tracks = compute_tracks(conv, "B", FeatureOptions(("power", "pitch", "variation", "mfcc", "word"), SPEC), WordEmbeddingTable(4))
        lengths = {len(t) for t in tracks.values()}
        assert max(lengths) - min(lengths) <= 1

    def test_conversation_normalization_depends_on_future(self):
        # documented: the default whole-conversation statistics are not causal
        x = np.random.default_rng(5).normal(size=16000)
        y = x.copy()
        y[12000:] *= 10
        a = power_track(x, SR).frames
        b = power_track(y, SR).frames
        assert not np.allclose(a[:100], b[:100])


class TestCache:
    def test_round_trip(self, tmp_path):
        t = FeatureTrack("variation", np.random.default_rng(0).normal(size=(50, 7)), SPEC)
        write_track(tmp_path / "x.bcf", t)
        back = read_track(tmp_path / "x.bcf")
        assert back.name == "variation" and back.spec == SPEC
        np.testing.assert_array_equal(back.frames, t.frames.astype(np.float32))
        assert (tmp_path / "x.bcf.txt").read_text() == "variation 7 10 32\n"

    def test_layout(self, tmp_path):
        t = FeatureTrack("power", np.array([[1.5], [-2.0]]), SPEC)
        write_track(tmp_path / "p.bcf", t)
        data = (tmp_path / "p.bcf").read_bytes()
        assert data[:4] == b"BCF1"
        assert np.frombuffer(data[4:12], "<u4").tolist() == [1, 2]
        assert np.frombuffer(data[12:], "<f4").tolist() == [1.5, -2.0]

    def test_corrupt(self, tmp_path):
        (tmp_path / "bad.bcf").write_bytes(b"XXXX" + bytes(8))
        with pytest.raises(FeatureError):
            read_track(tmp_path / "bad.bcf")
        t = FeatureTrack("power", np.zeros((4, 1)), SPEC)
        write_track(tmp_path / "t.bcf", t)
        (tmp_path / "t.bcf").write_bytes((tmp_path / "t.bcf").read_bytes()[:-4])
        with pytest.raises(FeatureError):
            read_track(tmp_path / "t.bcf")


def test_normalize_unknown_mode():
    with pytest.raises(FeatureError):
        normalize(np.zeros((3, 1)), "global")
