import numpy as np
import pytest
from scipy.io import wavfile

from emotrace import dsp
from emotrace.dsp import AudioClip, DspConfig

SR = 44100


def naive_stft(x, n_fft, hop):
    """Frame-by-frame O(n^2) DFT with hand-built reflection padding."""
    pad = n_fft // 2
    n = len(x)

    def sample(j):
        # reflect about the first and last samples, without repeating them
        while j < 0 or j >= n:
            j = -j if j < 0 else 2 * (n - 1) - j
        return x[j]

    window = np.array([0.5 - 0.5 * np.cos(2 * np.pi * k / n_fft) for k in range(n_fft)])
    k = np.arange(n_fft // 2 + 1)[:, None]
    m = np.arange(n_fft)[None, :]
    basis = np.exp(-2j * np.pi * k * m / n_fft)
    n_frames = 1 + n // hop
    out = np.empty((n_fft // 2 + 1, n_frames), dtype=complex)
    for t in range(n_frames):
        frame = np.array([sample(t * hop - pad + i) for i in range(n_fft)]) * window
        out[:, t] = basis @ frame
    return out


def test_stft_matches_naive_dft():
    rng = np.random.default_rng(3)
    config = DspConfig(fft_size=256, hop_length=64)
    x = rng.uniform(-1, 1, 700)
    got = dsp.stft(AudioClip(x), config)
    want = naive_stft(x, 256, 64)
    assert got.shape == want.shape
    assert np.max(np.abs(got - want)) < 1e-9


def test_stft_frame_count_for_half_second_clip():
    clip = AudioClip(np.zeros(22050))
    # 1 + floor(22050 / 512) = 44
    assert dsp.stft(clip).shape == (1025, 44)
    assert DspConfig().n_frames(22050) == 44


def test_stft_bin_center_cosine_concentrates_energy():
    config = DspConfig()
    k = 40
    t = np.arange(22050)
    clip = AudioClip(0.5 * np.cos(2 * np.pi * k * t / config.fft_size))
    power = dsp.power_spectrogram(dsp.stft(clip, config))
    # frames whose window reaches into the reflected padding see a phase break
    inner = slice(2, power.shape[1] - 2)
    assert np.all(np.argmax(power[:, inner], axis=0) == k)
    # Hann main lobe at bin center: amplitudes 1/4, 1/2, 1/4, so 2/3 of the power is in bin k
    lobe = power[k - 1:k + 2, inner]
    assert np.allclose(power[k, inner] / lobe.sum(axis=0), 2 / 3, atol=1e-3)
    assert np.all(lobe.sum(axis=0) > 0.999 * power[:, inner].sum(axis=0))


def test_stft_of_silence_is_zero():
    assert not np.any(dsp.stft(AudioClip(np.zeros(4096))))


def test_stft_rejects_empty_clip():
    with pytest.raises(dsp.DspError):
        dsp.stft(AudioClip(np.zeros(0)))


def test_power_spectrogram():
    z = np.array([[3 + 4j, 0], [1 - 2j, -1j]])
    assert dsp.power_spectrogram(z)[0, 0] == 25
    assert np.array_equal(dsp.power_spectrogram(z), dsp.power_spectrogram(z.conj()))
    assert not np.any(dsp.power_spectrogram(np.zeros((3, 3), complex)))


def test_slaney_mel_anchor_points():
    assert dsp.hz_to_mel(0.0) == 0.0
    assert dsp.hz_to_mel(1000.0) == pytest.approx(15.0)
    assert dsp.hz_to_mel(6400.0) == pytest.approx(42.0)
    f = np.array([50.0, 999.0, 1000.0, 5000.0, 22050.0])
    assert np.allclose(dsp.mel_to_hz(dsp.hz_to_mel(f)), f, rtol=1e-12)


def test_mel_filterbank_shape_and_properties():
    config = DspConfig()
    fb = dsp.mel_filterbank(config)
    assert fb.shape == (128, 1025)
    assert np.all(fb >= 0)
    assert np.all(fb.sum(axis=1) > 0)
    centers = dsp.mel_center_frequencies(config)[1:-1]
    assert np.all(np.diff(centers) > 0)
    freqs = np.linspace(0, SR / 2, 1025)
    inner = (freqs > config.f_min) & (freqs < config.fmax)
    assert np.all(fb[:, inner].max(axis=0) > 0)


def test_mel_filters_have_unit_area():
    fb = dsp.mel_filterbank(DspConfig())
    bin_hz = SR / 2048
    # wide filters are well sampled, so the Riemann sum approximates the integral
    areas = fb[60:].sum(axis=1) * bin_hz
    assert np.allclose(areas, 1.0, atol=0.02)


def test_literal_fft_512_with_128_mels_is_degenerate():
    with pytest.raises(dsp.DegenerateFilter):
        dsp.mel_filterbank(DspConfig(fft_size=512, hop_length=2048))


def test_config_validation():
    with pytest.raises(dsp.DspError):
        DspConfig(fft_size=1000)
    with pytest.raises(dsp.DspError):
        DspConfig(hop_length=0)
    with pytest.raises(dsp.DspError):
        DspConfig(f_min=3000, f_max=2000)


def test_log_mel_silence_hits_floor():
    mel = dsp.log_mel(AudioClip(np.zeros(22050)))
    assert mel.shape == (128, 44)
    assert np.all(mel.values == pytest.approx(10 * np.log10(1e-10)))


def test_log_mel_doubling_amplitude_adds_6db():
    rng = np.random.default_rng(0)
    x = 0.2 * rng.normal(size=22050)
    a = dsp.log_mel(AudioClip(x)).values
    b = dsp.log_mel(AudioClip(2 * x)).values
    above = a > -90
    assert above.mean() > 0.9
    assert np.allclose((b - a)[above], 10 * np.log10(4), atol=1e-9)


def test_log_mel_monotone_in_gain():
    rng = np.random.default_rng(1)
    x = 0.1 * rng.normal(size=22050)
    base = dsp.log_mel(AudioClip(x)).values
    for c in (1.01, 1.5, 3.0):
        assert np.all(dsp.log_mel(AudioClip(c * x)).values >= base)


def test_gaussian_noise():
    rng = np.random.default_rng(0)
    mel = dsp.log_mel(AudioClip(0.1 * rng.normal(size=22050)))
    same = dsp.add_gaussian_noise(mel, 0.0, np.random.default_rng(1))
    assert np.array_equal(same.values, mel.values)
    a = dsp.add_gaussian_noise(mel, 0.1, np.random.default_rng(7))
    b = dsp.add_gaussian_noise(mel, 0.1, np.random.default_rng(7))
    assert np.array_equal(a.values, b.values)
    diff = a.values - mel.values
    assert abs(diff.mean()) < 4 * 0.1 / np.sqrt(128 * 44)
    with pytest.raises(dsp.DspError):
        dsp.add_gaussian_noise(mel, -1.0, rng)


def test_slice_clips():
    assert len(dsp.slice_clips(AudioClip(np.zeros(45 * SR)), 0.5)) == 90
    assert all(len(c) == 22050 for c in dsp.slice_clips(AudioClip(np.zeros(45 * SR))))
    assert dsp.slice_clips(AudioClip(np.zeros(22049))) == []
    assert len(dsp.slice_clips(AudioClip(np.zeros(44100)))) == 2
    assert dsp.slice_clips(AudioClip(np.zeros(0))) == []


def test_load_wav_int16(tmp_path):
    data = np.zeros(22050, dtype=np.int16)
    data[0] = -32768
    data[1] = 16384
    wavfile.write(tmp_path / "a.wav", SR, data)
    clip = dsp.load_wav(tmp_path / "a.wav")
    assert len(clip) == 22050 and clip.sample_rate == SR
    assert clip.samples[0] == -1.0
    assert clip.samples[1] == 0.5


def test_load_wav_stereo_float_and_int32(tmp_path):
    stereo = np.stack([np.full(100, 0.5, np.float32), np.full(100, -0.25, np.float32)], axis=1)
    wavfile.write(tmp_path / "s.wav", SR, stereo)
    assert np.allclose(dsp.load_wav(tmp_path / "s.wav").samples, 0.125)
    wavfile.write(tmp_path / "i.wav", SR, np.full(10, -2 ** 31, np.int32))
    assert np.all(dsp.load_wav(tmp_path / "i.wav").samples == -1.0)


def test_load_wav_errors(tmp_path):
    wavfile.write(tmp_path / "r.wav", 48000, np.zeros(10, np.int16))
    with pytest.raises(dsp.RateMismatch):
        dsp.load_wav(tmp_path / "r.wav")
    wavfile.write(tmp_path / "u.wav", SR, np.zeros(10, np.uint8))
    with pytest.raises(dsp.UnsupportedEncoding):
        dsp.load_wav(tmp_path / "u.wav")
    (tmp_path / "junk.wav").write_bytes(b"not a wav file")
    with pytest.raises(dsp.UnsupportedEncoding):
        dsp.load_wav(tmp_path / "junk.wav")
    with pytest.raises(FileNotFoundError):
        dsp.load_wav(tmp_path / "missing.wav")


def test_feature_file_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    feats = rng.normal(size=(3, 128, 44))
    dsp.write_features(tmp_path / "x.melf", feats)
    raw = (tmp_path / "x.melf").read_bytes()
    assert raw[:4] == b"MELF"
    assert len(raw) == 20 + 4 * feats.size
    back = dsp.read_features(tmp_path / "x.melf")
    assert np.array_equal(back, feats.astype(np.float32).astype(np.float64))


def test_feature_file_rejects_bad_version(tmp_path):
    dsp.write_features(tmp_path / "x.melf", np.zeros((1, 2, 3)))
    raw = bytearray((tmp_path / "x.melf").read_bytes())
    raw[4] = 9
    (tmp_path / "x.melf").write_bytes(bytes(raw))
    with pytest.raises(dsp.DspError):
        dsp.read_features(tmp_path / "x.melf")


def test_extract_song():
    rng = np.random.default_rng(0)
    feats = dsp.extract_song(AudioClip(0.1 * rng.normal(size=3 * 22050 + 100)))
    assert feats.shape == (3, 128, 44)
