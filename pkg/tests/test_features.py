from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from duplex.features import (OOV, EmbeddingTable, FbankConfig, fbank, fbank_csv, frame_count, frames, hann,
                             hz_to_mel, load_embeddings, mel_filterbank, mel_to_hz, power_spectrogram,
                             save_embeddings, tokenize)

CFG = FbankConfig()


def test_zero_signal_hits_the_floor():
    out = fbank(np.zeros(8000))
    assert out.shape == (frame_count(8000), 64)
    assert np.all(out == np.log(1e-10))


def test_empty_audio_raises():
    with pytest.raises(ValueError, match="empty audio"):
        fbank(np.zeros(0))


def test_frame_count_formula():
    assert frame_count(1) == 1
    assert frame_count(1024) == 1
    assert frame_count(1535) == 1
    assert frame_count(1536) == 2
    assert frame_count(8000) == 1 + (8000 - 1024) // 512


def test_short_input_is_zero_padded():
    x = np.ones(10)
    f = frames(x)
    assert f.shape == (1, 1024)
    assert f[0, :10].sum() == 10 and f[0, 10:].sum() == 0


def test_power_spectrum_matches_direct_dft():
    n = np.arange(1024)
    x = np.sin(2 * np.pi * 1000.0 * n / 8000.0)
    spec = power_spectrogram(x)[0]
    w = x * hann(1024)
    k = np.arange(513)[:, None]
    direct = np.abs((w[None, :] * np.exp(-2j * np.pi * k * n[None, :] / 1024)).sum(axis=1)) ** 2
    np.testing.assert_allclose(spec, direct, rtol=1e-9, atol=1e-6)
    assert int(np.argmax(spec)) == 128


def test_mel_filterbank_shape_and_peaks():
    fb = mel_filterbank(CFG)
    assert fb.shape == (64, 513)
    assert np.all(fb >= 0) and np.all(fb.max(axis=1) <= 1.0)
    centers = np.argmax(fb, axis=1)
    assert np.all(np.diff(centers) >= 0)


def test_mel_scale_inverse():
    f = np.linspace(0, 4000, 17)
    np.testing.assert_allclose(mel_to_hz(hz_to_mel(f)), f, atol=1e-9)
    assert hz_to_mel(700.0) == pytest.approx(2595.0 * np.log10(2.0))


@pytest.mark.parametrize("kw", [dict(hop=0), dict(hop=2048), dict(n_mels=0), dict(n_mels=600), dict(log_floor=0)])
def test_fbank_config_validation(kw):
    with pytest.raises(ValueError):
        FbankConfig(**kw).validate()


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 5000))
def test_fbank_row_count_property(n):
    assert fbank(np.random.default_rng(n).normal(size=n)).shape == (frame_count(n), 64)


def test_fbank_csv_header_and_times():
    out = fbank_csv(fbank(np.zeros(2048)))
    lines = out.splitlines()
    assert lines[0].startswith("t_ms,mel0,mel1") and lines[0].endswith("mel63")
    assert lines[1].startswith("0,") and lines[2].startswith("64,")


def test_tokenize_falls_back_to_characters():
    vocab = {"pay": 0, "b": 1, "i": 2, "l": 3}
    assert tokenize("pay bill") == ["pay", "bill"]
    assert tokenize("pay bill", vocab) == ["pay", "b", "i", "l", "l"]
    assert tokenize("pay bx", vocab) == ["pay", "b", OOV]


def test_embedding_table_oov_and_empty():
    t = EmbeddingTable.random(["a", "b"], 4, seed=0)
    assert t.tokens[0] == OOV and np.all(t.matrix[0] == 0)
    assert list(t.encode("a b zz")) == [1, 2, 0, 0]
    assert list(t.encode("")) == [0]


def test_embedding_file_roundtrip(tmp_path):
    t = EmbeddingTable.random(["pay", "bill"], 3, seed=1)
    save_embeddings(t, tmp_path / "e.txt")
    back = load_embeddings(tmp_path / "e.txt")
    assert back.tokens == t.tokens
    np.testing.assert_array_equal(back.matrix, t.matrix)
    (tmp_path / "bad.txt").write_text("a 1 2\nb 1\n")
    with pytest.raises(ValueError):
        load_embeddings(tmp_path / "bad.txt")
    with pytest.raises(ValueError):
        EmbeddingTable.from_tokens(["a", "a"], np.zeros((2, 2)))
