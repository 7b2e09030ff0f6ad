import numpy as np
import pytest

from lesionkit.imgops import (binarize, channel_stats, denormalize_channels, fill_holes, normalize_channels,
                              postprocess_segmentation, read_image, read_mask, read_prob_mask, resize,
                              write_image, write_mask, write_prob_mask)

from oracles import bilinear_half_pixel, flood_fill_holes


def test_resize_identity(rng):
    img = rng.random((5, 7, 3))
    assert np.array_equal(resize(img, 7, 5), img)


def test_resize_constant():
    img = np.full((2, 2, 3), 0.3)
    for w, h in [(1, 1), (5, 3), (17, 9)]:
        assert np.allclose(resize(img, w, h), 0.3, atol=1e-15)


def test_resize_half_pixel_example():
    out = resize(np.array([[0.0, 1.0]]), 4, 1)
    assert np.allclose(out, [[0.0, 0.25, 0.75, 1.0]], atol=1e-15)


def test_resize_matches_oracle(rng):
    for _ in range(30):
        n_in, n_out = rng.integers(1, 12, size=2)
        row = rng.random(n_in)
        out = resize(row[None, :], int(n_out), 1)[0]
        assert np.allclose(out, bilinear_half_pixel(list(row), int(n_out)), atol=1e-12)


def test_resize_separable_matches_oracle(rng):
    img = rng.random((4, 6))
    out = resize(img, 9, 7)
    cols = np.array([bilinear_half_pixel(list(r), 9) for r in img])
    ref = np.array([bilinear_half_pixel(list(c), 7) for c in cols.T]).T
    assert np.allclose(out, ref, atol=1e-12)


def test_resize_binary_rules(rng):
    m = rng.random((8, 8)) > 0.5
    out = resize(m, 13, 5, mode="nearest")
    assert out.dtype == bool and out.shape == (5, 13)
    with pytest.raises(ValueError):
        resize(m, 4, 4, mode="bilinear")
    with pytest.raises(ValueError):
        resize(m, 0, 4, mode="nearest")


def test_normalize_examples(rng):
    img = rng.random((6, 6, 3))
    out = normalize_channels(img, img.reshape(-1, 3).mean(0), [1, 1, 1])
    assert np.all(np.abs(out.reshape(-1, 3).mean(0)) < 1e-6)
    assert np.array_equal(normalize_channels(img, [0, 0, 0], [1, 1, 1]), img)
    half = np.full((3, 3, 3), 0.5)
    assert np.all(normalize_channels(half, [0.5] * 3, [0.25] * 3) == 0)
    assert np.all(normalize_channels(half, [0.25] * 3, [0.25] * 3) == 1.0)
    with pytest.raises(ValueError):
        normalize_channels(img, [0, 0, 0], [1, 0, 1])


def test_normalize_inverse(rng):
    img = rng.random((5, 4, 3))
    mean, std = channel_stats([img])
    back = denormalize_channels(normalize_channels(img, mean, std), mean, std)
    assert np.allclose(back, img, atol=1e-6)


def test_binarize_examples():
    assert binarize(np.full((3, 3), 0.9)).all()
    assert binarize(np.full((3, 3), 0.5), 0.5).all()
    checker = np.where(np.indices((4, 4)).sum(0) % 2 == 0, 0.4, 0.6)
    assert np.array_equal(binarize(checker), checker > 0.5)
    with pytest.raises(ValueError):
        binarize(checker, 1.0)


def test_fill_ring():
    yy, xx = np.indices((21, 21))
    r = np.hypot(yy - 10, xx - 10)
    assert np.array_equal(fill_holes((r <= 8) & (r >= 5)), r <= 8)
    assert not fill_holes(np.zeros((5, 5), bool)).any()


def test_fill_diagonal_gap_is_closed():
    # a background pixel touching the outside only diagonally is a hole under 4-connectivity
    m = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], bool)
    assert fill_holes(m)[1, 1]


def test_fill_matches_oracle(rng):
    for _ in range(20):
        m = rng.random((24, 24)) < rng.uniform(0.3, 0.7)
        assert np.array_equal(fill_holes(m), np.array(flood_fill_holes(m.tolist())))


def test_fill_properties(rng):
    for _ in range(20):
        m = rng.random((20, 20)) < 0.5
        f = fill_holes(m)
        assert np.all(f >= m)
        assert np.array_equal(fill_holes(f), f)
        bigger = m | (rng.random((20, 20)) < 0.2)
        assert np.all(fill_holes(bigger) >= f)


def test_postprocess_orders():
    p = np.zeros((8, 8))
    p[2:6, 2:6] = 0.9
    p[3:5, 3:5] = 0.1
    a = postprocess_segmentation([p, p], (16, 16))
    assert a.shape == (16, 16) and a[4:12, 4:12].all() and a.sum() == 64
    b = postprocess_segmentation([p], (16, 16), order="upsample-first")
    assert b.shape == (16, 16) and b[8, 8]
    with pytest.raises(ValueError):
        postprocess_segmentation([p], (16, 16), order="sideways")


def test_png_roundtrips(tmp_path, rng):
    img = rng.integers(0, 256, size=(7, 5, 3), dtype=np.uint8)
    write_image(tmp_path / "i.png", img)
    assert np.array_equal(read_image(tmp_path / "i.png"), img)
    m = rng.random((7, 5)) > 0.5
    write_mask(tmp_path / "m.png", m)
    assert np.array_equal(read_mask(tmp_path / "m.png"), m)
    p = rng.random((7, 5))
    write_prob_mask(tmp_path / "p.png", p)
    assert np.max(np.abs(read_prob_mask(tmp_path / "p.png") - p)) <= 0.5 / 65535 + 1e-12
    with pytest.raises(ValueError):
        write_prob_mask(tmp_path / "bad.png", p + 1)
