import numpy as np
import pytest
from PIL import Image

from prlsod.imageio import ImageReadError, list_images, read_gray, read_mask, read_pfm, read_rgb, resize, write_pfm, write_png


def test_pfm_round_trip_and_layout(tmp_path, gen):
    a = gen.standard_normal((3, 5)).astype(np.float32).astype(float)
    write_pfm(tmp_path / "a.pfm", a)
    raw = (tmp_path / "a.pfm").read_bytes()
    assert raw.startswith(b"Pf\n5 3\n-1.0\n")
    body = np.frombuffer(raw[len(b"Pf\n5 3\n-1.0\n") :], "<f4")
    np.testing.assert_array_equal(body[:5], a[-1])  # bottom row first
    np.testing.assert_array_equal(read_pfm(tmp_path / "a.pfm"), a)


def test_pfm_big_endian_and_colour(tmp_path):
    data = np.arange(6, dtype=">f4").reshape(1, 2, 3)
    (tmp_path / "b.pfm").write_bytes(b"PF\n2 1\n1.0\n" + data.tobytes())
    np.testing.assert_array_equal(read_pfm(tmp_path / "b.pfm"), data.astype(float))
    (tmp_path / "c.pfm").write_bytes(b"P6\n1 1\n255\n\0\0\0")
    with pytest.raises(ImageReadError):
        read_pfm(tmp_path / "c.pfm")


def test_mask_threshold_and_pgm(tmp_path):
    arr = np.array([[0, 127, 128, 255]], dtype=np.uint8)
    Image.fromarray(arr).save(tmp_path / "m.pgm")
    np.testing.assert_array_equal(read_mask(tmp_path / "m.pgm"), [[False, False, True, True]])
    np.testing.assert_allclose(read_gray(tmp_path / "m.pgm"), arr / 255.0)
    assert read_rgb(tmp_path / "m.pgm").shape == (1, 4, 3)


def test_png_round_trip(tmp_path):
    a = np.linspace(0, 1, 12).reshape(3, 4)
    write_png(tmp_path / "a.png", a[..., None])
    np.testing.assert_allclose(read_gray(tmp_path / "a.png"), np.round(a * 255) / 255)


def test_unreadable_image(tmp_path):
    (tmp_path / "bad.png").write_bytes(b"not an image")
    with pytest.raises(ImageReadError):
        read_mask(tmp_path / "bad.png")


def test_resize_modes():
    m = np.zeros((4, 4), dtype=bool)
    m[:2, :2] = True
    big = resize(m, 8, "mask")
    assert big.dtype == bool and big[:4, :4].all() and not big[4:].any()
    img = np.full((4, 4, 3), 0.4)
    np.testing.assert_allclose(resize(img, 8), 0.4, atol=1e-6)
    with pytest.raises(ValueError):
        resize(img, 8, "lanczos")


def test_list_images(tmp_path):
    for n in ("b.png", "a.pgm", "notes.txt"):
        (tmp_path / n).write_bytes(b"")
    assert list(list_images(tmp_path)) == ["a", "b"]
    with pytest.raises(FileNotFoundError):
        list_images(tmp_path / "missing")
