import numpy as np
import pytest

from n2c.errors import ConfigurationError, DataError, ImageFormatError, ImageTruncatedError
from n2c.image import (
    MAGIC,
    Contrast,
    Image,
    add_correlated_noise,
    add_gaussian_noise,
    read_image,
    write_image,
)


def make_image(data, **kw):
    return Image(np.asarray(data, dtype=np.float32), **kw)


class TestImageType:
    def test_rejects_non_finite(self):
        data = np.ones((4, 4), dtype=np.float32)
        data[1, 2] = np.inf
        with pytest.raises(DataError):
            Image(data)

    def test_rejects_wrong_rank(self):
        with pytest.raises(DataError):
            Image(np.ones(16, dtype=np.float32))

    def test_dimensions(self):
        img = make_image(np.zeros((3, 5)))
        assert img.height == 3 and img.width == 5
        assert img.data.size == img.width * img.height


class TestGaussianNoise:
    def test_sample_std_on_constant_image(self):
        img = make_image(np.full((64, 64), 0.5))
        out = add_gaussian_noise(img, 0.05, seed=1)
        field = out.as_float64() - img.as_float64()
        expected = 0.05 * 0.5
        assert abs(field.std() - expected) / expected < 0.05
        assert abs(field.mean()) < 3 * expected / 64  # zero-mean within 3 SE

    def test_same_seed_identical(self):
        img = make_image(np.linspace(0, 1, 256).reshape(16, 16))
        a = add_gaussian_noise(img, 0.05, seed=9)
        b = add_gaussian_noise(img, 0.05, seed=9)
        assert np.array_equal(a.data, b.data)

    def test_not_clipped(self):
        img = make_image(np.full((32, 32), 0.001) + np.eye(32, dtype=np.float32))
        out = add_gaussian_noise(img, 0.3, seed=2)
        assert out.data.min() < 0.0  # noise may push below zero

    def test_rejects_bad_rel_std(self):
        with pytest.raises(ConfigurationError):
            add_gaussian_noise(make_image(np.ones((8, 8))), 0.0, seed=0)

    def test_tags_preserved(self):
        img = make_image(np.ones((8, 8)), contrast=Contrast.B, realization_id=3)
        out = add_gaussian_noise(img, 0.1, seed=0)
        assert out.contrast is Contrast.B
        assert out.realization_id == 3


class TestCorrelatedNoise:
    def test_tiny_corr_sigma_like_iid(self):
        img = make_image(np.full((64, 64), 1.0))
        out = add_correlated_noise(img, 0.05, corr_sigma=0.01, seed=3)
        f = out.as_float64() - 1.0
        rho = np.corrcoef(f[:, :-1].ravel(), f[:, 1:].ravel())[0, 1]
        assert abs(rho) < 0.05

    def test_corr_sigma_two_strongly_correlated(self):
        img = make_image(np.full((64, 64), 1.0))
        out = add_correlated_noise(img, 0.05, corr_sigma=2.0, seed=3)
        f = out.as_float64() - 1.0
        rho = np.corrcoef(f[:, :-1].ravel(), f[:, 1:].ravel())[0, 1]
        assert rho > 0.5

    def test_field_std_exact_by_rescaling(self):
        img = make_image(np.full((48, 48), 0.8))
        out = add_correlated_noise(img, 0.05, corr_sigma=2.0, seed=4)
        f = out.as_float64() - 0.8
        target = 0.05 * 0.8
        assert abs(f.std() - target) / target < 0.05
        # float32 storage is the only loss; the float64 field std is exact
        assert abs(f.std() - target) < 1e-4

    def test_rejects_bad_corr_sigma(self):
        with pytest.raises(ConfigurationError):
            add_correlated_noise(make_image(np.ones((8, 8))), 0.05, corr_sigma=0.0, seed=0)


class TestImageIO:
    def test_roundtrip_field_for_field(self, tmp_path):
        rng = np.random.default_rng(0)
        img = Image(
            rng.normal(0.5, 0.2, (13, 9)).astype(np.float32),
            contrast=Contrast.B,
            realization_id=4,
        )
        p = tmp_path / "x.n2cimg"
        write_image(img, p)
        back = read_image(p)
        assert back.equal_to(img)

    def test_write_read_write_bytes_identical(self, tmp_path):
        rng = np.random.default_rng(1)
        img = Image(rng.uniform(-0.2, 1.2, (8, 8)).astype(np.float32))
        p1, p2 = tmp_path / "a.n2cimg", tmp_path / "b.n2cimg"
        write_image(img, p1)
        write_image(read_image(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_wrong_magic(self, tmp_path):
        p = tmp_path / "bad.n2cimg"
        p.write_bytes(b"NOTMAGIC\n64 64 A 0\n" + b"\x00" * 16)
        with pytest.raises(ImageFormatError):
            read_image(p)

    def test_truncated_payload(self, tmp_path):
        p = tmp_path / "short.n2cimg"
        payload = np.zeros(100, dtype="<f4").tobytes()
        p.write_bytes(MAGIC + b"64 64 A 0\n" + payload)
        with pytest.raises(ImageTruncatedError):
            read_image(p)

    def test_trailing_bytes(self, tmp_path):
        p = tmp_path / "long.n2cimg"
        payload = np.zeros(4 * 4 + 3, dtype="<f4").tobytes()
        p.write_bytes(MAGIC + b"4 4 A 0\n" + payload)
        with pytest.raises(ImageFormatError):
            read_image(p)

    def test_malformed_header(self, tmp_path):
        p = tmp_path / "hdr.n2cimg"
        p.write_bytes(MAGIC + b"64 sixty-four A 0\n")
        with pytest.raises(ImageFormatError):
            read_image(p)

    def test_bad_contrast_tag(self, tmp_path):
        p = tmp_path / "tag.n2cimg"
        p.write_bytes(MAGIC + b"2 2 Q 0\n" + np.zeros(4, dtype="<f4").tobytes())
        with pytest.raises(ImageFormatError):
            read_image(p)
