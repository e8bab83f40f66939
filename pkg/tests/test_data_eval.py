import io

import numpy as np
import numpy.testing as npt
import pytest

from constants import PGM_MAXVAL
from data_eval import (
    EvalRecord, build_dataset, evaluate, gaussian_window, load_image, make_phantom, psnr,
    save_image, ssim, write_eval_csv,
)
from file_formats import (
    FormatError, read_checkpoint, read_exact, read_pbm, read_pgm, read_raw, write_checkpoint,
    write_pbm, write_pgm, write_raw,
)
from forward_models import apply_masked_fourier, make_sr_mask
from tensor_core import ShapeError


class TestPhantoms:

    @pytest.mark.parametrize("kind", ["ellipses", "shepp_logan_like"])
    def test_range_and_determinism(self, kind):
        a = make_phantom(64, kind, seed=9)
        b = make_phantom(64, kind, seed=9)
        npt.assert_array_equal(a, b)
        assert a.shape == (64, 64)
        assert a.min() >= 0.0 and a.max() <= 1.0
        assert a.max() > 0.0

    def test_seeds_differ(self):
        assert not np.array_equal(make_phantom(32, seed=1), make_phantom(32, seed=2))

    @pytest.mark.parametrize("size", [16, 48])
    def test_rejects_bad_sizes(self, size):
        with pytest.raises(ValueError):
            make_phantom(size)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            make_phantom(32, "checkerboard")


class TestPsnr:

    def test_identical_images_hit_cap(self, rng):
        x = rng.random((16, 16))
        assert psnr(x, x) == 100.0

    def test_known_value(self):
        ref = np.ones((4, 4))
        test = ref - 0.1
        assert psnr(ref, test) == pytest.approx(20.0)

    def test_monotone_in_noise(self, rng):
        x = rng.random((32, 32))
        noise = rng.standard_normal((32, 32))
        values = [psnr(x, x + std * noise) for std in (0.01, 0.03, 0.1, 0.3)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            psnr(np.ones((4, 4)), np.ones((4, 5)))

    def test_zero_range(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((4, 4)), np.ones((4, 4)))


class TestSsim:

    def test_identical_images(self, rng):
        x = rng.random((32, 32))
        assert ssim(x, x) == pytest.approx(1.0)
        assert evaluate(x, x) == (100.0, pytest.approx(1.0))

    def test_single_window_oracle(self, rng):
        ref, test = rng.random((11, 11)), rng.random((11, 11))
        w = gaussian_window()
        c1, c2 = (0.01 * ref.max()) ** 2, (0.03 * ref.max()) ** 2
        mu1, mu2 = np.sum(w * ref), np.sum(w * test)
        var1 = np.sum(w * ref ** 2) - mu1 ** 2
        var2 = np.sum(w * test ** 2) - mu2 ** 2
        cov = np.sum(w * ref * test) - mu1 * mu2
        expected = ((2 * mu1 * mu2 + c1) * (2 * cov + c2)) / ((mu1 ** 2 + mu2 ** 2 + c1) * (var1 + var2 + c2))
        assert ssim(ref, test) == pytest.approx(expected, rel=1e-10)

    def test_range_on_random_pairs(self, rng):
        for _ in range(1000):
            a = rng.random((12, 12))
            b = rng.standard_normal((12, 12))
            assert -1.0 <= ssim(a, b) <= 1.0

    def test_negative_of_zero_mean_window(self, rng):
        field = rng.standard_normal((11, 11))
        field -= np.sum(gaussian_window() * field)
        assert ssim(field, -field) < 0.0

    def test_affine_copy_beats_unrelated_phantom(self):
        x = make_phantom(64, seed=1)
        assert ssim(x, 0.8 * x + 0.05) > ssim(x, make_phantom(64, seed=9))

    def test_window_normalized(self):
        assert gaussian_window().sum() == pytest.approx(1.0)

    def test_too_small(self):
        with pytest.raises(ShapeError):
            ssim(np.ones((8, 8)), np.ones((8, 8)))


class TestDataset:

    def test_pairs_are_consistent(self):
        mask = make_sr_mask((32, 32), 4)
        pairs = build_dataset(3, 32, mask, seed=5)
        assert len(pairs) == 3
        for x, y in pairs:
            npt.assert_allclose(y, apply_masked_fourier(x, mask), atol=1e-12)
        assert not np.array_equal(pairs[0][0], pairs[1][0])

    def test_deterministic(self):
        mask = make_sr_mask((32, 32), 4)
        a = build_dataset(2, 32, mask, seed=5, noise_std=0.01)
        b = build_dataset(2, 32, mask, seed=5, noise_std=0.01)
        for (xa, ya), (xb, yb) in zip(a, b):
            npt.assert_array_equal(xa, xb)
            npt.assert_array_equal(ya, yb)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            build_dataset(0, 32, make_sr_mask((32, 32), 4), seed=0)


class TestEvalCsv:

    def test_header_and_append(self, tmp_path):
        path = str(tmp_path / "eval.csv")
        write_eval_csv([EvalRecord("sr4", "tv", 25.5, 0.75)], path)
        write_eval_csv([EvalRecord("sr4", "ssl", 27.0, 0.8)], path, append=True)
        lines = open(path).read().splitlines()
        assert lines == ["task,method,psnr,ssim", "sr4,tv,25.500000,0.750000", "sr4,ssl,27.000000,0.800000"]

    def test_path_columns(self, tmp_path):
        path = str(tmp_path / "eval.csv")
        write_eval_csv([EvalRecord("", "", 100.0, 1.0, path="a.pgm")], path, columns=("path", "psnr", "ssim"))
        assert open(path).read().splitlines()[1] == "a.pgm,100.000000,1.000000"

    def test_record_rejects_bad_ssim(self):
        with pytest.raises(ValueError):
            EvalRecord("sr4", "tv", 20.0, 1.5)


class TestFileFormats:

    def test_pgm_quantization(self, tmp_path, rng):
        image = rng.random((8, 12))
        path = str(tmp_path / "img.pgm")
        write_pgm(path, image)
        loaded = read_pgm(path)
        assert loaded.shape == (8, 12)
        npt.assert_allclose(loaded, image, atol=0.5 / PGM_MAXVAL + 1e-12)

    def test_pgm_clips(self, tmp_path):
        path = str(tmp_path / "img.pgm")
        write_pgm(path, np.array([[-1.0, 2.0]]))
        npt.assert_array_equal(read_pgm(path), [[0.0, 1.0]])

    def test_raw_planes(self, tmp_path, rng):
        planes = rng.standard_normal((2, 4, 8))
        path = str(tmp_path / "y.raw")
        write_raw(path, planes)
        with open(path, 'rb') as f:
            assert f.readline() == b"4 8 2\n"
        npt.assert_array_equal(read_raw(path), planes)

    def test_truncated_raw(self, tmp_path):
        path = tmp_path / "bad.raw"
        path.write_bytes(b"4 4\n" + b"\x00" * 10)
        with pytest.raises(FormatError):
            read_raw(str(path))

    def test_pbm_with_comments(self, tmp_path):
        bits = np.array([[1, 0, 1], [1, 0, 1]])
        path = str(tmp_path / "m.pbm")
        write_pbm(path, bits, ["af=2"])
        loaded, comments = read_pbm(path)
        npt.assert_array_equal(loaded, bits)
        assert comments == ["af=2"]

    def test_packed_pbm_digits(self, tmp_path):
        path = tmp_path / "m.pbm"
        path.write_text("P1\n3 2\n101\n010\n")
        npt.assert_array_equal(read_pbm(str(path))[0], [[1, 0, 1], [0, 1, 0]])

    def test_checkpoint_container(self, tmp_path, rng):
        arrays = {"a.weight": rng.standard_normal((2, 3)), "a.bias": rng.standard_normal(2)}
        path = str(tmp_path / "c.ckpt")
        write_checkpoint(path, arrays, ["note hello"])
        header, loaded = read_checkpoint(path)
        assert header == ["note hello"]
        assert list(loaded) == ["a.weight", "a.bias"]
        npt.assert_array_equal(loaded["a.weight"], arrays["a.weight"])

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "c.ckpt"
        path.write_bytes(b"garbage\n")
        with pytest.raises(FormatError):
            read_checkpoint(str(path))

    def test_read_exact_short_stream(self):
        with pytest.raises(FormatError):
            read_exact(io.BytesIO(b"abc"), 4)

    def test_image_by_extension(self, tmp_path, rng):
        image = rng.random((4, 4))
        save_image(str(tmp_path / "x.raw"), image)
        npt.assert_array_equal(load_image(str(tmp_path / "x.raw")), image)
        with pytest.raises(FormatError):
            save_image(str(tmp_path / "x.png"), image)
