import numpy as np
import pytest

from scalewise.codec import (
    FormatError,
    Image,
    decode,
    encode_style,
    read_ppm,
    resample_image,
    write_ppm,
)
from scalewise.numerics import FeatureMap, bilinear_upsample

from conftest import gradient_image


def final_map(model, fill=0.0):
    c = model.cfg.c
    fh, fw = model.cfg.schedule.final_hw
    return FeatureMap(np.full((c, fh, fw), fill, dtype=np.float32))


class TestDecode:
    def test_zero_features_give_mid_gray(self, tiny_model):
        img = decode(final_map(tiny_model), tiny_model)
        assert np.all(img.pixels == 128)

    def test_deterministic(self, tiny_model):
        rng = np.random.default_rng(0)
        f = FeatureMap(rng.uniform(-2, 2, (4, 6, 6)).astype(np.float32))
        a = decode(f, tiny_model)
        b = decode(f, tiny_model)
        assert np.array_equal(a.pixels, b.pixels)

    def test_impulse_is_local(self, tiny_model):
        base = decode(final_map(tiny_model), tiny_model)
        data = final_map(tiny_model).data.copy()
        data[0, 2, 3] = 25.0
        poked = decode(FeatureMap(data), tiny_model)
        diff = np.any(poked.pixels != base.pixels, axis=-1)
        assert diff[2, 3]
        assert diff.sum() == 1

    def test_wrong_channels_rejected(self, tiny_model):
        f = FeatureMap(np.zeros((3, 6, 6), dtype=np.float32))
        with pytest.raises(ValueError):
            decode(f, tiny_model)

    def test_wrong_resolution_rejected(self, tiny_model):
        f = FeatureMap(np.zeros((4, 4, 4), dtype=np.float32))
        with pytest.raises(ValueError):
            decode(f, tiny_model)


class TestEncodeStyle:
    def test_mid_gray_roundtrip(self, tiny_model):
        fh, fw = tiny_model.cfg.schedule.final_hw
        gray = Image(np.full((fh, fw, 3), 128, dtype=np.uint8))
        feats = encode_style(gray, tiny_model)
        assert len(feats) == tiny_model.cfg.schedule.num_steps
        for feat in feats:
            up = bilinear_upsample(feat, fh, fw)
            back = decode(up, tiny_model)
            assert np.max(np.abs(back.pixels.astype(int) - 128)) <= 1

    def test_constant_color_gives_constant_features(self, tiny_model):
        fh, fw = tiny_model.cfg.schedule.final_hw
        img = Image(np.tile(np.array([180, 40, 90], dtype=np.uint8), (fh, fw, 1)))
        for feat in encode_style(img, tiny_model):
            for ch in feat.data:
                assert np.all(ch == ch.flat[0])

    def test_roundtrip_error_bound(self, tiny_model):
        rng = np.random.default_rng(1)
        fh, fw = tiny_model.cfg.schedule.final_hw
        img = Image(rng.integers(30, 226, (fh, fw, 3)).astype(np.uint8))
        feats = encode_style(img, tiny_model)
        back = decode(feats[-1], tiny_model)
        mae = np.mean(np.abs(back.pixels.astype(np.float64) - img.pixels.astype(np.float64))) / 255.0
        assert mae <= 16.0 / 255.0

    def test_contraction_onto_color_subspace(self, tiny_model):
        img = gradient_image(6, 6)
        once = decode(encode_style(img, tiny_model)[-1], tiny_model)
        twice = decode(encode_style(once, tiny_model)[-1], tiny_model)
        assert np.max(np.abs(twice.pixels.astype(int) - once.pixels.astype(int))) <= 1

    def test_pooling_projection_scalar_oracle(self, tiny_model):
        # 2x2 gray checker, pooled to 1x1, must match the hand-applied
        # clamp -> logit -> pseudo-inverse pipeline
        import math

        px = np.zeros((2, 2, 3), dtype=np.uint8)
        px[0, 0] = px[1, 1] = 200
        px[0, 1] = px[1, 0] = 40
        from dataclasses import replace

        from scalewise.model import ModelConfig, ScaleSchedule, init_model

        cfg = ModelConfig(
            d_model=16, n_heads=2, n_layers=1, c=4, d_text=16,
            schedule=ScaleSchedule(((1, 1), (2, 2), (2, 2), (2, 2)), frozenset({2}), frozenset({3})),
            weight_seed=5,
        )
        model = init_model(cfg)
        feats = encode_style(Image(px), model)
        mean = (2 * 200 / 255.0 + 2 * 40 / 255.0) / 4.0
        z = math.log(mean / (1.0 - mean))
        expected = np.float32(z) * model.dec_pinv.astype(np.float64).sum(axis=0)
        assert np.allclose(feats[0].data[:, 0, 0], expected.astype(np.float32), atol=2e-6)

    def test_wrong_size_rejected(self, tiny_model):
        with pytest.raises(ValueError):
            encode_style(gradient_image(5, 6), tiny_model)


class TestResample:
    def test_identity(self):
        img = gradient_image(6, 6)
        out = resample_image(img, 6, 6)
        assert np.array_equal(out.pixels, img.pixels)

    def test_up_and_down(self):
        img = gradient_image(8, 4)
        up = resample_image(img, 16, 16)
        down = resample_image(img, 2, 2)
        assert (up.height, up.width) == (16, 16)
        assert (down.height, down.width) == (2, 2)

    def test_constant_preserved(self):
        img = Image(np.full((3, 5, 3), 77, dtype=np.uint8))
        out = resample_image(img, 9, 9)
        assert np.all(out.pixels == 77)


class TestPpm:
    def test_roundtrip_bit_exact(self, tmp_path):
        img = gradient_image(7, 5)
        path = tmp_path / "img.ppm"
        write_ppm(img, path)
        back = read_ppm(path)
        assert np.array_equal(back.pixels, img.pixels)

    def test_exact_bytes_for_single_red_pixel(self, tmp_path):
        img = Image(np.array([[[255, 0, 0]]], dtype=np.uint8))
        path = tmp_path / "red.ppm"
        write_ppm(img, path)
        assert path.read_bytes() == b"P6\n1 1\n255\n\xff\x00\x00"

    def test_truncated_rejected(self, tmp_path):
        path = tmp_path / "trunc.ppm"
        path.write_bytes(b"P6\n2 2\n255\n\x00\x00\x00")
        with pytest.raises(FormatError):
            read_ppm(path)

    def test_trailing_data_rejected(self, tmp_path):
        path = tmp_path / "trail.ppm"
        path.write_bytes(b"P6\n1 1\n255\n\x00\x00\x00\x00")
        with pytest.raises(FormatError):
            read_ppm(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.ppm"
        path.write_bytes(b"P5\n1 1\n255\n\x00")
        with pytest.raises(FormatError):
            read_ppm(path)

    def test_bad_maxval_rejected(self, tmp_path):
        path = tmp_path / "maxval.ppm"
        path.write_bytes(b"P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00")
        with pytest.raises(FormatError):
            read_ppm(path)

    def test_header_comments_allowed(self, tmp_path):
        path = tmp_path / "comment.ppm"
        path.write_bytes(b"P6\n# made by hand\n1 1\n255\n\x01\x02\x03")
        img = read_ppm(path)
        assert np.array_equal(img.pixels, [[[1, 2, 3]]])

    def test_garbage_header_rejected(self, tmp_path):
        path = tmp_path / "garbage.ppm"
        path.write_bytes(b"P6\nxx yy\n255\n")
        with pytest.raises(FormatError):
            read_ppm(path)
