import numpy as np
import pytest

from wavemorph import imaging
from wavemorph.errors import ImageError, ManifestError


class TestLoadSave:
    def test_white_pgm_loads_as_ones(self, tmp_path):
        p = tmp_path / "w.pgm"
        imaging.save_image(p, np.ones((5, 7)))
        img = imaging.load_image(p)
        assert img.shape == (5, 7)
        assert np.all(img == 1.0)

    def test_eight_bit_scaling(self, tmp_path):
        p = tmp_path / "g.pgm"
        imaging.save_image(p, np.full((3, 3), 128 / 255.0))
        assert np.allclose(imaging.load_image(p), 128 / 255.0)

    def test_roundtrip_within_one_level(self, tmp_path, rng):
        img = rng.random((16, 16))
        p = tmp_path / "r.png"
        imaging.save_image(p, img)
        back = imaging.load_image(p)
        assert np.abs(back - img).max() <= 1 / 255.0 + 1e-12

    def test_rgb_roundtrip(self, tmp_path, rng):
        img = rng.random((8, 8, 3))
        p = tmp_path / "c.ppm"
        imaging.save_image(p, img)
        back = imaging.load_image(p)
        assert back.shape == (8, 8, 3)
        assert np.abs(back - img).max() <= 1 / 255.0 + 1e-12

    def test_truncated_png_is_unreadable(self, tmp_path, rng):
        p = tmp_path / "t.png"
        imaging.save_image(p, rng.random((16, 16)))
        p.write_bytes(p.read_bytes()[:40])
        with pytest.raises(ImageError, match="unreadable"):
            imaging.load_image(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ImageError, match="unreadable"):
            imaging.load_image(tmp_path / "nope.png")

    def test_unsupported_format(self, tmp_path):
        p = tmp_path / "x.tiff"
        p.write_bytes(b"II*\x00")
        with pytest.raises(ImageError, match="unsupported"):
            imaging.load_image(p)


class TestGrayscale:
    def test_equal_channels_pass_through_value(self):
        img = np.full((4, 4, 3), 0.4)
        assert np.allclose(imaging.to_grayscale(img), 0.4)

    def test_pure_red(self):
        img = np.zeros((2, 2, 3))
        img[:, :, 0] = 1.0
        assert np.allclose(imaging.to_grayscale(img), 0.299)

    def test_gray_passthrough(self, rng):
        img = rng.random((5, 5))
        assert imaging.to_grayscale(img) is img

    def test_range_preserved(self, rng):
        img = rng.random((9, 9, 3))
        g = imaging.to_grayscale(img)
        assert g.min() >= 0.0 and g.max() <= 1.0


class TestResize:
    def test_downscale_dims(self, rng):
        out = imaging.resize_bilinear(rng.random((320, 320)), 160, 160)
        assert out.shape == (160, 160)

    def test_identity_resize_is_bitwise_equal(self, rng):
        img = rng.random((12, 17))
        assert np.array_equal(imaging.resize_bilinear(img, 12, 17), img)

    def test_constant_stays_constant(self):
        img = np.full((10, 10), 0.37)
        out = imaging.resize_bilinear(img, 23, 5)
        assert np.allclose(out, 0.37)

    def test_no_overshoot(self, rng):
        img = rng.random((14, 14))
        out = imaging.resize_bilinear(img, 31, 9)
        assert out.min() >= img.min() - 1e-12
        assert out.max() <= img.max() + 1e-12

    def test_zero_dim_rejected(self, rng):
        with pytest.raises(ImageError):
            imaging.resize_bilinear(rng.random((4, 4)), 0, 4)


class TestHflip:
    def test_definition(self):
        img = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(imaging.hflip(img), [[2.0, 1.0], [4.0, 3.0]])

    def test_involution(self, rng):
        img = rng.random((6, 9))
        assert np.array_equal(imaging.hflip(imaging.hflip(img)), img)

    def test_single_column(self):
        img = np.array([[1.0], [2.0]])
        assert np.array_equal(imaging.hflip(img), img)


class TestManifest:
    def test_morph_row(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("path,subject_id,label,contributors\nm1.png,M001,morph,S01;S02\n")
        entries = imaging.parse_manifest(p)
        assert entries[0].contributors == ("S01", "S02")
        assert entries[0].label == "morph"

    def test_bona_fide_row(self, tmp_path):
        p = tmp_path / "b.csv"
        p.write_text("path,subject_id,label,contributors\nb1.png,S01,bona_fide,\n")
        entries = imaging.parse_manifest(p)
        assert entries[0].contributors == ()

    def test_morph_with_one_contributor_reports_line(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text(
            "path,subject_id,label,contributors\n"
            "b1.png,S01,bona_fide,\n"
            "m1.png,M001,morph,S01\n"
        )
        with pytest.raises(ManifestError, match=":3"):
            imaging.parse_manifest(p)

    def test_bad_header(self, tmp_path):
        p = tmp_path / "h.csv"
        p.write_text("file,who,what\nx,y,z\n")
        with pytest.raises(ManifestError, match="header"):
            imaging.parse_manifest(p)

    def test_serialize_roundtrip(self, tmp_path):
        entries = [
            imaging.ManifestEntry("a.png", "S01", "bona_fide"),
            imaging.ManifestEntry("m.png", "M01", "morph", ("S01", "S02"), "test"),
        ]
        p = tmp_path / "rt.csv"
        imaging.serialize_manifest(entries, p)
        assert imaging.parse_manifest(p) == entries


class TestSynth:
    def test_determinism_byte_identical(self, tmp_path):
        m1 = imaging.synth_dataset(5, 4, 2, tmp_path / "a", size=32)
        m2 = imaging.synth_dataset(5, 4, 2, tmp_path / "b", size=32)
        files1 = sorted(f.name for f in m1.parent.iterdir())
        files2 = sorted(f.name for f in m2.parent.iterdir())
        assert files1 == files2
        for name in files1:
            assert (m1.parent / name).read_bytes() == (m2.parent / name).read_bytes()

    def test_counts(self, tmp_path):
        m = imaging.synth_dataset(3, 4, 2, tmp_path / "c", size=32)
        entries = imaging.parse_manifest(m)
        assert sum(e.label == "bona_fide" for e in entries) == 8

    def test_morphs_have_distinct_contributors(self, tmp_path):
        m = imaging.synth_dataset(9, 5, 2, tmp_path / "d", size=32)
        morphs = [e for e in imaging.parse_manifest(m) if e.label == "morph"]
        assert morphs
        for e in morphs:
            assert len(set(e.contributors)) == 2

    def test_too_few_subjects(self, tmp_path):
        with pytest.raises(ManifestError):
            imaging.synth_dataset(1, 3, 2, tmp_path / "e")
