"""Synthetic datasets, CSV round trip and PGM I/O."""

import numpy as np
import pytest

from morphnet.datasets import Dataset, gen_hinge_grid, gen_two_circles, hinge_target
from morphnet.errors import InputError
from morphnet.pgm import decode, encode, read_pgm, write_map_csv, write_pgm


class TestTwoCircles:
    def test_noise_free_radii(self):
        ds = gen_two_circles(200, noise_sd=0.0, seed=1)
        r = np.linalg.norm(ds.x, axis=1)
        np.testing.assert_allclose(r[ds.y == 0], 1.0, rtol=1e-15)
        np.testing.assert_allclose(r[ds.y == 1], 2.0, rtol=1e-15)

    def test_radius_threshold_oracle(self):
        ds = gen_two_circles()
        assert ds.x.shape == (1000, 2)
        pred = np.linalg.norm(ds.x, axis=1) > 1.5
        assert np.mean(pred == (ds.y == 1)) >= 0.99

    def test_seeded(self, tmp_path):
        gen_two_circles(seed=5).save(tmp_path / "a.csv")
        gen_two_circles(seed=5).save(tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        assert not np.array_equal(gen_two_circles(seed=5).x, gen_two_circles(seed=6).x)

    def test_invalid(self):
        for kw in (dict(r_inner=2.0, r_outer=1.0), dict(r_inner=0.0), dict(noise_sd=-1.0)):
            with pytest.raises(InputError):
                gen_two_circles(**kw)


class TestHingeGrid:
    def test_values(self):
        np.testing.assert_array_equal(hinge_target(np.array([[5.0, 5.0], [-5.0, -5.0], [1.0, -3.0]])), [10.0, 0.0, 0.0])

    def test_grid(self):
        ds = gen_hinge_grid(resolution=11)
        assert ds.x.shape == (121, 2)
        assert ds.x.min() == -5.0 and ds.x.max() == 5.0
        np.testing.assert_array_equal(ds.y, np.maximum(ds.x.sum(1), 0))

    def test_resolution(self):
        with pytest.raises(InputError):
            gen_hinge_grid(resolution=1)


class TestCSV:
    def test_round_trip_exact(self, tmp_path):
        ds = gen_two_circles(50, seed=3)
        ds.save(tmp_path / "d.csv")
        back = Dataset.load(tmp_path / "d.csv")
        np.testing.assert_array_equal(back.x, ds.x)
        np.testing.assert_array_equal(back.y, ds.y)
        assert (tmp_path / "d.csv").read_text().splitlines()[0] == "x1,x2,y"

    def test_bad_files(self, tmp_path):
        p = tmp_path / "bad.csv"
        for text in ("", "a,b\n1,2\n", "x1,y\n1,oops\n", "x1,y\n"):
            p.write_text(text)
            with pytest.raises(InputError):
                Dataset.load(p)


class TestPGM:
    @pytest.mark.parametrize("binary", [True, False])
    def test_round_trip(self, tmp_path, binary):
        img = np.random.default_rng(0).integers(0, 256, size=(7, 5)) / 255
        write_pgm(tmp_path / "x.pgm", img, binary=binary)
        np.testing.assert_array_equal(read_pgm(tmp_path / "x.pgm"), img)
        magic = (tmp_path / "x.pgm").read_bytes()[:2]
        assert magic == (b"P5" if binary else b"P2")

    def test_header_and_clip(self):
        data = encode(np.array([[-1.0, 0.5, 2.0]]))
        assert data.startswith(b"P5\n3 1\n255\n")
        assert list(data[-3:]) == [0, 128, 255]

    def test_comments(self):
        img = decode(b"P2\n# made by hand\n2 1\n# max\n4\n0 4\n")
        np.testing.assert_array_equal(img, [[0.0, 1.0]])

    def test_sixteen_bit(self):
        raw = b"P5\n1 1\n1000\n" + (500).to_bytes(2, "big")
        np.testing.assert_array_equal(decode(raw), [[0.5]])

    def test_malformed(self):
        for raw in (b"P6\n1 1\n255\n\x00", b"P5\n2 2\n255\n\x00", b"P2\n1 1\n4\n9\n", b"P2\n1"):
            with pytest.raises(InputError):
                decode(raw)

    def test_map_csv(self, tmp_path):
        write_map_csv(tmp_path / "m.csv", np.arange(6.0).reshape(2, 3))
        lines = (tmp_path / "m.csv").read_text().splitlines()
        assert lines[0] == "channel,row,col,value"
        assert lines[-1] == "0,1,2,5.0"
