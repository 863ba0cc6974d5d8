import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from latefuse.core import ContractError
from latefuse.imageprep import (
    ChannelStats,
    Image,
    append_lbp_channel,
    channel_stats,
    lbp,
    normalize,
    read_pnm,
    resize_bilinear,
    to_grayscale,
    write_pnm,
)


def brute_force_lbp(g: np.ndarray) -> np.ndarray:
    """Reference codes: clockwise from the top-left neighbour, borders replicated."""
    h, w = g.shape
    out = np.zeros((h, w), dtype=int)
    ring = [(-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1)]
    for r in range(h):
        for c in range(w):
            code = 0
            for bit, (dr, dc) in enumerate(ring):
                rr = min(max(r + dr, 0), h - 1)
                cc = min(max(c + dc, 0), w - 1)
                if g[rr, cc] >= g[r, c]:
                    code += 2**bit
            out[r, c] = code
    return out


class TestResize:
    def test_corner_aligned_row(self):
        img = Image(np.array([[0.0, 255.0]]))
        out = resize_bilinear(img, 1, 4)
        np.testing.assert_allclose(out.data[0, :, 0], [0, 85, 170, 255])

    def test_identity_size(self, rng):
        data = rng.random((5, 7, 3))
        np.testing.assert_allclose(resize_bilinear(Image(data), 5, 7).data, data)

    def test_default_size(self, rng):
        out = resize_bilinear(Image(rng.random((10, 12, 3))))
        assert out.data.shape == (224, 224, 3)

    @given(arrays(np.float64, (4, 3), elements=st.floats(0, 255)))
    @settings(max_examples=100, deadline=None)
    def test_output_within_input_range(self, data):
        out = resize_bilinear(Image(data), 9, 5).data
        assert out.min() >= data.min() - 1e-9
        assert out.max() <= data.max() + 1e-9

    def test_constant_stays_constant(self):
        out = resize_bilinear(Image(np.full((3, 4, 3), 7.0)), 6, 6)
        np.testing.assert_allclose(out.data, 7.0)


class TestStats:
    def test_population_std(self):
        a = Image(np.zeros((2, 2, 1)))
        b = Image(np.full((2, 2, 1), 2.0))
        stats = channel_stats([a, b])
        assert stats.mean == (1.0,)
        assert stats.std == (1.0,)

    def test_zero_std_names_channel(self):
        imgs = [Image(np.dstack([np.arange(4.0).reshape(2, 2)] * 2 + [np.ones((2, 2))]))]
        with pytest.raises(ContractError, match="channel 2"):
            channel_stats(imgs)

    def test_normalized_stats(self, rng):
        imgs = [Image(rng.random((4, 5, 3)) * 255) for _ in range(6)]
        stats = channel_stats(imgs)
        after = channel_stats([normalize(i, stats) for i in imgs])
        np.testing.assert_allclose(after.mean, 0.0, atol=1e-12)
        np.testing.assert_allclose(after.std, 1.0, atol=1e-12)

    def test_json_round_trip(self):
        stats = ChannelStats((0.1, 2.0 / 3.0, 5.0), (1.0, 0.3, 7.0))
        assert ChannelStats.from_json(stats.to_json()) == stats

    def test_channel_mismatch(self):
        with pytest.raises(ContractError):
            normalize(Image(np.zeros((2, 2, 3))), ChannelStats((0.0,), (1.0,)))


class TestLBP:
    def test_hand_enumerated_centre(self):
        g = np.arange(1.0, 10.0).reshape(3, 3)
        # neighbours >= 5 are 6 (bit 3), 9 (bit 4), 8 (bit 5), 7 (bit 6)
        assert lbp(Image(g)).data[1, 1, 0] == 8 + 16 + 32 + 64 == 120

    def test_constant_is_255(self):
        np.testing.assert_array_equal(lbp(Image(np.full((4, 6), 3.0))).data, 255.0)

    @given(arrays(np.float64, st.tuples(st.integers(3, 6), st.integers(3, 6)),
                  elements=st.integers(0, 4).map(float)))
    @settings(max_examples=100, deadline=None)
    def test_matches_brute_force(self, g):
        codes = lbp(Image(g)).data[:, :, 0]
        np.testing.assert_array_equal(codes, brute_force_lbp(g))
        assert codes.min() >= 0 and codes.max() <= 255

    def test_too_small(self):
        with pytest.raises(ContractError):
            lbp(Image(np.zeros((2, 5))))

    def test_fourth_channel(self, rng):
        rgb = Image(rng.random((5, 5, 3)))
        out = append_lbp_channel(rgb)
        assert out.channels == 4
        np.testing.assert_array_equal(out.data[:, :, :3], rgb.data)
        np.testing.assert_array_equal(out.data[:, :, 3], lbp(to_grayscale(rgb)).data[:, :, 0])

    def test_luma(self):
        g = to_grayscale(Image(np.array([[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]])))
        np.testing.assert_allclose(g.data[0, :, 0], [0.299, 0.587, 0.114])


class TestPNM:
    @pytest.mark.parametrize("channels, suffix", [(3, ".ppm"), (1, ".pgm")])
    def test_round_trip(self, tmp_path, rng, channels, suffix):
        data = rng.integers(0, 256, size=(4, 6, channels)).astype(float)
        path = tmp_path / f"img{suffix}"
        write_pnm(path, Image(data))
        np.testing.assert_array_equal(read_pnm(path).data, data)

    def test_header_comments(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P5\n# made by hand\n2 1\n255\n" + bytes([10, 200]))
        np.testing.assert_array_equal(read_pnm(path).data[0, :, 0], [10, 200])

    def test_rejects_other_formats(self, tmp_path):
        path = tmp_path / "x.ppm"
        path.write_bytes(b"P3\n1 1\n255\n0 0 0\n")
        with pytest.raises(ContractError):
            read_pnm(path)
