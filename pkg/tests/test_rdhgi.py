import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import payload_for, photo_covers, synthetic_cover
from revadv.imagecore import ColorImage, to_grayscale
from revadv import rdhgi
from revadv.rdhgi import (BadMagic, CodecError, CrcMismatch, EmbedHeader,
                          ImageUnsuitable, InsufficientCapacity,
                          PredictorParams, _BitReader, capacity, embed,
                          extract, fit_predictor, g_candidates, g_compensate,
                          hs_embed_channel, hs_extract_channel, pack_bits,
                          predict, rle_decode, rle_encode, unpack_bits)


class TestBitHelpers:
    @given(st.lists(st.integers(0, 1), max_size=200))
    @settings(max_examples=60, deadline=None)
    def test_pack_unpack_roundtrip(self, bits):
        assert unpack_bits(pack_bits(bits), len(bits)) == bits

    def test_unpack_bounds(self):
        with pytest.raises(ValueError):
            unpack_bits(b"\x00", 9)


class TestRle:
    @given(st.lists(st.booleans(), max_size=300))
    @settings(max_examples=80, deadline=None)
    def test_roundtrip(self, flags):
        arr = np.array(flags, dtype=bool)
        code = rle_encode(arr)
        reader = _BitReader(code)
        out = rle_decode(reader, len(arr))
        assert np.array_equal(out, arr)
        assert reader.pos == len(code)  # decoder consumes exactly the code

    def test_empty(self):
        assert rle_encode(np.zeros(0, dtype=bool)) == []
        assert len(rle_decode(_BitReader([]), 0)) == 0

    def test_long_uniform_runs_are_cheap(self):
        arr = np.zeros(10_000, dtype=bool)
        assert len(rle_encode(arr)) < 40

    def test_overlong_run_rejected(self):
        code = rle_encode(np.zeros(8, dtype=bool))
        with pytest.raises(CodecError):
            rle_decode(_BitReader(code), 4)


class TestHeader:
    def make(self):
        return EmbedHeader(
            payload_len=1234, aux_len=567, auxr_len=89, bmap_len=21, c_len=3,
            stop_r=999, stop_b=888, map_end_b=900, dir_r=1, dir_b=-1,
            peak_r=-2, peak_b=0,
            params_r=PredictorParams(-70000, 65536, 12),
            params_b=PredictorParams(5, -9, 131072),
            crc=0xDEADBEEF)

    def test_roundtrip(self):
        h = self.make()
        bits = h.to_bits()
        assert len(bits) == rdhgi.HEADER_BITS
        assert EmbedHeader.from_bits(bits) == h

    def test_bad_magic(self):
        bits = self.make().to_bits()
        bits[0] ^= 1
        with pytest.raises(BadMagic):
            EmbedHeader.from_bits(bits)

    def test_bad_version(self):
        bits = self.make().to_bits()
        bits[39] ^= 1
        with pytest.raises(BadMagic):
            EmbedHeader.from_bits(bits)


class TestFitPredictor:
    def test_identity_relation(self):
        rng = np.random.default_rng(1)
        v = rng.integers(0, 256, size=256)
        params = fit_predictor(v.astype(np.int64), v)
        assert params == PredictorParams(0, rdhgi.Q_SCALE, 0)

    def test_degenerate_falls_back_to_mean(self):
        v = np.full(100, 42)
        plane = np.full(100, 17)
        params = fit_predictor(plane, v)
        assert params == PredictorParams(17 * rdhgi.Q_SCALE, 0, 0)

    def test_matches_normal_equation_oracle(self):
        # independent oracle: solve the 3x3 normal equations directly
        rng = np.random.default_rng(2)
        v = rng.integers(0, 256, size=500).astype(np.float64)
        y = rng.integers(0, 256, size=500).astype(np.float64)
        design = np.stack([np.ones_like(v), v, v * v], axis=1)
        want = np.linalg.solve(design.T @ design, design.T @ y)
        got = fit_predictor(y, v)
        for coeff, ref in zip((got.a, got.b, got.c), want):
            assert abs(coeff - round(ref * rdhgi.Q_SCALE)) <= 1


class TestPredict:
    def test_upper_clamp(self):
        p = PredictorParams(0, rdhgi.Q_SCALE, 0)  # identity
        assert predict(p, 100, 90, 95) == 95

    def test_interior(self):
        p = PredictorParams(0, rdhgi.Q_SCALE, 0)
        assert predict(p, 92, 90, 95) == 92

    def test_lower_clamp(self):
        p = PredictorParams(0, rdhgi.Q_SCALE, 0)
        assert predict(p, 80, 90, 95) == 90


class TestGCompensate:
    def test_equal_channels_fixed_point(self):
        assert g_compensate(100, 100, 100) == 100

    def test_round_half_up(self):
        # round(14000/587) = round(23.85) = 24
        assert g_compensate(14, 0, 0) == 24

    def test_out_of_range(self):
        with pytest.raises(CodecError):
            g_compensate(255, 0, 0)

    @given(st.integers(0, 255), st.integers(0, 255), st.integers(0, 255))
    @settings(max_examples=150, deadline=None)
    def test_preserves_gray_when_in_range(self, v, r, b):
        try:
            g = g_compensate(v, r, b)
        except CodecError:
            return
        assert (299 * r + 587 * g + 114 * b + 500) // 1000 == v


class TestGCandidates:
    def test_black(self):
        assert g_candidates(0, 0, 0) == [0]

    def test_two_candidates(self):
        assert g_candidates(14, 0, 0) == [23, 24]

    @given(st.integers(0, 255), st.integers(0, 255), st.integers(0, 255))
    @settings(max_examples=150, deadline=None)
    def test_matches_exhaustive_scan(self, v, r, b):
        want = [g for g in range(256)
                if (299 * r + 587 * g + 114 * b + 500) // 1000 == v]
        assert g_candidates(v, r, b) == want
        assert len(want) <= 2


class TestHistogramShift:
    def roundtrip(self, seed, direction, nbits):
        rng = np.random.default_rng(seed)
        h = w = 24
        # gentle texture so the peak bin holds enough carriers
        plane = (128 + rng.integers(-4, 5, size=h * w)).astype(np.int64)
        v = np.clip(plane + rng.integers(-2, 3, size=h * w), 0, 255)
        params = fit_predictor(plane, v)
        rhat = rdhgi._rhat_plane(params, v, plane, h, w)
        embeddable = rdhgi._embeddable_flats(h, w)
        err = (plane - rhat)[embeddable]
        peak = rdhgi._pick_peak(err)
        bits = rng.integers(0, 2, size=nbits).tolist()
        marked, stop, _ = hs_embed_channel(plane, rhat, peak, bits,
                                           embeddable, direction)
        positions = embeddable[embeddable < stop]
        pmed = rdhgi._pmed_plane(params, v)
        restored, out = hs_extract_channel(marked, pmed, peak, nbits,
                                           positions, h, w, direction)
        assert out == bits
        assert np.array_equal(restored, plane)
        # untouched past the stop index
        assert np.array_equal(marked[stop:], plane[stop:])

    @pytest.mark.parametrize("direction", [1, -1])
    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_roundtrip_fuzz(self, direction, seed):
        self.roundtrip(seed, direction, nbits=40)

    def test_empty_bits(self):
        plane = np.full(64, 100, dtype=np.int64)
        rhat = np.full(64, 100, dtype=np.int64)
        marked, stop, modified = hs_embed_channel(
            plane, rhat, 0, [], rdhgi._embeddable_flats(8, 8))
        assert stop == 0 and modified == []
        assert np.array_equal(marked, plane)

    def test_insufficient_capacity(self):
        plane = np.full(64, 100, dtype=np.int64)
        rhat = np.full(64, 99, dtype=np.int64)  # every error is 1, peak off
        with pytest.raises(InsufficientCapacity):
            hs_embed_channel(plane, rhat, 0, [1, 0, 1],
                             rdhgi._embeddable_flats(8, 8))


class TestEmbedExtract:
    def test_roundtrip_synthetic(self):
        cover = synthetic_cover(64, 5)
        payload = payload_for(cover)
        stego = embed(cover, payload)
        bits, recovered = extract(stego)
        assert bits == payload
        assert recovered == cover
        assert to_grayscale(stego) == to_grayscale(cover)

    def test_roundtrip_photo(self):
        cover = list(photo_covers().values())[6]  # a 128 px crop
        payload = payload_for(cover)
        stego = embed(cover, payload)
        bits, recovered = extract(stego)
        assert bits == payload and recovered == cover
        assert to_grayscale(stego) == to_grayscale(cover)

    def test_zero_length_payload(self):
        cover = synthetic_cover(48, 6)
        stego = embed(cover, [])
        bits, recovered = extract(stego)
        assert bits == [] and recovered == cover

    def test_bounded_g_drift(self):
        cover = synthetic_cover(64, 7)
        stego = embed(cover, payload_for(cover))
        drift = np.abs(stego.pixels[:, :, 1].astype(int)
                       - cover.pixels[:, :, 1].astype(int))
        assert drift.max() <= 2

    def test_payload_too_large(self):
        cover = synthetic_cover(32, 8)
        with pytest.raises(CodecError):
            embed(cover, [1] * 2000)

    def test_image_too_large_for_indices(self):
        big = ColorImage(np.full((1024, 1024, 3), 128, dtype=np.uint8))
        with pytest.raises(ImageUnsuitable):
            embed(big, [1, 0, 1])

    def test_non_stego_rejected(self):
        cover = synthetic_cover(64, 9)
        with pytest.raises(CodecError):
            extract(cover)

    def test_corruption_detected(self):
        # damage an R pixel just past the reserved region, where the payload
        # carriers start; at least one such position must trip extraction
        cover = synthetic_cover(64, 10)
        stego = embed(cover, payload_for(cover))
        v = to_grayscale(stego).values.reshape(-1)
        r = stego.pixels[:, :, 0].reshape(-1).astype(int)
        b = stego.pixels[:, :, 2].reshape(-1).astype(int)
        count = 0
        for walk_end in range(64 * 64):
            if rdhgi._usable(int(v[walk_end]), int(r[walk_end]), int(b[walk_end])):
                count += 1
                if count == rdhgi.HEADER_BITS:
                    break
        detected = 0
        for flat in range(walk_end + 1, walk_end + 20):
            y, x = divmod(flat, 64)
            if y >= 63 or x >= 63:
                continue
            px = stego.pixels.copy()
            px[y, x, 0] = (int(px[y, x, 0]) + 3) % 256
            try:
                extract(ColorImage(px))
            except CodecError:
                detected += 1
        assert detected > 0

    def test_header_corruption_is_bad_magic(self):
        cover = synthetic_cover(64, 11)
        stego = embed(cover, payload_for(cover))
        px = stego.pixels.copy()
        # flip the first reserved LSB (first bit of the magic)
        flat = np.flatnonzero([
            rdhgi._usable(int(v), int(r), int(b))
            for v, r, b in zip(to_grayscale(stego).values.reshape(-1),
                               px[:, :, 0].reshape(-1), px[:, :, 2].reshape(-1))
        ])[0]
        px[flat // 64, flat % 64, 2] ^= 1
        with pytest.raises(CodecError):
            extract(ColorImage(px))

    def test_capacity_is_honest(self):
        cover = synthetic_cover(48, 12)
        cap = capacity(cover)
        assert cap > 0
        stego = embed(cover, [1] * cap)
        bits, recovered = extract(stego)
        assert bits == [1] * cap and recovered == cover

    def test_deterministic(self):
        cover = synthetic_cover(64, 13)
        payload = payload_for(cover)
        assert embed(cover, payload) == embed(cover, payload)
