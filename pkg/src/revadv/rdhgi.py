"""Grayscale-invariant reversible data hiding.

Payload bits ride in the R channel and an auxiliary stream (overflow map for
R, G-disambiguation bits, displaced reserved-region LSBs) rides in the B
channel, both via single-peak prediction-error histogram shifting with a
quadratic gray-value predictor.  The G channel is recomputed for every pixel
whose (r, b) pair changed so the grayscale plane is bit-identical to the
cover's.  Extraction is bit-exact and recovers the cover losslessly.

Bitstream layout (normative, big-endian bit order along the LSB raster walk):

  header, 446 bits, in the LSBs of the first 446 "usable" B pixels:
    magic "RAEG" (32) | version (8) | payload_len (20) | aux_len (20) |
    auxr_len (20) | bmap_len (20) | c_len (20) | stop_r (20) | stop_b (20) |
    map_end_b (20) | dir_r (1) | dir_b (1) | peak_r (10, signed) |
    peak_b (10, signed) | params_r a,b,c (3 x 32, signed Q16.16) |
    params_b a,b,c (3 x 32) | crc32 of payload (32)

  B overflow map, bmap_len bits, in the LSBs of the next usable B pixels:
    run-length code (Rice-coded runs, alternating starting with "not
    flagged") over the embeddable positions in [walk_end, map_end_b).

  G selector surplus, c_len bits, in the LSBs of the next usable B pixels.

  aux stream, embedded in B by histogram shifting (aux_len bits):
    R overflow map (same run-length code, positions in [walk_end, stop_r)) |
    original LSBs of the first reserved pixels.

  aux overflow, embedded in R after the payload (auxr_len bits):
    original LSBs of the remaining reserved pixels.

The reserved region is a raster prefix of usable pixels ending at walk_end;
histogram shifting in both channels only touches pixels at or past walk_end,
so the walk retraces identically at extraction time.

A pixel is "usable" for the reserved region when both settings of its B LSB
admit an in-range G compensation; the test depends only on values that
survive embedding, so the decoder retraces the same walk.  Histogram
shifting touches only the raster prefix up to the recorded stop index.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .imagecore import ColorImage, to_grayscale

MAGIC = 0x52414547  # "RAEG"
VERSION = 1
HEADER_BITS = 446
MAX_FIELD = 1 << 20  # payload/aux/bmap lengths and stop indices
Q_SCALE = 1 << 16  # Q16.16
FIXED_POINT_CAP = 64


class CodecError(Exception):
    pass


class InsufficientCapacity(CodecError):
    pass


class IterationDiverged(CodecError):
    pass


class ImageUnsuitable(CodecError):
    pass


class BadMagic(CodecError):
    pass


class CrcMismatch(CodecError):
    pass


class StreamUnderflow(CodecError):
    pass


class OutOfRange(CodecError):
    pass


# ---------------------------------------------------------------- bit helpers

def _int_to_bits(value: int, width: int) -> list[int]:
    if not 0 <= value < (1 << width):
        raise ValueError(f"{value} does not fit in {width} bits")
    return [(value >> (width - 1 - i)) & 1 for i in range(width)]


def _signed_to_bits(value: int, width: int) -> list[int]:
    return _int_to_bits(value & ((1 << width) - 1), width)


def _bits_to_int(bits) -> int:
    out = 0
    for b in bits:
        out = (out << 1) | int(b)
    return out


def _bits_to_signed(bits) -> int:
    width = len(bits)
    val = _bits_to_int(bits)
    if val >= 1 << (width - 1):
        val -= 1 << width
    return val


def pack_bits(bits) -> bytes:
    out = bytearray((len(bits) + 7) // 8)
    for i, b in enumerate(bits):
        if b:
            out[i >> 3] |= 0x80 >> (i & 7)
    return bytes(out)


def unpack_bits(data: bytes, nbits: int) -> list[int]:
    if nbits > len(data) * 8:
        raise ValueError("not enough bytes")
    return [(data[i >> 3] >> (7 - (i & 7))) & 1 for i in range(nbits)]


class _BitReader:
    def __init__(self, bits):
        self.bits = bits
        self.pos = 0

    def take(self, n: int) -> list[int]:
        if self.pos + n > len(self.bits):
            raise StreamUnderflow(f"needed {n} bits, {len(self.bits) - self.pos} left")
        out = self.bits[self.pos:self.pos + n]
        self.pos += n
        return out


def _rice_cost(runs, k: int) -> int:
    return sum((run >> k) + 1 + k for run in runs)


def rle_encode(flags: np.ndarray) -> list[int]:
    """Run-length code a bool array with Rice-coded runs.

    Runs alternate starting with "not flagged"; separate Rice parameters for
    the two run parities lead the stream (5 bits each).
    """
    n = len(flags)
    if n == 0:
        return []
    runs: list[int] = []
    current = False
    i = 0
    while i < n:
        j = i
        while j < n and bool(flags[j]) == current:
            j += 1
        runs.append(j - i)
        i = j
        current = not current
    ks = []
    for parity in (0, 1):
        sub = runs[parity::2]
        ks.append(min(range(20), key=lambda k: _rice_cost(sub, k)) if sub else 0)
    out = _int_to_bits(ks[0], 5) + _int_to_bits(ks[1], 5)
    for idx, run in enumerate(runs):
        k = ks[idx % 2]
        out.extend([1] * (run >> k))
        out.append(0)
        out.extend(_int_to_bits(run & ((1 << k) - 1), k))
    return out


def rle_decode(reader: _BitReader, total: int) -> np.ndarray:
    flags = np.zeros(total, dtype=bool)
    if total == 0:
        return flags
    ks = (_bits_to_int(reader.take(5)), _bits_to_int(reader.take(5)))
    current = False
    pos = 0
    idx = 0
    while pos < total:
        if idx > 2 * total + 2:
            raise StreamUnderflow("malformed location map")
        k = ks[idx % 2]
        q = 0
        while reader.take(1)[0]:
            q += 1
        run = (q << k) | _bits_to_int(reader.take(k))
        if pos + run > total:
            raise StreamUnderflow("overlong run in location map")
        if current:
            flags[pos:pos + run] = True
        pos += run
        current = not current
        idx += 1
    return flags


# ------------------------------------------------------------------ predictor

@dataclass(frozen=True)
class PredictorParams:
    """Quadratic gray-value predictor coefficients, fixed point Q16.16."""

    a: int
    b: int
    c: int

    @classmethod
    def from_floats(cls, a: float, b: float, c: float) -> "PredictorParams":
        def q(x: float) -> int:
            val = int(np.floor(x * Q_SCALE + 0.5))
            lim = 1 << 31
            if not -lim <= val < lim:
                raise OutOfRange(f"coefficient {x} not representable in Q16.16")
            return val

        return cls(q(a), q(b), q(c))

    def as_floats(self) -> tuple[float, float, float]:
        return (self.a / Q_SCALE, self.b / Q_SCALE, self.c / Q_SCALE)


def fit_predictor(plane: np.ndarray, v: np.ndarray) -> PredictorParams:
    """Least-squares fit of value ~ a + b*v + c*v^2 over all pixels."""
    vf = np.asarray(v, dtype=np.float64).reshape(-1)
    yf = np.asarray(plane, dtype=np.float64).reshape(-1)
    design = np.stack([np.ones_like(vf), vf, vf * vf], axis=1)
    coeffs, _, rank, _ = np.linalg.lstsq(design, yf, rcond=None)
    if rank < 3:
        return PredictorParams.from_floats(float(yf.mean()), 0.0, 0.0)
    return PredictorParams.from_floats(*coeffs)


def _pmed_plane(params: PredictorParams, v: np.ndarray) -> np.ndarray:
    """Rounded predictor output per pixel (before the neighbor clamp)."""
    vv = np.asarray(v, dtype=np.int64)
    fixed = params.a + params.b * vv + params.c * vv * vv
    return (fixed + Q_SCALE // 2) >> 16


def predict(params: PredictorParams, v: int, right_neighbor: int, down_neighbor: int) -> int:
    """Predictor output clamped into the neighbor range."""
    p = int(_pmed_plane(params, np.asarray([v]))[0])
    lo = min(right_neighbor, down_neighbor)
    hi = max(right_neighbor, down_neighbor)
    if p <= lo:
        return lo
    if p >= hi:
        return hi
    return p


def _rhat_plane(params: PredictorParams, v: np.ndarray, plane: np.ndarray,
                height: int, width: int) -> np.ndarray:
    """Clamped predictions for all embeddable pixels, from original neighbors."""
    p = _pmed_plane(params, v).reshape(height, width)
    ch = np.asarray(plane, dtype=np.int64).reshape(height, width)
    rhat = np.zeros((height, width), dtype=np.int64)
    nb_down = ch[1:, :-1]  # value at (i+1, j)
    nb_right = ch[:-1, 1:]  # value at (i, j+1)
    lo = np.minimum(nb_down, nb_right)
    hi = np.maximum(nb_down, nb_right)
    core = np.clip(p[:-1, :-1], lo, hi)
    rhat[:-1, :-1] = core
    return rhat.reshape(-1)


# --------------------------------------------------------- gray compensation

def _g_comp(v: int, r: int, b: int) -> int:
    # round-half-up of (1000 v - 299 r - 114 b) / 587, valid for negative sums
    n = 1000 * v - 299 * r - 114 * b
    return (2 * n + 587) // 1174


def g_compensate(v: int, r: int, b: int) -> int:
    g = _g_comp(v, r, b)
    if not 0 <= g <= 255:
        raise OutOfRange(f"compensated g={g} for (v={v}, r={r}, b={b})")
    return g


def _g_safe(v: int, r: int, b: int) -> bool:
    return 0 <= _g_comp(v, r, b) <= 255


def g_candidates(v: int, r: int, b: int) -> list[int]:
    base = _g_comp(v, r, b)
    out = []
    for g in (base - 1, base, base + 1):
        if 0 <= g <= 255 and (299 * r + 587 * g + 114 * b + 500) // 1000 == v:
            out.append(g)
    return out


def _usable(v: int, r_marked: int, b: int) -> bool:
    """Can this pixel's B LSB be overwritten either way without a G conflict?

    Both settings must admit an in-range compensated G and candidate sets of
    the same size, so that flipping the LSB never produces or consumes a
    G-selector bit.  The test reads only values that survive embedding.
    """
    lo, hi = b & ~1, b | 1
    return (_g_safe(v, r_marked, lo) and _g_safe(v, r_marked, hi)
            and len(g_candidates(v, r_marked, lo)) == len(g_candidates(v, r_marked, hi)))


# ------------------------------------------------------------------- header

@dataclass
class EmbedHeader:
    payload_len: int
    aux_len: int
    auxr_len: int
    bmap_len: int
    c_len: int
    stop_r: int
    stop_b: int
    map_end_b: int
    dir_r: int
    dir_b: int
    peak_r: int
    peak_b: int
    params_r: PredictorParams
    params_b: PredictorParams
    crc: int

    def to_bits(self) -> list[int]:
        bits: list[int] = []
        bits += _int_to_bits(MAGIC, 32)
        bits += _int_to_bits(VERSION, 8)
        bits += _int_to_bits(self.payload_len, 20)
        bits += _int_to_bits(self.aux_len, 20)
        bits += _int_to_bits(self.auxr_len, 20)
        bits += _int_to_bits(self.bmap_len, 20)
        bits += _int_to_bits(self.c_len, 20)
        bits += _int_to_bits(self.stop_r, 20)
        bits += _int_to_bits(self.stop_b, 20)
        bits += _int_to_bits(self.map_end_b, 20)
        bits += _int_to_bits(1 if self.dir_r < 0 else 0, 1)
        bits += _int_to_bits(1 if self.dir_b < 0 else 0, 1)
        bits += _signed_to_bits(self.peak_r, 10)
        bits += _signed_to_bits(self.peak_b, 10)
        for p in (self.params_r, self.params_b):
            bits += _signed_to_bits(p.a, 32)
            bits += _signed_to_bits(p.b, 32)
            bits += _signed_to_bits(p.c, 32)
        bits += _int_to_bits(self.crc, 32)
        assert len(bits) == HEADER_BITS
        return bits

    @classmethod
    def from_bits(cls, bits) -> "EmbedHeader":
        rd = _BitReader(bits)
        if _bits_to_int(rd.take(32)) != MAGIC:
            raise BadMagic("header magic mismatch")
        if _bits_to_int(rd.take(8)) != VERSION:
            raise BadMagic("unsupported stream version")
        payload_len = _bits_to_int(rd.take(20))
        aux_len = _bits_to_int(rd.take(20))
        auxr_len = _bits_to_int(rd.take(20))
        bmap_len = _bits_to_int(rd.take(20))
        c_len = _bits_to_int(rd.take(20))
        stop_r = _bits_to_int(rd.take(20))
        stop_b = _bits_to_int(rd.take(20))
        map_end_b = _bits_to_int(rd.take(20))
        dir_r = -1 if rd.take(1)[0] else 1
        dir_b = -1 if rd.take(1)[0] else 1
        peak_r = _bits_to_signed(rd.take(10))
        peak_b = _bits_to_signed(rd.take(10))
        params = []
        for _ in range(2):
            a = _bits_to_signed(rd.take(32))
            b = _bits_to_signed(rd.take(32))
            c = _bits_to_signed(rd.take(32))
            params.append(PredictorParams(a, b, c))
        crc = _bits_to_int(rd.take(32))
        return cls(payload_len, aux_len, auxr_len, bmap_len, c_len, stop_r,
                   stop_b, map_end_b, dir_r, dir_b, peak_r, peak_b,
                   params[0], params[1], crc)


# --------------------------------------------------------- histogram shifting

def _embeddable_flats(height: int, width: int) -> np.ndarray:
    """Flat raster indices with both Eq-style neighbors, in raster order."""
    idx = np.arange(height * width).reshape(height, width)
    return idx[:-1, :-1].reshape(-1)


def _pick_peak(errors: np.ndarray) -> int:
    """Most frequent error; ties prefer smaller |peak|, then smaller value."""
    values, counts = np.unique(errors, return_counts=True)
    order = sorted(range(len(values)),
                   key=lambda i: (-counts[i], abs(int(values[i])), int(values[i])))
    return int(values[order[0]])


def _tail_peak(errors: np.ndarray, direction: int) -> int:
    """Peak with the fewest displaced pixels per carrier.

    Pixels strictly beyond the peak (in the shift direction) are displaced
    without carrying anything, and every displacement risks minting a G
    selector bit the streams must then absorb.  On heavy-tailed histograms
    the mode can sit where that overhead feeds on itself, so this picks the
    bin with the lowest beyond-to-carrier ratio among bins still holding at
    least half the mode's count.  Ties prefer smaller |peak|, then smaller
    value.
    """
    values, counts = np.unique(errors, return_counts=True)
    if direction > 0:
        beyond = np.cumsum(counts[::-1])[::-1] - counts
    else:
        beyond = np.cumsum(counts) - counts
    viable = [i for i in range(len(values)) if 2 * counts[i] >= counts.max()]
    order = sorted(viable,
                   key=lambda i: (beyond[i] / counts[i], abs(int(values[i])),
                                  int(values[i])))
    return int(values[order[0]])


def hs_embed_channel(plane: np.ndarray, rhat: np.ndarray, peak: int,
                     bits, positions, direction: int = 1
                     ) -> tuple[np.ndarray, int, list[int]]:
    """Shift/embed along `positions` until `bits` is exhausted.

    Expansion moves away from the peak by `direction` (+1 or -1).  Returns
    (marked plane, stop index, modified flat indices).  Pixels at or past
    the stop index are untouched.
    """
    out = plane.copy()
    modified: list[int] = []
    if len(bits) == 0:
        return out, 0, modified
    cursor = 0
    for flat in positions:
        t = direction * (int(plane[flat]) - int(rhat[flat]) - peak)
        if t > 0:
            out[flat] += direction
            modified.append(flat)
        elif t == 0:
            if bits[cursor]:
                out[flat] += direction
                modified.append(flat)
            cursor += 1
            if cursor == len(bits):
                return out, int(flat) + 1, modified
    raise InsufficientCapacity(f"ran out of peak pixels with {len(bits) - cursor} bits left")


def hs_extract_channel(plane: np.ndarray, pmed: np.ndarray, peak: int,
                       count: int, positions, height: int, width: int,
                       direction: int = 1) -> tuple[np.ndarray, list[int]]:
    """Inverse walk in reverse raster order; neighbors are already restored."""
    out = plane.copy()
    bits_rev: list[int] = []
    for flat in reversed(positions):
        down = int(out[flat + width])
        right = int(out[flat + 1])
        lo, hi = (right, down) if right < down else (down, right)
        p = int(pmed[flat])
        rhat = lo if p <= lo else hi if p >= hi else p
        t = direction * (int(out[flat]) - rhat - peak)
        if t == 0:
            bits_rev.append(0)
        elif t == 1:
            bits_rev.append(1)
            out[flat] -= direction
        elif t > 1:
            out[flat] -= direction
    if len(bits_rev) != count:
        raise StreamUnderflow(f"recovered {len(bits_rev)} bits, expected {count}")
    return out, bits_rev[::-1]


# -------------------------------------------------------------------- embed

def _payload_crc(bits) -> int:
    return zlib.crc32(pack_bits(bits)) & 0xFFFFFFFF


def _reserved_walk(v: np.ndarray, r: np.ndarray, b: np.ndarray,
                   need: int) -> list[int]:
    """First `need` usable flat indices (full-raster walk)."""
    used: list[int] = []
    for flat in range(len(v)):
        if len(used) == need:
            break
        if _usable(int(v[flat]), int(r[flat]), int(b[flat])):
            used.append(flat)
    if len(used) < need:
        raise ImageUnsuitable(f"only {len(used)} usable reserved pixels, need {need}")
    return used


def _flag_r(v, r, b, e, peak, embeddable, direction) -> np.ndarray:
    """R-phase overflow map: a step must stay in range and G-safe for b-1..b+1."""
    flags = np.zeros(len(embeddable), dtype=bool)
    for k, flat in enumerate(embeddable):
        if direction * (e[k] - peak) < 0:
            continue
        rr = int(r[flat]) + direction
        if not 0 <= rr <= 255:
            flags[k] = True
            continue
        vv, bb = int(v[flat]), int(b[flat])
        for b2 in (bb - 1, bb, bb + 1):
            if 0 <= b2 <= 255 and not _g_safe(vv, rr, b2):
                flags[k] = True
                break
    return flags


def _flag_b(v, r_marked, b, e, peak, embeddable, direction) -> np.ndarray:
    """B-phase overflow map: a step checked against the actual marked r."""
    flags = np.zeros(len(embeddable), dtype=bool)
    for k, flat in enumerate(embeddable):
        if direction * (e[k] - peak) < 0:
            continue
        bb = int(b[flat]) + direction
        if not 0 <= bb <= 255 or not _g_safe(int(v[flat]), int(r_marked[flat]), bb):
            flags[k] = True
    return flags


def _check_field(value: int, what: str) -> int:
    if value >= MAX_FIELD:
        raise InsufficientCapacity(f"{what} ({value}) exceeds the 20-bit field")
    return value


def _ncands_vec(v: np.ndarray, r: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Vectorized size of the G candidate set per pixel."""
    lo = 1000 * v - 500 - 299 * r - 114 * b
    g0 = np.maximum(-(-lo // 587), 0)
    g1 = np.minimum((lo + 999) // 587, 255)
    return np.maximum(g1 - g0 + 1, 0)


def _direction_order(v, r, b, channel: str) -> list[int]:
    """Try the step direction with the smaller G-selector deficit first."""
    n0 = _ncands_vec(v, r, b)
    scores = {}
    for d in (1, -1):
        if channel == "r":
            n1 = _ncands_vec(v, np.clip(r + d, 0, 255), b)
        else:
            n1 = _ncands_vec(v, r, np.clip(b + d, 0, 255))
        scores[d] = int(((n0 == 2) & (n1 == 1)).sum() - ((n0 == 1) & (n1 == 2)).sum())
    return sorted((1, -1), key=lambda d: scores[d])


def embed(cover: ColorImage, payload) -> ColorImage:
    """Embed a bit sequence; grayscale of the result equals the cover's."""
    height, width = cover.height, cover.width
    n = height * width
    if n >= MAX_FIELD:
        raise ImageUnsuitable("image too large for 20-bit raster indices")
    payload = [int(b) & 1 for b in payload]
    _check_field(len(payload), "payload length")

    px = cover.pixels.astype(np.int64)
    r = px[:, :, 0].reshape(-1)
    g = px[:, :, 1].reshape(-1)
    b = px[:, :, 2].reshape(-1)
    v = to_grayscale(cover).values.astype(np.int64).reshape(-1)

    dirs_r = _direction_order(v, r, b, "r")
    dirs_b = _direction_order(v, r, b, "b")
    last_error: CodecError | None = None
    for tail_r, tail_b in ((False, False), (True, False),
                           (False, True), (True, True)):
        for dir_r, dir_b in ((dirs_r[0], dirs_b[0]), (dirs_r[0], dirs_b[1]),
                             (dirs_r[1], dirs_b[0]), (dirs_r[1], dirs_b[1])):
            try:
                return _embed_directed(cover, payload, r, g, b, v,
                                       dir_r, dir_b, tail_r, tail_b)
            except (InsufficientCapacity, IterationDiverged,
                    ImageUnsuitable) as exc:
                last_error = exc
    raise last_error


def _embed_directed(cover: ColorImage, payload, r, g, b, v,
                    dir_r: int, dir_b: int, tail_r: bool = False,
                    tail_b: bool = False) -> ColorImage:
    height, width = cover.height, cover.width
    params_r = fit_predictor(r, v)
    params_b = fit_predictor(b, v)
    embeddable = _embeddable_flats(height, width)

    rhat_r = _rhat_plane(params_r, v, r, height, width)
    err_r = (r - rhat_r)[embeddable]
    peak_r = _tail_peak(err_r, dir_r) if tail_r else _pick_peak(err_r)
    rflags = _flag_r(v, r, b, err_r, peak_r, embeddable, dir_r)
    eligible_r_all = embeddable[~rflags]

    rhat_b = _rhat_plane(params_b, v, b, height, width)
    err_b = (b - rhat_b)[embeddable]
    peak_b = _tail_peak(err_b, dir_b) if tail_b else _pick_peak(err_b)
    crc = _payload_crc(payload)

    def prefix_count(extent: int) -> int:
        return int(np.searchsorted(embeddable, extent))

    # Fixed-point iteration over the side-stream lengths.  The reserved
    # region is a raster prefix of usable pixels, judged on original values,
    # and both channels only shift at or past its end, so the decoder
    # retraces it exactly.  Its LSB originals ride in B and overflow into R
    # after the payload.  The reserved pixels are class-neutral for G
    # selectors by the usability rule, so the selector stream depends on the
    # region lengths but never on the bits placed there; the loop therefore
    # iterates lengths alone, monotonically, and zero-pads on convergence.
    bmap_len = 0
    c_len = 0
    split = None  # how many reserved LSBs ride in B; rest go to R
    map_end_b = 0
    converged = False
    final = None
    for _ in range(FIXED_POINT_CAP):
        _check_field(c_len, "G selector surplus length")
        _check_field(bmap_len, "B overflow map length")
        reserved = _reserved_walk(v, r, b, HEADER_BITS + bmap_len + c_len)
        walk_end = reserved[-1] + 1
        reserved_lsbs = [int(b[flat]) & 1 for flat in reserved]
        k_walk = prefix_count(walk_end)

        # R phase: payload plus any aux overflow
        take_b = len(reserved_lsbs) if split is None else min(split, len(reserved_lsbs))
        aux_r = reserved_lsbs[take_b:]
        eligible_r = eligible_r_all[eligible_r_all >= walk_end]
        r_marked, stop_r, _ = hs_embed_channel(r, rhat_r, peak_r,
                                               payload + aux_r, eligible_r, dir_r)
        rmap_bits = rle_encode(rflags[k_walk:prefix_count(stop_r)])

        # B phase: R map plus as many reserved LSBs as fit
        bflags = _flag_b(v, r_marked, b, err_b, peak_b, embeddable, dir_b)
        eligible_b = embeddable[~bflags]
        eligible_b = eligible_b[eligible_b >= walk_end]
        cap_b = int(np.sum((b - rhat_b)[eligible_b] == peak_b))
        aux_b = rmap_bits + reserved_lsbs[:take_b]
        _check_field(len(aux_b), "aux stream length")
        _check_field(len(aux_r), "aux overflow length")
        if len(aux_b) > cap_b:
            fit = max(cap_b - len(rmap_bits), 0)
            if fit >= take_b:
                raise InsufficientCapacity("B channel cannot hold the R overflow map")
            split = fit
            continue
        b_marked, stop_b, _ = hs_embed_channel(b, rhat_b, peak_b, aux_b,
                                               eligible_b, dir_b)
        map_end_b = max(map_end_b, stop_b)
        bmap_bits = rle_encode(bflags[k_walk:prefix_count(map_end_b)])

        header = EmbedHeader(len(payload), len(aux_b), len(aux_r),
                             bmap_len, c_len, stop_r, stop_b, map_end_b,
                             dir_r, dir_b, peak_r, peak_b, params_r, params_b, crc)
        side_bits = (header.to_bits()
                     + (bmap_bits + [0] * bmap_len)[:bmap_len] + [0] * c_len)
        b_full = b_marked.copy()
        for flat, bit in zip(reserved, side_bits):
            b_full[flat] = (b_full[flat] & ~1) | bit
        # Pixels whose candidate set shrinks from 2 to 1 lose a selector bit;
        # pixels whose set grows from 1 to 2 give the encoder a free choice
        # the decoder can read.  The former's bits ride in the latter, and
        # only the surplus goes to the reserved region.
        modified = np.nonzero((r_marked != r) | (b_full != b))[0]
        selectors: list[int] = []
        producers = 0
        for flat in modified:
            cands = g_candidates(int(v[flat]), int(r[flat]), int(b[flat]))
            cands_new = g_candidates(int(v[flat]), int(r_marked[flat]), int(b_full[flat]))
            if not cands_new:
                raise OutOfRange(f"no G candidate at flat index {flat}")
            if len(cands) == 2 and len(cands_new) == 1:
                selectors.append(cands.index(int(g[flat])))
            elif len(cands) == 1 and len(cands_new) == 2:
                producers += 1
        surplus = selectors[producers:]

        # The header is written from this iteration's values, so the only
        # cross-iteration consistency needed is for the walk inputs.
        if len(bmap_bits) <= bmap_len and len(surplus) <= c_len:
            c_bits = surplus + [0] * (c_len - len(surplus))
            side_bits = (header.to_bits()
                         + (bmap_bits + [0] * bmap_len)[:bmap_len] + c_bits)
            for flat, bit in zip(reserved, side_bits):
                b_full[flat] = (b_full[flat] & ~1) | bit
            final = (r_marked, b_full, selectors, producers)
            converged = True
            break
        bmap_len = max(bmap_len, len(bmap_bits))
        c_len = max(c_len, len(surplus))
        split = max(cap_b - len(rmap_bits), 0)
    if not converged:
        raise IterationDiverged("aux stream did not stabilize")
    r_marked, b_final, selectors, producers = final

    # G compensation: candidate sets of equal size map index to index;
    # shrinking sets force the single candidate; growing sets encode the
    # next pending selector bit in the choice.
    g_final = g.copy()
    queue = selectors + [0] * producers  # padding when producers outnumber
    q_pos = 0
    for flat in np.nonzero((r_marked != r) | (b_final != b))[0]:
        vv = int(v[flat])
        cands = g_candidates(vv, int(r[flat]), int(b[flat]))
        cands_new = g_candidates(vv, int(r_marked[flat]), int(b_final[flat]))
        if len(cands) == len(cands_new):
            g_final[flat] = cands_new[cands.index(int(g[flat]))]
        elif len(cands_new) == 1:
            g_final[flat] = cands_new[0]
        else:
            g_final[flat] = cands_new[queue[q_pos]]
            q_pos += 1

    out = np.stack([r_marked, g_final, b_final], axis=1).reshape(height, width, 3)
    if np.any(out < 0) or np.any(out > 255):
        raise OutOfRange("marked channel value left [0, 255]")
    return ColorImage(out.astype(np.uint8))


# ------------------------------------------------------------------- extract

def extract(stego: ColorImage) -> tuple[list[int], ColorImage]:
    """Recover (payload bits, cover image) from a stego image."""
    height, width = stego.height, stego.width
    px = stego.pixels.astype(np.int64)
    r_m = px[:, :, 0].reshape(-1)
    g_m = px[:, :, 1].reshape(-1)
    b_m = px[:, :, 2].reshape(-1)
    v = to_grayscale(stego).values.astype(np.int64).reshape(-1)
    n = height * width
    embeddable = _embeddable_flats(height, width)

    # Retrace the reserved walk; upper B bits and marked R survive embedding,
    # so the usability test gives the same pixels the encoder picked.
    used: list[int] = []
    side_bits: list[int] = []
    header = None
    need = HEADER_BITS
    flat = 0
    while flat < n and len(side_bits) < need:
        if _usable(int(v[flat]), int(r_m[flat]), int(b_m[flat])):
            used.append(flat)
            side_bits.append(int(b_m[flat]) & 1)
            if len(side_bits) == HEADER_BITS and header is None:
                header = EmbedHeader.from_bits(side_bits)
                need = HEADER_BITS + header.bmap_len + header.c_len
        flat += 1
    if header is None or len(side_bits) < need:
        raise BadMagic("ran out of pixels while reading the header")
    walk_end = used[-1] + 1
    k_walk = int(np.searchsorted(embeddable, walk_end))
    c_bits = side_bits[HEADER_BITS + header.bmap_len:]
    bflags = np.zeros(len(embeddable), dtype=bool)
    k_b = int(np.searchsorted(embeddable, header.map_end_b))
    bflags[k_walk:k_b] = rle_decode(
        _BitReader(side_bits[HEADER_BITS:HEADER_BITS + header.bmap_len]),
        max(k_b - k_walk, 0))

    # B channel: aux stream out, plane restored
    pmed_b = _pmed_plane(header.params_b, v)
    eligible_b = embeddable[~bflags]
    eligible_b = eligible_b[(eligible_b >= walk_end) & (eligible_b < header.stop_b)]
    b_rec, aux = hs_extract_channel(b_m, pmed_b, header.peak_b, header.aux_len,
                                    eligible_b, height, width, header.dir_b)

    rd = _BitReader(aux)
    rflags = np.zeros(len(embeddable), dtype=bool)
    k_r = int(np.searchsorted(embeddable, header.stop_r))
    rflags[k_walk:k_r] = rle_decode(rd, max(k_r - k_walk, 0))
    if header.auxr_len > len(used):
        raise StreamUnderflow("aux overflow longer than the reserved region")
    lsbs_in_b = rd.take(len(used) - header.auxr_len)
    if rd.pos != len(aux):
        raise StreamUnderflow("trailing bits in the aux stream")

    # R channel: payload and aux overflow out, plane restored
    pmed_r = _pmed_plane(header.params_r, v)
    eligible_r = embeddable[~rflags]
    eligible_r = eligible_r[(eligible_r >= walk_end) & (eligible_r < header.stop_r)]
    r_rec, r_bits = hs_extract_channel(r_m, pmed_r, header.peak_r,
                                       header.payload_len + header.auxr_len,
                                       eligible_r, height, width, header.dir_r)
    payload = r_bits[:header.payload_len]
    for flat, bit in zip(used, lsbs_in_b + r_bits[header.payload_len:]):
        b_rec[flat] = (b_rec[flat] & ~1) | bit

    if _payload_crc(payload) != header.crc:
        raise CrcMismatch("payload CRC32 does not match the header")

    # G recovery.  Equal-size candidate sets map index to index.  Growing
    # sets (1 original candidate, 2 marked) carry one readable bit each;
    # those bits, then the aux surplus, resolve the shrinking sets.
    g_rec = g_m.copy()
    modified = np.nonzero((r_rec != r_m) | (b_rec != b_m))[0]
    carried: list[int] = []
    consumers: list[int] = []
    for flat in modified:
        vv = int(v[flat])
        cands = g_candidates(vv, int(r_rec[flat]), int(b_rec[flat]))
        cands_new = g_candidates(vv, int(r_m[flat]), int(b_m[flat]))
        if not cands or int(g_m[flat]) not in cands_new:
            raise StreamUnderflow(f"marked g inconsistent at flat index {flat}")
        if len(cands) == len(cands_new):
            g_rec[flat] = cands[cands_new.index(int(g_m[flat]))]
        elif len(cands) == 1:
            g_rec[flat] = cands[0]
            carried.append(cands_new.index(int(g_m[flat])))
        else:
            consumers.append(flat)
            g_rec[flat] = cands[0]  # placeholder until the stream is assembled
    stream = carried[:len(consumers)] + c_bits
    if len(stream) < len(consumers):
        raise StreamUnderflow("G-disambiguation bits exhausted")
    if any(stream[len(consumers):]):  # surplus slot is zero-padded
        raise StreamUnderflow("unused G-disambiguation bits set")
    stream = stream[:len(consumers)]
    for flat, sel in zip(consumers, stream):
        vv = int(v[flat])
        cands = g_candidates(vv, int(r_rec[flat]), int(b_rec[flat]))
        g_rec[flat] = cands[sel]

    cover = np.stack([r_rec, g_rec, b_rec], axis=1).reshape(height, width, 3)
    if np.any(cover < 0) or np.any(cover > 255):
        raise StreamUnderflow("recovered channel value left [0, 255]")
    return payload, ColorImage(cover.astype(np.uint8))


# ------------------------------------------------------------------ capacity

def capacity(cover: ColorImage) -> int:
    """Largest payload length (bits) this cover is known to accept.

    Probes embed() with all-ones payloads (the worst case for the auxiliary
    stream) via binary search, then keeps a 10% reserve.
    """
    height, width = cover.height, cover.width
    if height * width >= MAX_FIELD:
        return 0

    def fits(nbits: int) -> bool:
        try:
            embed(cover, [1] * nbits)
            return True
        except CodecError:
            return False

    px = cover.pixels.astype(np.int64)
    r = px[:, :, 0].reshape(-1)
    v = to_grayscale(cover).values.astype(np.int64).reshape(-1)
    embeddable = _embeddable_flats(height, width)
    rhat_r = _rhat_plane(fit_predictor(r, v), v, r, height, width)
    err_r = (r - rhat_r)[embeddable]
    peak_r = _pick_peak(err_r)
    hi = min(int(np.sum(err_r == peak_r)), MAX_FIELD - 1)
    lo = 0
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if fits(mid):
            lo = mid
        else:
            hi = mid - 1
    return (lo * 9) // 10
