import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from seacam.graycode import (CorrespondenceMap, PatternSpec, binary_to_gray, bits_for,
                             decode_stack, generate_patterns, gray_to_binary, load_stack,
                             read_manifest)
from seacam.pgm import PGMError, decode_pgm, encode_pgm

WHITE, BLACK = 220, 30


def observe(seq, proj_x, proj_y, white=WHITE, black=BLACK):
    """Ideal capture: each camera pixel sees projector pixel (proj_x, proj_y); -1 = nothing."""
    seen = proj_x >= 0
    px = np.where(seen, proj_x, 0)
    py = np.where(seen, proj_y, 0)
    frames = []
    for pat in seq:
        lit = pat.lit(px, py) & seen
        frames.append(np.where(lit, white, black).astype(np.uint8))
    return np.stack(frames)


# -- codes ------------------------------------------------------------------------

def test_gray_table():
    # standard 3-bit reflected code
    assert [binary_to_gray(i) for i in range(8)] == [0, 1, 3, 2, 6, 7, 5, 4]
    assert [gray_to_binary(g) for g in [0, 1, 3, 2, 6, 7, 5, 4]] == list(range(8))


@given(st.integers(min_value=0, max_value=2 ** 62))
def test_gray_roundtrip_int(b):
    assert gray_to_binary(binary_to_gray(b)) == b


@given(st.integers(min_value=0, max_value=2 ** 40 - 2))
def test_gray_adjacent_codes_differ_in_one_bit(b):
    assert bin(binary_to_gray(b) ^ binary_to_gray(b + 1)).count("1") == 1


def test_gray_array_matches_scalar():
    b = np.arange(5000, dtype=np.int64) * 7919
    g = binary_to_gray(b)
    assert [int(x) for x in g] == [binary_to_gray(int(x)) for x in b]
    np.testing.assert_array_equal(gray_to_binary(g), b)


def test_gray_negative_rejected():
    with pytest.raises(ValueError):
        gray_to_binary(-1)


@pytest.mark.parametrize("n,bits", [(2, 1), (3, 2), (768, 10), (1000, 10), (1024, 10),
                                    (1025, 11), (1280, 11)])
def test_bits_for(n, bits):
    assert bits_for(n) == bits


# -- pattern sequence ---------------------------------------------------------------

def test_pattern_count_1024x768():
    spec = PatternSpec(1024, 768)
    assert spec.pattern_count == 2 + 2 * 10 + 2 * 10 == 42
    assert len(generate_patterns(spec)) == 42
    assert PatternSpec(1024, 768, include_inverses=False).pattern_count == 22
    assert PatternSpec(1024, 768, False, False).pattern_count == 20


def test_pattern_order_and_names():
    seq = generate_patterns(PatternSpec(8, 4))
    names = [p.filename for p in seq]
    assert names == ["pat_000_ref.pgm", "pat_001_ref_inv.pgm",
                     "pat_002_col0.pgm", "pat_003_col0_inv.pgm",
                     "pat_004_col1.pgm", "pat_005_col1_inv.pgm",
                     "pat_006_col2.pgm", "pat_007_col2_inv.pgm",
                     "pat_008_row0.pgm", "pat_009_row0_inv.pgm",
                     "pat_010_row1.pgm", "pat_011_row1_inv.pgm"]
    assert [p.index for p in seq] == list(range(12))


def test_pattern_pixels_follow_gray_bits():
    seq = generate_patterns(PatternSpec(8, 4))
    col_msb = seq[2].pixels
    assert col_msb.shape == (4, 8)
    # gray codes 0..7 = 0,1,3,2,6,7,5,4 -> msb lit for columns 4..7
    np.testing.assert_array_equal(col_msb[0] > 0, [0, 0, 0, 0, 1, 1, 1, 1])
    np.testing.assert_array_equal(seq[3].pixels, 255 - col_msb)
    assert (seq[0].pixels == 255).all() and (seq[1].pixels == 0).all()


def test_pattern_lit_agrees_with_pixels():
    seq = generate_patterns(PatternSpec(37, 21))
    yy, xx = np.mgrid[0:21, 0:37]
    for pat in seq:
        np.testing.assert_array_equal(pat.lit(xx, yy), pat.pixels > 0)


@pytest.mark.parametrize("w,h", [(1, 5), (5, 1), (0, 0)])
def test_pattern_spec_rejects_tiny(w, h):
    with pytest.raises(ValueError):
        PatternSpec(w, h)


def test_manifest_roundtrip_and_order_check(tmp_path):
    spec = PatternSpec(64, 48)
    manifest_path = generate_patterns(spec).write(tmp_path)
    got, data = read_manifest(manifest_path)
    assert got == spec
    assert len(data["patterns"]) == 2 + 2 * 6 + 2 * 6
    data["patterns"][2], data["patterns"][3] = data["patterns"][3], data["patterns"][2]
    manifest_path.write_text(json.dumps(data))
    with pytest.raises(ValueError):
        read_manifest(manifest_path)


# -- decode -------------------------------------------------------------------------

def test_decode_projector_images_themselves(tmp_path, use_numba):
    """A camera that is the projector decodes every pixel to its own coordinate."""
    spec = PatternSpec(40, 24)
    generate_patterns(spec).write(tmp_path)
    spec2, stack = load_stack(tmp_path)
    cmap = decode_stack(stack, spec2, use_numba=use_numba)
    yy, xx = np.mgrid[0:24, 0:40]
    np.testing.assert_array_equal(cmap.proj_x, xx)
    np.testing.assert_array_equal(cmap.proj_y, yy)
    assert cmap.coverage() == 1.0


@given(st.integers(2, 300), st.integers(2, 200), st.integers(0, 2 ** 32 - 1),
       st.booleans(), st.booleans())
def test_decode_random_correspondences_exact(w, h, seed, inverses, references):
    rng = np.random.default_rng(seed)
    spec = PatternSpec(w, h, inverses, references)
    seq = generate_patterns(spec)
    px = rng.integers(0, w, size=(9, 11))
    py = rng.integers(0, h, size=(9, 11))
    stack = observe(seq, px, py, white=255 if not references else WHITE,
                    black=0 if not references else BLACK)
    for flag in (True, False):
        cmap = decode_stack(stack, spec, use_numba=flag)
        np.testing.assert_array_equal(cmap.proj_x, px)
        np.testing.assert_array_equal(cmap.proj_y, py)


def test_decode_unlit_pixels_undecoded(use_numba):
    spec = PatternSpec(16, 16)
    px = np.array([[3, -1], [-1, 15]])
    py = np.array([[4, -1], [-1, 0]])
    cmap = decode_stack(observe(generate_patterns(spec), px, py), spec, use_numba=use_numba)
    np.testing.assert_array_equal(cmap.proj_x, px)
    np.testing.assert_array_equal(cmap.proj_y, py)
    assert cmap.confidence[0, 1] == 0.0


def test_decode_low_contrast_rejected(use_numba):
    spec = PatternSpec(16, 16)
    seq = generate_patterns(spec)
    stack = observe(seq, np.array([[5]]), np.array([[9]])).astype(np.int32)
    stack[2:] = np.where(stack[2:] > 100, 102, 100)  # 2 levels of contrast over a 190 range
    cmap = decode_stack(stack.astype(np.uint8), spec, use_numba=use_numba)
    assert cmap.proj_x[0, 0] == -1
    assert cmap.confidence[0, 0] == pytest.approx(2 / 190)
    cmap = decode_stack(stack.astype(np.uint8), spec, contrast_threshold=0.01, use_numba=use_numba)
    assert (cmap.proj_x[0, 0], cmap.proj_y[0, 0]) == (5, 9)


def test_decode_dark_pixels_rejected(use_numba):
    # contrast is relative, so a faint pixel with a tiny range would pass without the floor
    spec = PatternSpec(16, 16)
    stack = observe(generate_patterns(spec), np.array([[5]]), np.array([[9]]), white=12, black=2)
    assert decode_stack(stack, spec, use_numba=use_numba).proj_x[0, 0] == -1
    cmap = decode_stack(stack, spec, min_dynamic_range=0, use_numba=use_numba)
    assert cmap.proj_x[0, 0] == 5


def test_decode_code_outside_projector(use_numba):
    # width 12 needs 4 bits; craft code 13 on the column axis
    spec = PatternSpec(12, 4)
    seq = generate_patterns(spec)
    wide = generate_patterns(PatternSpec(16, 4))
    stack = observe(wide, np.array([[13, 7]]), np.array([[1, 2]]))
    assert len(stack) == len(seq)
    cmap = decode_stack(stack, spec, use_numba=use_numba)
    np.testing.assert_array_equal(cmap.proj_x, [[-1, 7]])


def test_decode_numba_matches_numpy_on_noise():
    rng = np.random.default_rng(5)
    spec = PatternSpec(100, 60)
    stack = rng.integers(0, 256, size=(spec.pattern_count, 50, 70)).astype(np.uint8)
    a = decode_stack(stack, spec, use_numba=True)
    b = decode_stack(stack, spec, use_numba=False)
    np.testing.assert_array_equal(a.proj_x, b.proj_x)
    np.testing.assert_array_equal(a.proj_y, b.proj_y)
    np.testing.assert_allclose(a.confidence, b.confidence, rtol=0, atol=1e-15)


def test_decode_rgb_input():
    spec = PatternSpec(16, 8)
    grey = observe(generate_patterns(spec), np.array([[6, 2]]), np.array([[3, 7]]))
    rgb = np.repeat(grey[..., None], 3, axis=-1)
    cmap = decode_stack(rgb, spec)
    np.testing.assert_array_equal(cmap.proj_x, [[6, 2]])


def test_decode_input_validation():
    spec = PatternSpec(16, 8)
    with pytest.raises(ValueError):
        decode_stack(np.zeros((5, 4, 4), np.uint8), spec)
    frames = [np.zeros((4, 4), np.uint8)] * (spec.pattern_count - 1) + [np.zeros((4, 5), np.uint8)]
    with pytest.raises(ValueError):
        decode_stack(frames, spec)


def test_correspondence_map_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    px = rng.integers(-1, 50, size=(6, 9)).astype(np.int32)
    py = np.where(px < 0, -1, rng.integers(0, 40, size=(6, 9))).astype(np.int32)
    conf = rng.random((6, 9)).round(6)
    cmap = CorrespondenceMap("cam2", px, py, conf, "proj1")
    cmap.save(tmp_path / "m.json")
    back = CorrespondenceMap.load(tmp_path / "m.json")
    assert (back.camera_id, back.projector_id) == ("cam2", "proj1")
    np.testing.assert_array_equal(back.proj_x, px)
    np.testing.assert_array_equal(back.proj_y, py)
    np.testing.assert_allclose(back.confidence, conf)


# -- pgm ----------------------------------------------------------------------------

@given(st.integers(1, 40), st.integers(1, 40), st.integers(0, 2 ** 32 - 1))
def test_pgm_roundtrip(w, h, seed):
    img = np.random.default_rng(seed).integers(0, 256, size=(h, w)).astype(np.uint8)
    np.testing.assert_array_equal(decode_pgm(encode_pgm(img)), img)


def test_pgm_header_with_comment():
    data = b"P5\n# made by hand\n3 2\n255\n" + bytes(range(6))
    np.testing.assert_array_equal(decode_pgm(data), [[0, 1, 2], [3, 4, 5]])


@pytest.mark.parametrize("data", [b"P2\n1 1\n255\n0", b"P5\n2 2\n255\n\x00", b"P5\n1 1\n65535\n\x00\x00",
                                  b"P5\n"])
def test_pgm_rejects_bad_input(data):
    with pytest.raises(PGMError):
        decode_pgm(data)


# -- worked examples and threshold monotonicity -----------------------------------------

def enumerated_gray(nbits):
    """Oracle: walk the reflected code by mirroring, independent of the xor formula."""
    codes = [0]
    for k in range(nbits):
        codes = codes + [c | (1 << k) for c in reversed(codes)]
    return codes


@pytest.mark.parametrize("b,g", [(5, 7), (512, 768)])
def test_gray_examples(b, g):
    table = enumerated_gray(10)
    assert table[b] == g == binary_to_gray(b)
    assert gray_to_binary(g) == b
    assert all(bin(table[i] ^ table[i + 1]).count("1") == 1 for i in range(len(table) - 1))


def test_width4_spec_example():
    seq = generate_patterns(PatternSpec(4, 4))
    assert len(seq) == 2 + 2 * 2 + 2 * 2 == 10
    lit = np.flatnonzero(seq[2].pixels[0] > 0)
    assert lit.tolist() == [2, 3]


def test_identical_stack_undecoded(use_numba):
    spec = PatternSpec(16, 8)
    stack = np.full((spec.pattern_count, 5, 6), 128, np.uint8)
    cmap = decode_stack(stack, spec, use_numba=use_numba)
    assert (cmap.proj_x == -1).all() and (cmap.proj_y == -1).all()
    assert cmap.coverage() == 0.0


@given(st.integers(0, 2 ** 32 - 1), st.floats(0.0, 0.5), st.floats(0.0, 0.5))
def test_raising_threshold_never_adds_pixels(seed, t1, t2):
    lo, hi = sorted((t1, t2))
    rng = np.random.default_rng(seed)
    spec = PatternSpec(20, 12)
    px = rng.integers(0, 20, size=(8, 8))
    py = rng.integers(0, 12, size=(8, 8))
    clean = observe(generate_patterns(spec), px, py).astype(float)
    stack = np.clip(clean + rng.normal(0, 40, clean.shape), 0, 255).astype(np.uint8)
    a = decode_stack(stack, spec, contrast_threshold=lo)
    b = decode_stack(stack, spec, contrast_threshold=hi)
    assert not ((a.proj_x < 0) & (b.proj_x >= 0)).any()
