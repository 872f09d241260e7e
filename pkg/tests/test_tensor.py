import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from patchmine.io import format_tensor, parse_tensor, read_tensor, write_tensor
from patchmine.tensor import (DimensionError, Rng, bilinear_resize, gelu, kernel_threads, matmul,
                              mlp_forward, softmax_lastdim, splitmix64)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def triple_loop(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for kk in range(k):
                acc += float(a[i, kk]) * float(b[kk, j])
            out[i, j] = acc
    return out


# --- matmul ---------------------------------------------------------------

def test_matmul_identity():
    x = np.arange(12, dtype=float).reshape(3, 4)
    assert np.array_equal(matmul(np.eye(3), x), x)


def test_matmul_hand_example():
    assert np.array_equal(matmul(np.array([[1., 2.], [3., 4.]]), np.array([[1.], [1.]])),
                          np.array([[3.], [7.]]))


def test_matmul_matches_triple_loop_exactly():
    gen = np.random.default_rng(7)
    a, b = gen.normal(size=(8, 8)), gen.normal(size=(8, 8))
    assert np.array_equal(matmul(a, b), triple_loop(a, b))


@pytest.mark.parametrize("shape_a, shape_b", [((3, 40), (40, 2)), ((200, 5), (5, 300)), ((1, 1), (1, 1))])
def test_matmul_layouts_match_triple_loop(shape_a, shape_b):
    gen = np.random.default_rng(1)
    a, b = gen.normal(size=shape_a), gen.normal(size=shape_b)
    assert np.array_equal(matmul(a, b), triple_loop(a, b))


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_independent_of_thread_split():
    gen = np.random.default_rng(3)
    a, b = gen.normal(size=(1000, 17)), gen.normal(size=(17, 9))
    assert np.array_equal(matmul(a, b, threads=1), matmul(a, b, threads=5))


@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32))
def test_matmul_associative(m, k, l, n, seed):
    gen = np.random.default_rng(seed)
    a, b, c = gen.normal(size=(m, k)), gen.normal(size=(k, l)), gen.normal(size=(l, n))
    left, right = matmul(matmul(a, b), c), matmul(a, matmul(b, c))
    scale = matmul(matmul(np.abs(a), np.abs(b)), np.abs(c))
    assert np.all(np.abs(left - right) <= 1e-9 * np.maximum(scale, 1e-300))


# --- softmax --------------------------------------------------------------

def test_softmax_uniform():
    np.testing.assert_allclose(softmax_lastdim(np.zeros(3)), np.full(3, 1 / 3), rtol=0, atol=1e-16)


def test_softmax_single_element():
    assert np.array_equal(softmax_lastdim(np.array([[4.2], [-7.0]])), np.ones((2, 1)))


def test_softmax_large_logits_match_extended_precision():
    x = [1000.0, 0.0]
    with mpmath.workdps(50):
        exps = [mpmath.exp(mpmath.mpf(v)) for v in x]
        expected = [float(e / sum(exps)) for e in exps]
    out = softmax_lastdim(np.array(x))
    assert np.all(np.isfinite(out))
    assert out[0] == 1.0
    assert out[1] == pytest.approx(expected[1], rel=1e-12)


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 9)), elements=finite), finite)
def test_softmax_shift_invariant(x, c):
    np.testing.assert_allclose(softmax_lastdim(x), softmax_lastdim(x + c), rtol=0, atol=1e-12)


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 9)), elements=finite))
def test_softmax_rows_sum_to_one(x):
    np.testing.assert_allclose(softmax_lastdim(x).sum(axis=-1), 1.0, rtol=0, atol=1e-9)


# --- bilinear -------------------------------------------------------------

def scalar_bilinear(img, out_h, out_w):
    """Per-pixel half-pixel-centre bilinear sampling."""
    h, w, c = img.shape
    out = np.zeros((out_h, out_w, c))

    def coord(d, n_in, n_out):
        s = max((d + 0.5) * (n_in / n_out) - 0.5, 0.0)
        i0 = min(int(math.floor(s)), n_in - 1)
        return i0, min(i0 + 1, n_in - 1), s - i0

    for y in range(out_h):
        y0, y1, fy = coord(y, h, out_h)
        for x in range(out_w):
            x0, x1, fx = coord(x, w, out_w)
            for ch in range(c):
                top = img[y0, x0, ch] + fx * (img[y0, x1, ch] - img[y0, x0, ch])
                bot = img[y1, x0, ch] + fx * (img[y1, x1, ch] - img[y1, x0, ch])
                out[y, x, ch] = top + fy * (bot - top)
    return out


@given(st.integers(1, 12), st.integers(1, 12), st.integers(1, 12), st.integers(1, 12), finite)
def test_bilinear_constant_stays_constant(h, w, oh, ow, value):
    out = bilinear_resize(np.full((h, w, 3), value), oh, ow)
    assert out.shape == (oh, ow, 3)
    assert np.all(out == value)


def test_bilinear_two_by_two_to_one_is_corner_average():
    img = np.array([[1.0, 2.0], [3.0, 4.0]])[:, :, None].repeat(3, axis=2)
    assert np.array_equal(bilinear_resize(img, 1, 1), np.full((1, 1, 3), 2.5))


def test_bilinear_ramp_matches_scalar_reference():
    img = np.arange(48, dtype=float).reshape(4, 4, 3)
    assert np.array_equal(bilinear_resize(img, 2, 2), scalar_bilinear(img, 2, 2))


@pytest.mark.parametrize("size, out", [((7, 5), (3, 11)), ((16, 16), (9, 9)), ((3, 8), (8, 3))])
def test_bilinear_random_matches_scalar_reference(size, out):
    img = np.random.default_rng(0).normal(size=(*size, 3))
    assert np.array_equal(bilinear_resize(img, *out), scalar_bilinear(img, *out))


def test_bilinear_matches_torch_half_pixel_convention():
    torch = pytest.importorskip("torch")
    img = np.random.default_rng(4).normal(size=(13, 9, 3))
    for out in [(5, 4), (26, 18), (13, 9), (1, 1)]:
        ref = torch.nn.functional.interpolate(
            torch.from_numpy(img).permute(2, 0, 1)[None], size=out, mode="bilinear",
            align_corners=False).numpy()[0].transpose(1, 2, 0)
        np.testing.assert_allclose(bilinear_resize(img, *out), ref, rtol=0, atol=1e-12)


@given(arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 8), st.just(3)), elements=finite))
def test_bilinear_same_size_is_identity(img):
    np.testing.assert_allclose(bilinear_resize(img, *img.shape[:2]), img, rtol=0, atol=1e-12)


def test_bilinear_rejects_zero_output():
    with pytest.raises(DimensionError):
        bilinear_resize(np.ones((2, 2, 3)), 0, 2)


# --- mlp ------------------------------------------------------------------

def test_mlp_zero_weights_give_zero():
    c, h = 4, 16
    out = mlp_forward(np.ones((3, c)), np.zeros((c, h)), np.zeros(h), np.zeros((h, c)), np.zeros(c))
    assert np.array_equal(out, np.zeros((3, c)))


def test_mlp_identity_in_linear_region():
    # gelu(z) == z to double precision once tanh saturates (z >= ~10)
    c, shift = 5, 30.0
    x = np.random.default_rng(2).uniform(-1, 1, size=(6, c))
    out = mlp_forward(x, np.eye(c), np.full(c, shift), np.eye(c), np.full(c, -shift))
    np.testing.assert_allclose(out, x, rtol=0, atol=1e-12)


def test_mlp_matches_scalar_loop_exactly():
    gen = np.random.default_rng(9)
    c, h = 3, 5
    x, w1, b1 = gen.normal(size=(4, c)), gen.normal(size=(c, h)), gen.normal(size=h)
    w2, b2 = gen.normal(size=(h, c)), gen.normal(size=c)
    expected = np.zeros((4, c))
    k, a = math.sqrt(2 / math.pi), 0.044715
    for i in range(4):
        hid = []
        for j in range(h):
            z = 0.0
            for r in range(c):
                z += x[i, r] * w1[r, j]
            z = z + b1[j]
            hid.append(0.5 * z * (1.0 + np.tanh(k * (z + a * (z * z * z)))))
        for r in range(c):
            acc = 0.0
            for j in range(h):
                acc += hid[j] * w2[j, r]
            expected[i, r] = acc + b2[r]
    assert np.array_equal(mlp_forward(x, w1, b1, w2, b2), expected)


def test_gelu_known_values():
    assert gelu(np.array([0.0]))[0] == 0.0
    assert gelu(np.array([1.0]))[0] == pytest.approx(0.8411919906082768, abs=1e-15)


def test_mlp_shape_errors():
    with pytest.raises(DimensionError):
        mlp_forward(np.ones((2, 3)), np.ones((4, 5)), np.ones(5), np.ones((5, 3)), np.ones(3))


def test_ops_are_pure():
    gen = np.random.default_rng(5)
    a, b = gen.normal(size=(30, 7)), gen.normal(size=(7, 4))
    assert np.array_equal(matmul(a, b), matmul(a, b))
    assert np.array_equal(softmax_lastdim(a), softmax_lastdim(a))


# --- rng ------------------------------------------------------------------

def test_splitmix64_reference_vector():
    state, outs = 1234567, []
    for _ in range(5):
        state, out = splitmix64(state)
        outs.append(out)
    assert outs == [6457827717110365317, 3203168211198807973, 9817491932198370423,
                    4593380528125082431, 16408922859458223821]


def xoshiro_uint64(seed, count):
    """xoshiro256** written against numpy uint64 wraparound arithmetic."""
    with np.errstate(over="ignore"):
        s = []
        sm = np.uint64(seed)
        for _ in range(4):
            sm = sm + np.uint64(0x9E3779B97F4A7C15)
            z = sm
            z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
            s.append(z ^ (z >> np.uint64(31)))

        def rotl(x, k):
            return (x << np.uint64(k)) | (x >> np.uint64(64 - k))

        out = []
        for _ in range(count):
            out.append(int(rotl(s[1] * np.uint64(5), 7) * np.uint64(9)))
            t = s[1] << np.uint64(17)
            s[2] ^= s[0]
            s[3] ^= s[1]
            s[1] ^= s[2]
            s[0] ^= s[3]
            s[2] ^= t
            s[3] = rotl(s[3], 45)
        return out


@pytest.mark.parametrize("seed", [0, 1, 42, 2**64 - 1])
def test_rng_matches_independent_xoshiro(seed):
    r = Rng(seed)
    assert [r.next_u64() for _ in range(20)] == xoshiro_uint64(seed, 20)


def test_rng_frozen_stream():
    r = Rng(0)
    assert [r.next_u64() for _ in range(3)] == [11091344671253066420, 13793997310169335082,
                                                1900383378846508768]


def test_rng_uniform_range_and_determinism():
    a, b = Rng(99).uniform_array(1000), Rng(99).uniform_array(1000)
    assert np.array_equal(a, b)
    assert a.min() >= 0.0 and a.max() < 1.0
    assert not np.array_equal(a, Rng(100).uniform_array(1000))


def test_rng_rejects_bad_seed():
    with pytest.raises(ValueError):
        Rng(-1)


def test_kernel_threads_env(monkeypatch):
    monkeypatch.setenv("PATCHMINE_THREADS", "3")
    assert kernel_threads() == 3
    monkeypatch.setenv("PATCHMINE_THREADS", "0")
    assert kernel_threads() >= 1
    monkeypatch.setenv("PATCHMINE_THREADS", "x")
    with pytest.raises(ValueError):
        kernel_threads()


# --- tensor text format ---------------------------------------------------

@given(arrays(np.float64, st.lists(st.integers(1, 4), min_size=1, max_size=3).map(tuple),
              elements=st.floats(allow_nan=False, allow_infinity=False)))
def test_tensor_text_round_trip(x):
    assert np.array_equal(parse_tensor(format_tensor(x)), x)


def test_tensor_text_layout_and_f32(tmp_path):
    x = np.array([[1.5, -2.0, 0.1]], dtype=np.float32)
    text = format_tensor(x)
    lines = text.splitlines()
    assert lines[:2] == ["2", "1 3"]
    assert lines[2].split()[2] == "0.10000000149011612"  # 17 significant digits
    write_tensor(tmp_path / "x.tensor", x)
    assert np.array_equal(read_tensor(tmp_path / "x.tensor", np.float32), x)


def test_tensor_text_rejects_bad_count():
    with pytest.raises(ValueError):
        parse_tensor("1\n3\n1 2\n")
