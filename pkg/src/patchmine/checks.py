"""Runtime verification suites behind ``patchmine check``.

Each suite is a list of named callables that raise ``AssertionError`` on
failure. They are deliberately smaller sweeps than the pytest suite so a
full ``check all`` finishes in seconds.
"""

from __future__ import annotations

import random
import string
import time
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .encoder import EncoderConfig
from .extension import build_view_maps
from .gradcheck import grad_mismatch, numerical_grad
from .manifest import build_paper_manifest, scale_manifest, validate_manifest
from .mining import MiningWeights, build_subregion_map, mine, mine_grad, mine_reference
from .protocol import (OCR_PATTERN, MalformedDirectiveError, UnterminatedCaptionError,
                       append_ocr_tokens, emit_generation, parse_generation, parse_ocr_tokens)

SHAPE_SWEEP = [(lr, mult * lr) for lr in (56, 112, 336) for mult in (2, 4)] + [(336, 768), (336, 1536)]


@dataclass
class CheckResult:
    suite: str
    name: str
    passed: bool
    seconds: float
    detail: str = ""


def random_instance(rng: np.random.Generator, n: int, m: int, c: int, dtype=np.float64, seed: int = 0):
    q = rng.normal(size=(n, c)).astype(dtype)
    k = rng.normal(size=(n, m * m, c)).astype(dtype)
    v = rng.normal(size=(n, m * m, c)).astype(dtype)
    return q, k, v, MiningWeights.init(c, seed=seed, dtype=dtype)


def _shapes():
    for lr, hr in SHAPE_SWEEP:
        cfg = EncoderConfig(hr_size=hr, lr_size=lr).validate()
        assert cfg.hr_side**2 == cfg.num_patches * cfg.window**2 == cfg.hr_count, (lr, hr)
        assert cfg.hr_side * 4 == hr
    cfg = EncoderConfig()
    assert (cfg.num_patches, cfg.hr_side, cfg.window, cfg.hr_count) == (576, 192, 8, 36864)


def _bijection():
    for n, m in [(1, 2), (2, 1), (4, 7), (24, 8)]:
        entries = build_subregion_map(n, m).entries
        assert np.array_equal(np.sort(entries.ravel()), np.arange((n * m) ** 2))


def _oracle():
    rng = np.random.default_rng(2024)
    for i, (n, m, c) in enumerate([(1, 1, 2), (4, 2, 8), (16, 4, 16), (64, 2, 2)]):
        for dtype in (np.float64, np.float32):
            q, k, v, w = random_instance(rng, n, m, c, dtype, seed=i)
            fast, ref = mine(q, k, v, w).data, mine_reference(q, k, v, w).data
            if dtype is np.float64:
                assert np.array_equal(fast, ref), f"f64 mismatch at N={n} M={m} C={c}"
            else:
                assert np.max(np.abs(fast - ref)) <= 1e-6, f"f32 mismatch at N={n} M={m} C={c}"


def _grad():
    rng = np.random.default_rng(7)
    for i, (n, m, c) in enumerate([(2, 1, 3), (3, 2, 4)]):
        q, k, v, w = random_instance(rng, n, m, c, seed=i)
        up = rng.normal(size=(n, c))
        grads = mine_grad(q, k, v, w, up)
        arrays = {"q": q, "k": k, "v": v, **{name: getattr(w, name) for name in grads.weights()}}
        for name, arr in arrays.items():
            num = numerical_grad(lambda: float(np.sum(up * mine(q, k, v, w).data)), arr)
            bad = grad_mismatch(getattr(grads, name), num)
            assert not bad.any(), f"gradient mismatch for {name}"


def _extension():
    cfg = EncoderConfig(hr_size=1536, lr_size=336)
    maps = build_view_maps(cfg)
    side = cfg.hr_side
    assert maps.global_window == 2 * maps.quadrant_window == 16
    assert np.array_equal(np.sort(maps.global_map.entries.ravel()), np.arange(side * side))
    quads = np.concatenate([qm.entries.ravel() for qm in maps.quadrant_maps])
    assert np.array_equal(np.sort(quads), np.arange(side * side))
    assert 5 * cfg.num_patches == 2880


def _protocol():
    rnd = random.Random(11)
    alphabet = string.ascii_letters + string.digits + " "
    for _ in range(200):
        reply = "".join(rnd.choices(alphabet, k=rnd.randint(0, 30)))
        caption = "".join(rnd.choices(alphabet, k=rnd.randint(0, 30)))
        parsed = parse_generation(emit_generation(reply, caption))
        assert parsed.directive == caption and parsed.text == reply + " "
        tokens = ["".join(rnd.choices(alphabet, k=rnd.randint(1, 8))) for _ in range(rnd.randint(1, 5))]
        out = append_ocr_tokens("conv", tokens)
        assert OCR_PATTERN.search(out) and parse_ocr_tokens(out)[1] == tokens
    for bad, exc in [("<GEN> hello", MalformedDirectiveError), ("x <GEN> <h>open", UnterminatedCaptionError)]:
        try:
            parse_generation(bad)
        except exc:
            continue
        raise AssertionError(f"{bad!r} did not raise {exc.__name__}")


def _manifest():
    m = build_paper_manifest()
    totals = m.stage_totals
    assert totals["pretrain"] == 1_253_000
    assert totals["generation"] == 13_000
    assert m.tagged_total("ocr") == 28_000
    assert m.instruct_totals() == {"exclusive": 1_487_000, "inclusive": 1_500_000}
    assert [f.kind for f in validate_manifest(m)] == ["rounding-note"]
    rnd = random.Random(5)
    for _ in range(50):
        factor = rnd.uniform(1e-5, 1.0)
        scaled = scale_manifest(m, factor, seed=rnd.getrandbits(64))
        f = Fraction(str(factor))
        for stage, total in totals.items():
            assert scaled.stage_totals[stage] == int(f * total + Fraction(1, 2))


SUITES = {
    "shapes": [("shape-law sweep", _shapes), ("subregion bijection", _bijection)],
    "oracle": [("mine == mine_reference", _oracle)],
    "grad": [("finite differences", _grad)],
    "extension": [("view maps and 5N", _extension)],
    "protocol": [("round trips and errors", _protocol)],
    "manifest": [("mixture arithmetic", _manifest)],
}


def run_suite(suite: str) -> list[CheckResult]:
    names = list(SUITES) if suite == "all" else [suite]
    if any(name not in SUITES for name in names):
        raise KeyError(suite)
    results = []
    for name in names:
        for label, fn in SUITES[name]:
            start = time.perf_counter()
            try:
                fn()
                passed, detail = True, ""
            except AssertionError as exc:
                passed, detail = False, str(exc)
            results.append(CheckResult(name, label, passed, time.perf_counter() - start, detail))
    return results
