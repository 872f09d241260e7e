"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary
under "acceptance criteria". Runtime budgets are asserted alongside the
numerical checks.
"""

import io
import json
import random
import string
import time
from contextlib import contextmanager
from fractions import Fraction

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES

from patchmine.checks import SHAPE_SWEEP, random_instance
from patchmine.cli import main
from patchmine.encoder import EncoderConfig, FeatureGrid
from patchmine.extension import build_view_maps
from patchmine.gradcheck import grad_mismatch, numerical_grad
from patchmine.manifest import STAGES, build_paper_manifest, scale_manifest
from patchmine.mining import (MiningWeights, build_subregion_map, gather_kv, mine, mine_grad,
                              mine_reference)
from patchmine.pipeline import RunConfig, run_forward
from patchmine.protocol import OCR_PATTERN, append_ocr_tokens, emit_generation, parse_generation


@contextmanager
def criterion(number, title, budget=None):
    start = time.perf_counter()
    try:
        yield
        elapsed = time.perf_counter() - start
        if budget is not None:
            assert elapsed < budget, f"took {elapsed:.2f}s, budget {budget}s"
    except BaseException as exc:
        elapsed = time.perf_counter() - start
        detail = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        ACCEPTANCE_LINES.append(f"FAIL  [{number}] {title} ({elapsed:.2f}s): {detail}")
        raise
    ACCEPTANCE_LINES.append(f"PASS  [{number}] {title} ({elapsed:.2f}s)")
    print(ACCEPTANCE_LINES[-1])


def assert_bijection(entries, side):
    assert np.array_equal(np.sort(entries.ravel()), np.arange(side * side)), "not a bijection"


def test_1_shape_law():
    with criterion(1, "shape law: N=576, S=192, M=8, N'=36864; sweep", budget=1.0):
        cfg = EncoderConfig(hr_size=768, lr_size=336, patch_size=14).validate()
        assert (cfg.num_patches, cfg.hr_side, cfg.window, cfg.hr_count) == (576, 192, 8, 36_864)
        assert cfg.hr_count == cfg.num_patches * cfg.window**2
        for lr in (56, 112, 336):
            for hr in (2 * lr, 4 * lr):
                c = EncoderConfig(hr_size=hr, lr_size=lr).validate()
                assert c.hr_side**2 == c.num_patches * c.window**2, (lr, hr)
                assert_bijection(build_subregion_map(c.grid, c.window).entries, c.hr_side)
        assert all((lr, hr) in SHAPE_SWEEP for lr in (56, 112, 336) for hr in (2 * lr, 4 * lr))


def test_2_extension_reproduction():
    with criterion(2, "extension: lr 336 / hr 1536 gives 2880 tokens; map bijections", budget=5.0):
        cfg = EncoderConfig(hr_size=1536, lr_size=336, patch_size=14)
        summary, tv = run_forward(RunConfig(encoder=cfg, extended=True, seed=0))
        assert summary["tokenCount"] == 2880 and tv.shape == (2880, cfg.channels)
        for n, side in [(1, 2), (2, 8), (3, 12), (4, 40), (24, 384)]:
            maps = build_view_maps(EncoderConfig(hr_size=4 * side, lr_size=n, patch_size=1))
            assert maps.global_window == 2 * maps.quadrant_window
            assert_bijection(maps.global_map.entries, side)
            quads = [m.entries.ravel() for m in maps.quadrant_maps]
            assert all(np.intersect1d(a, b).size == 0 for i, a in enumerate(quads) for b in quads[i + 1:])
            assert_bijection(np.concatenate(quads), side)


def test_3_oracle_equivalence():
    with criterion(3, "mine == mine_reference: f64 bit-exact, f32 <= 1e-6, 108 instances", budget=10.0):
        rng = np.random.default_rng(2024)
        count, worst32 = 0, 0.0
        for n in (1, 4, 16, 64):
            for m in (1, 2, 4):
                for c in (2, 8, 16):
                    for rep in range(3):
                        seed = 1000 * n + 100 * m + 10 * c + rep
                        q, k, v, w = random_instance(rng, n, m, c, np.float64, seed)
                        assert np.array_equal(mine(q, k, v, w).data, mine_reference(q, k, v, w).data), seed
                        args = (q.astype(np.float32), k.astype(np.float32), v.astype(np.float32),
                                w.astype(np.float32))
                        diff = np.max(np.abs(mine(*args).data - mine_reference(*args).data))
                        worst32 = max(worst32, float(diff))
                        count += 1
        assert count >= 100
        assert worst32 <= 1e-6, f"f32 max abs diff {worst32:.3g}"


def test_4_gradient_verification():
    with criterion(4, "mine_grad vs central differences on 24 instances", budget=30.0):
        rng = np.random.default_rng(77)
        shapes = [(n, m, c) for n in (1, 3, 8) for m in (1, 2) for c in (2, 3, 5, 6)]
        assert len(shapes) >= 20
        for i, (n, m, c) in enumerate(shapes):
            q, k, v, w = random_instance(rng, n, m, c, np.float64, seed=i)
            up = rng.normal(size=(n, c))
            grads = mine_grad(q, k, v, w, up)

            def loss():
                return float(np.sum(up * mine(q, k, v, w).data))

            tensors = {"q": q, "k": k, "v": v, **{f: getattr(w, f) for f in grads.weights()}}
            assert set(grads.weights()) == {"phi_q", "phi_k", "phi_v", "mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2"}
            for name, arr in tensors.items():
                bad = grad_mismatch(getattr(grads, name), numerical_grad(loss, arr, eps=1e-5),
                                    atol=1e-6, rtol=1e-4)
                assert not bad.any(), f"{name} mismatch on instance {i} {(n, m, c)}"


def test_5_attention_locality():
    with criterion(5, "locality: 50 out-of-window perturbations leave the token bit-identical"):
        gen = np.random.default_rng(5)
        n, m, c = 4, 3, 8
        side = n * m
        smap = build_subregion_map(n, m)
        for trial in range(50):
            grid = gen.normal(size=(side, side, c))
            q = gen.normal(size=(n * n, c))
            w = MiningWeights.init(c, seed=trial)
            target = int(gen.integers(n * n))
            before = mine(q, *gather_kv(FeatureGrid(side, c, grid, m), smap), w).data[target]
            outside = np.setdiff1d(np.arange(side * side), smap.entries[target])
            flat = grid.reshape(-1, c).copy()
            flat[outside] = gen.normal(size=(outside.size, c)) * 100
            after = mine(q, *gather_kv(FeatureGrid(side, c, flat.reshape(grid.shape), m), smap), w).data[target]
            assert np.array_equal(before, after), f"trial {trial}"


def test_6_token_count_invariance():
    with criterion(6, "lr 56: hr 112/224/448 give 16 plain and 80 extended tokens"):
        failures = []
        windows = set()
        for hr in (112, 224, 448):
            cfg = EncoderConfig(hr_size=hr, lr_size=56, patch_size=14)
            summary, _ = run_forward(RunConfig(encoder=cfg, seed=1))
            windows.add(summary["M"])
            if summary["tokenCount"] != 16:
                failures.append(f"hr {hr} plain: {summary['tokenCount']} tokens")
            try:
                summary, _ = run_forward(RunConfig(encoder=cfg, extended=True, seed=1))
                if summary["tokenCount"] != 80:
                    failures.append(f"hr {hr} extended: {summary['tokenCount']} tokens")
            except Exception as exc:
                failures.append(f"hr {hr} extended: {type(exc).__name__}: {exc}")
        assert windows == {7, 14, 28}
        assert not failures, "; ".join(failures)


def _fuzz_caption(gen):
    alphabet = string.ascii_letters + string.digits + " .,!?-'éß猫"
    return "".join(gen.choice(alphabet) for _ in range(gen.randint(0, 40)))


def test_7_protocol_round_trip(capsys, monkeypatch):
    with criterion(7, "protocol: 1000 caption round-trips, grammar errors exit 2, 100 OCR suffixes"):
        gen = random.Random(7)
        for _ in range(1000):
            reply, caption = _fuzz_caption(gen), _fuzz_caption(gen)
            out = parse_generation(emit_generation(reply, caption))
            assert (out.text, out.directive) == (reply + " ", caption)

        for argv, stdin in [(["parse-gen"], "<GEN> hello"),
                            (["parse-gen"], "ok <GEN> <h>never closed"),
                            (["emit-gen", "a <b>", "--reply", "r"], None)]:
            if stdin is not None:
                monkeypatch.setattr("sys.stdin", io.TextIOWrapper(io.BytesIO(stdin.encode())))
            assert main(argv) == 2, argv
        capsys.readouterr()

        token_alphabet = string.ascii_letters + string.digits + " .:-/#"
        for _ in range(100):
            tokens = ["".join(gen.choice(token_alphabet) for _ in range(gen.randint(1, 12)))
                      for _ in range(gen.randint(1, 6))]
            convo = _fuzz_caption(gen)
            rendered = append_ocr_tokens(convo, tokens)
            suffix = rendered.encode("utf-8")[len(convo.encode("utf-8")):]
            assert suffix == b"\nReference OCR token:" + ",".join(tokens).encode("utf-8")
            match = OCR_PATTERN.search(rendered)
            assert match is not None and match.start() == len(convo)


def test_8_manifest_arithmetic():
    with criterion(8, "manifest: 1,253,000 / 28,000 (10/4/10/4) / 13,000; 100 scale factors"):
        m = build_paper_manifest()
        assert m.stage_totals["pretrain"] == 1_253_000
        assert m.tagged_total("ocr") == 28_000
        assert [m[s].count for s in ("docvqa", "chartqa", "dvqa", "ai2d")] == [10_000, 4_000, 10_000, 4_000]
        assert m.stage_totals["generation"] == 13_000 == m["gen-recaption"].count + m["gen-incontext"].count
        assert (m["gen-recaption"].count, m["gen-incontext"].count) == (8_000, 5_000)
        gen = random.Random(8)
        for _ in range(100):
            factor = Fraction(gen.randint(1, 99_999), 100_000)
            scaled = scale_manifest(m, factor, seed=gen.randrange(2**32))
            for stage in STAGES:
                assert scaled.stage_totals[stage] == int(factor * m.stage_totals[stage] + Fraction(1, 2))


def _forward_json(capsys, argv):
    assert main(argv) == 0
    return json.loads(capsys.readouterr().out)


def test_9_determinism(capsys, monkeypatch, tmp_path):
    with criterion(9, "determinism: repeated forward runs and PATCHMINE_THREADS 1/2/4 agree"):
        argv = ["forward", "--seed", "11", "--out", str(tmp_path / "a")]
        first = _forward_json(capsys, argv)
        second = _forward_json(capsys, argv)
        assert first["checksum"] == second["checksum"]
        tv = (tmp_path / "a" / "tv.tensor").read_bytes()
        for threads in ("1", "2", "4"):
            monkeypatch.setenv("PATCHMINE_THREADS", threads)
            out = _forward_json(capsys, ["forward", "--seed", "11", "--out", str(tmp_path / threads)])
            assert out["checksum"] == first["checksum"], threads
            assert (tmp_path / threads / "tv.tensor").read_bytes() == tv


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
