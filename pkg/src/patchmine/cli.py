"""``patchmine`` command line.

Exit codes: 0 success, 1 check failure, 2 usage or grammar error,
3 IO or configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import checks
from .encoder import ConfigError, EncoderConfig
from .manifest import build_paper_manifest, scale_manifest, validate_manifest
from .pipeline import RunConfig, run_forward
from .protocol import ProtocolError, append_ocr_tokens, emit_generation, parse_generation

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_CONFIG = 0, 1, 2, 3


def _read_input(path: str | None) -> str:
    if path is None or path == "-":
        return sys.stdin.buffer.read().decode("utf-8")
    return Path(path).read_text(encoding="utf-8")


def cmd_forward(args) -> int:
    cfg = EncoderConfig()
    if args.config:
        cfg = EncoderConfig.from_json(Path(args.config).read_text())
    seed = cfg.seed if args.seed is None else args.seed
    run = RunConfig(encoder=cfg, extended=args.extended, seed=seed, precision=args.precision,
                    output_dir=Path(args.out) if args.out else None)
    summary, _ = run_forward(run, image=args.image, synthetic=args.synthetic)
    print(json.dumps(summary))
    return EXIT_OK


def cmd_check(args) -> int:
    results = checks.run_suite(args.suite)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        line = f"{status}  {r.suite:<9} {r.name:<28} {r.seconds:8.3f}s"
        print(line + (f"  {r.detail}" if r.detail else ""))
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


def cmd_parse_gen(args) -> int:
    parsed = parse_generation(_read_input(args.input))
    print(json.dumps(parsed.to_json_dict(), ensure_ascii=False))
    return EXIT_OK


def cmd_emit_gen(args) -> int:
    reply = args.reply if args.reply is not None else _read_input(args.input)
    sys.stdout.write(emit_generation(reply, args.caption))
    return EXIT_OK


def cmd_append_ocr(args) -> int:
    sys.stdout.write(append_ocr_tokens(_read_input(args.input), args.tokens))
    return EXIT_OK


def cmd_manifest(args) -> int:
    m = build_paper_manifest()
    if args.scale is not None:
        m = scale_manifest(m, args.scale, seed=args.seed or 0)
    print(m.to_json(indent=2))
    print(m.summary_table(), file=sys.stderr if args.json_only else sys.stdout)
    for finding in validate_manifest(m):
        print(f"note: {finding.message}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="patchmine", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    fwd = sub.add_parser("forward", help="run the visual front-end on one image")
    fwd.add_argument("--config", help="EncoderConfig JSON file")
    fwd.add_argument("--seed", type=int)
    fwd.add_argument("--precision", choices=["f32", "f64"], default="f64")
    fwd.add_argument("--extended", action="store_true", help="5N token extension")
    fwd.add_argument("--out", help="directory for tv.tensor")
    fwd.add_argument("--image", help="binary PPM (P6) matching hrSize")
    fwd.add_argument("--synthetic", choices=["noise", "ramp"], default="noise")
    fwd.set_defaults(func=cmd_forward)

    chk = sub.add_parser("check", help="run verification suites")
    chk.add_argument("suite", choices=[*checks.SUITES, "all"])
    chk.set_defaults(func=cmd_check)

    pg = sub.add_parser("parse-gen", help="extract a <GEN> directive as JSON")
    pg.add_argument("input", nargs="?", help="file (default stdin)")
    pg.set_defaults(func=cmd_parse_gen)

    eg = sub.add_parser("emit-gen", help="append a <GEN> directive to a reply")
    eg.add_argument("caption")
    eg.add_argument("--reply", help="reply text (default: read from --input or stdin)")
    eg.add_argument("--input")
    eg.set_defaults(func=cmd_emit_gen)

    ao = sub.add_parser("append-ocr", help="append OCR reference tokens to a conversation")
    ao.add_argument("tokens", nargs="+")
    ao.add_argument("--input")
    ao.set_defaults(func=cmd_append_ocr)

    man = sub.add_parser("manifest", help="print the data-mixture manifest")
    man.add_argument("--scale", help="rational factor in (0, 1], e.g. 1/1000")
    man.add_argument("--seed", type=int)
    man.add_argument("--json-only", action="store_true", help="send the summary table to stderr")
    man.set_defaults(func=cmd_manifest)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ProtocolError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        # bad --scale, malformed image header, bad JSON
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE if args.command == "manifest" else EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
