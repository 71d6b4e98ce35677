"""Command-line front end: ``miniatures-export --arch DenseNet201 --out dir``.

Exit codes: 0 ok, 2 bad invocation, 3 export or verification failure.
"""

from __future__ import annotations

import argparse
import sys

from .archs import KNOWN_UNAVAILABLE, SUPPORTED_ARCHITECTURES
from .errors import ExportError
from .export import FORMATS, VERIFY_TOLERANCE, ExportSpec, export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="miniatures-export",
        description="Export a pre-trained convolutional backbone, truncated at its "
        "final feature map, for use as a frozen feature extractor.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("--arch", required=True,
                        help="architecture name, e.g. DenseNet201 (see --list-archs)")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--format", choices=list(FORMATS), default="pt2",
                        help="serialization format")
    parser.add_argument("--no-pretrained", dest="pretrained", action="store_false",
                        help="export with randomly initialized weights (offline testing)")
    parser.add_argument("--tolerance", type=float, default=VERIFY_TOLERANCE,
                        help="max elementwise difference allowed by verification")
    return parser


def list_archs() -> str:
    lines = [f"  {name}" for name in SUPPORTED_ARCHITECTURES]
    lines += [f"  {name} (unavailable: {why})" for name, why in KNOWN_UNAVAILABLE.items()]
    return "\n".join(lines)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if "--list-archs" in argv:
        print(list_archs())
        return 0
    args = build_parser().parse_args(argv)
    spec = ExportSpec(
        architecture=args.arch,
        out_dir=args.out,
        file_format=args.format,
        pretrained=args.pretrained,
        tolerance=args.tolerance,
    )
    try:
        result = export(spec)
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(f"model:    {result.model_path}")
    print(f"manifest: {result.manifest_path}")
    print(f"feature_dim: {result.feature_dim}")
    print(f"verification max |diff|: {result.max_abs_diff:.3e}")
    return 0


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
