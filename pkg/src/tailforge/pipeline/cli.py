"""Command-line entry point.

Exit codes: 0 success, 1 usage/config error, 2 missing upstream artifact,
3 runtime failure.
"""

from __future__ import annotations

import argparse
import sys

from ..diffusion import TrainingDivergedError
from .config import ConfigError, DependencyError, load_config
from .manifest import LockHeldError
from .stages import COMMANDS

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DEPENDENCY = 2
EXIT_RUNTIME = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors map to exit code 1
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="tailforge",
        description="Long-tail triplet augmentation with conditional feature diffusion.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    descriptions = {
        "synth-bench": "generate the synthetic long-tail benchmark world",
        "augment": "stage 1: taxonomy-guided triplet augmentation",
        "fit-hardness": "fit K-means over triplet text embeddings",
        "train-diffusion": "stage 2: train the conditional denoiser",
        "sample": "stage 3: sample visual embeddings for augmented triplets",
        "train-baseline": "train the reference classifier on the original data",
        "finetune": "stage 4: fine-tune the classifier on generated samples",
        "evaluate": "compute average per-class accuracy by frequency split",
        "report": "render comparison tables and figures from evaluations",
    }
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, parents=[], help=descriptions[name])
        p.add_argument("--config", required=True, help="path to the key=value config file")
        p.add_argument(
            "--override",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override one config key (repeatable)",
        )
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        cfg = load_config(args.config, overrides=args.override)
        outputs = COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"tailforge: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DependencyError as exc:
        print(f"tailforge: dependency error: {exc}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except (LockHeldError, TrainingDivergedError) as exc:
        print(f"tailforge: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"tailforge: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for name in sorted(outputs):
        print(f"wrote {outputs[name]}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
