"""Command-line entry point: ``poisson-bayes run | validate | presets | version``.

Exit codes: 0 success, 1 a numeric check failed, 2 invalid config, 3 IO error.
"""

from __future__ import annotations

import argparse
import sys
from importlib import resources
from pathlib import Path

from . import __version__
from .config import ConfigError, load, validate

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3


def preset_paths() -> dict[str, Path]:
    root = resources.files("poisson_bayes") / "presets"
    return {p.name[:-5]: Path(str(p)) for p in sorted(root.iterdir(), key=lambda p: p.name)
            if p.name.endswith(".toml")}


def _resolve(config: str) -> Path:
    presets = preset_paths()
    if not Path(config).exists() and config in presets:
        return presets[config]
    return Path(config)


def _load(config: str):
    return load(_resolve(config))


def _report_config_error(exc: ConfigError) -> int:
    for d in exc.diagnostics:
        print(f"config error: {d}", file=sys.stderr)
    return EXIT_CONFIG


def cmd_run(args) -> int:
    from .runner import run

    try:
        manifest = run(_load(args.config), seed=args.seed, out=args.out)
    except ConfigError as exc:
        return _report_config_error(exc)
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    for name, ok in manifest.checks.items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    print(f"wrote {', '.join(manifest.artifacts)} and manifest.json "
          f"({manifest.wall_clock_seconds:.2f} s)")
    return EXIT_OK if manifest.passed else EXIT_FAILED


def cmd_validate(args) -> int:
    try:
        diags = validate(_load(args.config))
    except ConfigError as exc:
        return _report_config_error(exc)
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    if diags:
        return _report_config_error(ConfigError(diags))
    print("ok")
    return EXIT_OK


def cmd_presets(args) -> int:
    for name, path in preset_paths().items():
        print(f"{name}\t{path}")
    return EXIT_OK


def cmd_version(args) -> int:
    print(__version__)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="poisson-bayes", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute the scenario named in a config")
    p.add_argument("--config", required=True, help="TOML config path or bundled preset name")
    p.add_argument("--seed", type=int, default=None, help="override mc.seed")
    p.add_argument("--out", default=None, help="override output.dir")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate", help="check a config and list diagnostics")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_validate)

    sub.add_parser("presets", help="list bundled configs").set_defaults(func=cmd_presets)
    sub.add_parser("version", help="print the version").set_defaults(func=cmd_version)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
