"""slelab コマンドライン: slelab <experiment> --config cfg.toml [--seed N --out DIR]"""
import argparse
import logging
import sys
from typing import Optional, Sequence

from pydantic import ValidationError

from app import __version__
from app.config import settings
from app.models.lab import RunConfig
from app.services import lab_service
from app.utils.errors import SlelabError

logger = logging.getLogger("slelab")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slelab", description="SLE / LQG regularity experiments")
    parser.add_argument("--version", action="version", version=f"slelab {__version__}")
    parser.add_argument("experiment", choices=sorted(lab_service.EXPERIMENTS))
    parser.add_argument("--config", help="flat TOML file mirroring RunConfig")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--workers", type=int)
    parser.add_argument("--replicates", type=int)
    parser.add_argument("--formats", default="json,csv,plot", help="comma separated: json,csv,plot")
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    overrides = {"seed": args.seed, "output": args.out, "workers": args.workers, "replicates": args.replicates}
    if args.config:
        cfg = RunConfig.from_toml(args.config, **overrides)
        if cfg.experiment != args.experiment:
            raise SlelabError(f"config is for {cfg.experiment}, not {args.experiment}")
        return cfg
    data = {k: v for k, v in overrides.items() if v is not None}
    data.setdefault("workers", settings.WORKERS)
    data.setdefault("output", settings.OUTPUT_DIR)
    return RunConfig(experiment=args.experiment, **data)


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(
        level=logging.DEBUG if settings.DEBUG else logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - [%(funcName)s] %(message)s',
    )
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        report = lab_service.run_experiment(cfg)
        written = lab_service.emit_report(report, cfg.output, [f for f in args.formats.split(",") if f])
    except (SlelabError, ValidationError) as exc:
        logger.error(f"{type(exc).__name__}: {exc}")
        return 2
    for fmt, path in written.items():
        print(f"{fmt}: {path}")
    if report.fit is not None:
        print(f"exponent {report.fit.exponent:.4f} [{report.fit.ci_lo:.4f}, {report.fit.ci_hi:.4f}] r2={report.fit.r2:.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
