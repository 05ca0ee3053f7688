"""Command-line entry point: ``python -m app.main {generate,trace,sweep,aggregate}``."""

from __future__ import annotations

import argparse
import logging
from pathlib import Path
from typing import Iterable

# ✅ 1. dotenv 먼저 (Settings가 .env 값을 읽도록)
from dotenv import load_dotenv

load_dotenv()

# ✅ 2. 이제 settings / 서비스 import
from app.batch.config_loader import apply_overrides, parse_config  # noqa: E402
from app.batch.realization import single_run_params, write_generate, write_trace  # noqa: E402
from app.batch.sweep import RECORDS_FILE, load_records, run_sweep, verify_aggregates, write_aggregates  # noqa: E402
from app.core.config import Settings, get_settings  # noqa: E402
from app.core.errors import FoliageError  # noqa: E402
from app.schemas.foliage_schema import SweepConfig  # noqa: E402

logger = logging.getLogger(__name__)

DEFAULTS_HELP = (
    "defaults: v_target=200 m^3, sigma=0.1, n_subdiv=2, rho=0.125, area=2 m^2, "
    "eps_r=17, kappa=0.05 S/m, mu_s=0.5, f=80 GHz, B=2 GHz, oversample=8, gate=30 dB, "
    "1e5 rays, depth 8, 50 realizations"
)


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="TOML run configuration")
    common.add_argument("--seed", type=int, default=None, help="Global seed (sweep) or realization seed (generate/trace)")
    common.add_argument("--out", type=Path, default=None, help="Output directory")
    common.add_argument("--threads", type=int, default=None, help="Worker count (env FOLIAGE_THREADS)")
    common.add_argument(
        "--full-scale",
        action="store_true",
        default=None,
        help="Trace with 2e6 candidate rays and depth 25 (env FOLIAGE_FULL_SCALE)",
    )

    parser = argparse.ArgumentParser(
        prog="python -m app.main",
        description="Stochastic tree-crown foliage models and 80 GHz ray-traced channel statistics",
        epilog=DEFAULTS_HELP,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="Export envelope and foliage meshes")
    sub.add_parser("trace", parents=[common], help="Trace one realization and dump MPC/CIR/PDP/CDF")
    sub.add_parser("sweep", parents=[common], help="Run a seeded multi-realization sweep")
    sub.add_parser("aggregate", parents=[common], help="Recompute aggregates from records.csv")
    return parser


def _resolve(args: argparse.Namespace, settings: Settings) -> tuple[SweepConfig, Path, int]:
    """CLI flag > environment/.env > config file > built-in default."""
    config = parse_config(args.config)
    env_fields = settings.model_fields_set
    full_scale = args.full_scale if args.full_scale is not None else settings.full_scale

    if args.out is not None:
        out_dir = str(args.out)
    elif "output_dir" in env_fields:
        out_dir = settings.output_dir
    else:
        out_dir = config.output_dir

    global_seed = args.seed if args.command in {"sweep", "aggregate"} else None
    config = apply_overrides(config, global_seed=global_seed, output_dir=out_dir, full_scale=bool(full_scale))
    threads = args.threads if args.threads is not None else settings.threads
    return config, Path(out_dir), max(1, threads)


def main(argv: Iterable[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(list(argv) if argv is not None else None)

    settings = get_settings()
    logging.basicConfig(
        level=getattr(logging, settings.log_level, logging.INFO),
        format="%(asctime)s %(levelname)s [%(name)s] %(message)s",
    )

    try:
        config, out_dir, threads = _resolve(args, settings)
        if args.command == "generate":
            summary = write_generate(config, single_run_params(config, args.seed), out_dir)
            print(f"triangles={summary['triangles']} watertight={summary['envelope']['watertight']} out={out_dir}")
        elif args.command == "trace":
            summary = write_trace(
                config, single_run_params(config, args.seed), out_dir, threads=threads, chunk=settings.ray_chunk
            )
            print(
                f"mpcs={summary['n_mpcs']} pl_db={summary['pl_db']:.2f} "
                f"drms_ns={summary['drms_ns']:.3f} drms_bandlimited_ns={summary['drms_bandlimited_ns']:.3f}"
            )
        elif args.command == "sweep":
            result = run_sweep(config, out_dir=out_dir, threads=threads, chunk=settings.ray_chunk)
            print(f"records={len(result.records)} failures={len(result.failures)} out={out_dir}")
        else:
            ok = verify_aggregates(config, out_dir)
            aggregates, _ = write_aggregates(config, load_records(out_dir / RECORDS_FILE), out_dir)
            print(f"points={len(aggregates)} verified={ok}")
            if not ok:
                logger.error("emitted aggregates do not match records", extra={"out": str(out_dir)})
                return 1
    except FoliageError as exc:
        logger.error("%s failed: %s", args.command, exc)
        return 1
    except OSError as exc:
        logger.error("%s failed: %s", args.command, exc)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover - CLI entry
    raise SystemExit(main())
