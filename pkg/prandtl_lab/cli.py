"""Command line entry point: ``python -m prandtl_lab <subcommand>``."""
import argparse
import json
import logging
import sys
from typing import Optional, Sequence

import yaml

from prandtl_lab.core.config import settings
from prandtl_lab.core.errors import ConfigError, LabError
from prandtl_lab.numerics.norms import DEFAULT_M_MAX
from prandtl_lab.numerics.self_similar import DEFAULT_ETA_INF
from prandtl_lab.services import runner

logger = logging.getLogger(__name__)


def _print_record(record) -> int:
    print(json.dumps(record.model_dump(mode="json"), indent=2))
    return 0 if record.status == "completed" else 1


def _cmd_run(args) -> int:
    config = runner.load_config(args.config)
    return _print_record(runner.run_scenario(config, output_root=args.output_root))


def _cmd_crocco(args) -> int:
    config = runner.load_config(args.config)
    if config.crocco is None:
        raise ConfigError(["crocco: block required for the crocco subcommand"])
    config = config.model_copy(update={"kind": "crocco"})
    return _print_record(runner.run_scenario(config, output_root=args.output_root))


def _cmd_converge(args) -> int:
    config = runner.load_config(args.config)
    path, rows = runner.converge(config, levels=args.levels, output_root=args.output_root)
    for row in rows:
        order = "-" if row["order"] is None else f"{row['order']:.3f}"
        print(f"h={row['h']:.6g}  error={row['error']:.6e}  order={order}")
    print(path)
    return 0


def _parse_scan(param: str):
    if "=" not in param:
        raise ConfigError([f"--param: expected name=v1,v2,..., got {param!r}"])
    name, raw = param.split("=", 1)
    values = [yaml.safe_load(v) for v in raw.split(",") if v.strip()]
    return name.strip(), values


def _cmd_scan(args) -> int:
    template = runner.load_config(args.template)
    name, values = _parse_scan(args.param)
    path, rows = runner.blowup_scan(template, name, values, output_root=args.output_root)
    for row in rows:
        print(f"{name}={row['value']!r}: {row['status']} t*={row.get('t_star')}")
    print(path)
    return 0 if all(row.get("error") is None for row in rows) else 1


def _cmd_norms(args) -> int:
    params = runner.parse_weight_params(args.params or [])
    report = runner.snapshot_norms(args.snapshot, params, m_max=args.m_max)
    print(json.dumps(report.model_dump(mode="json"), indent=2))
    return 0


def _cmd_selfsimilar(args) -> int:
    n, beta, N = (1.0, 0.0, 0.0) if not args.powerlaw else args.powerlaw
    summary = runner.selfsimilar_summary(n, beta, N, args.eta_inf, with_table=True)
    out = sys.stdout
    out.write(f"# wall_shear={summary.wall_shear!r} wall_shear_classical={summary.wall_shear_classical!r}\n")
    out.write("eta,f,fp,fpp\n")
    for row in summary.table:
        out.write(",".join(repr(v) for v in row) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prandtl_lab", description=settings.APP_NAME)
    parser.add_argument("--output-root", default=None, help=f"results directory (default: $OUTPUT_ROOT or {settings.OUTPUT_ROOT})")
    parser.add_argument("--seed", type=int, default=None, help="reserved; runs are deterministic")
    parser.add_argument("--log-level", default=settings.LOG_LEVEL)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one scenario config")
    p.add_argument("config")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("converge", help="refinement table for a config")
    p.add_argument("config")
    p.add_argument("--levels", type=int, default=3)
    p.set_defaults(func=_cmd_converge)

    p = sub.add_parser("blowup-scan", help="one run per parameter value")
    p.add_argument("template")
    p.add_argument("--param", required=True, help="dotted.key=v1,v2,... e.g. ee.amplitude=1,7,10")
    p.set_defaults(func=_cmd_scan)

    p = sub.add_parser("norms", help="norm report of a Field snapshot")
    p.add_argument("snapshot")
    p.add_argument("--params", action="append", help="weight parameters, e.g. s=1,gamma=1.5 (repeatable)")
    p.add_argument("--m-max", type=int, default=DEFAULT_M_MAX)
    p.set_defaults(func=_cmd_norms)

    p = sub.add_parser("selfsimilar", help="Blasius or power-law MHD profile")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--blasius", action="store_true")
    group.add_argument("--powerlaw", nargs=3, type=float, metavar=("N", "BETA", "N_PARAM"))
    p.add_argument("--eta-inf", type=float, default=DEFAULT_ETA_INF)
    p.set_defaults(func=_cmd_selfsimilar)

    p = sub.add_parser("crocco", help="march the crocco block of a config")
    p.add_argument("config")
    p.set_defaults(func=_cmd_crocco)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level)
    try:
        return args.func(args)
    except ConfigError as e:
        for violation in e.violations:
            print(f"config error: {violation}", file=sys.stderr)
        if e.line is not None:
            print(f"  at line {e.line}, column {e.column}", file=sys.stderr)
        return 2
    except LabError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
