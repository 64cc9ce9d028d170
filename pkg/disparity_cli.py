"""Batch runner: simulate one scenario, sweep a parameter, or generate synthetic series.

    python disparity_cli.py simulate --scenario scenarios/four_bus_feeder.json --policy prc --node 4 --out runs/prc4
    python disparity_cli.py sweep --param node --values 2,3,4 --policy prc --out runs/nodes
    python disparity_cli.py gen-synthetic --days 1 --seed 1 --out scenarios/synthetic_day.csv
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from app.config import settings
from app.errors import ModelValidationError, NumericalError
from app.schemas import SyntheticProfileConfig
from app.services.scenario_io import load_scenario, write_report, write_series_csv, write_sweep_summary
from app.services.simulation import SweepParam, SweepSpec, run_day, run_sweep
from app.services.synthetic import generate_residential, split_days

logger = logging.getLogger("disparity_cli")

DEFAULT_SCENARIO = Path(__file__).resolve().parent / "scenarios" / "four_bus_feeder.json"
EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3


class DisparityCLI:
    def __init__(self, out=None):
        self.out = out if out is not None else sys.stdout

    def _load(self, args):
        scenario_file, scenario = load_scenario(args.scenario)
        updates = {}
        if getattr(args, "policy", None):
            scenario = scenario.with_policy(args.policy)
            updates["policy"] = scenario.policy
        if getattr(args, "node", None) is not None:
            scenario = scenario.with_active_node(args.node)
            updates["active_node"] = args.node
        if getattr(args, "seed", None) is not None:
            updates["seed"] = args.seed
        return scenario_file.model_copy(update=updates), scenario

    def simulate(self, args) -> int:
        scenario_file, scenario = self._load(args)
        result = run_day(scenario)
        write_report(result, scenario_file, scenario.rules, args.out)
        m = result.metrics
        lcg = "n/a" if m.lcg_pct is None else f"{m.lcg_pct:.2f}%"
        print(
            f"node={result.active_node} policy={result.policy.value} cost={m.cost_inv:.4f} "
            f"lcg={lcg} tce={m.tce:.4f}kWh cvc={m.cvc:.4f} wall={result.timings['wall_s']:.2f}s",
            file=self.out,
        )
        return EXIT_OK

    def sweep(self, args) -> int:
        scenario_file, scenario = self._load(args)
        spec = SweepSpec(SweepParam(args.param), [v.strip() for v in args.values.split(",") if v.strip()])
        points = run_sweep(scenario, spec, workers=args.workers)
        out_dir = Path(args.out)
        for point in points:
            if point.ok:
                point_file = scenario_file
                if spec.param == SweepParam.POLICY:
                    point_file = scenario_file.model_copy(update={"policy": point.result.policy})
                elif spec.param == SweepParam.NODE:
                    point_file = scenario_file.model_copy(update={"active_node": point.result.active_node})
                write_report(point.result, point_file, scenario.rules, out_dir / f"{spec.param.value}_{point.value}")
        write_sweep_summary(points, out_dir / "summary.csv")
        succeeded = sum(1 for p in points if p.ok)
        print(f"sweep {spec.param.value}: {succeeded}/{len(points)} points succeeded", file=self.out)
        if not succeeded:
            logger.error("every sweep point failed")
            return EXIT_NUMERICAL
        return EXIT_OK

    def gen_synthetic(self, args) -> int:
        config = SyntheticProfileConfig(
            days=args.days,
            steps_per_day=args.steps,
            pv_kwp=args.pv_kwp,
            kappa=args.kappa,
            flex_pct=args.flex_pct,
            seed=args.seed,
        )
        frame = generate_residential(config)
        if config.days == 1:
            path = write_series_csv(frame, args.out)
            print(f"wrote {len(frame)} steps to {path}", file=self.out)
            return EXIT_OK
        # one series file per simulated day
        out = Path(args.out)
        for number, day in enumerate(split_days(frame, config.steps_per_day), start=1):
            path = write_series_csv(day, out.with_name(f"{out.stem}_day{number}{out.suffix}"))
            print(f"wrote {len(day)} steps to {path}", file=self.out)
        return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Prosumer locational-disparity simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    simulate = sub.add_parser("simulate", help="Simulate one day at one node")
    simulate.add_argument("--scenario", type=Path, default=DEFAULT_SCENARIO)
    simulate.add_argument("--policy", choices=["none", "prc", "anrc", "hybrid"])
    simulate.add_argument("--node", type=int)
    simulate.add_argument("--out", type=Path, default=Path(settings.output_dir))
    simulate.add_argument("--seed", type=int)

    sweep = sub.add_parser("sweep", help="Repeat the simulation over parameter values")
    sweep.add_argument("--scenario", type=Path, default=DEFAULT_SCENARIO)
    sweep.add_argument("--param", required=True, choices=[p.value for p in SweepParam])
    sweep.add_argument("--values", required=True, help="comma-separated values")
    sweep.add_argument("--policy", choices=["none", "prc", "anrc", "hybrid"])
    sweep.add_argument("--node", type=int)
    sweep.add_argument("--out", type=Path, default=Path(settings.output_dir))
    sweep.add_argument("--workers", type=int, default=None, help="processes (default from settings)")

    synthetic = sub.add_parser("gen-synthetic", help="Write a synthetic residential series file")
    synthetic.add_argument("--days", type=int, default=1)
    synthetic.add_argument("--profile", choices=["residential"], default="residential")
    synthetic.add_argument("--out", type=Path, required=True)
    synthetic.add_argument("--seed", type=int, default=0)
    synthetic.add_argument("--pv-kwp", type=float, default=2.5)
    synthetic.add_argument("--kappa", type=float, default=0.5)
    synthetic.add_argument("--flex-pct", type=float, default=0.05)
    synthetic.add_argument("--steps", type=int, default=96, help="steps per day")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(
        level=settings.log_level.upper(),
        format="%(levelname)-5.5s [%(name)s] %(message)s",
        stream=sys.stderr,
    )
    args = build_parser().parse_args(argv)
    cli = DisparityCLI()
    handlers = {"simulate": cli.simulate, "sweep": cli.sweep, "gen-synthetic": cli.gen_synthetic}
    try:
        return handlers[args.command](args)
    except (ValidationError, ModelValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
