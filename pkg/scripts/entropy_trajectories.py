#!/usr/bin/env python3
"""Run the bundled scenarios and dump their entropy-trajectory CSVs.

Produces one CSV per scenario (t, H, mu, sigma, gradient, phase,
step_type, spike, lambda, mode) plus a console table of the detection
metrics, so trajectories can be plotted or diffed directly.

Usage: python scripts/entropy_trajectories.py [outdir]
"""

import sys
from pathlib import Path

from spreg.controller import ControllerConfig
from spreg.harness import BUILTIN_SCENARIOS, Scenario, evaluate, generate
from spreg.trace_io import export_csv, replay_records


def main() -> int:
    outdir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("trajectories")
    outdir.mkdir(parents=True, exist_ok=True)
    header = f"{'scenario':<10} {'steps':>5} {'spikes':>6} {'repair':>6} {'aggr':>4} " \
             f"{'prec':>5} {'recall':>6} {'meanH':>6} {'maxH':>6}"
    print(header)
    print("-" * len(header))
    for name in BUILTIN_SCENARIOS:
        scenario = Scenario.builtin(name)
        config = ControllerConfig(vocab_size=scenario.vocab_size)
        records, truth = generate(scenario, detector=config.detector)
        _, events, summary = replay_records(config, records)
        metrics = evaluate(events, truth)
        csv_path = outdir / f"{name}.csv"
        export_csv(events, csv_path)
        print(
            f"{name:<10} {summary.total_steps:>5} {metrics.spikes:>6} "
            f"{metrics.repair_steps:>6} {metrics.aggressive_recoveries:>4} "
            f"{metrics.precision:>5.2f} {metrics.recall:>6.2f} "
            f"{metrics.mean_entropy:>6.3f} {metrics.max_entropy:>6.3f}"
        )
    print(f"\nwrote {len(BUILTIN_SCENARIOS)} trajectory CSVs to {outdir}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
