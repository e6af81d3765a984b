"""Both optimizers and the fixed-position baseline on the default scenario.

Four waveguides with four PAs each, four clusters of two users, 20 dB
SINR targets and -80 dBm noise.  Every trial draws a new user layout; all
solvers see the same one.  Mean power is averaged in watts.

    python demos/default_comparison.py [trials]
"""

import sys

from passopt.harness import ExperimentSpec, aggregate, run_experiment

trials = int(sys.argv[1]) if len(sys.argv) > 1 else 5
spec = ExperimentSpec(algos=("psozf", "mmpdd", "fixed"), trials=trials)
rows = run_experiment(spec)

for r in rows:
    print(f"trial {r.trial} {r.algo:6s} {r.power_dbm:7.2f} dBm feasible={r.feasible} "
          f"iters={r.iters:4d} slack={r.min_sinr_slack_db:.2e} dB")
print()
for (_, _, algo), v in aggregate(rows).items():
    print(f"{algo:6s} mean {v['mean_dbm']:.2f} dBm over {v['n']} trials")
