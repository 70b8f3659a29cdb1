"""Check how the reference cell (W=20, past=10) behaves across seeds.

    python scripts/seed_sweep.py 1 2 3 4 5 7
"""

import sys

from adaas.experiment import ExperimentConfig, run_experiment

seeds = [int(s) for s in sys.argv[1:]] or [1, 2, 3, 4, 5, 7]
print("seed predicted normal_stable_rate min_lead_min")
for seed in seeds:
    cfg = ExperimentConfig(seed=seed, window_minutes=(20,), past_minutes=(10,))
    c = run_experiment(cfg).checks
    leads = [v for v in c["fault_lead_time_min"].values() if v is not None]
    print(f"{seed:>4} {c['predicted_failing_runs']:>5}/{c['failing_runs']} "
          f"{c['normal_false_stable_rate']:.4f} {min(leads) if leads else float('nan'):.1f}")
