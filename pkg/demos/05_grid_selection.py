"""Hyperparameter selection the online way: only the first tasks of the
stream are replayed for the search, scored by validation performance at the
boundary; the rest of the stream stays untouched.

Run:  python3 demos/05_grid_selection.py
"""

from dataclasses import replace

from streamgcn.runner import (RunConfig, build_stream, grid_select,
                              materialize_dataset, run_experiment)

cfg = RunConfig(sbm_classes=8, sbm_per_class=40, sbm_p_in=0.1,
                sbm_p_out=0.01, sbm_dim=12, sbm_separation=2.0,
                sbm_noise=1.2, stream="class", classes_per_task=2,
                batch_size=10, fanouts="5,5", hidden=32, strategy="er",
                buffer_capacity=200, seeds="0", eval_stride=5)

dataset = materialize_dataset(cfg)
_, schedule = build_stream(cfg, dataset)
print(f"{schedule.num_tasks} tasks; the first {schedule.boundary_index} "
      "are the validation boundary for the search\n")

grid = {"lr": [1e-2, 1e-3], "memory_proportion": [1, 2]}
best, trials = grid_select(cfg, grid)
for t in trials:
    print(f"  {t['point']}  ->  boundary val AP {t['val_ap']:.3f}")
print(f"\nselected: {best}")

report = run_experiment(replace(cfg, **best))
s = report.metric_summary()
print(f"full run with the selected point: AP {s['ap']['mean']:.3f}, "
      f"AF {s['af']['mean']:+.3f}, AAP {s['aap']['mean']:.3f}")
