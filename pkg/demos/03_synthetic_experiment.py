"""The full comparison on the default synthetic dataset.

Runs every stage in-process with the shipped configuration and prints the
results table. Expect one to two minutes on a laptop. Pass a number to
change the repetition count (at least 5 for the significance marks).
"""
import os
import sys
import tempfile

from hierfuse import pipeline

here = os.path.dirname(os.path.abspath(__file__))
reps = int(sys.argv[1]) if len(sys.argv) > 1 else 5

with tempfile.TemporaryDirectory() as work:
    config = pipeline.load_config(os.path.join(here, os.pardir, "configs", "synthetic.json"),
                                  work_dir=work, repetitions=reps)
    pipeline.run_synth(config)
    build = pipeline.run_build(config)
    print("coarse regions per level:", build.coarse_counts)
    pipeline.run_experiment(config, pipeline.SCENARIOS)
    summary = os.path.join(work, "experiment", "summary.txt")
    if os.path.exists(summary):
        print(open(summary).read())
