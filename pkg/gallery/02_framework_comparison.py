"""Every framework on a small phantom set.

A 6 x 30 phantom set with a slightly raised noise level is split 40/30/30
for two seeds; each framework is trained on the training part, tuned on
validation and scored on test.  A coarse one-point SVM grid keeps the run
to about a minute.
"""

from hep2cls.data import extract_features, generate_phantoms, phantom_specs
from hep2cls.evaluation import ExperimentPlan, format_comparison, format_report, run_experiment
from hep2cls.frameworks import FrameworkSpec
from hep2cls.svm import TrainGrid

table = extract_features(generate_phantoms(phantom_specs(30, seed=5, noise=0.06)))
plan = ExperimentPlan(seeds=(0, 1))
grid = TrainGrid(C=(1e3,), gamma=(0.01,))

specs = [
    FrameworkSpec("ovo", grid=grid),
    FrameworkSpec("ovr", resolver="score", grid=grid),
    FrameworkSpec("ovr", resolver="pairwise", grid=grid),
    FrameworkSpec("common-hier", resolver="score", grid=grid),
    FrameworkSpec("rf", n_trees_max=60),
    FrameworkSpec("ruf", n_trees_max=60),
    FrameworkSpec("adaboost", n_rounds=30),
]
reports = [run_experiment(plan, table, s) for s in specs]
print(format_comparison(reports))
print()

# the verification topologies report both stages per class
print(format_report(reports[1]))
