"""
What skipping the Jacobian pass buys
====================================

The exact strategy back-propagates the energy gradient through the
score network at every step (one vector-Jacobian pass on top of the
score evaluation). The scalar strategy replaces that pass with a single
multiply, so its per-step cost is just the score evaluation. On a net
wide enough for the extra pass to matter, the run-time gap is plain.

Timing does not depend on the weights, so an untrained net of the
benchmark width is enough here.
"""

import numpy as np

from ficd import (
    LearnedScoreModel,
    NetSpec,
    PosteriorPartStrategy,
    benchmark_steps,
    linear_schedule,
)

schedule = linear_schedule(200)
model = LearnedScoreModel.init(
    NetSpec(hidden_width=256, hidden_layers=3, time_embed_dim=32),
    schedule,
    2,
    rng=np.random.default_rng(0),
)

table = benchmark_steps(
    model,
    [PosteriorPartStrategy.EXACT, PosteriorPartStrategy.FICD],
    T=200,
    n_chains=256,
    repetitions=5,
    seed=0,
)
print(table.to_text())

ratio = table.row("ficd").median_run_s / table.row("exact").median_run_s
print(f"\nficd / exact median run time: {ratio:.3f}")
print("per step, ficd runs 1 score evaluation and 0 Jacobian passes;")
print("exact runs 1 score evaluation and 1 Jacobian pass.")
