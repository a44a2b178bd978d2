"""
When does guidance actually pull?
=================================

Track the conditional gradient norm over the reverse process on a task
built to make the answer interesting: two well-separated modes with the
target sitting on the saddle between them. Early on, every denoised
mean hugs the saddle (the mixture average), so the exact-Jacobian
gradient is small. Mid-run, chains commit to a mode and the denoised
means swing away from the target, so the gradient peaks. Late, guidance
has pulled the committed chains back toward the target and the signal
decays again.

The cheap scalar strategy multiplies the same energy gradient by
2 / sqrt(alpha_bar_t), which is enormous early, so its profile
front-loads instead of peaking in the middle.
"""

import numpy as np

from ficd import (
    Condition,
    GaussianMixture,
    GaussianMixtureScore,
    PosteriorPartStrategy,
    QuadraticEnergy,
    SamplerConfig,
    linear_schedule,
    phase_profile,
    sample,
)

# Modes at +-1.5 on the x axis, squeezed across it, with the condition
# target exactly at the saddle point in between.
gmm = GaussianMixture(
    weights=np.array([0.5, 0.5]),
    means=np.array([[-1.5, 0.0], [1.5, 0.0]]),
    covariances=np.stack([np.diag([0.25, 1.0]), np.diag([0.25, 1.0])]),
)
schedule = linear_schedule(200)
model = GaussianMixtureScore(gmm, schedule)
energy = QuadraticEnergy()
condition = Condition.target([0.0, 0.0])

for strategy in (PosteriorPartStrategy.EXACT, PosteriorPartStrategy.FICD):
    config = SamplerConfig(
        T=200, strategy=strategy, rho=0.2, lam=1.0, n_chains=512, seed=7
    )
    _, trace = sample(config, model, energy, condition)
    early, mid, late = phase_profile(trace)
    peak_t = int(trace.t[np.nanargmax(trace.grad_norm)])
    print(
        f"{strategy.value:>5}: tercile means early {early:.3f}"
        f"  mid {mid:.3f}  late {late:.3f}   (norm peaks at t={peak_t})"
    )

print()
print("exact peaks mid-run where mode commitment happens; ficd front-loads.")
