"""
Checking the hand-derived gradients
===================================

The backward pass is written out by hand, so it gets verified the
classical way: against central finite differences of the actual loss.
"""

import numpy as np

from onemax.model import backward, finite_difference_gradients, forward, init_params

rng = np.random.default_rng(42)

params = init_params(n_classes=4, input_rows=20, widths=(1, 3, 5),
                     filters_per_width=3, seed=11)
sif = rng.uniform(0.0, 3.0, size=(20, 18))
target, lam = 2, 1e-4

trace = forward(params, sif, true_len=18)
analytic = backward(params, trace, sif, target, lam)
numeric = finite_difference_gradients(params, sif, 18, target, lam, h=1e-5)

# relative error with the denominator floored at 1e-3: finite differences
# carry ~1e-10 of roundoff, which would swamp a pure ratio wherever the
# true gradient is near zero
print(f"{'block':>16}  {'max rel err':>12}")
worst = 0.0
for (name, _), a, f in zip(params.blocks(), analytic.arrays(), numeric):
    denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), 1e-3)
    err = float(np.max(np.abs(a - f) / denom))
    worst = max(worst, err)
    print(f"{name:>16}  {err:12.3e}")

print(f"\nworst over all parameters: {worst:.3e}")
assert worst < 1e-6

# the same check also runs with dropout active (the mask is seeded, so
# the finite-difference loss is still a deterministic function)
trace = forward(params, sif, 18, mode="train", dropout_rate=0.5, rng_seed=9)
analytic = backward(params, trace, sif, target, lam)
numeric = finite_difference_gradients(
    params, sif, 18, target, lam, mode="train", dropout_rate=0.5, rng_seed=9
)
worst = max(
    float(np.max(np.abs(a - f) / np.maximum(np.maximum(np.abs(a), np.abs(f)), 1e-3)))
    for a, f in zip(analytic.arrays(), numeric)
)
print(f"with dropout active:       {worst:.3e}")
assert worst < 1e-6

print("\nthe CLI runs a randomized version of this: onemax gradcheck --trials 20")
