import sys
import time
import numpy as np
from tailchain.tailfit import bootstrap_ci, pareto_mle, select_tmin

t0 = time.time()
alphas = (0.5, 1.0, 2.0, 4.0)
n = 100_000
covered = 0
total = 0
for ai, alpha in enumerate(alphas):
    errs = []
    cov_a = 0
    for trial in range(25):
        rng = np.random.default_rng(10_000 + 97 * ai + trial)
        x = rng.random(n) ** (-1.0 / alpha)
        t_min, _ = select_tmin(x)
        beta, _ = pareto_mle(x, t_min)
        ah = beta - 1.0
        errs.append(abs(ah - alpha))
        lo, hi = bootstrap_ci(x, n_boot=120, n_candidates=50,
                              seed=555 + 31 * ai + trial)
        ok = lo <= alpha <= hi
        cov_a += ok
        covered += ok
        total += 1
    print(f"alpha={alpha}: coverage {cov_a}/25, median|err|={np.median(errs):.4f}, max|err|={np.max(errs):.4f}", flush=True)
print(f"TOTAL coverage: {covered}/{total}  elapsed {time.time()-t0:.0f}s", flush=True)
