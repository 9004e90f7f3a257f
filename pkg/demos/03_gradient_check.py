"""Check analytic gradients against central finite differences.

Runs the full pipeline (projection, blending, deferred shading, L1+DSSIM
loss) on a small random scene and compares the hand-derived backward pass
to (L(p+h) - L(p-h)) / 2h for every parameter class, including the
environment texels. Pass means relative error <= 1e-3 wherever gradients
are meaningfully non-zero.
"""

import time

from specsplat.gradcheck import run_gradcheck

t0 = time.time()
ok, results = run_gradcheck(seed=3, n_gaussians=6, res=16, env_height=8,
                            mode="deferred")
for r in results:
    status = "pass" if r.passed else "FAIL"
    print(f"{r.name:12s} {status}  n={r.n_checked:4d}  "
          f"worst_rel={r.worst_rel:.3e}  worst_abs={r.worst_abs:.3e}")
print(f"{'all pass' if ok else 'FAILURES'} in {time.time() - t0:.1f}s")
