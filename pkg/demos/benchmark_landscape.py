"""Fit a ZENN to the 1-D double-well benchmark and locate its critical point.

The analytic landscape has two wells below T = 2 that merge into one above
it. We train the landscape1d preset, then compare the fitted model's
curvature contour and critical point with the exact ones.

    python demos/benchmark_landscape.py [epochs]
"""

import sys

import numpy as np

from zenn import analysis as an
from zenn import experiments as ex

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 20000

exact = an.ScalarField.benchmark_1d()
cp = an.find_critical_point(exact, (-1, 1), (1, 3))
print(f"analytic critical point: x*={cp.x_star[0]:.3g}  T*={cp.T_star:.12f}")

cfg = ex.validate_config({"task": "landscape1d", "train": {"epochs": epochs}})
out = ex.run_training(cfg)
print(f"trained K={cfg['model']['K']} for {epochs} epochs in {out.metrics['wall_time']:.1f}s, "
      f"per-T RMSE {out.metrics['rmse_per_T_offset']:.4f}")

fit = ex.energy_field(out.model, 1)
for T in (1.0, 3.0):
    pts = an.stationary_points(fit, T, np.linspace(-1.5, 1.5, 31))
    print(f"T={T}: " + ", ".join(f"x={p.x[0]:+.3f} ({p.tag})" for p in pts))

lines = an.curvature_zero_contour(fit, (-1, 1), (1, 3))
print(f"contour RMS vs T = 2 - 3x^2: {an.contour_rms_vs(lines, lambda x: 2 - 3 * x**2, (-0.6, 0.6)):.4f}")

try:
    cp = an.find_critical_point(fit, (-1, 1), (1, 3))
    print(f"fitted critical point:   x*={cp.x_star[0]:+.4f}  T*={cp.T_star:.4f}  residual={cp.residual:.1e}")
except an.NonConvergenceError as e:
    print(f"no critical point found: {e}")
