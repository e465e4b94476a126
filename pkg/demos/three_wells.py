"""Three-well 2-D landscape with K chosen automatically.

select_K grows the ensemble until one more configuration stops lowering
the loss by 1%. The wells of the fitted surface are then located with
Newton from a grid of seeds.
"""

from pathlib import Path

from zenn import experiments as ex

cfg = ex.validate_config({"task": "landscape2d"})
out = ex.run_training(cfg)
print("final loss per K:", {k: round(v, 8) for k, v in out.metrics["final_losses"].items()})
print(f"selected K={out.metrics['selected_K']}, RMSE on the 100x100 grid {out.metrics['rmse']:.4f}")

summary = ex.run_analysis(cfg, out.model, Path("three_wells_out"))
for x1, x2 in summary["minima"]:
    print(f"minimum at ({x1:+.3f}, {x2:+.3f})")
