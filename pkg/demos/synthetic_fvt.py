"""Isobars and the pressure-driven critical point of a synthetic F(V, T).

Stands in for Fe3Pt free-energy data when none is supplied. Set
ZENN_FE3PT_DATA and pass ``data.path`` in a config to use real files.
"""

from pathlib import Path

from zenn import experiments as ex

cfg = ex.validate_config({"task": "fe3pt"})
out = ex.run_training(cfg)
summary = ex.run_analysis(cfg, out.model, Path("synthetic_fvt_out"))

for p, iso in summary["isobars"].items():
    print(f"p={p}: negative thermal expansion segment: {iso['nte']}")
cp, oracle = summary["critical_point"], summary["critical_point_oracle"]
if cp["status"] == "ok":
    print(f"T* fitted {cp['T_star']:.4f}, analytic {oracle['T_star']:.4f}")
else:
    print("critical point solver failed:", cp["error"])
