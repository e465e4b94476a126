"""Experiment presets, config validation, and the train/analyze pipelines behind the CLI.

A config is a JSON object with sections ``task``, ``model``, ``train``,
``data`` and ``analysis``. User values are merged over the task preset; any
key the preset does not define is rejected, and every problem is reported
at once.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

import jax.numpy as jnp
import numpy as np

from zenn import analysis as an
from zenn import benchdata as bd
from zenn import losses, netcore
from zenn.train import ConfigError, TrainConfig, TrainReport, select_K, train
from zenn.zentropy import EnsembleModel, ensemble_terms

TASKS = ("classify", "landscape1d", "landscape2d", "fe3pt")

PRESETS: dict[str, dict] = {
    "classify": {
        "task": "classify",
        "model": {"K": 3, "hidden_widths": [8], "k_B": 1.0, "gamma": 5.0},
        "train": {"learning_rate": 1e-2, "epochs": 20000, "lam": 0.0, "seed": 0},
        "data": {"path": None, "seed": 0, "samples_per_T": 10000, "train_T_max": 6.0},
        "analysis": {"T_range": [1.0, 8.0], "n_T": 100, "n_generalization": 10000},
    },
    "landscape1d": {
        "task": "landscape1d",
        "model": {"K": 6, "hidden_widths": [8, 8], "k_B": 1.0, "gamma": 5.0},
        "train": {"learning_rate": 1e-2, "epochs": 20000, "lam": 0.0, "seed": 0},
        "data": {"path": None, "grid": [201, 61], "x_range": [-2.0, 2.0], "T_range": [1.0, 3.0], "train_stride": [5, 3]},
        "analysis": {"x_range": [-1.0, 1.0], "T_range": [1.0, 3.0], "resolution": 101, "n_T": 41, "n_seeds": 41, "generalization_grid": 100},
    },
    "landscape2d": {
        "task": "landscape2d",
        "model": {"K": "auto", "K_max": 8, "hidden_widths": [8, 8], "k_B": 1.0, "gamma": 5.0},
        "train": {"learning_rate": 1e-2, "epochs": 20000, "lam": 0.0, "seed": 0, "convergence_rel_tol": 0.01},
        "data": {"path": None, "grid": [41, 41], "x1_range": [-2.5, 2.5], "x2_range": [-2.0, 3.0], "T": 1.0},
        "analysis": {"generalization_grid": 100, "n_seeds": 15, "well_fraction": 0.5},
    },
    "fe3pt": {
        "task": "fe3pt",
        "model": {"K": 12, "hidden_widths": [8, 8], "k_B": 0.1, "gamma": 5.0},
        "train": {"learning_rate": 1e-2, "epochs": 30000, "lam": 1e-4, "seed": 0},
        "data": {
            "path": None,
            "grid": [41, 21],
            "synthetic": {"k_B": 0.1, "T_c": 2.0, "tau": 1.0, "V_c": 1.0, "width": 0.25, "V_span": 2.0, "T_range": [1.0, 3.0]},
            "T_scale": 1.0,
            "F_scale": 1.0,
            "V_N": None,
            "curvature_stride": 4,
        },
        "analysis": {
            "pressures": [0.0, 0.043],
            "pressure_unit": "model",
            "critical_pressure": 0.043,
            "V_window": None,
            "T_range": None,
            "n_T": 81,
            "resolution": 101,
        },
    },
}

# keys whose preset value is None but which accept a value of this type
_NULLABLE = {
    ("data", "path"): str,
    ("data", "V_N"): float,
    ("analysis", "V_window"): list,
    ("analysis", "T_range"): list,
}


def preset(task: str) -> dict:
    if task not in PRESETS:
        raise ConfigError(f"task: must be one of {', '.join(TASKS)}")
    return copy.deepcopy(PRESETS[task])


def _check(section: str, ref: dict, user: dict, errors: list, prefix: str = ""):
    for key, val in user.items():
        name = f"{prefix}{section}.{key}"
        if key not in ref:
            errors.append(f"{name}: unknown key")
            continue
        want = ref[key]
        if isinstance(want, dict):
            if not isinstance(val, dict):
                errors.append(f"{name}: expected an object")
            else:
                _check(key, want, val, errors, f"{prefix}{section}.")
            continue
        if val is None:
            continue
        if want is None:
            typ = _NULLABLE.get((section, key))
            if typ is float and not isinstance(val, (int, float)) or typ in (str, list) and not isinstance(val, typ):
                errors.append(f"{name}: expected {typ.__name__}")
        elif isinstance(want, bool) or isinstance(val, bool):
            if type(want) is not type(val):
                errors.append(f"{name}: expected {type(want).__name__}")
        elif isinstance(want, (int, float)) and not isinstance(want, bool):
            if key == "K" and val == "auto":
                continue
            if not isinstance(val, (int, float)):
                errors.append(f"{name}: expected a number")
            elif isinstance(want, int) and not isinstance(val, int) and key != "K":
                errors.append(f"{name}: expected an integer")
        elif isinstance(want, str) and not (isinstance(val, str) or key == "K"):
            errors.append(f"{name}: expected a string")
        elif isinstance(want, list) and not isinstance(val, list):
            errors.append(f"{name}: expected a list")


def _known(ref: dict, user: dict) -> dict:
    out = {}
    for k, v in user.items():
        if k not in ref:
            continue
        out[k] = _known(ref[k], v) if isinstance(v, dict) and isinstance(ref[k], dict) else v
    return out


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def validate_config(user: dict) -> dict:
    """Merge ``user`` over its task preset and validate; raise :class:`ConfigError` listing every problem."""
    if not isinstance(user, dict):
        raise ConfigError("config must be a JSON object")
    task = user.get("task")
    if task not in TASKS:
        raise ConfigError(f"task: must be one of {', '.join(TASKS)}")
    ref = PRESETS[task]
    errors: list[str] = []
    for key, val in user.items():
        if key == "task":
            continue
        if key not in ref:
            errors.append(f"{key}: unknown section")
        elif not isinstance(val, dict):
            errors.append(f"{key}: expected an object")
        else:
            _check(key, ref[key], val, errors)
    # unknown keys do not block the value checks below, type errors do
    if any("unknown" not in e for e in errors):
        raise ConfigError("; ".join(errors))
    cfg = _merge(ref, _known(ref, {k: v for k, v in user.items() if k == "task" or k in ref}))
    m = cfg["model"]
    if m["K"] != "auto" and (not isinstance(m["K"], int) or m["K"] < 1):
        errors.append("model.K: must be 'auto' or an integer >= 1")
    if task == "classify" and m["K"] == "auto":
        errors.append("model.K: classification uses one configuration per class")
    if not all(isinstance(w, int) and w > 0 for w in m["hidden_widths"]) or len(m["hidden_widths"]) not in (1, 2):
        errors.append("model.hidden_widths: one or two positive integers")
    for key in ("k_B", "gamma"):
        if not m[key] > 0:
            errors.append(f"model.{key}: must be > 0")
    try:
        train_config(cfg)
    except ConfigError as e:
        errors += [f"train.{msg}" for msg in str(e).split("; ")]
    d = cfg["data"]
    if "grid" in d and (len(d["grid"]) != 2 or not all(isinstance(n, int) and n >= 3 for n in d["grid"])):
        errors.append("data.grid: two integers >= 3")
    if task == "classify" and (not isinstance(d["samples_per_T"], int) or d["samples_per_T"] < 1):
        errors.append("data.samples_per_T: must be a positive integer")
    a = cfg["analysis"]
    if "resolution" in a and a["resolution"] < 16:
        errors.append("analysis.resolution: must be >= 16")
    if task == "fe3pt" and a["pressure_unit"] not in ("model", "GPa"):
        errors.append("analysis.pressure_unit: 'model' or 'GPa'")
    if errors:
        raise ConfigError("; ".join(errors))
    return cfg


def load_config(path) -> dict:
    try:
        user = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    return validate_config(user)


def train_config(cfg: dict) -> TrainConfig:
    m = cfg["model"]
    t = dict(cfg["train"])
    t["K"] = m["K"]
    if "K_max" in m:
        t["K_max"] = m["K_max"]
    return TrainConfig.from_dict(t)


# ---------------------------------------------------------------------------
# data


@dataclass
class TaskData:
    """Training targets plus what the metrics need."""

    task: str
    labels: losses.LabeledSet | None = None
    density: losses.SlicedDensity | None = None
    F: np.ndarray | None = None  # energies on the density grid, (n_T, n_points)
    meta: dict | None = None


def _stride(axis, s):
    a = np.asarray(axis)
    idx = np.arange(0, a.size, s)
    if idx[-1] != a.size - 1:
        idx = np.append(idx, a.size - 1)
    return a[idx]


def generate_table(cfg: dict) -> tuple[bd.SampleTable, dict]:
    """Dataset table plus sidecar metadata for ``cfg``'s task, generated from benchmark formulas."""
    task, d = cfg["task"], cfg["data"]
    if task == "classify":
        labels = bd.gen_three_class(d["seed"], d["samples_per_T"])
        return bd.labeled_table(labels), {"generator": "three_class", "seed": d["seed"], "samples_per_T": d["samples_per_T"]}
    if task == "landscape1d":
        x, T = bd.landscape1d_grid(*d["grid"], d["x_range"], d["T_range"])
        XX, TT = np.meshgrid(x, T, indexing="ij")
        F = bd.benchmark_F_1d(XX, TT, cfg["model"]["k_B"])
        return bd.SampleTable(("x", "T", "F"), np.column_stack([XX.ravel(), TT.ravel(), F.ravel()])), {"generator": "benchmark_F_1d"}
    if task == "landscape2d":
        x1 = np.linspace(*d["x1_range"], d["grid"][0])
        x2 = np.linspace(*d["x2_range"], d["grid"][1])
        X1, X2 = np.meshgrid(x1, x2, indexing="ij")
        V = bd.benchmark_V_2d(X1, X2)
        return bd.SampleTable(("x1", "x2", "V"), np.column_stack([X1.ravel(), X2.ravel(), V.ravel()])), {"generator": "benchmark_V_2d"}
    syn = synthetic_fvt(cfg)
    s = d["synthetic"]
    V, T = syn.grid(d["grid"][0], d["grid"][1], s["V_span"], s["T_range"])
    VV, TT = np.meshgrid(V, T, indexing="ij")
    meta = {"volume_unit": "model", "normalized_to": None, "pressure_GPa": None, "generator": "synthetic_double_well", **s}
    return bd.SampleTable(bd.FVT_COLUMNS, np.column_stack([VV.ravel(), TT.ravel(), syn.F(VV, TT).ravel()])), meta


def synthetic_fvt(cfg: dict) -> bd.SyntheticFVT:
    s = cfg["data"]["synthetic"]
    return bd.SyntheticFVT(s["k_B"], s["T_c"], s["tau"], s["V_c"], s["width"])


def load_task_data(cfg: dict) -> TaskData:
    task, d = cfg["task"], cfg["data"]
    k_B = cfg["model"]["k_B"]
    if task == "classify":
        if d["path"]:
            labels = bd.labels_from_table(bd.read_table(d["path"], ("y1", "y2", "y3", "T")))
        else:
            labels = bd.gen_three_class(d["seed"], d["samples_per_T"])
        return TaskData(task, labels=labels)
    if task == "landscape1d":
        if d["path"]:
            (x, T), F = bd.read_table(d["path"], ("x", "T", "F")).to_grid(("x", "T"), "F")
        else:
            x, T = bd.landscape1d_grid(*d["grid"], d["x_range"], d["T_range"])
            F = bd.benchmark_F_1d(x[:, None], T[None, :], k_B)
        sx, sT = d["train_stride"]
        xi = np.isin(x, _stride(x, sx))
        Ti = np.isin(T, _stride(T, sT))
        x, T, F = x[xi], T[Ti], F[np.ix_(xi, Ti)]
        dens = losses.SlicedDensity.from_energy((x,), T, F.T, k_B)
        return TaskData(task, density=dens, F=F.T)
    if task == "landscape2d":
        if d["path"]:
            (x1, x2), V = bd.read_table(d["path"], ("x1", "x2", "V")).to_grid(("x1", "x2"), "V")
        else:
            x1 = np.linspace(*d["x1_range"], d["grid"][0])
            x2 = np.linspace(*d["x2_range"], d["grid"][1])
            V = bd.benchmark_V_2d(x1[:, None], x2[None, :])
        dens = losses.SlicedDensity.from_energy((x1, x2), np.array([d["T"]]), V.reshape(1, -1), k_B)
        return TaskData(task, density=dens, F=V.reshape(1, -1))
    # fe3pt
    meta = {}
    if d["path"]:
        table, meta = bd.load_fvt(d["path"])
        (V, T), F = table.to_grid(("V", "T"), "F")
        V_N = d["V_N"] or (meta.get("normalized_to") if isinstance(meta.get("normalized_to"), (int, float)) else None)
        if V_N:
            V = V / V_N
        T = T / d["T_scale"]
        F = F / d["F_scale"]
    else:
        syn = synthetic_fvt(cfg)
        s = d["synthetic"]
        V, T = syn.grid(d["grid"][0], d["grid"][1], s["V_span"], s["T_range"])
        F = syn.F(V[:, None], T[None, :])
    dens = losses.SlicedDensity.from_energy((V,), T, F.T, k_B)
    return TaskData(task, density=dens, F=F.T, meta=meta)


def pressure_to_model(cfg: dict, p: float, meta: dict | None = None) -> float:
    """Convert a configured pressure to model units (energy per model volume)."""
    if cfg["task"] != "fe3pt" or cfg["analysis"]["pressure_unit"] == "model":
        return float(p)
    d = cfg["data"]
    V_N = d["V_N"] or (meta or {}).get("normalized_to") or 1.0
    return float(p) / bd.EV_PER_A3_TO_GPA * float(V_N) / d["F_scale"]


# ---------------------------------------------------------------------------
# models and objectives


def _n_x(task: str) -> int:
    return {"classify": 0, "landscape1d": 1, "landscape2d": 2, "fe3pt": 1}[task]


def make_model(cfg: dict, K: int, seed: int | None = None) -> EnsembleModel:
    m = cfg["model"]
    seed = cfg["train"]["seed"] if seed is None else seed
    return EnsembleModel.create(K, _n_x(cfg["task"]), tuple(m["hidden_widths"]), seed, m["k_B"], m["gamma"])


def make_objective(cfg: dict, data: TaskData):
    m = cfg["model"]
    if cfg["task"] == "classify":
        return losses.cz_objective(train_labels(cfg, data), m["k_B"], m["gamma"])
    lam = cfg["train"]["lam"]
    stride = cfg["data"].get("curvature_stride", 1)
    return losses.js_objective(data.density, m["k_B"], m["gamma"], lam, stride)


def train_labels(cfg: dict, data: TaskData) -> losses.LabeledSet:
    return data.labels.subset(data.labels.T < cfg["data"]["train_T_max"])


def baseline_spec(cfg: dict) -> netcore.LayerSpec:
    if cfg["task"] == "classify":
        return netcore.CLASSIFY_BASELINE
    if cfg["task"] == "landscape2d":
        return netcore.LayerSpec(3, (48,) * 4, 1)
    return netcore.LANDSCAPE_BASELINE


def make_baseline(cfg: dict, data: TaskData):
    spec = baseline_spec(cfg)
    net = netcore.baseline_dnn(spec, cfg["train"]["seed"])
    k_B = cfg["model"]["k_B"]
    if cfg["task"] == "classify":
        return net, losses.dnn_cz_objective(train_labels(cfg, data), k_B)
    return net, losses.dnn_js_objective(data.density, k_B)


@dataclass
class TrainOutcome:
    cfg: dict
    model: object
    report: TrainReport
    metrics: dict
    k_selection: dict | None = None


def run_training(cfg: dict, data: TaskData | None = None, baseline: bool = False, progress=None) -> TrainOutcome:
    data = data or load_task_data(cfg)
    tc = train_config(cfg)
    ksel = None
    if baseline:
        net, obj = make_baseline(cfg, data)
        rep = train(net, obj, tc, progress)
        model = rep.final_params
    elif tc.K == "auto":
        sel = select_K(data, lambda K, _d: (make_model(cfg, K), make_objective(cfg, data)), tc)
        rep = sel.reports[sel.K]
        model = rep.final_params
        ksel = {"selected_K": sel.K, "final_losses": {str(k): v for k, v in sel.final_losses.items()}}
    else:
        rep = train(make_model(cfg, tc.K), make_objective(cfg, data), tc, progress)
        model = rep.final_params
    metrics = training_metrics(cfg, model, data)
    metrics["final_loss"] = rep.final_loss
    metrics["initial_loss"] = float(rep.loss_history[0])
    metrics["wall_time"] = rep.wall_time
    if ksel:
        metrics.update(ksel)
    return TrainOutcome(cfg, model, rep, metrics, ksel)


# ---------------------------------------------------------------------------
# predictions and metrics


def class_probabilities(model, T, k_B: float = 1.0) -> np.ndarray:
    """Predicted class probabilities on temperatures ``T`` for a ZENN or a baseline network."""
    Tj = jnp.asarray(np.asarray(T, dtype=float))
    if isinstance(model, EnsembleModel):
        return np.asarray(ensemble_terms(model.to_tree(), jnp.zeros((Tj.size, 0)), Tj, model.k_B, model.gamma)["p"])
    E = np.asarray(netcore.apply(model.to_tree(), Tj[:, None]))
    z = -E / (k_B * np.asarray(T)[:, None])
    z -= z.max(axis=1, keepdims=True)
    p = np.exp(z)
    return p / p.sum(axis=1, keepdims=True)


def energy_values(model, X, T, k_B: float = 1.0) -> np.ndarray:
    """F at points ``X`` (N, n_x) and temperatures ``T`` (N,), for a ZENN or a baseline network."""
    X = np.asarray(X, dtype=float)
    T = np.broadcast_to(np.asarray(T, dtype=float), (X.shape[0],))
    if isinstance(model, EnsembleModel):
        return np.asarray(ensemble_terms(model.to_tree(), jnp.asarray(X), jnp.asarray(T), model.k_B, model.gamma)["F_total"])
    return np.asarray(netcore.apply(model.to_tree(), jnp.asarray(np.column_stack([X, T]))))[:, 0]


def energy_field(model, n_x: int) -> an.ScalarField:
    if isinstance(model, EnsembleModel):
        return an.ScalarField.from_model(model)
    tree = model.to_tree()
    return an.ScalarField(lambda x, T: netcore.apply(tree, jnp.concatenate([x, jnp.reshape(T, (1,))])[None, :])[0, 0], n_x, "dnn")


def offset_rmse(pred, true, axis=None):
    """RMSE after removing the mean offset (per row when ``axis=1``)."""
    d = np.asarray(pred) - np.asarray(true)
    d = d - np.mean(d, axis=axis, keepdims=axis is not None)
    return float(np.sqrt(np.mean(d**2))), float(np.max(np.abs(d)))


def training_metrics(cfg: dict, model, data: TaskData) -> dict:
    task = cfg["task"]
    k_B = cfg["model"]["k_B"]
    if task == "classify":
        return classification_metrics(model, cfg["data"]["train_T_max"], k_B)
    if task == "landscape2d":
        n = cfg["analysis"]["generalization_grid"]
        d = cfg["data"]
        g1, g2 = np.linspace(*d["x1_range"], n), np.linspace(*d["x2_range"], n)
        G1, G2 = np.meshgrid(g1, g2, indexing="ij")
        X = np.column_stack([G1.ravel(), G2.ravel()])
        rmse, mx = offset_rmse(energy_values(model, X, d["T"], k_B), bd.benchmark_V_2d(X[:, 0], X[:, 1]))
        return {"rmse": rmse, "max_abs_error": mx}
    dens = data.density
    n_T, n_p = dens.P.shape
    pred = energy_values(model, np.tile(dens.points, (n_T, 1)), np.repeat(dens.T, n_p), k_B).reshape(n_T, n_p)
    rmse, mx = offset_rmse(pred, data.F, axis=1)
    js = [losses.js_divergence(dens.slice(i), losses.density_from_energy(dens.axes, pred[i].reshape([a.size for a in dens.axes]), dens.T[i], k_B)) for i in range(n_T)]
    return {"rmse_per_T_offset": rmse, "max_abs_error": mx, "mean_js": float(np.mean(js))}


def classification_metrics(model, train_T_max: float = 6.0, k_B: float = 1.0, n_T: int = 100) -> dict:
    T = np.linspace(1.0, 8.0, n_T)
    p = class_probabilities(model, T, k_B)
    exact = bd.three_class_probs(T)
    err = np.abs(p - exact).max(axis=1)
    train_mask = T < train_T_max
    pred_cls, true_cls = p.argmax(1), exact.argmax(1)
    per_class = {}
    for c in range(3):
        sel = true_cls == c
        per_class[f"class{c + 1}"] = float(np.mean(pred_cls[sel] == c)) if sel.any() else None
    probe = class_probabilities(model, np.array([2.0, 3.0, 4.0]), k_B).argmax(1) + 1
    return {
        "argmax_at_T_2_3_4": [int(c) for c in probe],
        "max_p_error_train": float(err[train_mask].max()),
        "max_p_error_test": float(err[~train_mask].max()),
        "per_class_accuracy": per_class,
    }


def generalization_error(model, T_lo=6.0, T_hi=8.0, n: int = 10000, k_B: float = 1.0) -> float:
    """Max |p_pred - p_exact| over ``n`` temperatures in the extrapolation range."""
    T = np.linspace(T_lo, T_hi, n)
    return float(np.abs(class_probabilities(model, T, k_B) - bd.three_class_probs(T)).max())


# ---------------------------------------------------------------------------
# persistence


def model_document(cfg: dict, model, baseline: bool) -> dict:
    body = model.to_dict()
    if baseline:
        body["kind"] = "dnn"
    return {"task": cfg["task"], "config": cfg, "model": body}


def load_model_document(path):
    doc = json.loads(Path(path).read_text())
    body = doc["model"]
    model = EnsembleModel.from_dict(body) if body.get("kind") == "zenn" else netcore.NetworkParams.from_dict(body)
    return doc["config"], model


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


# ---------------------------------------------------------------------------
# analysis


def run_analysis(cfg: dict, model, out_dir: Path) -> dict:
    """Write the task's analysis artifacts to ``out_dir``; returns a summary dict.

    Solver failures are recorded per item instead of aborting the batch.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    task, a = cfg["task"], cfg["analysis"]
    k_B = cfg["model"]["k_B"]
    summary: dict = {"task": task, "files": []}

    def write(name, text):
        (out_dir / name).write_text(text)
        summary["files"].append(name)

    if task == "classify":
        T = np.linspace(*a["T_range"], a["n_T"])
        p = class_probabilities(model, T, k_B)
        exact = bd.three_class_probs(T)
        lines = ["T,p1,p2,p3,exact1,exact2,exact3"] + [",".join(f"{v:.17g}" for v in [t, *pi, *ei]) for t, pi, ei in zip(T, p, exact)]
        write("probabilities.csv", "\n".join(lines) + "\n")
        summary["max_p_error_generalization"] = generalization_error(model, 6.0, 8.0, a["n_generalization"], k_B)
        summary.update(classification_metrics(model, cfg["data"]["train_T_max"], k_B))
    elif task == "landscape1d":
        f = energy_field(model, 1)
        Tg = np.linspace(*a["T_range"], a["n_T"])
        seeds = np.linspace(*a["x_range"], a["n_seeds"])
        write("bifurcation.csv", an.bifurcation_csv(an.bifurcation_diagram(f, Tg, seeds, (a["x_range"][0] * 2, a["x_range"][1] * 2))))
        lines = an.curvature_zero_contour(f, a["x_range"], a["T_range"], a["resolution"])
        write("contour.csv", an.contour_csv(lines))
        summary["contour_rms_vs_benchmark"] = an.contour_rms_vs(lines, lambda x: 2 - 3 * x**2, (-0.6, 0.6))
        summary["critical_point"] = _critical(f, a["x_range"], a["T_range"], a["resolution"])
        write("critical_point.json", dumps(summary["critical_point"]))
        n = a["generalization_grid"]
        d = cfg["data"]
        xs, Ts = np.linspace(*d["x_range"], n), np.linspace(*d["T_range"], n)
        XX, TT = np.meshgrid(xs, Ts, indexing="ij")
        pred = energy_values(model, XX.reshape(-1, 1), TT.ravel(), k_B).reshape(n, n)
        rmse, mx = offset_rmse(pred.T, bd.benchmark_F_1d(XX, TT, k_B).T, axis=1)
        summary["generalization"] = {"rmse_per_T_offset": rmse, "max_abs_error": mx}
    elif task == "landscape2d":
        f = energy_field(model, 2)
        d = cfg["data"]
        n = a["n_seeds"]
        S1, S2 = np.meshgrid(np.linspace(*d["x1_range"], n), np.linspace(*d["x2_range"], n), indexing="ij")
        bounds = ((d["x1_range"][0], d["x2_range"][0]), (d["x1_range"][1], d["x2_range"][1]))
        seeds = np.column_stack([S1.ravel(), S2.ravel()])
        pts = an.stationary_points(f, d["T"], seeds, bounds, well_ceiling(f, d, a["well_fraction"]))
        write("stationary.csv", an.bifurcation_csv(pts))
        summary["minima"] = [p.x.tolist() for p in pts if p.tag == "stable"]
        summary["generalization"] = training_metrics(cfg, model, None)
    else:
        summary.update(_fe3pt_analysis(cfg, model, write))
    write("summary.json", dumps(summary))
    return summary


def well_ceiling(field, d: dict, fraction: float, n: int = 100) -> float:
    """Energy below which a minimum counts as a well: ``min + fraction * (max - min)`` on the data box."""
    G1, G2 = np.meshgrid(np.linspace(*d["x1_range"], n), np.linspace(*d["x2_range"], n), indexing="ij")
    v = field.values(np.column_stack([G1.ravel(), G2.ravel()]), d["T"])
    return float(v.min() + fraction * (v.max() - v.min()))


def _critical(field, x_range, T_range, resolution) -> dict:
    try:
        cp = an.find_critical_point(field, x_range, T_range, resolution)
    except an.NonConvergenceError as e:
        return {"status": "failed", "error": str(e), "residual": e.residual}
    return {"status": "ok", **json.loads(cp.to_json())}


def fe3pt_windows(cfg: dict, meta: dict | None = None):
    a, d = cfg["analysis"], cfg["data"]
    if a["V_window"] and a["T_range"]:
        return tuple(a["V_window"]), tuple(a["T_range"])
    if d["path"]:
        data = load_task_data(cfg)
        V, T = data.density.axes[0], data.density.T
        Vw, Tw = (V.min(), V.max()), (T.min(), T.max())
    else:
        s = d["synthetic"]
        syn = synthetic_fvt(cfg)
        V, _ = syn.grid(3, 3, s["V_span"], s["T_range"])
        Vw, Tw = (V.min(), V.max()), tuple(s["T_range"])
    return tuple(a["V_window"] or Vw), tuple(a["T_range"] or Tw)


def _fe3pt_analysis(cfg, model, write) -> dict:
    a = cfg["analysis"]
    meta = {}
    if cfg["data"]["path"]:
        _, meta = bd.load_fvt(cfg["data"]["path"])
    Vw, Tw = fe3pt_windows(cfg, meta)
    f = energy_field(model, 1)
    T_grid = np.linspace(*Tw, a["n_T"])
    out: dict = {"isobars": {}}
    for p in a["pressures"]:
        iso = an.isobaric_curve(f, pressure_to_model(cfg, p, meta), T_grid, Vw)
        write(f"isobar_p{p:g}.csv", iso.to_csv())
        out["isobars"][f"{p:g}"] = {"nte": iso.has_nte(), "gaps": int(np.isnan(iso.V).sum())}
    pc = a["critical_pressure"]
    g = f.with_pressure(pressure_to_model(cfg, pc, meta))
    out["critical_point"] = {"pressure": pc, **_critical(g, Vw, Tw, a["resolution"])}
    if not cfg["data"]["path"]:
        syn = synthetic_fvt(cfg)
        try:
            V_star, T_star = syn.critical_point(pressure_to_model(cfg, pc, meta))
            out["critical_point_oracle"] = {"V_star": V_star, "T_star": T_star}
        except ValueError as e:
            out["critical_point_oracle"] = {"error": str(e)}
    write("critical_point.json", dumps(out["critical_point"]))
    return out
