"""Benchmark models, synthetic data, Birch-Murnaghan EOS tools and dataset files.

Random draws use numpy's ``Generator(PCG64(seed))`` (128-bit state, 64-bit
outputs) and inverse-CDF sampling of categorical labels, so a seed fixes
every generated file byte for byte.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from zenn import autodiff as ad
from zenn.losses import LabeledSet

EV_PER_A3_TO_GPA = 160.2176634


class DataFormatError(ValueError):
    """A dataset file is malformed; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


# ---------------------------------------------------------------------------
# three-class classification benchmark

_CLASS_PEAKS = (
    ((2.0, 2.0), (1.5, 6.0)),
    ((2.5, 3.0), (1.2, 5.5)),
    ((2.2, 4.0), (1.4, 6.5)),
)

THREE_CLASS_T_RANGE = (1.0, 8.0)
THREE_CLASS_N_T = 100
THREE_CLASS_STRIDE = 4


def three_class_f(T):
    """Unnormalized class weights f_k(T), shape (..., 3)."""
    T = np.asarray(T, dtype=float)
    return np.stack([sum(A * np.exp(-((T - c) ** 2)) for A, c in peaks) for peaks in _CLASS_PEAKS], axis=-1)


def three_class_probs(T):
    f = three_class_f(T)
    return f / f.sum(axis=-1, keepdims=True)


def three_class_T_grid():
    """The 100-point temperature grid and the every-4th subset that carries samples."""
    T = np.linspace(*THREE_CLASS_T_RANGE, THREE_CLASS_N_T)
    return T, T[::THREE_CLASS_STRIDE]


def gen_three_class(seed: int, samples_per_T: int = 10000) -> LabeledSet:
    """Monte Carlo one-hot labels drawn from ``three_class_probs`` on the selected temperatures."""
    if samples_per_T < 1:
        raise ValueError("samples_per_T must be positive")
    rng = np.random.Generator(np.random.PCG64(seed))
    _, Ts = three_class_T_grid()
    Tcol, Y = [], []
    for T in Ts:
        cdf = np.cumsum(three_class_probs(T))
        u = rng.random(samples_per_T)
        labels = np.minimum(np.searchsorted(cdf, u, side="right"), 2)
        Y.append(np.eye(3)[labels])
        Tcol.append(np.full(samples_per_T, T))
    return LabeledSet(np.concatenate(Tcol), np.concatenate(Y))


# ---------------------------------------------------------------------------
# energy landscapes


def benchmark_F_1d(x, T, k_B: float = 1.0):
    """Double-well landscape whose two wells merge at T = 2.

    Works on floats, numpy/jax arrays and :class:`~zenn.autodiff.Expr` graphs.
    """
    return k_B * T * ((x**2 / 2 + (T - 2) / 2) ** 2 + ((T - 2) ** 2 - 1) ** 2 / 2)


def benchmark_dF_1d(x, T, k_B: float = 1.0):
    return k_B * T * x * (x**2 + T - 2)


def benchmark_d2F_1d(x, T, k_B: float = 1.0):
    return k_B * T * (3 * x**2 + T - 2)


WELLS_2D = {
    "A": (-3.0, -3.0, -3.0),
    "a": (3.0, 3.0, 3.0),
    "b": (3.0, 3.0, 3.0),
    "x10": (-1.0, 1.0, 0.0),
    "x20": (0.0, 0.0, 1.5),
}


def benchmark_V_2d(x1, x2):
    """Sum of three Gaussian wells centred at (-1, 0), (1, 0), (0, 1.5)."""
    w = WELLS_2D
    out = 0.0
    for A, a, b, c1, c2 in zip(w["A"], w["a"], w["b"], w["x10"], w["x20"]):
        out = out + A * ad.exp(-a * (x1 - c1) ** 2 - b * (x2 - c2) ** 2)
    return out


def landscape1d_grid(nx: int = 201, nT: int = 61, x_range=(-2.0, 2.0), T_range=(1.0, 3.0)):
    return np.linspace(*x_range, nx), np.linspace(*T_range, nT)


def landscape2d_grid(n: int = 41, x1_range=(-2.5, 2.5), x2_range=(-2.0, 3.0)):
    return np.linspace(*x1_range, n), np.linspace(*x2_range, n)


# ---------------------------------------------------------------------------
# synthetic F(V, T) with a known critical point


@dataclass(frozen=True)
class SyntheticFVT:
    """Double-well ``F(V, T) = k_B T (u^2/2 + (T - Tc)/(2 tau))^2 + c(T)``, ``u = (V - V_c)/w``.

    Under pressure ``p`` the Gibbs surface ``F + pV`` loses its double well
    at the point solving ``dF/dV = -p``, ``d2F/dV2 = 0``; :meth:`critical_point`
    solves that pair from the closed-form derivatives.
    """

    k_B: float = 0.1
    T_c: float = 2.0
    tau: float = 1.0
    V_c: float = 1.0
    width: float = 0.25

    def F(self, V, T):
        u = (V - self.V_c) / self.width
        return self.k_B * T * (u**2 / 2 + (T - self.T_c) / (2 * self.tau)) ** 2 + 0.05 * T**2

    def dF(self, V, T):
        u = (V - self.V_c) / self.width
        return self.k_B * T * 2 * (u**2 / 2 + (T - self.T_c) / (2 * self.tau)) * u / self.width

    def d2F(self, V, T):
        u = (V - self.V_c) / self.width
        return self.k_B * T * (3 * u**2 + (T - self.T_c) / self.tau) / self.width**2

    def critical_point(self, p: float) -> tuple[float, float]:
        """``(V*, T*)`` at pressure ``p`` (model units)."""
        from scipy.optimize import brentq

        # d2F = 0 gives T = T_c - 3 tau u^2; dF = -p is then a scalar root in u
        def g(u):
            T = self.T_c - 3 * self.tau * u**2
            return self.k_B * T * 2 * (u**2 / 2 + (T - self.T_c) / (2 * self.tau)) * u / self.width + p

        if p == 0:
            return self.V_c, self.T_c
        # the branch with T > 0 is monotone in u up to u^2 = T_c / (5 tau)
        hi = np.sqrt(self.T_c / (5 * self.tau))
        b = np.sign(p) * hi
        if np.sign(g(b)) == np.sign(p):
            raise ValueError("pressure too large: no critical point on the physical branch")
        u = brentq(g, 0.0, b, xtol=1e-15)
        return self.V_c + self.width * u, self.T_c - 3 * self.tau * u**2

    def grid(self, nV: int = 41, nT: int = 21, V_span: float = 2.0, T_range=(1.0, 3.0)):
        V = np.linspace(self.V_c - V_span * self.width, self.V_c + V_span * self.width, nV)
        return V, np.linspace(*T_range, nT)


# ---------------------------------------------------------------------------
# Birch-Murnaghan EOS


def _eos_basis(V, deriv: int = 0):
    """Columns d^n/dV^n of (1, V^-2/3, V^-4/3, V^-2)."""
    V = np.asarray(V, dtype=float)
    exps = np.array([0.0, -2 / 3, -4 / 3, -2.0])
    coef = np.ones(4)
    e = exps.copy()
    for _ in range(deriv):
        coef = coef * e
        e = e - 1
    return coef * V[..., None] ** e


@dataclass(frozen=True)
class EosParams:
    a1: float
    a2: float
    a3: float
    a4: float

    @property
    def coeffs(self) -> np.ndarray:
        return np.array([self.a1, self.a2, self.a3, self.a4])

    def energy(self, V, deriv: int = 0):
        return _eos_basis(V, deriv) @ self.coeffs

    @property
    def V0(self) -> float:
        return _eos_equilibrium(self)

    @property
    def E0(self) -> float:
        return float(self.energy(self.V0))

    @property
    def B0(self) -> float:
        """Bulk modulus in GPa (energies in eV, volumes in Å^3)."""
        V0 = self.V0
        return float(V0 * self.energy(V0, 2) * EV_PER_A3_TO_GPA)

    @property
    def B_prime(self) -> float:
        V0 = self.V0
        return float(-1.0 - V0 * self.energy(V0, 3) / self.energy(V0, 2))

    @classmethod
    def from_properties(cls, V0: float, E0: float, B0: float, B_prime: float) -> "EosParams":
        """Coefficients reproducing given equilibrium properties (a 4x4 linear solve)."""
        E2 = B0 / (V0 * EV_PER_A3_TO_GPA)
        E3 = -(1.0 + B_prime) * E2 / V0
        A = np.vstack([_eos_basis(V0, d) for d in range(4)])
        return cls(*np.linalg.solve(A, [E0, 0.0, E2, E3]))


def _eos_equilibrium(params: EosParams) -> float:
    # stationary points in y = V^-2/3: E'(V) ∝ a2 + 2 a3 y + 3 a4 y^2 = 0
    a1, a2, a3, a4 = params.coeffs
    roots = np.roots([3 * a4, 2 * a3, a2]) if a4 != 0 else np.roots([2 * a3, a2])
    Vs = [float(np.real(r)) ** -1.5 for r in roots if abs(np.imag(r)) < 1e-12 and np.real(r) > 0]
    Vs = [v for v in Vs if params.energy(v, 2) > 0]
    if not Vs:
        raise ValueError("EOS has no energy minimum at positive volume")
    V = min(Vs, key=lambda v: params.energy(v))
    for _ in range(50):  # Newton polish on E'(V) = 0
        step = params.energy(V, 1) / params.energy(V, 2)
        V -= step
        if abs(step) < 1e-15 * V:
            break
    return float(V)


def eos_energy(V, params: EosParams):
    V = np.asarray(V, dtype=float)
    if np.any(V <= 0):
        raise ValueError("volume must be positive")
    return params.energy(V)


def eos_fit(V, E) -> EosParams:
    """Linear least squares in the basis (1, V^-2/3, V^-4/3, V^-2)."""
    V, E = np.asarray(V, dtype=float), np.asarray(E, dtype=float)
    if V.size < 4 or V.size != E.size:
        raise ValueError("need at least 4 (V, E) points")
    if np.any(V <= 0) or np.unique(V).size != V.size:
        raise ValueError("volumes must be positive and distinct")
    A = _eos_basis(V)
    # column scaling keeps the normal equations well conditioned
    scale = np.max(np.abs(A), axis=0)
    coef, _, rank, _ = np.linalg.lstsq(A / scale, E, rcond=None)
    if rank < 4:
        raise ValueError("rank-deficient EOS design matrix")
    params = EosParams(*(coef / scale))
    V0 = params.V0
    if not V.min() <= V0 <= V.max():
        raise ValueError(f"fitted equilibrium volume {V0:.6g} lies outside the data range")
    return params


# ---------------------------------------------------------------------------
# Fe3Pt configuration table (12-atom supercell)


@dataclass(frozen=True)
class ConfigRecord:
    index: int
    DF: int
    V0: float  # Å^3/atom
    E0: float  # eV/atom
    B0: float  # GPa
    B_prime: float

    @property
    def eos(self) -> EosParams:
        return EosParams.from_properties(self.V0, self.E0, self.B0, self.B_prime)


_TABLE_S1 = """\
1 2 13.124 0.0000 177.01 3.447
2 6 12.901 0.0122 163.06 4.260
3 12 12.910 0.0160 162.96 4.440
4 12 13.002 0.0191 171.16 3.501
5 6 13.005 0.0202 171.75 3.271
6 6 12.929 0.0211 164.05 3.740
7 24 12.890 0.0281 162.43 3.923
8 24 12.947 0.0291 164.33 3.159
9 12 12.875 0.0372 164.70 4.059
10 12 12.868 0.0419 170.28 4.144
11 12 12.867 0.0422 171.76 3.721
12 24 12.840 0.0455 161.43 3.772
13 6 12.767 0.0457 161.03 4.388
14 12 12.859 0.0462 163.01 3.224
15 12 12.864 0.0467 168.31 4.357
16 24 12.801 0.0491 167.54 4.154
17 24 12.804 0.0493 165.12 4.649
18 12 12.765 0.0494 157.04 4.507
19 24 12.789 0.0505 169.38 4.816
20 12 12.833 0.0517 169.08 4.029
21 6 12.834 0.0521 164.59 3.891
22 6 12.747 0.0533 163.93 4.670
23 24 12.765 0.0551 159.41 4.137
24 12 12.724 0.0559 170.18 4.298
25 24 12.715 0.0586 172.04 4.622
26 24 12.779 0.0593 167.06 4.309
27 24 12.788 0.0596 170.54 4.187
28 12 12.727 0.0599 164.79 4.109
29 24 12.806 0.0623 169.21 4.052
30 12 12.703 0.0686 174.20 4.283
31 12 12.729 0.0712 169.24 4.215
32 12 12.740 0.0733 165.45 4.122
33 12 12.716 0.0877 163.09 3.917
34 12 12.754 0.0895 162.97 3.933
35 2 12.684 0.0899 167.31 4.483
36 4 12.681 0.0900 167.39 4.735
"""


def table_s1() -> list[ConfigRecord]:
    """Equilibrium properties of the symmetry-independent Fe3Pt configurations, as published.

    Configuration 1 is ferromagnetic. The published table has 36 rows whose
    degeneracies sum to 500.
    """
    rows = []
    for line in _TABLE_S1.splitlines():
        i, df, v0, e0, b0, bp = line.split()
        rows.append(ConfigRecord(int(i), int(df), float(v0), float(e0), float(b0), float(bp)))
    return rows


# ---------------------------------------------------------------------------
# tables and files


@dataclass(frozen=True, eq=False)
class SampleTable:
    columns: tuple[str, ...]
    data: np.ndarray

    def __post_init__(self):
        cols = tuple(self.columns)
        data = np.asarray(self.data, dtype=float).reshape(-1, len(cols))
        if len(set(cols)) != len(cols):
            raise DataFormatError("column names must be unique")
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "data", data)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.data[:, self.columns.index(name)]

    def __len__(self):
        return self.data.shape[0]

    def equals(self, other: "SampleTable") -> bool:
        return self.columns == other.columns and np.array_equal(self.data, other.data)

    def to_grid(self, axes_cols: tuple[str, ...], value_col: str):
        """Reshape a full rectangular grid into (axes, values[n_0, n_1, ...])."""
        axes = [np.unique(self[c]) for c in axes_cols]
        idx = [np.searchsorted(a, self[c]) for a, c in zip(axes, axes_cols)]
        shape = tuple(a.size for a in axes)
        if len(self) != int(np.prod(shape)):
            raise DataFormatError("samples do not form a complete rectangular grid")
        vals = np.full(shape, np.nan)
        vals[tuple(idx)] = self[value_col]
        if np.isnan(vals).any():
            raise DataFormatError("samples do not form a complete rectangular grid")
        return axes, vals


def write_table(path, table: SampleTable) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(table_csv(table))


def table_csv(table: SampleTable) -> str:
    buf = io.StringIO()
    buf.write(",".join(table.columns) + "\n")
    for row in table.data:
        buf.write(",".join(f"{v:.17g}" for v in row) + "\n")
    return buf.getvalue()


def read_table(path, expected: tuple[str, ...] | None = None) -> SampleTable:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError("missing header", 1) from None
        header = [h.strip() for h in header]
        if expected is not None and tuple(header) != tuple(expected):
            raise DataFormatError(f"expected header {','.join(expected)}, got {','.join(header)}", 1)
        if not header or any(not h or _is_number(h) for h in header):
            raise DataFormatError("missing header", 1)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataFormatError(f"expected {len(header)} fields, got {len(row)}", lineno)
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise DataFormatError(f"non-numeric value in row {row}", lineno) from None
    return SampleTable(tuple(header), np.array(rows, dtype=float).reshape(-1, len(header)))


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


FVT_COLUMNS = ("V", "T", "F")
FVT_SIDECAR_KEYS = ("volume_unit", "normalized_to", "pressure_GPa")


def sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


def save_fvt(path, table: SampleTable, sidecar: dict | None = None) -> None:
    """Write ``V,T,F`` samples plus a JSON sidecar describing units."""
    if table.columns != FVT_COLUMNS:
        raise DataFormatError(f"F(V,T) tables need columns {FVT_COLUMNS}")
    write_table(path, table)
    meta = {"volume_unit": "A^3/atom", "normalized_to": None, "pressure_GPa": None}
    meta.update(sidecar or {})
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_fvt(path):
    """``(SampleTable, sidecar dict)``; the sidecar is optional on disk."""
    table = read_table(path, FVT_COLUMNS)
    sc = sidecar_path(path)
    meta = json.loads(sc.read_text()) if sc.exists() else {}
    return table, meta


def labeled_table(labels: LabeledSet) -> SampleTable:
    return SampleTable(("y1", "y2", "y3", "T"), np.column_stack([labels.Y, labels.T]))


def labels_from_table(table: SampleTable) -> LabeledSet:
    ycols = [c for c in table.columns if c.startswith("y")]
    return LabeledSet(table["T"], np.column_stack([table[c] for c in ycols]))


def file_checksum(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def fe3pt_data_dir() -> Path | None:
    """Directory holding user-supplied Fe3Pt F(V,T) files, if any (``ZENN_FE3PT_DATA``)."""
    p = os.environ.get("ZENN_FE3PT_DATA")
    return Path(p) if p and Path(p).is_dir() else None
