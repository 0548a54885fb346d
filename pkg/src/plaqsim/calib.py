"""Bias-line calibration: mutual inductances and charge-line capacitances.

Two-dimensional scans against pairs of bias lines show straight periodic
features: flux scans show lines where one loop sits at half a flux quantum,
charge scans show modulation stripes where an island's offset charge passes
a degeneracy.  Both reduce to the same linear model

    observable_row = scale * (matrix @ drive) + offset

with the matrix in pH (flux loops vs. current lines) or aF (islands vs.
voltage lines).  This module fits those matrices from extracted per-feature
``(slope, period, intercept)`` tuples, inverts them to step along pure flux
or charge directions, and synthesizes feature maps for round-trip checks.

Conventions
-----------
- Feature slope is ``d(drive_y)/d(drive_x)`` along one feature, which
  equals ``-M[row, x] / M[row, y]``.
- Feature period is the positive ``drive_y`` spacing between neighboring
  features at fixed ``drive_x``; its orientation (whether the row observable
  grows with ``drive_y``) is recorded separately in ``advance``, which an
  experiment reads off by stepping the line and watching the feature move.
- Intercepts refer to the feature of index zero, the one the row observable
  crosses at level 1/2 with no winding; they pin the per-row offsets.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np
from scipy import constants as _const

__all__ = [
    "CalibrationError",
    "LineFeature",
    "FrustrationLineSet",
    "ChargeModulationSet",
    "MutualModel",
    "ChargeCapModel",
    "fit_mutual_matrix",
    "fit_capacitance_matrix",
    "bias_for_flux",
    "line_features",
    "synth_frustration_map",
    "device_mutual_model",
    "device_capacitance_model",
    "write_features",
    "read_features",
    "write_matrix_csv",
    "read_matrix_csv",
    "map_to_csv",
    "PH_MA_TO_PHI0",
    "AF_MV_TO_2E",
    "PINV_RCOND",
    "FLUX_LINE_NAMES",
    "CHARGE_LINE_NAMES",
    "ISLAND_NAMES",
    "DEVICE_INDUCTANCE_PH",
    "LAYOUT_INDUCTANCE_PH",
    "DEVICE_CAPACITANCE_AF",
    "LAYOUT_CAPACITANCE_AF",
]

# flux quantum in Wb; 1 pH * 1 mA = 1e-15 Wb
_PHI0_WB = _const.physical_constants["mag. flux quantum"][0]
#: loop flux per (pH * mA), in flux quanta
PH_MA_TO_PHI0 = 1.0e-15 / _PHI0_WB
#: island charge per (aF * mV), in Cooper pairs (2e)
AF_MV_TO_2E = 1.0e-21 / (2.0 * _const.e)
#: relative SVD cutoff for all pseudo-inverse solves
PINV_RCOND = 1.0e-12

# device bias-line and island labels used in reports
FLUX_LINE_NAMES = ("PB01", "PB12", "PB23", "PB30")
CHARGE_LINE_NAMES = ("CBsh", "CB1", "CB2")
ISLAND_NAMES = ("Islsh", "Isl1", "Isl2")

# measured mutual-inductance matrix of the reference device [pH],
# rows = plaquette loops, columns = FLUX_LINE_NAMES
DEVICE_INDUCTANCE_PH = (
    (0.64, 0.66, -0.15, 0.05),
    (0.20, -0.66, -0.54, 0.15),
    (0.13, -0.24, 0.67, 0.59),
)
# layout-simulated counterpart of DEVICE_INDUCTANCE_PH
LAYOUT_INDUCTANCE_PH = (
    (0.59, 0.76, -0.17, 0.11),
    (0.15, -0.69, -0.55, 0.24),
    (0.07, -0.02, 0.60, 0.76),
)
# measured charge-line capacitances of the reference device [aF],
# rows = ISLAND_NAMES, columns = CHARGE_LINE_NAMES
DEVICE_CAPACITANCE_AF = (
    (57.0, 501.0, 327.0),
    (0.0, 35.0, 8.0),
    (0.0, 73.0, 120.0),
)
# layout-simulated counterpart of DEVICE_CAPACITANCE_AF
LAYOUT_CAPACITANCE_AF = (
    (57.0, 419.0, 353.0),
    (0.0, 45.0, 12.0),
    (0.0, 27.0, 88.0),
)


class CalibrationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# feature observations


@dataclass(frozen=True)
class LineFeature:
    """One straight periodic feature extracted from a 2D two-line scan.

    :param row: index of the loop (flux fit) or island (charge fit)
    :param x_line: bias line stepped on the scan x axis
    :param y_line: bias line stepped on the scan y axis
    :param slope: d(drive_y)/d(drive_x) along the feature
    :param period: positive drive_y spacing between neighboring features
    :param advance: +1 if the row observable grows with drive_y, else -1
    :param intercept: drive_y of the zero-index feature at drive_x = 0, or
        None when the scan did not resolve absolute feature positions
    """

    row: int
    x_line: int
    y_line: int
    slope: float
    period: float
    advance: int = 1
    intercept: float | None = None

    def __post_init__(self):
        if self.row < 0 or self.x_line < 0 or self.y_line < 0:
            raise CalibrationError("feature indices must be non-negative")
        if self.x_line == self.y_line:
            raise CalibrationError("a feature needs two distinct bias lines")
        if not np.isfinite(self.slope):
            raise CalibrationError(f"non-finite slope {self.slope!r}")
        if not (np.isfinite(self.period) and self.period > 0.0):
            raise CalibrationError(f"period must be positive, got {self.period!r}")
        if self.advance not in (-1, 1):
            raise CalibrationError(f"advance must be +-1, got {self.advance!r}")
        if self.intercept is not None and not np.isfinite(self.intercept):
            raise CalibrationError(f"non-finite intercept {self.intercept!r}")


@dataclass(frozen=True)
class _FeatureSet:
    """Features plus the matrix shape they are expected to pin down."""

    n_rows: int
    n_lines: int
    features: tuple[LineFeature, ...]

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        if self.n_rows < 1 or self.n_lines < 2:
            raise CalibrationError("need at least one row and two bias lines")
        if not self.features:
            raise CalibrationError("empty feature set")
        for f in self.features:
            if f.row >= self.n_rows:
                raise CalibrationError(f"feature row {f.row} out of range")
            if f.x_line >= self.n_lines or f.y_line >= self.n_lines:
                raise CalibrationError("feature bias line out of range")

    def for_row(self, row: int) -> tuple[LineFeature, ...]:
        return tuple(f for f in self.features if f.row == row)


class FrustrationLineSet(_FeatureSet):
    """Half-flux-quantum line features from flux-line pair scans."""


class ChargeModulationSet(_FeatureSet):
    """Island charge-modulation stripe features from charge-line pair scans."""


# ---------------------------------------------------------------------------
# fitted models


def _frozen_matrix(values, n_rows: int | None = None) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != 2:
        raise CalibrationError(f"matrix must be 2-D, got shape {arr.shape}")
    if n_rows is not None and arr.shape[0] != n_rows:
        raise CalibrationError(f"expected {n_rows} rows, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise CalibrationError("matrix entries must be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class MutualModel:
    """Linear map from bias-line currents to loop fluxes.

    ``flux[i] = unit_scale * sum_j l_matrix[i, j] * current[j] + offsets[i]``
    with ``l_matrix`` in pH, currents in mA and fluxes in flux quanta.
    """

    l_matrix: np.ndarray
    offsets: np.ndarray | None = None
    unit_scale: float = PH_MA_TO_PHI0
    fit_residual: float | None = field(default=None, compare=False)

    def __post_init__(self):
        mat = _frozen_matrix(self.l_matrix)
        object.__setattr__(self, "l_matrix", mat)
        off = np.zeros(mat.shape[0]) if self.offsets is None \
            else np.array(self.offsets, dtype=float)
        if off.shape != (mat.shape[0],):
            raise CalibrationError(
                f"offsets shape {off.shape} does not match {mat.shape[0]} rows")
        if not np.all(np.isfinite(off)):
            raise CalibrationError("offsets must be finite")
        off.setflags(write=False)
        object.__setattr__(self, "offsets", off)
        if not self.unit_scale > 0.0:
            raise CalibrationError("unit_scale must be positive")
        if np.linalg.matrix_rank(mat, tol=PINV_RCOND * max(mat.shape)
                                 * np.abs(mat).max()) < mat.shape[0]:
            raise CalibrationError("coupling matrix must have full row rank")

    @property
    def n_rows(self) -> int:
        return self.l_matrix.shape[0]

    @property
    def n_lines(self) -> int:
        return self.l_matrix.shape[1]

    def flux_of(self, currents: Sequence[float]) -> np.ndarray:
        """Loop fluxes [flux quanta] produced by line currents [mA]."""
        cur = np.asarray(currents, dtype=float)
        if cur.shape != (self.n_lines,):
            raise CalibrationError(
                f"expected {self.n_lines} currents, got shape {cur.shape}")
        return self.unit_scale * (self.l_matrix @ cur) + self.offsets


@dataclass(frozen=True, eq=False)
class ChargeCapModel:
    """Linear map from charge-line voltages to island offset charges.

    ``charge[i] = unit_scale * sum_j c_matrix[i, j] * voltage[j] + offsets[i]``
    with ``c_matrix`` in aF, voltages in mV and charges in Cooper pairs.
    Capacitances are non-negative.
    """

    c_matrix: np.ndarray
    offsets: np.ndarray | None = None
    unit_scale: float = AF_MV_TO_2E
    fit_residual: float | None = field(default=None, compare=False)

    def __post_init__(self):
        mat = _frozen_matrix(self.c_matrix)
        if mat.min() < 0.0:
            raise CalibrationError("capacitances must be non-negative")
        object.__setattr__(self, "c_matrix", mat)
        off = np.zeros(mat.shape[0]) if self.offsets is None \
            else np.array(self.offsets, dtype=float)
        if off.shape != (mat.shape[0],) or not np.all(np.isfinite(off)):
            raise CalibrationError("offsets must be finite, one per island")
        off.setflags(write=False)
        object.__setattr__(self, "offsets", off)
        if not self.unit_scale > 0.0:
            raise CalibrationError("unit_scale must be positive")

    @property
    def n_rows(self) -> int:
        return self.c_matrix.shape[0]

    @property
    def n_lines(self) -> int:
        return self.c_matrix.shape[1]

    def charge_of(self, voltages: Sequence[float]) -> np.ndarray:
        """Island offset charges [2e] produced by line voltages [mV]."""
        volt = np.asarray(voltages, dtype=float)
        if volt.shape != (self.n_lines,):
            raise CalibrationError(
                f"expected {self.n_lines} voltages, got shape {volt.shape}")
        return self.unit_scale * (self.c_matrix @ volt) + self.offsets


def device_mutual_model(kind: str = "device") -> MutualModel:
    """Reference mutual-inductance model (``device`` measured, ``layout`` simulated)."""
    table = {"device": DEVICE_INDUCTANCE_PH, "layout": LAYOUT_INDUCTANCE_PH}
    if kind not in table:
        raise CalibrationError(f"unknown model kind {kind!r}")
    return MutualModel(l_matrix=table[kind])


def device_capacitance_model(kind: str = "device") -> ChargeCapModel:
    """Reference charge-line capacitance model (``device`` or ``layout``)."""
    table = {"device": DEVICE_CAPACITANCE_AF, "layout": LAYOUT_CAPACITANCE_AF}
    if kind not in table:
        raise CalibrationError(f"unknown model kind {kind!r}")
    return ChargeCapModel(c_matrix=table[kind])


# ---------------------------------------------------------------------------
# fitting

def _fit_rows(features: _FeatureSet, unit_scale: float, level: float,
              with_offsets: bool) -> tuple[np.ndarray, np.ndarray, float]:
    """Per-row least squares on the linearized feature equations.

    Each row of the coupling matrix decouples. Unknowns are the row's
    matrix entries plus (optionally) its offset:

    - slope feature:      M[r, x] + slope * M[r, y]              = 0
    - period feature:     unit_scale * advance * period * M[r, y] = 1
    - intercept feature:  unit_scale * intercept * M[r, y] + off  = level
    """
    n_cols = features.n_lines
    n_unknown = n_cols + (1 if with_offsets else 0)
    matrix = np.zeros((features.n_rows, n_cols))
    offsets = np.zeros(features.n_rows)
    sq_sum = 0.0
    n_eq = 0
    for row in range(features.n_rows):
        obs = features.for_row(row)
        rows: list[np.ndarray] = []
        rhs: list[float] = []
        for f in obs:
            a = np.zeros(n_unknown)
            a[f.x_line] = 1.0
            a[f.y_line] = f.slope
            rows.append(a)
            rhs.append(0.0)
            a = np.zeros(n_unknown)
            a[f.y_line] = unit_scale * f.advance * f.period
            rows.append(a)
            rhs.append(1.0)
            if with_offsets and f.intercept is not None:
                a = np.zeros(n_unknown)
                a[f.y_line] = unit_scale * f.intercept
                a[-1] = 1.0
                rows.append(a)
                rhs.append(level)
        if not rows:
            raise CalibrationError(f"no features observe row {row}")
        design = np.vstack(rows)
        target = np.asarray(rhs)
        if np.linalg.matrix_rank(design, tol=PINV_RCOND * max(design.shape)
                                 * max(np.abs(design).max(), 1.0)) < n_unknown:
            raise CalibrationError(
                f"features for row {row} are degenerate: they do not pin "
                "down every bias line" + (" and offset" if with_offsets else ""))
        sol, *_ = np.linalg.lstsq(design, target, rcond=PINV_RCOND)
        matrix[row] = sol[:n_cols]
        if with_offsets:
            offsets[row] = sol[-1]
        res = design @ sol - target
        sq_sum += float(res @ res)
        n_eq += len(rhs)
    return matrix, offsets, float(np.sqrt(sq_sum / n_eq))


def fit_mutual_matrix(lines: FrustrationLineSet,
                      unit_scale: float = PH_MA_TO_PHI0) -> MutualModel:
    """Fit the current-to-flux matrix and offsets from half-flux features.

    Least squares over the linearized slope/period/intercept relations; the
    root-mean-square equation residual is reported on ``fit_residual``.
    All features are weighted uniformly.
    """
    if not isinstance(lines, _FeatureSet):
        raise CalibrationError("expected a FrustrationLineSet")
    matrix, offsets, residual = _fit_rows(
        lines, unit_scale, level=0.5, with_offsets=True)
    # represent offsets inside (-1/2, 1/2]: a whole flux quantum is gauge
    offsets = offsets - np.round(offsets)
    return MutualModel(l_matrix=matrix, offsets=offsets,
                       unit_scale=unit_scale, fit_residual=residual)


def fit_capacitance_matrix(modulation: ChargeModulationSet,
                           unit_scale: float = AF_MV_TO_2E,
                           ) -> ChargeCapModel:
    """Fit island/charge-line capacitances from modulation stripe features.

    Uses the slope and period relations only (stripe positions drift with
    uncontrolled offset charge, so intercepts carry no capacitance
    information).  Small negative entries within solver noise are clamped
    to zero; significant negative entries raise, since a passive
    capacitance cannot be negative.
    """
    if not isinstance(modulation, _FeatureSet):
        raise CalibrationError("expected a ChargeModulationSet")
    matrix, _, residual = _fit_rows(
        modulation, unit_scale, level=0.0, with_offsets=False)
    floor = -1.0e-9 * max(np.abs(matrix).max(), 1.0)
    if matrix.min() < floor:
        raise CalibrationError(
            f"fitted capacitance {matrix.min():.3g} aF is negative beyond "
            "solver tolerance; check feature orientations")
    return ChargeCapModel(c_matrix=np.clip(matrix, 0.0, None),
                          unit_scale=unit_scale, fit_residual=residual)


# ---------------------------------------------------------------------------
# model inversion and synthesis


def bias_for_flux(model: MutualModel, target: Sequence[float]) -> np.ndarray:
    """Minimum-norm line currents [mA] reaching the target fluxes [flux quanta].

    Solves ``unit_scale * L @ I + offsets = target`` through the SVD
    pseudo-inverse; with more lines than loops the returned current vector
    is the smallest of the solution family.
    """
    tgt = np.asarray(target, dtype=float)
    if tgt.shape != (model.n_rows,):
        raise CalibrationError(
            f"expected {model.n_rows} target fluxes, got shape {tgt.shape}")
    design = model.unit_scale * model.l_matrix
    currents = np.linalg.pinv(design, rcond=PINV_RCOND) @ (tgt - model.offsets)
    reached = design @ currents + model.offsets
    scale = max(np.abs(tgt).max(), 1.0)
    if np.abs(reached - tgt).max() > 1.0e-9 * scale:
        raise CalibrationError(
            "target flux vector is unreachable: coupling matrix is rank "
            f"deficient (worst miss {np.abs(reached - tgt).max():.3g})")
    return currents


def line_features(model: MutualModel | ChargeCapModel,
                  pairs: Iterable[tuple[int, int]] | None = None,
                  with_intercepts: bool = True,
                  level: float = 0.5) -> tuple[LineFeature, ...]:
    """Exact feature tuples a noise-free pair scan of ``model`` would show.

    For every requested ordered line pair ``(x, y)`` and every model row
    coupled to ``y``, emits the feature with the slope, period, orientation
    and (optionally) zero-index intercept implied by the matrix.  This is
    the synthetic-data generator used to exercise the fitters.
    """
    if isinstance(model, MutualModel):
        matrix, offsets = model.l_matrix, model.offsets
    else:
        matrix, offsets = model.c_matrix, model.offsets
    scale = model.unit_scale
    if pairs is None:
        n = matrix.shape[1]
        pairs = [(a, b) for a in range(n) for b in range(n) if a != b]
    feats: list[LineFeature] = []
    tiny = 1.0e-12 * max(np.abs(matrix).max(), 1.0)
    for x_line, y_line in pairs:
        for row in range(matrix.shape[0]):
            m_y = matrix[row, y_line]
            if abs(m_y) <= tiny:
                continue  # this pair never sweeps the row observable
            kwargs = {}
            if with_intercepts and isinstance(model, MutualModel):
                kwargs["intercept"] = (level - offsets[row]) / (scale * m_y)
            feats.append(LineFeature(
                row=row, x_line=x_line, y_line=y_line,
                slope=-matrix[row, x_line] / m_y,
                period=1.0 / (scale * abs(m_y)),
                advance=1 if m_y > 0 else -1,
                **kwargs,
            ))
    if not feats:
        raise CalibrationError("model produces no observable features")
    return tuple(feats)


def synth_frustration_map(model: MutualModel, x_line: int, y_line: int,
                          x_grid: Sequence[float], y_grid: Sequence[float],
                          width: float = 0.02) -> np.ndarray:
    """Boolean half-flux feature map over a two-line current grid.

    Returns shape ``(n_rows, len(y_grid), len(x_grid))``; entry ``[p, iy,
    ix]`` is True where loop ``p`` sits within ``width`` flux quanta of
    half-integer flux, all other lines grounded — the synthetic analogue
    of a two-line transmission scan.
    """
    if not 0 <= x_line < model.n_lines or not 0 <= y_line < model.n_lines:
        raise CalibrationError("scan line index out of range")
    if x_line == y_line:
        raise CalibrationError("scan needs two distinct bias lines")
    if not 0.0 < width < 0.5:
        raise CalibrationError("width must lie in (0, 0.5) flux quanta")
    xg = np.asarray(x_grid, dtype=float)
    yg = np.asarray(y_grid, dtype=float)
    if xg.ndim != 1 or yg.ndim != 1 or not (np.isfinite(xg).all()
                                            and np.isfinite(yg).all()):
        raise CalibrationError("grids must be finite 1-D arrays")
    # flux[p, iy, ix] on the grid plane
    flux = (model.offsets[:, None, None]
            + model.unit_scale * (
                model.l_matrix[:, x_line, None, None] * xg[None, None, :]
                + model.l_matrix[:, y_line, None, None] * yg[None, :, None]))
    distance = np.abs(flux - 0.5 - np.round(flux - 0.5))
    return distance < width


# ---------------------------------------------------------------------------
# structured-text input/output


def write_features(features: Iterable[LineFeature], stream: IO[str],
                   n_rows: int | None = None,
                   n_lines: int | None = None) -> None:
    """Serialize features as JSON (one object with a ``features`` list)."""
    payload = {
        "features": [
            {
                "row": f.row, "x_line": f.x_line, "y_line": f.y_line,
                "slope": f.slope, "period": f.period, "advance": f.advance,
                "intercept": f.intercept,
            }
            for f in features
        ]
    }
    if n_rows is not None:
        payload["n_rows"] = n_rows
    if n_lines is not None:
        payload["n_lines"] = n_lines
    json.dump(payload, stream, indent=2, sort_keys=True)
    stream.write("\n")


def read_features(stream: IO[str]) -> tuple[tuple[LineFeature, ...],
                                            int | None, int | None]:
    """Inverse of :func:`write_features`; returns (features, n_rows, n_lines)."""
    try:
        payload = json.load(stream)
        feats = tuple(
            LineFeature(
                row=int(f["row"]), x_line=int(f["x_line"]),
                y_line=int(f["y_line"]), slope=float(f["slope"]),
                period=float(f["period"]), advance=int(f.get("advance", 1)),
                intercept=None if f.get("intercept") is None
                else float(f["intercept"]),
            )
            for f in payload["features"]
        )
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise CalibrationError(f"malformed feature file: {exc}") from exc
    n_rows = payload.get("n_rows")
    n_lines = payload.get("n_lines")
    return feats, (None if n_rows is None else int(n_rows)), \
        (None if n_lines is None else int(n_lines))


def write_matrix_csv(matrix: np.ndarray, row_names: Sequence[str],
                     col_names: Sequence[str], stream: IO[str],
                     header: dict | None = None) -> None:
    """Write a labeled matrix as CSV with ``# key: value`` header lines."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.shape != (len(row_names), len(col_names)):
        raise CalibrationError("matrix shape does not match the labels")
    for key in sorted(header or {}):
        stream.write(f"# {key}: {(header or {})[key]}\n")
    stream.write("row," + ",".join(col_names) + "\n")
    for name, row in zip(row_names, matrix):
        stream.write(name + "," + ",".join(f"{v:.12g}" for v in row) + "\n")


def read_matrix_csv(stream: IO[str]) -> tuple[np.ndarray, list[str],
                                              list[str], dict]:
    """Inverse of :func:`write_matrix_csv`."""
    header: dict = {}
    col_names: list[str] | None = None
    row_names: list[str] = []
    rows: list[list[float]] = []
    for raw in stream:
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition(":")
            header[key.strip()] = value.strip()
            continue
        cells = line.split(",")
        if col_names is None:
            col_names = [c.strip() for c in cells[1:]]
            continue
        row_names.append(cells[0].strip())
        try:
            rows.append([float(c) for c in cells[1:]])
        except ValueError as exc:
            raise CalibrationError(f"malformed matrix row {line!r}") from exc
    if col_names is None or not rows:
        raise CalibrationError("matrix file has no data rows")
    matrix = np.asarray(rows)
    if matrix.shape[1] != len(col_names):
        raise CalibrationError("matrix rows do not match the column labels")
    return matrix, row_names, col_names, header


def map_to_csv(mask: np.ndarray, x_grid: Sequence[float],
               y_grid: Sequence[float], stream: IO[str]) -> None:
    """Write a synthetic feature map as CSV, one grid point per line.

    Columns: the two drive values, then one 0/1 flag per model row.
    """
    mask = np.asarray(mask, dtype=bool)
    xg = np.asarray(x_grid, dtype=float)
    yg = np.asarray(y_grid, dtype=float)
    if mask.ndim != 3 or mask.shape[1] != yg.size or mask.shape[2] != xg.size:
        raise CalibrationError(
            f"mask shape {mask.shape} does not match the grids")
    stream.write("x,y," + ",".join(f"row_{p}" for p in range(mask.shape[0]))
                 + "\n")
    for iy, y in enumerate(yg):
        for ix, x in enumerate(xg):
            flags = ",".join(str(int(mask[p, iy, ix]))
                             for p in range(mask.shape[0]))
            stream.write(f"{x:.12g},{y:.12g},{flags}\n")
