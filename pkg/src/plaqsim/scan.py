"""Dispersion scans along bias-space lines, with gap and slope extraction.

- A scan sweeps the lowest eigenvalues along a straight line through bias
  space (loop fluxes and island offset charges), reusing the cached
  coordinate system across points and tracking bands through crossings by
  eigenvector overlap.
- Gap extraction reports the charge-coupled (stabilizer) gap ``delta_sa``,
  the splitting of the two lowest levels ``delta_eo``, and the local slope
  and curvature of the lowest transition from 5-point central differences.
- Transitions are classified as plasmon-like, fluxon-like, or steeply
  dispersing by their peak dispersion slope relative to a reference fluxon
  slope.

Axis offsets are measured in the units of the direction vector (flux
entries in flux quanta, charges in Cooper pairs), so for a unit single-flux
direction an energy slope in GHz per axis unit equals MHz per milli flux
quantum.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import quantize as qz
from .circuit import BiasPoint, ValidatedCircuit, validate_circuit

__all__ = [
    "ScanAxis",
    "ScanResult",
    "GapReport",
    "TransitionClass",
    "ScanError",
    "single_flux_axis",
    "common_flux_axis",
    "island_charge_axis",
    "flux_dispersion",
    "charge_dispersion",
    "extract_gaps",
    "classify_transition",
]

#: Default finite-difference evaluation offset from the frustration point,
#: in axis units (10 micro flux quanta for a unit flux direction).
SLOPE_OFFSET = 1.0e-5

#: Fraction of the peak charge-coupling weight below which a level is not
#: considered a stabilizer-excitation candidate.
SA_WEIGHT_THRESHOLD = 0.25

#: Classification thresholds relative to the reference fluxon slope.
PLASMON_FRACTION = 0.25
FLUXON_BAND = (0.5, 1.5)
STEEP_FACTOR = 3.0


class ScanError(ValueError):
    """Invalid scan axis, result, or extraction request."""


# ---------------------------------------------------------------------------
# axis


@dataclass(frozen=True)
class ScanAxis:
    """Straight line in bias space: ``start + t * direction``, t in [0, span].

    :param start: bias at offset t = 0
    :param direction: bias-space step per unit offset (fluxes in flux
        quanta, charges in Cooper pairs); must be nonzero
    :param span: total swept length in axis units
    :param n_points: number of evenly spaced samples (at least 3)
    """

    start: BiasPoint
    direction: BiasPoint
    span: float
    n_points: int

    def __post_init__(self):
        if self.n_points < 3:
            raise ScanError(f"n_points must be >= 3, got {self.n_points}")
        if not (math.isfinite(self.span) and self.span > 0):
            raise ScanError(f"span must be positive, got {self.span}")
        mag = max(
            [abs(f) for f in self.direction.flux]
            + [abs(q) for q in self.direction.charge_isl]
            + [abs(self.direction.charge_sh)],
            default=0.0,
        )
        if not (math.isfinite(mag) and mag > 0):
            raise ScanError("direction must be a nonzero bias-space vector")

    @property
    def offsets(self) -> np.ndarray:
        """Sample offsets t along the line."""
        return np.linspace(0.0, self.span, self.n_points)

    def bias_at(self, t: float) -> BiasPoint:
        """Bias point at offset ``t`` along the line."""
        s, d = self.start, self.direction
        return BiasPoint(
            flux=tuple(f + t * df for f, df in zip(s.flux, d.flux)),
            charge_isl=tuple(
                q + t * dq for q, dq in zip(s.charge_isl, d.charge_isl)
            ),
            charge_sh=s.charge_sh + t * d.charge_sh,
        )

    @classmethod
    def through(
        cls,
        center: BiasPoint,
        direction: BiasPoint,
        halfwidth: float,
        n_points: int,
    ) -> "ScanAxis":
        """Symmetric axis of half-width ``halfwidth`` centered on ``center``.

        The center sits at offset t = halfwidth.
        """
        start = BiasPoint(
            flux=tuple(
                f - halfwidth * df
                for f, df in zip(center.flux, direction.flux)
            ),
            charge_isl=tuple(
                q - halfwidth * dq
                for q, dq in zip(center.charge_isl, direction.charge_isl)
            ),
            charge_sh=center.charge_sh - halfwidth * direction.charge_sh,
        )
        return cls(
            start=start,
            direction=direction,
            span=2.0 * halfwidth,
            n_points=n_points,
        )

    @property
    def is_flux_only(self) -> bool:
        d = self.direction
        return all(q == 0 for q in d.charge_isl) and d.charge_sh == 0

    @property
    def is_charge_only(self) -> bool:
        return all(f == 0 for f in self.direction.flux)


def single_flux_axis(
    circuit,
    flux_index: int,
    center: BiasPoint | None = None,
    halfwidth: float = 0.05,
    n_points: int = 21,
) -> ScanAxis:
    """Axis sweeping one loop flux through its center value.

    Other fluxes and all charges stay at the ``center`` bias (default: all
    loops at half a flux quantum, charges zero).
    """
    v = validate_circuit(circuit)
    n = v.n_plaquettes
    if not 0 <= flux_index < n:
        raise ScanError(f"flux_index {flux_index} out of range for {n} loops")
    if center is None:
        center = BiasPoint.for_circuit(v, flux=0.5)
    direction = BiasPoint.for_circuit(
        v, flux=tuple(1.0 if i == flux_index else 0.0 for i in range(n))
    )
    return ScanAxis.through(center, direction, halfwidth, n_points)


def common_flux_axis(
    circuit,
    center: BiasPoint | None = None,
    halfwidth: float = 0.05,
    n_points: int = 21,
) -> ScanAxis:
    """Axis sweeping every loop flux together through the center bias."""
    v = validate_circuit(circuit)
    if center is None:
        center = BiasPoint.for_circuit(v, flux=0.5)
    direction = BiasPoint.for_circuit(v, flux=1.0)
    return ScanAxis.through(center, direction, halfwidth, n_points)


def island_charge_axis(
    circuit,
    island: int | str,
    center: BiasPoint | None = None,
    halfwidth: float = 0.5,
    n_points: int = 21,
) -> ScanAxis:
    """Axis sweeping one island's offset charge at fixed flux.

    ``island`` is an intermediate-island index or ``"shunt"``.  The default
    window covers one Cooper pair centered on the ``center`` bias (default:
    all loops at half a flux quantum, charges zero).
    """
    v = validate_circuit(circuit)
    n = v.n_plaquettes
    if center is None:
        center = BiasPoint.for_circuit(v, flux=0.5)
    if island == "shunt":
        direction = BiasPoint.for_circuit(v, charge_sh=1.0)
    else:
        idx = int(island)
        if not 0 <= idx < n - 1:
            raise ScanError(
                f"island {idx} out of range for {n - 1} intermediate islands"
            )
        direction = BiasPoint.for_circuit(
            v,
            charge_isl=tuple(
                1.0 if i == idx else 0.0 for i in range(n - 1)
            ),
        )
    return ScanAxis.through(center, direction, halfwidth, n_points)


# ---------------------------------------------------------------------------
# result container


@dataclass(frozen=True, eq=False)
class ScanResult:
    """Eigenvalues along a bias-space line.

    :param axis: sample offsets along the line (ascending)
    :param energies: eigenvalues [GHz], shape (n_points, n_levels),
        ascending at every point; failed points hold NaN
    :param metadata: provenance (circuit hash, truncation, sector, ...)
    :param sa_level_hint: known level index of the stabilizer excitation,
        when the generator can label it exactly (synthetic scans)
    :param tracks: band-to-column index map from eigenvector-overlap
        tracking, shape (n_points, n_levels); None when unavailable
    :param sa_weight: per-level island-charge coupling to the ground state,
        shape (n_points, n_levels); None when not computed
    """

    axis: np.ndarray
    energies: np.ndarray
    metadata: dict = field(default_factory=dict)
    sa_level_hint: int | None = None
    tracks: np.ndarray | None = None
    sa_weight: np.ndarray | None = None

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=float)
        energies = np.asarray(self.energies, dtype=float)
        object.__setattr__(self, "axis", axis)
        object.__setattr__(self, "energies", energies)
        if axis.ndim != 1 or energies.ndim != 2:
            raise ScanError("axis must be 1-D and energies 2-D")
        if energies.shape[0] != axis.size:
            raise ScanError(
                f"energies has {energies.shape[0]} rows for "
                f"{axis.size} axis points"
            )
        if axis.size >= 2 and not np.all(np.diff(axis) > 0):
            raise ScanError("axis offsets must be strictly increasing")
        finite = ~np.any(np.isnan(energies), axis=1)
        if np.any(np.diff(energies[finite], axis=1) < -1e-9):
            raise ScanError("eigenvalues must be ascending at every point")

    @property
    def n_points(self) -> int:
        return self.axis.size

    @property
    def n_levels(self) -> int:
        return self.energies.shape[1]

    @property
    def failed_points(self) -> tuple[int, ...]:
        return tuple(self.metadata.get("failed_points", ()))

    def transition(self, i: int, j: int) -> np.ndarray:
        """f_ij(t) = E_j - E_i in sorted order at every point [GHz]."""
        return self.energies[:, j] - self.energies[:, i]

    def transitions(self, i: int = 0) -> np.ndarray:
        """All transitions from level ``i``, shape (n_points, n_levels)."""
        return self.energies - self.energies[:, [i]]

    def tracked_energies(self) -> np.ndarray:
        """Energies reordered so each column follows one band."""
        if self.tracks is None:
            return self.energies
        return np.take_along_axis(self.energies, self.tracks, axis=1)

    def tracked_transition(self, i: int, j: int) -> np.ndarray:
        """f_ij(t) between tracked bands i and j [GHz]."""
        e = self.tracked_energies()
        return e[:, j] - e[:, i]

    def to_csv(self, stream) -> None:
        """Write the scan as CSV with a commented metadata header.

        ``stream`` is a writable text file object.  Columns are the axis
        offset, the sorted eigenvalues, and the transitions from the ground
        level.
        """
        for key in sorted(self.metadata):
            stream.write(f"# {key}: {self.metadata[key]}\n")
        k = self.n_levels
        cols = ["t"]
        cols += [f"E_{j}" for j in range(k)]
        cols += [f"f_0{j}" for j in range(1, k)]
        stream.write(",".join(cols) + "\n")
        trans = self.transitions(0)
        for p in range(self.n_points):
            row = [format(self.axis[p], ".12g")]
            row += [format(self.energies[p, j], ".12g") for j in range(k)]
            row += [format(trans[p, j], ".12g") for j in range(1, k)]
            stream.write(",".join(row) + "\n")


# ---------------------------------------------------------------------------
# scan engine


def _island_labels(coords) -> list[str]:
    """Charge-coupling probe labels: intermediate islands, else the shunt."""
    labels = sorted(
        lab
        for lab in coords.island_map.values()
        if lab is not None and lab.startswith("island_")
    )
    if not labels:
        labels = [
            lab for lab in coords.island_map.values() if lab == "shunt"
        ]
    return labels


def _run_scan(
    circuit,
    axis: ScanAxis,
    trunc: qz.Truncation,
    n_levels: int,
    total_charge: int | None,
    want_vectors: bool,
    solver_kw: dict,
    workers: int = 1,
) -> ScanResult:
    v = validate_circuit(circuit)
    offsets = axis.offsets
    n_pts = offsets.size
    energies = np.full((n_pts, n_levels), np.nan)
    tracks = np.tile(np.arange(n_levels), (n_pts, 1))
    sa_weight = np.full((n_pts, n_levels), np.nan)
    failed: list[tuple[int, str]] = []

    coords = qz.classify_coordinates(v)
    probe_labels = _island_labels(coords)
    prev_vectors = None
    prev_perm = np.arange(n_levels)
    method = qz.pick_method(v, trunc, total_charge)
    assemble = (
        qz.assemble_factored if method == "factored"
        else qz.assemble_hamiltonian
    )

    def solve(p: int):
        bias = axis.bias_at(float(offsets[p]))
        op = assemble(v, bias, trunc, total_charge=total_charge)
        try:
            res = qz.lowest_eigenpairs(
                op, n_levels, want_vectors=want_vectors, **solver_kw
            )
        except qz.QuantizeError as exc:
            return op, None, str(exc)
        return op, res, None

    solved: list | None = None
    if workers > 1 and n_pts > 1:
        # solves are independent and release the GIL in the linear algebra;
        # band tracking below stays sequential, merged in axis order
        with ThreadPoolExecutor(max_workers=min(int(workers), n_pts)) as pool:
            solved = list(pool.map(solve, range(n_pts)))

    for p in range(n_pts):
        if solved is not None:
            op, res, err = solved[p]
            solved[p] = None  # free the operator as soon as it is consumed
        else:
            op, res, err = solve(p)
        if err is not None:
            failed.append((p, err))
            prev_vectors = None
            continue
        energies[p] = res.eigenvalues
        vecs = res.eigenvectors
        if vecs is not None:
            if probe_labels:
                ground = vecs[:, 0]
                w = np.zeros(n_levels)
                for lab in probe_labels:
                    nvec = qz.charge_number_diagonal(op, lab)
                    w += np.abs(vecs.conj().T @ (nvec * ground)) ** 2
                sa_weight[p] = np.sqrt(w)
            if prev_vectors is not None and prev_vectors.shape == vecs.shape:
                overlap = np.abs(prev_vectors.conj().T @ vecs)
                rows, cols = linear_sum_assignment(-overlap)
                perm = np.empty(n_levels, dtype=int)
                perm[rows] = cols
                tracks[p] = perm[prev_perm]
                prev_perm = tracks[p]
            prev_vectors = vecs
        else:
            prev_vectors = None

    metadata = {
        "circuit": v.circuit_hash,
        "truncation": tuple(trunc.states),
        "total_charge": total_charge,
        "n_levels": n_levels,
        "axis_span": axis.span,
        "axis_start": axis.start,
        "axis_direction": axis.direction,
    }
    if failed:
        metadata["failed_points"] = tuple(p for p, _ in failed)
        metadata["failures"] = tuple(msg for _, msg in failed)
    return ScanResult(
        axis=offsets,
        energies=energies,
        metadata=metadata,
        tracks=tracks if want_vectors else None,
        sa_weight=sa_weight if want_vectors and probe_labels else None,
    )


def flux_dispersion(
    circuit,
    axis: ScanAxis,
    trunc: qz.Truncation,
    n_levels: int = 4,
    total_charge: int | None = 0,
    want_vectors: bool = True,
    workers: int = 1,
    **solver_kw,
) -> ScanResult:
    """Eigenvalues along a flux-space line.

    The axis direction must live in flux space (zero charge components).
    Bands are tracked across points by eigenvector overlap when vectors are
    requested; solver failures at isolated points are recorded in the
    metadata and leave NaN rows rather than aborting the scan.
    """
    if not axis.is_flux_only:
        raise ScanError("flux_dispersion needs a flux-space direction")
    return _run_scan(
        circuit, axis, trunc, n_levels, total_charge, want_vectors, solver_kw,
        workers=workers,
    )


def charge_dispersion(
    circuit,
    island: int | str,
    axis: ScanAxis,
    trunc: qz.Truncation,
    n_levels: int = 4,
    total_charge: int | None = 0,
    want_vectors: bool = True,
    workers: int = 1,
    **solver_kw,
) -> ScanResult:
    """Eigenvalues versus one island's offset charge at fixed flux.

    ``island`` selects an intermediate island by index or the shunt by the
    string ``"shunt"``; the axis direction must be charge-only and move
    that island.
    """
    v = validate_circuit(circuit)
    if not axis.is_charge_only:
        raise ScanError("charge_dispersion needs a charge-space direction")
    d = axis.direction
    if island == "shunt":
        moving = d.charge_sh != 0
    else:
        idx = int(island)
        if not 0 <= idx < v.n_plaquettes - 1:
            raise ScanError(
                f"island {idx} out of range for "
                f"{v.n_plaquettes - 1} intermediate islands"
            )
        moving = idx < len(d.charge_isl) and d.charge_isl[idx] != 0
    if not moving:
        raise ScanError(f"axis direction does not move island {island!r}")
    return _run_scan(
        circuit, axis, trunc, n_levels, total_charge, want_vectors, solver_kw,
        workers=workers,
    )


# ---------------------------------------------------------------------------
# gap extraction


@dataclass(frozen=True)
class GapReport:
    """Gaps and local dispersion extracted from one scan.

    :param delta_sa: minimum of the stabilizer-excitation transition [GHz]
    :param delta_eo: minimum splitting of the two lowest levels [GHz]
    :param slope_at: (offset from frustration, slope) of the lowest
        transition by 5-point central differences; the slope is in GHz per
        axis unit (equal to MHz per milli-unit)
    :param curvature_at: (offset, curvature) likewise, in GHz per axis
        unit squared
    :param fluxon_slope: peak dispersion slope of the lowest transition,
        the reference for classification [GHz per axis unit]
    :param plasmon_gap: smallest nearly-flat transition from the ground
        level, or None when no transition is flat enough
    :param sa_level: band index used for ``delta_sa``
    """

    delta_sa: float
    delta_eo: float
    slope_at: tuple[float, float]
    curvature_at: tuple[float, float]
    fluxon_slope: float
    plasmon_gap: float | None
    sa_level: int

    def __post_init__(self):
        if self.delta_sa < 0 or self.delta_eo < 0:
            raise ScanError("gaps must be nonnegative")
        for off, val in (self.slope_at, self.curvature_at):
            if not (math.isfinite(off) and math.isfinite(val)):
                raise ScanError("slope and curvature must be finite")


def _band_gradients(scan: ScanResult) -> np.ndarray:
    """|d f_0j / dt| for each tracked band j, shape (n_points, n_levels)."""
    e = scan.tracked_energies()
    trans = e - e[:, [0]]
    return np.abs(np.gradient(trans, scan.axis, axis=0))


def _select_sa_level(scan: ScanResult, i_center: int) -> int:
    if scan.sa_level_hint is not None:
        j = int(scan.sa_level_hint)
        if not 1 <= j < scan.n_levels:
            raise ScanError(f"sa_level_hint {j} out of range")
        return j
    if scan.sa_weight is not None:
        w = scan.sa_weight[i_center, 1:]
        if np.all(np.isnan(w)):
            w = np.nanmean(scan.sa_weight[:, 1:], axis=0)
        peak = np.nanmax(w)
        if np.isfinite(peak) and peak > 0:
            for j, wj in enumerate(w, start=1):
                if wj >= SA_WEIGHT_THRESHOLD * peak:
                    return j
    # fall back: the most steeply dispersing transition from the ground level
    grads = _band_gradients(scan)
    peak_per_level = np.nanmax(grads[:, 1:], axis=0)
    return int(np.nanargmax(peak_per_level)) + 1


def extract_gaps(
    scan: ScanResult,
    frustration_point: float,
    slope_offset: float = SLOPE_OFFSET,
) -> GapReport:
    """Gap report from a scan that brackets the frustration point.

    ``delta_sa`` is the minimum of the transition into the stabilizer
    excitation, selected by (in order of preference) the generator's
    explicit level hint, the island-charge coupling weights recorded during
    the scan, or the steepest-dispersing transition.  ``delta_eo`` is the
    minimum splitting of the two lowest levels.  Slope and curvature of the
    lowest transition are evaluated on the scan grid at the sample closest
    to ``frustration_point + slope_offset``; the offset actually used is
    reported alongside each value.
    """
    t = scan.axis
    if not t[0] <= frustration_point <= t[-1]:
        raise ScanError(
            f"frustration point {frustration_point} outside scan range "
            f"[{t[0]}, {t[-1]}]"
        )
    if scan.n_levels < 2:
        raise ScanError("need at least two levels to extract gaps")
    i_center = int(np.argmin(np.abs(t - frustration_point)))

    e = scan.tracked_energies()
    f01_sorted = scan.transition(0, 1)
    delta_eo = float(max(np.nanmin(f01_sorted), 0.0))

    j_sa = _select_sa_level(scan, i_center)
    f_sa = e[:, j_sa] - e[:, 0]
    delta_sa = float(max(np.nanmin(f_sa), 0.0))

    # 5-point central differences of the lowest transition on the scan grid
    f01 = e[:, 1] - e[:, 0]
    if scan.n_points >= 5:
        target = frustration_point + slope_offset
        i_mid = int(np.clip(
            np.argmin(np.abs(t - target)), 2, scan.n_points - 3
        ))
        h = float(np.mean(np.diff(t[i_mid - 2 : i_mid + 3])))
        y = f01[i_mid - 2 : i_mid + 3]
        slope = float((y[0] - 8 * y[1] + 8 * y[3] - y[4]) / (12 * h))
        curvature = float(
            (-y[0] + 16 * y[1] - 30 * y[2] + 16 * y[3] - y[4])
            / (12 * h * h)
        )
        offset_used = float(t[i_mid] - frustration_point)
    else:
        grad = np.gradient(f01, t)
        slope = float(grad[i_center])
        curvature = float(np.gradient(grad, t)[i_center])
        offset_used = float(t[i_center] - frustration_point)
    if not (math.isfinite(slope) and math.isfinite(curvature)):
        raise ScanError("slope/curvature hit failed scan points")

    grads = _band_gradients(scan)
    fluxon_slope = float(np.nanmax(grads[:, 1]))

    plasmon_gap = None
    for j in range(1, scan.n_levels):
        if np.nanmax(grads[:, j]) < PLASMON_FRACTION * fluxon_slope:
            gap_j = float(np.nanmin(e[:, j] - e[:, 0]))
            if plasmon_gap is None or gap_j < plasmon_gap:
                plasmon_gap = gap_j

    return GapReport(
        delta_sa=delta_sa,
        delta_eo=delta_eo,
        slope_at=(offset_used, slope),
        curvature_at=(offset_used, curvature),
        fluxon_slope=fluxon_slope,
        plasmon_gap=plasmon_gap,
        sa_level=j_sa,
    )


# ---------------------------------------------------------------------------
# transition classification


class TransitionClass(NamedTuple):
    """Dispersion-based label for one transition.

    ``label`` is one of ``plasmon``, ``heavy_fluxon``, ``light_fluxon``, or
    ``mixed``; for ``mixed`` the two bracketing candidates are listed.
    ``peak_slope`` is the largest dispersion slope along the scan, in GHz
    per axis unit.
    """

    label: str
    peak_slope: float
    candidates: tuple[str, ...]


def classify_transition(
    scan: ScanResult,
    i: int,
    j: int,
    reference_slope: float | None = None,
) -> TransitionClass:
    """Classify transition i -> j by how steeply it disperses.

    ``reference_slope`` is the calibrated fluxon slope (GHz per axis unit);
    when omitted it is taken from the peak slope of the lowest tracked
    transition of this scan.  Slopes below ``PLASMON_FRACTION`` of the
    reference are plasmon-like, slopes within ``FLUXON_BAND`` of it are
    fluxon-like, and slopes above ``STEEP_FACTOR`` times it are steeply
    dispersing; anything between lands in ``mixed`` with the two bracketing
    candidates.
    """
    if not 0 <= i < scan.n_levels and 0 <= j < scan.n_levels:
        raise ScanError(f"transition ({i}, {j}) out of range")
    if i == j:
        raise ScanError("transition needs two distinct levels")
    e = scan.tracked_energies()
    f = e[:, j] - e[:, i]
    if np.all(np.isnan(f)):
        raise ScanError("transition has no valid scan points")
    peak = float(np.nanmax(np.abs(np.gradient(f, scan.axis))))
    if reference_slope is None:
        grads = _band_gradients(scan)
        reference_slope = float(np.nanmax(grads[:, 1]))
    if reference_slope <= 0:
        raise ScanError("reference slope must be positive")
    k = reference_slope
    if peak < PLASMON_FRACTION * k:
        return TransitionClass("plasmon", peak, ("plasmon",))
    if FLUXON_BAND[0] * k <= peak <= FLUXON_BAND[1] * k:
        return TransitionClass("heavy_fluxon", peak, ("heavy_fluxon",))
    if peak > STEEP_FACTOR * k:
        return TransitionClass("light_fluxon", peak, ("light_fluxon",))
    if peak < FLUXON_BAND[0] * k:
        cands = ("plasmon", "heavy_fluxon")
    else:
        cands = ("heavy_fluxon", "light_fluxon")
    return TransitionClass("mixed", peak, cands)
