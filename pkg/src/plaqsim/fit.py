"""Parameter fitting against measured transitions, with simplex search.

- :class:`TransitionDataset` holds (bias, level pair, frequency, weight)
  records; weights follow a tag policy (sharp anticrossing features and
  charge-modulation extrema count much more than broad features).
- :func:`cost` evaluates the weighted squared frequency mismatch of a
  :class:`CircuitTransitionModel`, which rebuilds a circuit from named
  parameter overrides and diagonalizes it at each distinct bias point.
- :func:`nelder_mead` is a bound-clipped reflection/expansion/contraction/
  shrink simplex minimizer with an audit trace and optional multi-start.
- :func:`converge_truncation` grows per-coordinate basis sizes until the
  tracked transitions are stable.
- :func:`uncertainty_scan` reports the one-at-a-time parameter range that
  keeps every selected transition within a relative band of the data.

Level pairs in records index energy-ordered eigenstates at that record's
bias point.  Datasets generated from tracked scans should convert tracked
band labels to energy order per point before recording.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import IO, Callable, Iterable, Mapping, Sequence

import numpy as np

from . import quantize as qz
from .circuit import (
    BiasPoint,
    CircuitSpec,
    ValidatedCircuit,
    bias_to_dict,
    validate_circuit,
)

__all__ = [
    "FitError",
    "TAG_WEIGHTS",
    "TransitionRecord",
    "TransitionDataset",
    "FitConfig",
    "FitResult",
    "CircuitTransitionModel",
    "PLAQUETTE_PARAMS",
    "CIRCUIT_PARAMS",
    "cost",
    "nelder_mead",
    "fit_circuit",
    "converge_truncation",
    "uncertainty_scan",
    "write_dataset_csv",
    "read_dataset_csv",
    "write_trace_csv",
]


class FitError(ValueError):
    pass


# weight multipliers keyed by record tag: sharp avoided-crossing features
# and charge-modulation extrema pin the fit much harder than broad lines
TAG_WEIGHTS: dict[str, float] = {
    "": 1.0,
    "plasmon": 1.0,
    "fluxon": 1.0,
    "anticrossing": 20.0,
    "charge_extremum": 50.0,
}

# parameter-name grammar: plaquette fields apply to all plaquettes, or to
# one with a ".<index>" suffix; c_isl_<k> addresses one island capacitor
PLAQUETTE_PARAMS = ("e_j", "e_c", "e_l", "e_cl", "alpha", "c_int")
CIRCUIT_PARAMS = ("c_sh", "l_extra", "c_extra", "l_factor")


@dataclass(frozen=True)
class TransitionRecord:
    """One measured transition at one bias point.

    ``levels=(i, j)`` are energy-ordered eigenstate indices at this bias;
    ``weight=None`` takes the multiplier for ``tag`` from
    :data:`TAG_WEIGHTS`.
    """

    bias: BiasPoint
    levels: tuple[int, int]
    frequency: float
    weight: float | None = None
    tag: str = ""

    def __post_init__(self):
        i, j = self.levels
        if not (0 <= i < j):
            raise FitError(f"level pair must satisfy 0 <= i < j, got {self.levels}")
        object.__setattr__(self, "levels", (int(i), int(j)))
        if not (np.isfinite(self.frequency) and self.frequency > 0.0):
            raise FitError(f"frequency must be positive, got {self.frequency!r}")
        if self.weight is None:
            if self.tag not in TAG_WEIGHTS:
                raise FitError(f"unknown weight tag {self.tag!r}")
            object.__setattr__(self, "weight", TAG_WEIGHTS[self.tag])
        if not (np.isfinite(self.weight) and self.weight > 0.0):
            raise FitError(f"weight must be positive, got {self.weight!r}")


@dataclass(frozen=True)
class TransitionDataset:
    records: tuple[TransitionRecord, ...]

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if not self.records:
            raise FitError("dataset has no records")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def max_level(self) -> int:
        return max(r.levels[1] for r in self.records)

    def frequencies(self) -> np.ndarray:
        return np.array([r.frequency for r in self.records])

    def weights(self) -> np.ndarray:
        return np.array([r.weight for r in self.records])

    def reweighted(self, factor: float) -> "TransitionDataset":
        """Same records with every weight multiplied by ``factor``."""
        if not factor > 0.0:
            raise FitError("weight factor must be positive")
        return TransitionDataset(tuple(
            replace(r, weight=r.weight * factor) for r in self.records))


# ---------------------------------------------------------------------------
# circuit-backed transition model


def _apply_named_params(base: CircuitSpec, names: Sequence[str],
                        values: Sequence[float]) -> CircuitSpec:
    """Rebuild a parameter set with named overrides (see module grammar)."""
    plaquettes = [dict(
        e_j=p.e_j, e_c=p.e_c, e_l=p.e_l, e_cl=p.e_cl,
        alpha=p.alpha, c_int=p.c_int,
    ) for p in base.plaquettes]
    scalars = dict(c_sh=base.c_sh, l_extra=base.l_extra,
                   c_extra=base.c_extra, l_factor=base.l_factor)
    islands = list(base.c_isl)
    for name, value in zip(names, values):
        value = float(value)
        field_name, _, suffix = name.partition(".")
        if field_name in PLAQUETTE_PARAMS:
            targets = range(len(plaquettes)) if not suffix else (int(suffix),)
            for t in targets:
                if not 0 <= t < len(plaquettes):
                    raise FitError(f"parameter {name!r} indexes a missing plaquette")
                plaquettes[t][field_name] = value
        elif name in CIRCUIT_PARAMS:
            scalars[name] = value
        elif name.startswith("c_isl_"):
            k = int(name[len("c_isl_"):])
            if not 0 <= k < len(islands):
                raise FitError(f"parameter {name!r} indexes a missing island")
            islands[k] = value
        else:
            raise FitError(f"unknown parameter name {name!r}")
    plq_type = type(base.plaquettes[0])
    return replace(base,
                   plaquettes=tuple(plq_type(**kw) for kw in plaquettes),
                   c_isl=tuple(islands), **scalars)


@dataclass(eq=False)
class CircuitTransitionModel:
    """Predicts dataset transitions from named circuit-parameter values.

    ``shared=True`` (the default) applies plaquette parameters to every
    plaquette at once, halving the search space for symmetric devices;
    per-plaquette overrides use the ``".<index>"`` name suffix and require
    ``shared=False``.

    ``structureless=True`` collapses each plaquette to its multi-harmonic
    branch before solving (much cheaper for multi-plaquette circuits);
    ``renorm`` fixes the collapsed-branch mass factor, or is calibrated per
    circuit when left ``None``.
    """

    base: CircuitSpec
    param_names: tuple[str, ...]
    truncation: qz.Truncation
    total_charge: int | None = 0
    n_levels: int | None = None
    shared: bool = True
    structureless: bool = False
    renorm: float | None = None

    def __post_init__(self):
        self.param_names = tuple(self.param_names)
        if not self.param_names:
            raise FitError("need at least one free parameter")
        seen = set()
        for name in self.param_names:
            if name in seen:
                raise FitError(f"duplicate parameter {name!r}")
            seen.add(name)
            if "." in name and self.shared:
                raise FitError(
                    f"per-plaquette parameter {name!r} requires shared=False")
        # fail fast on unknown names / bad indices
        self.circuit_for(self.baseline_values())

    def baseline_values(self) -> np.ndarray:
        """Parameter values of the base circuit, in ``param_names`` order."""
        out = []
        for name in self.param_names:
            field_name, _, suffix = name.partition(".")
            if field_name in PLAQUETTE_PARAMS:
                out.append(getattr(self.base.plaquettes[int(suffix or 0)],
                                   field_name))
            elif name in CIRCUIT_PARAMS:
                out.append(getattr(self.base, name))
            elif name.startswith("c_isl_"):
                out.append(self.base.c_isl[int(name[len("c_isl_"):])])
            else:
                raise FitError(f"unknown parameter name {name!r}")
        return np.array(out, dtype=float)

    def circuit_for(self, values: Sequence[float]) -> ValidatedCircuit:
        values = np.asarray(values, dtype=float)
        if values.shape != (len(self.param_names),):
            raise FitError(
                f"expected {len(self.param_names)} values, got {values.shape}")
        circuit = validate_circuit(
            _apply_named_params(self.base, self.param_names, values))
        if self.structureless:
            from .plaquette import build_structureless
            circuit = build_structureless(circuit, renorm=self.renorm)
        return circuit

    def predict(self, values: Sequence[float],
                dataset: TransitionDataset) -> np.ndarray:
        """Model frequency for every dataset record, in record order."""
        circuit = self.circuit_for(values)
        n_levels = self.n_levels or (dataset.max_level + 1)
        if dataset.max_level >= n_levels:
            raise FitError(
                f"dataset references level {dataset.max_level} but the model "
                f"solves only {n_levels} levels")
        by_bias: dict[tuple, list[int]] = {}
        for idx, rec in enumerate(dataset.records):
            by_bias.setdefault(self._bias_key(rec.bias), []).append(idx)
        out = np.empty(len(dataset.records))
        for key, indices in by_bias.items():
            bias = dataset.records[indices[0]].bias
            res = qz.spectrum(circuit, bias, self.truncation, n_levels,
                              total_charge=self.total_charge)
            energies = res.eigenvalues
            for idx in indices:
                i, j = dataset.records[idx].levels
                out[idx] = energies[j] - energies[i]
        return out

    @staticmethod
    def _bias_key(bias: BiasPoint) -> tuple:
        return (bias.flux, bias.charge_isl, bias.charge_sh)


def cost(params: Sequence[float], dataset: TransitionDataset,
         model: CircuitTransitionModel) -> float:
    """Weighted squared mismatch ``sum_n W_n * (f_model - f_data)^2`` [GHz^2]."""
    delta = model.predict(params, dataset) - dataset.frequencies()
    return float(np.sum(dataset.weights() * delta ** 2))


# ---------------------------------------------------------------------------
# simplex minimizer


@dataclass(frozen=True)
class FitConfig:
    """Free parameters, bounds, and simplex controls.

    ``simplex_scale`` sets each initial vertex displacement relative to the
    parameter magnitude (or to the bound span for zero-valued parameters)
    and must lie in (0, 0.5].
    """

    names: tuple[str, ...]
    initial: tuple[float, ...]
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    simplex_scale: float | tuple[float, ...] = 0.1
    max_iter: int = 2000
    cost_tol: float = 1.0e-6
    multi_start: int = 1
    seed: int | None = None

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        n = len(names)
        if n == 0:
            raise FitError("config has no parameters")
        for attr in ("initial", "lower", "upper"):
            vec = tuple(float(v) for v in getattr(self, attr))
            if len(vec) != n:
                raise FitError(f"{attr} must have {n} entries")
            if not all(math.isfinite(v) for v in vec):
                raise FitError(f"{attr} entries must be finite")
            object.__setattr__(self, attr, vec)
        for lo, x0, hi, name in zip(self.lower, self.initial, self.upper, names):
            if not lo <= x0 <= hi:
                raise FitError(
                    f"initial {name}={x0} outside bounds [{lo}, {hi}]")
            if not lo < hi:
                raise FitError(f"empty bound interval for {name}")
        scale = self.simplex_scale
        scale = (float(scale),) * n if np.isscalar(scale) \
            else tuple(float(s) for s in scale)
        if len(scale) != n or not all(0.0 < s <= 0.5 for s in scale):
            raise FitError("simplex scale entries must lie in (0, 0.5]")
        object.__setattr__(self, "simplex_scale", scale)
        if self.max_iter < 1:
            raise FitError("max_iter must be >= 1")
        if not self.cost_tol > 0.0:
            raise FitError("cost_tol must be positive")
        if self.multi_start < 1:
            raise FitError("multi_start must be >= 1")


@dataclass(frozen=True, eq=False)
class FitResult:
    params: np.ndarray
    cost: float
    trace: np.ndarray  # rows: iteration, best cost, best params...
    converged: bool
    n_iterations: int
    n_evaluations: int


def _initial_simplex(config: FitConfig, x0: np.ndarray,
                     lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    n = x0.size
    simplex = np.tile(x0, (n + 1, 1))
    for i in range(n):
        step = config.simplex_scale[i] * (
            abs(x0[i]) if x0[i] != 0.0 else (upper[i] - lower[i]))
        moved = min(x0[i] + step, upper[i])
        if moved == x0[i]:  # pinned at the upper bound: step down instead
            moved = max(x0[i] - step, lower[i])
        simplex[i + 1, i] = moved
    return simplex


def nelder_mead(costfn: Callable[[np.ndarray], float],
                config: FitConfig) -> FitResult:
    """Bound-clipped simplex minimization of ``costfn``.

    Standard moves with reflection 1, expansion 2, contraction 0.5,
    shrink 0.5; every candidate vertex is clipped into the bounds.  Stops
    when the simplex cost spread falls below ``cost_tol`` relative to the
    best cost (plus a tiny absolute floor), or flags ``converged=False``
    after ``max_iter`` iterations.  ``multi_start > 1`` adds seeded uniform
    restarts inside the bounds and keeps the best run's result and trace.
    """
    lower = np.array(config.lower)
    upper = np.array(config.upper)
    rng = np.random.default_rng(config.seed)
    starts = [np.array(config.initial)]
    for _ in range(config.multi_start - 1):
        starts.append(lower + (upper - lower) * rng.random(lower.size))
    best: FitResult | None = None
    for x0 in starts:
        result = _nelder_mead_single(costfn, config, x0, lower, upper)
        if best is None or result.cost < best.cost:
            best = result
    return best


def _nelder_mead_single(costfn, config: FitConfig, x0, lower, upper) -> FitResult:
    n_eval = 0

    def evaluate(x: np.ndarray) -> float:
        nonlocal n_eval
        n_eval += 1
        value = float(costfn(x))
        if math.isnan(value):
            raise FitError(f"cost is NaN at {x.tolist()}")
        return value

    def clip(x: np.ndarray) -> np.ndarray:
        return np.clip(x, lower, upper)

    simplex = _initial_simplex(config, x0, lower, upper)
    costs = np.array([evaluate(v) for v in simplex])
    if not np.all(np.isfinite(costs)):
        raise FitError("cost is not finite on the initial simplex")
    n = x0.size
    trace_rows = []
    converged = False
    iteration = 0
    for iteration in range(1, config.max_iter + 1):
        order = np.argsort(costs, kind="stable")
        simplex, costs = simplex[order], costs[order]
        trace_rows.append((iteration - 1, costs[0], *simplex[0]))
        spread = costs[-1] - costs[0]
        if spread <= config.cost_tol * max(abs(costs[0]), 1.0e-300) + 1.0e-15:
            converged = True
            break
        centroid = simplex[:-1].mean(axis=0)
        reflected = clip(centroid + (centroid - simplex[-1]))
        f_reflected = evaluate(reflected)
        if f_reflected < costs[0]:
            expanded = clip(centroid + 2.0 * (centroid - simplex[-1]))
            f_expanded = evaluate(expanded)
            if f_expanded < f_reflected:
                simplex[-1], costs[-1] = expanded, f_expanded
            else:
                simplex[-1], costs[-1] = reflected, f_reflected
        elif f_reflected < costs[-2]:
            simplex[-1], costs[-1] = reflected, f_reflected
        else:
            if f_reflected < costs[-1]:  # outside contraction
                contracted = clip(centroid + 0.5 * (reflected - centroid))
            else:  # inside contraction
                contracted = clip(centroid + 0.5 * (simplex[-1] - centroid))
            f_contracted = evaluate(contracted)
            if f_contracted < min(f_reflected, costs[-1]):
                simplex[-1], costs[-1] = contracted, f_contracted
            else:  # shrink toward the best vertex
                for i in range(1, n + 1):
                    simplex[i] = clip(simplex[0] + 0.5 * (simplex[i] - simplex[0]))
                    costs[i] = evaluate(simplex[i])
    order = np.argsort(costs, kind="stable")
    simplex, costs = simplex[order], costs[order]
    trace_rows.append((iteration, costs[0], *simplex[0]))
    return FitResult(
        params=simplex[0].copy(),
        cost=float(costs[0]),
        trace=np.array(trace_rows),
        converged=converged,
        n_iterations=iteration,
        n_evaluations=n_eval,
    )


def fit_circuit(dataset: TransitionDataset, model: CircuitTransitionModel,
                config: FitConfig) -> FitResult:
    """Minimize :func:`cost` over the model parameters under ``config``."""
    if tuple(config.names) != tuple(model.param_names):
        raise FitError("config parameter names do not match the model")
    return nelder_mead(lambda x: cost(x, dataset, model), config)


# ---------------------------------------------------------------------------
# truncation convergence


def converge_truncation(circuit, bias, target_transitions: Sequence[tuple[int, int]],
                        threshold: float = 0.05,
                        total_charge: int | None = 0,
                        max_states: int = 41,
                        dim_cap: int = qz.DIMENSION_CAP,
                        trace: list | None = None) -> qz.Truncation:
    """Grow per-coordinate basis sizes until tracked transitions stabilize.

    Starts from three states per cyclic coordinate and one per oscillator,
    then sweeps coordinates in order, growing each window until the largest
    relative change across ``target_transitions`` drops below ``threshold``;
    full passes repeat until no coordinate grows.  Pass a list as ``trace``
    to collect ``(states, transitions)`` tuples for reporting.

    Raises when a window would exceed ``max_states`` states or the basis
    would exceed ``dim_cap`` before converging.
    """
    if not isinstance(circuit, qz.CircuitGraph):
        circuit = validate_circuit(circuit)
    if not target_transitions:
        raise FitError("need at least one target transition")
    pairs = [(int(i), int(j)) for i, j in target_transitions]
    for i, j in pairs:
        if not 0 <= i < j:
            raise FitError(f"bad transition pair ({i}, {j})")
    if not 0.0 < threshold < 1.0:
        raise FitError("threshold must lie in (0, 1)")
    n_levels = max(j for _, j in pairs) + 1
    coords = qz.classify_coordinates(circuit)
    trunc = qz.Truncation.starting_point(coords)
    # grow all windows together until the (sector-restricted) basis can
    # hold the requested levels; per-coordinate growth cannot fix a joint
    # charge-sector shortfall
    for _ in range(64):
        if qz.build_layout(coords, trunc,
                           total_charge=total_charge).dimension > n_levels:
            break
        for axis, kind in enumerate(coords.kinds):
            trunc = qz.bump_states(trunc, axis, kind)
            if trunc.states[axis] > max_states:
                raise FitError(
                    f"coordinate {axis} exceeded {max_states} states before "
                    "the basis could hold the target levels")
    else:
        raise FitError("basis never grew large enough for the target levels")

    def transitions(t: qz.Truncation) -> np.ndarray:
        # the (sector-restricted) basis may be too small to hold the levels
        layout = qz.build_layout(coords, t, total_charge=total_charge)
        if layout.dimension < n_levels:
            return np.full(len(pairs), np.inf)
        res = qz.spectrum(circuit, bias, t, n_levels, dim_cap=dim_cap,
                          total_charge=total_charge)
        e = res.eigenvalues
        return np.array([e[j] - e[i] for i, j in pairs])

    cyclic_axes = tuple(a for a, k in enumerate(coords.kinds) if k == "cyclic")
    moves: list[tuple[int, ...]] = [(a,) for a in range(len(coords.kinds))]
    if total_charge is not None and len(cyclic_axes) >= 2:
        # in a fixed-total-charge sector, widening one charge window can
        # leave the sector basis unchanged (the partner window still caps
        # it), hiding under-truncation; probe all windows together as well
        moves.append(cyclic_axes)

    def bump_move(t: qz.Truncation, axes: tuple[int, ...]) -> qz.Truncation:
        for a in axes:
            t = qz.bump_states(t, a, coords.kinds[a])
            if t.states[a] > max_states:
                raise FitError(
                    f"coordinate {a} exceeded {max_states} states "
                    "before transitions converged")
        return t

    current = transitions(trunc)
    if trace is not None:
        trace.append((trunc.states, current.copy()))
    for _pass in range(64):
        grew = False
        for axes in moves:
            while True:
                bigger = bump_move(trunc, axes)
                proposed = transitions(bigger)
                if trace is not None:
                    trace.append((bigger.states, proposed.copy()))
                if np.all(np.isfinite(proposed)) and np.all(np.isfinite(current)):
                    scale = np.maximum(np.abs(current), 1.0e-12)
                    if (np.abs(proposed - current) / scale).max() < threshold:
                        break
                trunc, current = bigger, proposed
                grew = True
        if not grew:
            return trunc
    raise FitError("truncation sweep failed to settle in 64 passes")


# ---------------------------------------------------------------------------
# one-at-a-time parameter uncertainty


def uncertainty_scan(params: Sequence[float], dataset: TransitionDataset,
                     model: CircuitTransitionModel, which: str,
                     band: float = 0.5, n_points: int = 21,
                     tolerance: float = 0.10) -> tuple[float, float]:
    """Range of one parameter keeping every transition near the data.

    The parameter ``which`` is swept over ``value * (1 ± band)`` on a
    uniform grid with all others fixed; a grid point is acceptable when
    every dataset transition stays within relative ``tolerance`` of its
    measured value.  Returns the edges of the contiguous acceptable run
    containing the fitted value.  Raises when even the fitted value misses
    the data (the parameter cannot be assessed one-at-a-time).
    """
    params = np.asarray(params, dtype=float)
    if which not in model.param_names:
        raise FitError(f"parameter {which!r} is not free in this model")
    if not (0.0 < band and n_points >= 3):
        raise FitError("need positive band and at least 3 grid points")
    axis = model.param_names.index(which)
    center = params[axis]
    grid = np.linspace(center * (1.0 - band), center * (1.0 + band), n_points)
    # make sure the fitted value itself is on the grid
    grid = np.sort(np.append(grid, center))
    data = dataset.frequencies()

    def acceptable(value: float) -> bool:
        trial = params.copy()
        trial[axis] = value
        try:
            predicted = model.predict(trial, dataset)
        except (qz.QuantizeError, FitError, ValueError):
            return False
        return bool(np.all(np.abs(predicted - data) <= tolerance * data))

    flags = np.array([acceptable(v) for v in grid])
    center_idx = int(np.argmin(np.abs(grid - center)))
    if not flags[center_idx]:
        raise FitError(
            f"fitted value of {which!r} already misses the data by more "
            f"than {tolerance:.0%}; empty uncertainty interval")
    lo = center_idx
    while lo > 0 and flags[lo - 1]:
        lo -= 1
    hi = center_idx
    while hi < grid.size - 1 and flags[hi + 1]:
        hi += 1
    return float(grid[lo]), float(grid[hi])


# ---------------------------------------------------------------------------
# CSV schemas


def write_dataset_csv(dataset: TransitionDataset, stream: IO[str]) -> None:
    """Dataset CSV: flux/charge bias columns, level pair, frequency, weight, tag."""
    first = dataset.records[0].bias
    n_flux = len(first.flux)
    n_isl = len(first.charge_isl)
    cols = [f"flux_{i}" for i in range(n_flux)]
    cols += [f"charge_isl_{i}" for i in range(n_isl)]
    cols += ["charge_sh", "level_i", "level_j", "frequency_ghz", "weight", "tag"]
    stream.write(",".join(cols) + "\n")
    for rec in dataset.records:
        if len(rec.bias.flux) != n_flux or len(rec.bias.charge_isl) != n_isl:
            raise FitError("records mix bias-point layouts")
        cells = [f"{v:.12g}" for v in rec.bias.flux]
        cells += [f"{v:.12g}" for v in rec.bias.charge_isl]
        cells += [f"{rec.bias.charge_sh:.12g}", str(rec.levels[0]),
                  str(rec.levels[1]), f"{rec.frequency:.12g}",
                  f"{rec.weight:.12g}", rec.tag]
        stream.write(",".join(cells) + "\n")


def read_dataset_csv(stream: IO[str]) -> TransitionDataset:
    """Inverse of :func:`write_dataset_csv`."""
    header: list[str] | None = None
    records = []
    for raw in stream:
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if header is None:
            header = line.split(",")
            continue
        cells = line.split(",")
        if len(cells) != len(header):
            raise FitError(f"row has {len(cells)} cells, header {len(header)}")
        row = dict(zip(header, cells))
        try:
            flux = tuple(float(row[c]) for c in header if c.startswith("flux_"))
            isl = tuple(float(row[c]) for c in header
                        if c.startswith("charge_isl_"))
            records.append(TransitionRecord(
                bias=BiasPoint(flux=flux, charge_isl=isl,
                               charge_sh=float(row["charge_sh"])),
                levels=(int(row["level_i"]), int(row["level_j"])),
                frequency=float(row["frequency_ghz"]),
                weight=float(row["weight"]),
                tag=row.get("tag", ""),
            ))
        except (KeyError, ValueError) as exc:
            raise FitError(f"malformed dataset row {line!r}: {exc}") from exc
    if header is None or not records:
        raise FitError("dataset file has no records")
    return TransitionDataset(tuple(records))


def write_trace_csv(result: FitResult, names: Sequence[str],
                    stream: IO[str]) -> None:
    """Fit-trace CSV: iteration, best cost, then one column per parameter."""
    if result.trace.shape[1] != len(names) + 2:
        raise FitError("trace width does not match the parameter names")
    stream.write("iteration,cost," + ",".join(names) + "\n")
    for row in result.trace:
        stream.write(f"{int(row[0])},{row[1]:.12g},"
                     + ",".join(f"{v:.12g}" for v in row[2:]) + "\n")
