"""Command-line front end: scans, calibration, fitting, and reports.

Every subcommand reads a circuit (``--preset`` or ``--circuit`` JSON file),
writes CSV artifacts into the output directory (``--out``, or the
``PLAQSIM_OUT`` environment variable, or the working directory), and prints
the paths it wrote.  Artifact headers embed the tool version and a hash of
the effective configuration, never timestamps, so reruns with the same
inputs produce byte-identical files.  Failures print a one-line JSON error
record to stderr and exit nonzero; exit status 0 means every requested
output was written.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path
from typing import IO, Sequence

import numpy as np

from . import __version__
from . import calib, fit, plaquette, quantize as qz, scan, stabilizer
from .circuit import (
    BiasPoint,
    CircuitSpec,
    bias_from_dict,
    bias_to_dict,
    circuit_from_json,
    circuit_to_dict,
    preset,
    preset_names,
    validate_circuit,
)

__all__ = ["main", "build_parser", "CliError"]


class CliError(ValueError):
    pass


# ---------------------------------------------------------------------------
# shared plumbing


def _resolve_circuit(args) -> CircuitSpec:
    if getattr(args, "preset", None) and getattr(args, "circuit", None):
        raise CliError("give either --preset or --circuit, not both")
    if getattr(args, "preset", None):
        return preset(args.preset)
    if getattr(args, "circuit", None):
        path = Path(args.circuit)
        if not path.is_file():
            raise CliError(f"circuit file not found: {path}")
        return circuit_from_json(path.read_text())
    raise CliError("a circuit is required: --preset or --circuit")


def _resolve_outdir(args) -> Path:
    out = getattr(args, "out", None) or os.environ.get("PLAQSIM_OUT") or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise CliError(f"output directory not writable: {path}")
    return path


def _config_payload(args, **extra) -> dict:
    """Deterministic dict of the effective run configuration.

    Skips knobs that cannot change the computed values (output directory,
    worker count) so the hash identifies the physics configuration.
    """
    skip = {"func", "out", "threads"}
    payload = {k: v for k, v in sorted(vars(args).items())
               if k not in skip and v is not None}
    payload.update(extra)
    return payload


def _config_hash(payload: dict) -> str:
    canon = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def _header_lines(args, **extra) -> str:
    payload = _config_payload(args, **extra)
    return (f"# command: {args.command}\n"
            f"# config_hash: {_config_hash(payload)}\n"
            f"# version: {__version__}\n")


def _write_artifact(path: Path, header: str, body: str) -> Path:
    with open(path, "w", encoding="utf-8", newline="\n") as stream:
        stream.write(header)
        stream.write(body)
    print(path)
    return path


def _parse_trunc(text: str | None) -> qz.Truncation | None:
    if text is None:
        return None
    try:
        return qz.Truncation(tuple(int(s) for s in text.split(",")))
    except (ValueError, qz.QuantizeError) as exc:
        raise CliError(f"bad --trunc {text!r}: {exc}") from exc


def _parse_total_charge(text: str) -> int | None:
    if text.lower() == "none":
        return None
    try:
        return int(text)
    except ValueError as exc:
        raise CliError(f"bad --total-charge {text!r}") from exc


def _resolve_bias(args, circuit) -> BiasPoint:
    v = validate_circuit(circuit)
    if getattr(args, "bias", None):
        try:
            return bias_from_dict(json.loads(args.bias))
        except (json.JSONDecodeError, TypeError, ValueError) as exc:
            raise CliError(f"bad --bias JSON: {exc}") from exc
    return BiasPoint.for_circuit(v, flux=args.flux)


def _model_circuit(args, spec: CircuitSpec):
    """Validated circuit, collapsed to the structureless form on request."""
    v = validate_circuit(spec)
    if getattr(args, "structureless", False):
        renorm = getattr(args, "renorm", None)
        renorm = None if renorm in (None, "auto") else float(renorm)
        return plaquette.build_structureless(v, renorm=renorm)
    return v


def _default_truncation(args, circuit, bias, n_levels: int) -> qz.Truncation:
    trunc = _parse_trunc(getattr(args, "trunc", None))
    if trunc is not None:
        return trunc
    # no override: grow a basis until the requested transitions stabilize
    return fit.converge_truncation(
        circuit, bias, [(0, j) for j in range(1, n_levels)],
        total_charge=_parse_total_charge(args.total_charge))


def _add_circuit_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=preset_names(),
                   help="named reference parameter set")
    p.add_argument("--circuit", help="circuit JSON file")


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--structureless", action="store_true",
                   help="collapse each plaquette to its multi-harmonic branch")
    p.add_argument("--renorm", default="auto",
                   help="collapsed-branch mass factor, or 'auto' to calibrate")
    p.add_argument("--trunc", help="states per coordinate, e.g. 13,13,21")
    p.add_argument("--total-charge", default="0",
                   help="conserved-charge sector, or 'none' for the full basis")


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", help="output directory (default $PLAQSIM_OUT or .)")


# ---------------------------------------------------------------------------
# subcommands


def _cmd_potential(args) -> None:
    spec = _resolve_circuit(args)
    if not 0 <= args.plaquette < len(spec.plaquettes):
        raise CliError(f"--plaquette {args.plaquette} out of range")
    params = spec.plaquettes[args.plaquette]
    surface = plaquette.potential_surface(
        params, args.flux, n_dp=args.points, n_dm=args.points)
    outdir = _resolve_outdir(args)
    rows = ["delta_p,delta_m,energy_ghz"]
    for i, dp in enumerate(surface.delta_p):
        for j, dm in enumerate(surface.delta_m):
            rows.append(f"{dp:.12g},{dm:.12g},{surface.energy[i, j]:.12g}")
    header = _header_lines(args, circuit=circuit_to_dict(spec))
    header += f"# periodicity_defect_ghz: {surface.periodicity_defect():.6g}\n"
    _write_artifact(outdir / "potential.csv", header, "\n".join(rows) + "\n")


def _cmd_e2(args) -> None:
    spec = _resolve_circuit(args)
    indices = (range(len(spec.plaquettes)) if args.plaquette is None
               else [args.plaquette])
    rows = ["plaquette,harmonic,strength_K"]
    for idx in indices:
        if not 0 <= idx < len(spec.plaquettes):
            raise CliError(f"--plaquette {idx} out of range")
        harm = plaquette.extract_loop_harmonics(
            spec.plaquettes[idx], n_harmonics=max(2, args.harmonics),
            n_points=args.points)
        for k in sorted(harm):
            rows.append(f"{idx},{k},{harm[k]:.12g}")
    header = _header_lines(args, circuit=circuit_to_dict(spec))
    _write_artifact(_resolve_outdir(args) / "e2.csv", header,
                    "\n".join(rows) + "\n")


def _cmd_spectrum(args) -> None:
    spec = _resolve_circuit(args)
    model = _model_circuit(args, spec)
    bias = _resolve_bias(args, spec)
    trunc = _default_truncation(args, model, bias, args.levels)
    res = qz.spectrum(model, bias, trunc, args.levels,
                      total_charge=_parse_total_charge(args.total_charge))
    e = res.eigenvalues
    rows = ["level,energy_ghz,from_ground_ghz"]
    rows += [f"{j},{e[j]:.12g},{e[j] - e[0]:.12g}" for j in range(len(e))]
    header = _header_lines(args, circuit=circuit_to_dict(spec),
                           bias=bias_to_dict(bias),
                           truncation=list(trunc.states))
    _write_artifact(_resolve_outdir(args) / "spectrum.csv", header,
                    "\n".join(rows) + "\n")


def _scan_axis(args, model):
    if args.command == "scan-flux":
        center = None
        if args.center != 0.5:
            center = BiasPoint.for_circuit(validate_circuit(model),
                                           flux=args.center)
        if args.axis == "common":
            return scan.common_flux_axis(model, center=center,
                                         halfwidth=args.halfwidth,
                                         n_points=args.points)
        try:
            index = int(args.axis)
        except ValueError as exc:
            raise CliError(f"--axis must be a loop index or 'common'") from exc
        return scan.single_flux_axis(model, index, center=center,
                                     halfwidth=args.halfwidth,
                                     n_points=args.points)
    island = args.island if args.island == "shunt" else int(args.island)
    center = BiasPoint.for_circuit(validate_circuit(model), flux=args.flux)
    return scan.island_charge_axis(model, island, center=center,
                                   halfwidth=args.halfwidth,
                                   n_points=args.points)


def _cmd_scan(args) -> None:
    spec = _resolve_circuit(args)
    model = _model_circuit(args, spec)
    axis = _scan_axis(args, model)
    trunc = _parse_trunc(args.trunc)
    if trunc is None:
        trunc = _default_truncation(args, model, axis.bias_at(0.0), args.levels)
    workers = args.threads or min(os.cpu_count() or 1, args.points)
    total_charge = _parse_total_charge(args.total_charge)
    if args.command == "scan-flux":
        result = scan.flux_dispersion(model, axis, trunc, n_levels=args.levels,
                                      total_charge=total_charge,
                                      workers=workers)
        name = "scan_flux.csv"
    else:
        island = args.island if args.island == "shunt" else int(args.island)
        result = scan.charge_dispersion(model, island, axis, trunc,
                                        n_levels=args.levels,
                                        total_charge=total_charge,
                                        workers=workers)
        name = "scan_charge.csv"
    import io
    body = io.StringIO()
    result.to_csv(body)
    header = _header_lines(args, circuit=circuit_to_dict(spec),
                           truncation=list(trunc.states))
    _write_artifact(_resolve_outdir(args) / name, header, body.getvalue())


def _cmd_calibrate(args) -> None:
    outdir = _resolve_outdir(args)
    if args.from_model:
        model = (calib.device_mutual_model(args.from_model)
                 if args.kind == "mutual"
                 else calib.device_capacitance_model(args.from_model))
        feats = calib.line_features(model)
        path = outdir / f"{args.kind}_features.json"
        with open(path, "w", encoding="utf-8", newline="\n") as stream:
            n_lines = model.n_lines
            calib.write_features(feats, stream, n_rows=model.n_rows,
                                 n_lines=n_lines)
        print(path)
        return
    if not args.features:
        raise CliError("calibrate needs --features FILE or --from-model KIND")
    path = Path(args.features)
    if not path.is_file():
        raise CliError(f"feature file not found: {path}")
    with open(path, encoding="utf-8") as stream:
        feats, n_rows, n_lines = calib.read_features(stream)
    if n_rows is None or n_lines is None:
        raise CliError("feature file must record n_rows and n_lines")
    header = _header_lines(args)
    if args.kind == "mutual":
        lines = calib.FrustrationLineSet(n_rows, n_lines, feats)
        model = calib.fit_mutual_matrix(lines)
        row_names = [f"loop_{i}" for i in range(n_rows)]
        col_names = (list(calib.FLUX_LINE_NAMES)
                     if n_lines == len(calib.FLUX_LINE_NAMES)
                     else [f"line_{j}" for j in range(n_lines)])
        import io
        body = io.StringIO()
        calib.write_matrix_csv(model.l_matrix, row_names, col_names, body)
        body.write("# offsets_phi0: "
                   + ",".join(f"{v:.12g}" for v in model.offsets) + "\n")
        body.write(f"# fit_residual: {model.fit_residual:.6g}\n")
        _write_artifact(outdir / "mutual_matrix.csv", header, body.getvalue())
    else:
        stripes = calib.ChargeModulationSet(n_rows, n_lines, feats)
        model = calib.fit_capacitance_matrix(stripes)
        row_names = (list(calib.ISLAND_NAMES)
                     if n_rows == len(calib.ISLAND_NAMES)
                     else [f"island_{i}" for i in range(n_rows)])
        col_names = (list(calib.CHARGE_LINE_NAMES)
                     if n_lines == len(calib.CHARGE_LINE_NAMES)
                     else [f"line_{j}" for j in range(n_lines)])
        import io
        body = io.StringIO()
        calib.write_matrix_csv(model.c_matrix, row_names, col_names, body)
        body.write(f"# fit_residual: {model.fit_residual:.6g}\n")
        _write_artifact(outdir / "capacitance_matrix.csv", header,
                        body.getvalue())


def _cmd_fit(args) -> None:
    spec = _resolve_circuit(args)
    path = Path(args.dataset)
    if not path.is_file():
        raise CliError(f"dataset file not found: {path}")
    with open(path, encoding="utf-8") as stream:
        dataset = fit.read_dataset_csv(stream)
    names = tuple(s.strip() for s in args.params.split(",") if s.strip())
    if not names:
        raise CliError("--params must name at least one parameter")
    trunc = _parse_trunc(args.trunc)
    if trunc is None:
        raise CliError("fit requires an explicit --trunc")
    model = fit.CircuitTransitionModel(
        base=spec, param_names=names, truncation=trunc,
        total_charge=_parse_total_charge(args.total_charge),
        shared=not args.per_plaquette)
    start = model.baseline_values()
    if args.start:
        start = np.array([float(s) for s in args.start.split(",")])
        if start.size != len(names):
            raise CliError("--start length does not match --params")
    if args.bounds:
        try:
            pairs = [tuple(map(float, b.split(":"))) for b in
                     args.bounds.split(",")]
            lower, upper = zip(*pairs)
        except ValueError as exc:
            raise CliError(f"bad --bounds: {exc}") from exc
        if len(pairs) != len(names):
            raise CliError("--bounds length does not match --params")
    else:
        rel = args.bound_rel
        lower = tuple(v * (1 - rel) if v > 0 else v * (1 + rel) for v in start)
        upper = tuple(v * (1 + rel) if v > 0 else v * (1 - rel) for v in start)
    config = fit.FitConfig(
        names=names, initial=tuple(start), lower=lower, upper=upper,
        simplex_scale=args.scale, max_iter=args.max_iter,
        cost_tol=args.tol, multi_start=args.multi_start, seed=args.seed)
    result = fit.fit_circuit(dataset, model, config)
    outdir = _resolve_outdir(args)
    header = _header_lines(args, circuit=circuit_to_dict(spec))
    rows = ["parameter,value"]
    rows += [f"{n},{v:.12g}" for n, v in zip(names, result.params)]
    body = ("\n".join(rows) + "\n"
            + f"# cost_ghz2: {result.cost:.12g}\n"
            + f"# converged: {result.converged}\n"
            + f"# iterations: {result.n_iterations}\n"
            + f"# evaluations: {result.n_evaluations}\n")
    _write_artifact(outdir / "fit_result.csv", header, body)
    import io
    trace = io.StringIO()
    fit.write_trace_csv(result, names, trace)
    _write_artifact(outdir / "fit_trace.csv", header, trace.getvalue())


def _cmd_converge(args) -> None:
    spec = _resolve_circuit(args)
    model = _model_circuit(args, spec)
    bias = _resolve_bias(args, spec)
    try:
        pairs = [tuple(int(x) for x in t.split(":"))
                 for t in args.transitions.split(",")]
    except ValueError as exc:
        raise CliError(f"bad --transitions: {exc}") from exc
    trace: list = []
    trunc = fit.converge_truncation(
        model, bias, pairs, threshold=args.threshold,
        total_charge=_parse_total_charge(args.total_charge),
        max_states=args.max_states, trace=trace)
    rows = ["states," + ",".join(f"f_{i}_{j}_ghz" for i, j in pairs)]
    for states, values in trace:
        cells = "x".join(str(s) for s in states)
        rows.append(cells + "," + ",".join(
            "inf" if not np.isfinite(v) else f"{v:.12g}" for v in values))
    header = _header_lines(args, circuit=circuit_to_dict(spec),
                           bias=bias_to_dict(bias))
    header += "# converged_states: " + ",".join(map(str, trunc.states)) + "\n"
    _write_artifact(_resolve_outdir(args) / "converge.csv", header,
                    "\n".join(rows) + "\n")


def _cmd_lambda(args) -> None:
    gaps = tuple(float(g) for g in args.gaps.split(","))
    model = stabilizer.SpinChainModel(k=args.k, gaps=gaps, n=len(gaps) + 1)
    noise = stabilizer.NoiseModel(a_phi=args.a_phi, phi_rms=args.phi_rms * 1e-6,
                                  a_q=args.a_q, tan_delta=args.tan_delta)
    body = stabilizer.table_csv(model, noise)
    header = _header_lines(args)
    _write_artifact(_resolve_outdir(args) / "lambda.csv", header, body)


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plaqsim",
        description="Simulation and analysis of pi-periodic plaquette circuits")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("potential", help="2D two-arm potential surface CSV")
    _add_circuit_flags(p)
    _add_common_flags(p)
    p.add_argument("--plaquette", type=int, default=0)
    p.add_argument("--flux", type=float, default=0.5)
    p.add_argument("--points", type=int, default=121)
    p.set_defaults(func=_cmd_potential)

    p = sub.add_parser("e2", help="effective pi-periodic loop strengths")
    _add_circuit_flags(p)
    _add_common_flags(p)
    p.add_argument("--plaquette", type=int, default=None,
                   help="restrict to one plaquette (default: all)")
    p.add_argument("--harmonics", type=int, default=2)
    p.add_argument("--points", type=int, default=16,
                   help="flux samples per traced band")
    p.set_defaults(func=_cmd_e2)

    p = sub.add_parser("spectrum", help="eigenvalues at one bias point")
    _add_circuit_flags(p)
    _add_model_flags(p)
    _add_common_flags(p)
    p.add_argument("--flux", type=float, default=0.5)
    p.add_argument("--bias", help="bias JSON (flux_phi0/charge_isl_2e/charge_sh_2e)")
    p.add_argument("--levels", type=int, default=6)
    p.set_defaults(func=_cmd_spectrum)

    p = sub.add_parser("scan-flux", help="dispersion along a flux axis")
    _add_circuit_flags(p)
    _add_model_flags(p)
    _add_common_flags(p)
    p.add_argument("--axis", default="common",
                   help="loop index or 'common' (all loops together)")
    p.add_argument("--center", type=float, default=0.5)
    p.add_argument("--halfwidth", type=float, default=0.05)
    p.add_argument("--points", type=int, default=21)
    p.add_argument("--levels", type=int, default=4)
    p.add_argument("--threads", type=int, default=0,
                   help="parallel bias-point solves (0 = auto)")
    p.set_defaults(func=_cmd_scan)

    p = sub.add_parser("scan-charge", help="dispersion along an island charge")
    _add_circuit_flags(p)
    _add_model_flags(p)
    _add_common_flags(p)
    p.add_argument("--island", default="shunt",
                   help="intermediate-island index or 'shunt'")
    p.add_argument("--flux", type=float, default=0.5)
    p.add_argument("--halfwidth", type=float, default=0.5)
    p.add_argument("--points", type=int, default=21)
    p.add_argument("--levels", type=int, default=4)
    p.add_argument("--threads", type=int, default=0)
    p.set_defaults(func=_cmd_scan)

    p = sub.add_parser("calibrate", help="fit mutual or capacitance matrices")
    _add_common_flags(p)
    p.add_argument("--kind", choices=("mutual", "charge"), required=True)
    p.add_argument("--features", help="feature JSON file to fit")
    p.add_argument("--from-model", choices=("device", "layout"),
                   help="emit synthetic features from a reference model")
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("fit", help="fit circuit parameters to a dataset")
    _add_circuit_flags(p)
    _add_common_flags(p)
    p.add_argument("--dataset", required=True, help="transition CSV file")
    p.add_argument("--params", required=True,
                   help="comma list, e.g. e_j,e_c,c_sh")
    p.add_argument("--start", help="comma list of start values")
    p.add_argument("--bounds", help="comma list of lo:hi pairs")
    p.add_argument("--bound-rel", type=float, default=0.5,
                   help="relative bounds around the start when --bounds absent")
    p.add_argument("--trunc", required=True)
    p.add_argument("--total-charge", default="0")
    p.add_argument("--per-plaquette", action="store_true",
                   help="allow per-plaquette parameter suffixes")
    p.add_argument("--scale", type=float, default=0.1)
    p.add_argument("--max-iter", type=int, default=2000)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--multi-start", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("converge", help="truncation convergence report")
    _add_circuit_flags(p)
    _add_model_flags(p)
    _add_common_flags(p)
    p.add_argument("--flux", type=float, default=0.5)
    p.add_argument("--bias")
    p.add_argument("--transitions", default="0:1,0:2",
                   help="comma list of i:j level pairs")
    p.add_argument("--threshold", type=float, default=0.05)
    p.add_argument("--max-states", type=int, default=41)
    p.set_defaults(func=_cmd_converge)

    p = sub.add_parser("lambda", help="spin-model suppression/coherence table")
    _add_common_flags(p)
    p.add_argument("--k", type=float, default=380.0,
                   help="single-frustration slope [MHz/mPhi0]")
    p.add_argument("--gaps", default="1.5,0.87",
                   help="comma list of neighbor stabilizer gaps [GHz]")
    p.add_argument("--phi-rms", type=float, default=10.0,
                   help="rms flux excursion [uPhi0]")
    p.add_argument("--a-phi", type=float, default=2.0)
    p.add_argument("--a-q", type=float, default=2e-2)
    p.add_argument("--tan-delta", type=float, default=1.0 / 300.0)
    p.set_defaults(func=_cmd_lambda)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except Exception as exc:  # noqa: BLE001 - boundary: report and exit nonzero
        record = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(record), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
