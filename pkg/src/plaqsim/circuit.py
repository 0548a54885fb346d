"""Circuit parameter containers, unit conventions, and element estimators.

Everything downstream works in GHz (energies as frequencies, E/h) and fF/pH
for capacitance/inductance.  User-facing parameter sets are entered in Kelvin
and converted once, by :func:`validate_circuit`.

Conventions
-----------
* charging energy of a capacitance C is E_C = (2e)^2 / 2C (Cooper-pair
  convention), so E_C[GHz] = EC_GHZ_PER_FF / C[fF];
* inductive energy of an inductance L is E_L = (Phi0/2pi)^2 / L, so
  E_L[GHz] = EL_GHZ_PER_PH / L[pH];
* fluxes are quoted in units of Phi0, island/shunt offset charges in units
  of 2e.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field

from scipy import constants as _const

# Unit conversion constants, derived from CODATA values. Numerically:
# K_TO_GHZ = 20.8366 (k_B/h), EC_GHZ_PER_FF = 77.4812 ((2e)^2/2 / h per fF),
# EL_GHZ_PER_PH = 163462 ((Phi0/2pi)^2 / h per pH).
K_TO_GHZ = _const.k / _const.h / 1e9
EC_GHZ_PER_FF = (2 * _const.e) ** 2 / 2 / 1e-15 / _const.h / 1e9
EL_GHZ_PER_PH = (_const.h / (2 * _const.e) / (2 * math.pi)) ** 2 / 1e-12 / _const.h / 1e9
PHI0_WB = _const.h / (2 * _const.e)

# Shipped defaults for the junction estimators: thin-film aluminum gap and
# the two specific-capacitance conventions in circulation (geometric-only vs
# total including the electrodynamic contribution).
DEFAULT_GAP_UEV = 180.0
C_SPEC_GEO_FF_PER_UM2 = 50.0
C_SPEC_TOTAL_FF_PER_UM2 = 70.0


class EnergyUnit(enum.Enum):
    """Energy unit tags accepted at the API boundary."""

    KELVIN = "K"
    GHZ = "GHz"


def convert_energy(value: float, src: EnergyUnit, dst: EnergyUnit) -> float:
    """Convert an energy between the supported unit tags."""
    if src is dst:
        return value
    if src is EnergyUnit.KELVIN and dst is EnergyUnit.GHZ:
        return value * K_TO_GHZ
    if src is EnergyUnit.GHZ and dst is EnergyUnit.KELVIN:
        return value / K_TO_GHZ
    raise ValueError(f"unsupported conversion {src} -> {dst}")


class CircuitValidationError(ValueError):
    """Raised when a parameter set fails validation."""


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise CircuitValidationError(msg)


def _finite_positive(name: str, value: float, allow_zero: bool = False) -> float:
    value = float(value)
    _require(math.isfinite(value), f"{name} must be finite, got {value!r}")
    if allow_zero:
        _require(value >= 0.0, f"{name} must be >= 0, got {value!r}")
    else:
        _require(value > 0.0, f"{name} must be > 0, got {value!r}")
    return value


@dataclass(frozen=True)
class PlaquetteSpec:
    """Parameters of one two-junction plaquette (energies in Kelvin).

    :param e_j: mean Josephson energy of the two junctions [K]
    :param e_c: junction charging energy [K]
    :param e_l: inductive energy of one chain arm [K]
    :param e_cl: charging energy of one chain arm's capacitance [K]
    :param alpha: junction asymmetry; the two junctions carry
        e_j*(1-alpha) and e_j*(1+alpha)
    :param c_int: capacitance from each junction-chain node to ground [fF]
    """

    e_j: float
    e_c: float
    e_l: float
    e_cl: float
    alpha: float = 0.0
    c_int: float = 1.0


@dataclass(frozen=True)
class CircuitSpec:
    """A chain of plaquettes between a series-LC remainder and a shunt island.

    The chain runs ground -- C_extra -- L_extra -- plq_1 -- island_1 -- plq_2
    -- ... -- plq_n -- shunt island -- C_sh -- ground.  ``l_extra``/``c_extra``
    lump every element of the device that is not in the modeled chain into a
    series LC branch; ``l_factor`` scales ``l_extra`` (a fit parameter that
    absorbs bias-dependent variation of the remainder inductance).

    :param plaquettes: the n modeled plaquettes, low-index end first
    :param c_sh: shunt-island capacitance to ground [fF]
    :param c_isl: intermediate-island capacitances to ground, length n-1 [fF]
    :param l_extra: series remainder inductance [pH]
    :param c_extra: series remainder capacitance [fF]
    :param l_factor: multiplier applied to l_extra
    """

    plaquettes: tuple[PlaquetteSpec, ...]
    c_sh: float
    c_isl: tuple[float, ...] = ()
    l_extra: float = 11000.0
    c_extra: float = 2.0
    l_factor: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "plaquettes", tuple(self.plaquettes))
        object.__setattr__(self, "c_isl", tuple(self.c_isl))

    @property
    def n_plaquettes(self) -> int:
        return len(self.plaquettes)


@dataclass(frozen=True)
class BiasPoint:
    """External bias applied to a circuit.

    :param flux: external flux through each plaquette loop, length n [Phi0]
    :param charge_isl: offset charge on each intermediate island, length n-1 [2e]
    :param charge_sh: offset charge on the shunt island [2e]
    """

    flux: tuple[float, ...] = ()
    charge_isl: tuple[float, ...] = ()
    charge_sh: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "flux", tuple(float(f) for f in self.flux))
        object.__setattr__(
            self, "charge_isl", tuple(float(q) for q in self.charge_isl)
        )

    @classmethod
    def for_circuit(
        cls,
        circuit: "CircuitSpec | ValidatedCircuit",
        flux=None,
        charge_isl=None,
        charge_sh: float = 0.0,
    ) -> "BiasPoint":
        """Build a bias point sized for ``circuit``, broadcasting scalars."""
        n = circuit.n_plaquettes
        if flux is None:
            flux = (0.0,) * n
        elif isinstance(flux, (int, float)):
            flux = (float(flux),) * n
        if charge_isl is None:
            charge_isl = (0.0,) * (n - 1)
        elif isinstance(charge_isl, (int, float)):
            charge_isl = (float(charge_isl),) * (n - 1)
        flux = tuple(flux)
        charge_isl = tuple(charge_isl)
        if len(flux) != n:
            raise CircuitValidationError(
                f"flux needs {n} entries (one per plaquette), got {len(flux)}"
            )
        if len(charge_isl) != n - 1:
            raise CircuitValidationError(
                f"charge_isl needs {n - 1} entries (one per intermediate "
                f"island), got {len(charge_isl)}"
            )
        if not all(math.isfinite(f) for f in flux + charge_isl + (charge_sh,)):
            raise CircuitValidationError("bias values must be finite")
        return cls(flux=flux, charge_isl=charge_isl, charge_sh=charge_sh)


@dataclass(frozen=True)
class ValidatedPlaquette:
    """Plaquette parameters normalized to working units (GHz, fF)."""

    e_j: float  # GHz, mean of the two junctions
    e_c: float  # GHz
    e_l: float  # GHz, per arm
    e_cl: float  # GHz, per arm
    alpha: float
    c_int: float  # fF

    @property
    def e_j_arms(self) -> tuple[float, float]:
        """Per-arm Josephson energies (weaker junction first) [GHz]."""
        return split_ej(self.e_j, self.alpha)

    @property
    def c_j(self) -> float:
        """Junction capacitance [fF] implied by e_c."""
        return EC_GHZ_PER_FF / self.e_c

    @property
    def c_chain(self) -> float:
        """Per-arm chain capacitance [fF] implied by e_cl."""
        return EC_GHZ_PER_FF / self.e_cl

    @property
    def l_arm(self) -> float:
        """Per-arm chain inductance [pH] implied by e_l."""
        return EL_GHZ_PER_PH / self.e_l


@dataclass(frozen=True)
class ReducedPlaquette:
    """One plaquette collapsed to a single multi-harmonic cosine branch.

    ``harmonics[m-1]`` holds the order-m Fourier amplitudes of the two arm
    potentials (GHz); ``const`` is the offset from the dropped zeroth
    harmonics.  Collapsing removes the arm interior nodes, so their
    capacitors are reassigned: the junction capacitors follow the branch
    (``c_branch``, in fF, including the fluctuation renormalization
    factor) and the interior ground capacitors move to the branch's
    low-index node (``c_ground``, fF).
    """

    harmonics: tuple[tuple[float, float], ...]
    const: float
    c_branch: float
    c_ground: float


@dataclass(frozen=True)
class StructurelessReduction:
    """Reduction data attached to a circuit whose plaquettes are collapsed."""

    plaquettes: tuple[ReducedPlaquette, ...]
    renorm: float


@dataclass(frozen=True)
class ValidatedCircuit:
    """A :class:`CircuitSpec` after validation and unit normalization.

    Energies are in GHz, capacitances in fF, inductances in pH;
    ``l_extra`` already includes the ``l_factor`` multiplier.  When
    ``reduction`` is set, the arm-level structure is replaced by one
    effective multi-harmonic branch per plaquette.
    """

    plaquettes: tuple[ValidatedPlaquette, ...]
    c_sh: float
    c_isl: tuple[float, ...]
    l_extra: float
    c_extra: float
    source: CircuitSpec = field(compare=False)
    reduction: StructurelessReduction | None = None

    @property
    def n_plaquettes(self) -> int:
        return len(self.plaquettes)

    @property
    def e_l_extra(self) -> float:
        """Inductive energy of the remainder branch [GHz]."""
        return EL_GHZ_PER_PH / self.l_extra

    def circuit_hash(self) -> str:
        """Short stable hash of the source parameters (for output metadata)."""
        return circuit_hash(self.source)


def validate_circuit(spec: CircuitSpec) -> ValidatedCircuit:
    """Check a parameter set and normalize it to working units.

    Raises :class:`CircuitValidationError` on non-finite or non-positive
    energies/capacitances, asymmetry outside [0, 1), or an island-capacitance
    list whose length does not match the plaquette count.  Idempotent: an
    already-validated circuit passes through unchanged.
    """
    if isinstance(spec, ValidatedCircuit):
        return spec
    _require(len(spec.plaquettes) >= 1, "need at least one plaquette")
    _require(
        len(spec.c_isl) == len(spec.plaquettes) - 1,
        f"c_isl must have length n_plaquettes-1 = {len(spec.plaquettes) - 1}, "
        f"got {len(spec.c_isl)}",
    )
    plqs = []
    for i, p in enumerate(spec.plaquettes):
        tag = f"plaquette[{i}]"
        e_j = _finite_positive(f"{tag}.e_j", p.e_j)
        e_c = _finite_positive(f"{tag}.e_c", p.e_c)
        e_l = _finite_positive(f"{tag}.e_l", p.e_l)
        e_cl = _finite_positive(f"{tag}.e_cl", p.e_cl)
        alpha = float(p.alpha)
        _require(
            math.isfinite(alpha) and 0.0 <= alpha < 1.0,
            f"{tag}.alpha must be in [0, 1), got {p.alpha!r}",
        )
        c_int = _finite_positive(f"{tag}.c_int", p.c_int, allow_zero=True)
        plqs.append(
            ValidatedPlaquette(
                e_j=e_j * K_TO_GHZ,
                e_c=e_c * K_TO_GHZ,
                e_l=e_l * K_TO_GHZ,
                e_cl=e_cl * K_TO_GHZ,
                alpha=alpha,
                c_int=c_int,
            )
        )
    c_sh = _finite_positive("c_sh", spec.c_sh)
    c_isl = tuple(
        _finite_positive(f"c_isl[{k}]", c, allow_zero=True)
        for k, c in enumerate(spec.c_isl)
    )
    l_extra = _finite_positive("l_extra", spec.l_extra)
    c_extra = _finite_positive("c_extra", spec.c_extra)
    l_factor = _finite_positive("l_factor", spec.l_factor)
    return ValidatedCircuit(
        plaquettes=tuple(plqs),
        c_sh=c_sh,
        c_isl=c_isl,
        l_extra=l_extra * l_factor,
        c_extra=c_extra,
        source=spec,
    )


def split_ej(e_j: float, alpha: float) -> tuple[float, float]:
    """Split a mean Josephson energy into the two per-arm energies.

    Returns ``(e_j*(1-alpha), e_j*(1+alpha))``; their mean is exactly ``e_j``
    and ``alpha`` is recovered as (second-first)/(second+first).
    """
    return (e_j * (1.0 - alpha), e_j * (1.0 + alpha))


# ---------------------------------------------------------------------------
# element-value estimators


def estimate_junction_capacitance(
    j_c: float,
    area: float,
    gap: float = DEFAULT_GAP_UEV,
    c_spec_geo: float = C_SPEC_GEO_FF_PER_UM2,
) -> tuple[float, float, float]:
    """Estimate a junction's capacitance from its geometry and critical current.

    The electrodynamic contribution per area is 3*hbar*e*J_c / (16*Delta^2);
    the geometric contribution is ``c_spec_geo`` per area.

    :param j_c: critical-current density [uA/um^2]
    :param area: junction area [um^2]
    :param gap: superconducting gap [ueV]
    :param c_spec_geo: geometric specific capacitance [fF/um^2]
    :returns: ``(c_total, c_elec, c_geo)`` in fF
    """
    if j_c < 0 or area < 0 or gap <= 0:
        raise CircuitValidationError("j_c/area must be >= 0 and gap > 0")
    delta_j = gap * 1e-6 * _const.e  # ueV -> J
    j_c_si = j_c * 1e6  # uA/um^2 -> A/m^2
    c_spec_elec_si = 3 * _const.hbar * _const.e * j_c_si / (16 * delta_j**2)  # F/m^2
    c_spec_elec = c_spec_elec_si * 1e3  # F/m^2 -> fF/um^2
    c_elec = c_spec_elec * area
    c_geo = c_spec_geo * area
    return (c_elec + c_geo, c_elec, c_geo)


def estimate_el_from_resistance(r_n: float, gap: float = DEFAULT_GAP_UEV) -> float:
    """Estimate a chain arm's inductive energy from per-junction resistance.

    Uses the tunnel-junction relation E_L = Phi0*Delta / (4*e*R_n) for the
    Josephson inductance of one array junction (linearized well), i.e. the
    Ambegaokar-Baratoff critical current.

    :param r_n: normal-state resistance per array junction [Ohm]
    :param gap: superconducting gap [ueV]
    :returns: inductive energy [K]; 0 for r_n = inf
    """
    if r_n <= 0:
        raise CircuitValidationError("r_n must be > 0")
    if math.isinf(r_n):
        return 0.0
    delta_j = gap * 1e-6 * _const.e
    e_l_joule = PHI0_WB * delta_j / (4 * _const.e * r_n)
    return e_l_joule / _const.k


# ---------------------------------------------------------------------------
# serialization and presets

_SCHEMA_VERSION = 1


def circuit_to_dict(spec: CircuitSpec) -> dict:
    """Serialize a parameter set to a JSON-ready dict (units in key names)."""
    return {
        "schema_version": _SCHEMA_VERSION,
        "plaquettes": [
            {
                "e_j_K": p.e_j,
                "e_c_K": p.e_c,
                "e_l_K": p.e_l,
                "e_cl_K": p.e_cl,
                "alpha": p.alpha,
                "c_int_fF": p.c_int,
            }
            for p in spec.plaquettes
        ],
        "c_sh_fF": spec.c_sh,
        "c_isl_fF": list(spec.c_isl),
        "l_extra_pH": spec.l_extra,
        "c_extra_fF": spec.c_extra,
        "l_factor": spec.l_factor,
    }


def circuit_from_dict(data: dict) -> CircuitSpec:
    """Inverse of :func:`circuit_to_dict` (tolerates a missing version tag)."""
    version = data.get("schema_version", _SCHEMA_VERSION)
    if version != _SCHEMA_VERSION:
        raise CircuitValidationError(f"unsupported schema_version {version!r}")
    try:
        plaquettes = tuple(
            PlaquetteSpec(
                e_j=p["e_j_K"],
                e_c=p["e_c_K"],
                e_l=p["e_l_K"],
                e_cl=p["e_cl_K"],
                alpha=p.get("alpha", 0.0),
                c_int=p.get("c_int_fF", 1.0),
            )
            for p in data["plaquettes"]
        )
        return CircuitSpec(
            plaquettes=plaquettes,
            c_sh=data["c_sh_fF"],
            c_isl=tuple(data.get("c_isl_fF", ())),
            l_extra=data.get("l_extra_pH", 11000.0),
            c_extra=data.get("c_extra_fF", 2.0),
            l_factor=data.get("l_factor", 1.0),
        )
    except KeyError as exc:
        raise CircuitValidationError(f"missing circuit key {exc}") from exc


def circuit_to_json(spec: CircuitSpec) -> str:
    return json.dumps(circuit_to_dict(spec), indent=2, sort_keys=True)


def circuit_from_json(text: str) -> CircuitSpec:
    return circuit_from_dict(json.loads(text))


def circuit_hash(spec: CircuitSpec) -> str:
    """12-hex-digit digest of the canonical serialized parameters."""
    canon = json.dumps(circuit_to_dict(spec), sort_keys=True)
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def bias_to_dict(bias: BiasPoint) -> dict:
    return {
        "flux_phi0": list(bias.flux),
        "charge_isl_2e": list(bias.charge_isl),
        "charge_sh_2e": bias.charge_sh,
    }


def bias_from_dict(data: dict) -> BiasPoint:
    return BiasPoint(
        flux=tuple(data.get("flux_phi0", ())),
        charge_isl=tuple(data.get("charge_isl_2e", ())),
        charge_sh=data.get("charge_sh_2e", 0.0),
    )


# Fitted single- and double-frustration device parameters plus the design
# point optimized for error suppression.  l_extra estimates lump the
# unfrustrated remainder of a 3-plaquette chain (~5.5 nH per idle plaquette).
_PRESETS: dict[str, CircuitSpec] = {
    "table-s1-p2": CircuitSpec(
        plaquettes=(
            PlaquetteSpec(e_j=1.65, e_c=3.67, e_l=1.11, e_cl=6.36, alpha=0.02),
        ),
        c_sh=1190.0,
        c_isl=(),
        l_extra=11000.0,
        c_extra=2.0,
        l_factor=1.1,
    ),
    "table-s3-p12": CircuitSpec(
        plaquettes=(
            PlaquetteSpec(e_j=1.75, e_c=3.54, e_l=1.20, e_cl=6.34, alpha=0.03),
            PlaquetteSpec(e_j=1.75, e_c=3.54, e_l=1.20, e_cl=6.34, alpha=0.03),
        ),
        c_sh=1240.0,
        c_isl=(1.5,),
        l_extra=5500.0,
        c_extra=2.0,
        l_factor=0.99,
    ),
    "optimal-xi": CircuitSpec(
        plaquettes=tuple(
            PlaquetteSpec(e_j=3.0, e_c=5.0, e_l=2.0, e_cl=6.46, alpha=0.01)
            for _ in range(3)
        ),
        c_sh=1000.0,
        c_isl=(1.0, 3.0),
        l_extra=500.0,
        c_extra=2.0,
        l_factor=1.0,
    ),
}


def preset_names() -> tuple[str, ...]:
    return tuple(sorted(_PRESETS))


def preset(name: str) -> CircuitSpec:
    """Return a named built-in parameter set."""
    try:
        return _PRESETS[name]
    except KeyError:
        raise CircuitValidationError(
            f"unknown preset {name!r}; available: {', '.join(preset_names())}"
        ) from None
