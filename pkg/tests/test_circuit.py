"""Tests for circuit domain types, validation, estimators, and serialization."""

import json
import math

import pytest
from hypothesis import given, strategies as st

from plaqsim import circuit as C


def single_plaquette_spec(**overrides) -> C.CircuitSpec:
    plq = C.PlaquetteSpec(
        e_j=overrides.pop("e_j", 1.65),
        e_c=overrides.pop("e_c", 3.67),
        e_l=overrides.pop("e_l", 1.11),
        e_cl=overrides.pop("e_cl", 6.36),
        alpha=overrides.pop("alpha", 0.02),
        c_int=overrides.pop("c_int", 1.0),
    )
    defaults = dict(
        plaquettes=(plq,), c_sh=1190.0, c_isl=(), l_extra=5500.0, c_extra=2.0,
        l_factor=1.1,
    )
    defaults.update(overrides)
    return C.CircuitSpec(**defaults)


# ---------------------------------------------------------------------------
# validate_circuit


def test_validate_well_formed_single_plaquette():
    vc = C.validate_circuit(single_plaquette_spec())
    assert isinstance(vc, C.ValidatedCircuit)
    assert vc.n_plaquettes == 1


def test_validate_rejects_alpha_out_of_range():
    with pytest.raises(C.CircuitValidationError, match="alpha"):
        C.validate_circuit(single_plaquette_spec(alpha=1.2))


def test_validate_rejects_nonpositive_energy():
    with pytest.raises(C.CircuitValidationError):
        C.validate_circuit(single_plaquette_spec(e_j=-1.0))
    with pytest.raises(C.CircuitValidationError):
        C.validate_circuit(single_plaquette_spec(e_c=0.0))


def test_validate_rejects_mismatched_island_list():
    with pytest.raises(C.CircuitValidationError, match="c_isl"):
        C.validate_circuit(single_plaquette_spec(c_isl=(1.0, 2.0)))


def test_validate_converts_kelvin_to_ghz():
    # E_J = 1.65 K -> 34.38 GHz at k_B/h = 20.8366 GHz/K
    vc = C.validate_circuit(single_plaquette_spec())
    assert math.isclose(vc.plaquettes[0].e_j, 1.65 * C.K_TO_GHZ, rel_tol=1e-12)
    assert math.isclose(vc.plaquettes[0].e_j, 34.38, rel_tol=5e-4)


def test_validate_is_idempotent_through_serialization():
    spec = single_plaquette_spec()
    text = C.circuit_to_json(spec)
    again = C.circuit_from_json(text)
    assert C.validate_circuit(again) == C.validate_circuit(spec)
    assert C.circuit_to_json(again) == text


def test_kelvin_unit_constant_value():
    assert math.isclose(C.K_TO_GHZ, 20.8366, rel_tol=5e-6)


@given(st.floats(min_value=1e-6, max_value=1e3, allow_nan=False))
def test_energy_conversion_round_trip(value):
    ghz = C.convert_energy(value, C.EnergyUnit.KELVIN, C.EnergyUnit.GHZ)
    back = C.convert_energy(ghz, C.EnergyUnit.GHZ, C.EnergyUnit.KELVIN)
    assert math.isclose(back, value, rel_tol=1e-12)


# ---------------------------------------------------------------------------
# split_ej


def test_split_ej_symmetric():
    assert C.split_ej(1.0, 0.0) == (1.0, 1.0)


def test_split_ej_asymmetric_definition():
    lo, hi = C.split_ej(1.0, 0.05)
    assert math.isclose(lo, 0.95, rel_tol=1e-12)
    assert math.isclose(hi, 1.05, rel_tol=1e-12)


def test_split_ej_alpha_round_trip():
    lo, hi = C.split_ej(1.0, 0.05)
    assert math.isclose((hi - lo) / (hi + lo), 0.05, rel_tol=1e-12)


@given(
    st.floats(min_value=1e-3, max_value=1e3),
    st.floats(min_value=0.0, max_value=0.999),
)
def test_split_ej_mean_exact(e_j, alpha):
    lo, hi = C.split_ej(e_j, alpha)
    assert (lo + hi) / 2.0 == pytest.approx(e_j, rel=1e-15)


# ---------------------------------------------------------------------------
# element estimators


def test_junction_capacitance_device_scale():
    # 110 nm x 130 nm junction at 4 uA/um^2 with 50 fF/um^2 geometric term
    area = 0.110 * 0.130
    total, elec, geo = C.estimate_junction_capacitance(4.0, area, c_spec_geo=50.0)
    assert math.isclose(total, 1.0, rel_tol=0.15)
    assert math.isclose(geo, 0.715, rel_tol=1e-9)
    assert 0.15 < elec < 0.45  # one-significant-figure target of ~0.3 fF


def test_junction_capacitance_zero_critical_current():
    total, elec, geo = C.estimate_junction_capacitance(0.0, 0.0143)
    assert elec == 0.0
    assert total == geo


def test_junction_capacitance_linear_in_area():
    one = C.estimate_junction_capacitance(4.0, 0.0143)
    two = C.estimate_junction_capacitance(4.0, 2 * 0.0143)
    for a, b in zip(one, two):
        assert math.isclose(b, 2 * a, rel_tol=1e-12)


def test_el_from_resistance_hits_design_target():
    # resistance chosen so the output lands on the 1.39 K design value
    r_n = 4848.753106773815
    assert math.isclose(C.estimate_el_from_resistance(r_n), 1.39, rel_tol=1e-9)


def test_el_from_resistance_vanishes_at_infinite_resistance():
    assert C.estimate_el_from_resistance(math.inf) == 0.0


def test_el_from_resistance_inverse_proportionality():
    base = C.estimate_el_from_resistance(5000.0)
    assert math.isclose(C.estimate_el_from_resistance(2500.0), 2 * base, rel_tol=1e-12)


# ---------------------------------------------------------------------------
# bias points


def test_bias_for_circuit_defaults():
    vc = C.validate_circuit(single_plaquette_spec())
    bias = C.BiasPoint.for_circuit(vc)
    assert bias.flux == (0.0,)
    assert bias.charge_isl == ()
    assert bias.charge_sh == 0.0


def test_bias_scalar_flux_broadcasts():
    spec = C.preset("optimal-xi")
    bias = C.BiasPoint.for_circuit(C.validate_circuit(spec), flux=0.5)
    assert bias.flux == (0.5, 0.5, 0.5)


def test_bias_rejects_wrong_length():
    vc = C.validate_circuit(single_plaquette_spec())
    with pytest.raises(C.CircuitValidationError):
        C.BiasPoint.for_circuit(vc, flux=(0.5, 0.5))


def test_bias_dict_round_trip():
    spec = C.preset("optimal-xi")
    bias = C.BiasPoint.for_circuit(
        C.validate_circuit(spec), flux=(0.5, 0.25, 0.0), charge_isl=(0.1, 0.2),
        charge_sh=0.3,
    )
    assert C.bias_from_dict(C.bias_to_dict(bias)) == bias


# ---------------------------------------------------------------------------
# serialization and presets


def test_circuit_json_round_trip():
    spec = C.preset("table-s3-p12")
    data = json.loads(C.circuit_to_json(spec))
    assert C.circuit_from_dict(data) == spec


def test_circuit_hash_stable_and_sensitive():
    spec = single_plaquette_spec()
    assert C.circuit_hash(spec) == C.circuit_hash(single_plaquette_spec())
    assert C.circuit_hash(spec) != C.circuit_hash(single_plaquette_spec(c_sh=1200.0))


def test_preset_names_cover_shipped_parameter_sets():
    names = C.preset_names()
    for expected in ("table-s1-p2", "table-s3-p12", "optimal-xi"):
        assert expected in names


@pytest.mark.parametrize("name", ["table-s1-p2", "table-s3-p12", "optimal-xi"])
def test_presets_validate(name):
    vc = C.validate_circuit(C.preset(name))
    assert vc.n_plaquettes >= 1


def test_unknown_preset_raises():
    with pytest.raises(C.CircuitValidationError, match="no-such-device"):
        C.preset("no-such-device")
