import numpy as np
import pytest
from hypothesis import given, strategies as st

from grafico.atoms import (
    IRI,
    XYZ,
    ConceptualAtoms,
    ElectronicState,
    TokenGenerator,
    electronic_state_violations,
    from_extxyz,
    is_minted_iri,
    to_extxyz,
    verify_electronic_state,
)
from grafico.elements import hill_formula


def water(charge=0, mult=1, validate=True):
    return ConceptualAtoms(
        instance_iri=IRI("https://ex.org/ns/ConceptualAtoms_00000001"),
        geometry=XYZ([1, 1, 8], [[0.76, 0.59, 0], [-0.76, 0.59, 0], [0, 0, 0]]),
        electronic=ElectronicState(charge=charge, spin_multiplicity=mult),
        validate_electronic=validate,
    )


class TestIRI:
    def test_requires_scheme(self):
        with pytest.raises(ValueError):
            IRI("not-an-iri")
        with pytest.raises(ValueError):
            IRI("")

    def test_minted_pattern(self):
        assert is_minted_iri("https://ex.org/ns/ConstructedMOF_abc123")
        assert not is_minted_iri("https://ex.org/ns/")

    def test_fragment(self):
        assert IRI("https://ex.org/ns/Thing_ab").fragment == "Thing_ab"


class TestTokenGenerator:
    def test_unique(self):
        gen = TokenGenerator(seed=7)
        tokens = {gen.next_token() for _ in range(100)}
        assert len(tokens) == 100
        assert all(len(t) == 8 for t in tokens)

    def test_deterministic(self):
        gen_a = TokenGenerator(seed=3)
        gen_b = TokenGenerator(seed=3)
        a = [gen_a.next_token() for _ in range(5)]
        assert a == [gen_b.next_token() for _ in range(5)]


class TestElectronicState:
    def test_water_singlet_ok(self):
        assert verify_electronic_state(water()) == []

    def test_oh_doublet_ok(self):
        oh = ConceptualAtoms(
            instance_iri=IRI("https://ex.org/ns/ConceptualAtoms_0000000a"),
            geometry=XYZ([8, 1], [[0, 0, 0], [0.97, 0, 0]]),
            electronic=ElectronicState(spin_multiplicity=2),
        )
        assert verify_electronic_state(oh) == []

    def test_water_doublet_parity_violation(self):
        atoms = water(mult=2, validate=False)
        violations = verify_electronic_state(atoms)
        assert len(violations) == 1
        assert "parity" in violations[0]

    def test_construction_rejects_invalid(self):
        with pytest.raises(ValueError):
            water(mult=2)

    @given(
        z=st.lists(st.integers(min_value=1, max_value=30), min_size=1, max_size=6),
        charge=st.integers(min_value=-3, max_value=3),
        mult=st.integers(min_value=1, max_value=5),
    )
    def test_matches_direct_rules(self, z, charge, mult):
        geom = XYZ(z, np.zeros((len(z), 3)))
        ok = not electronic_state_violations(geom, ElectronicState(charge, mult))
        n_elec = sum(z) - charge
        unpaired = mult - 1
        expected = n_elec >= 0 and n_elec >= unpaired and (n_elec - unpaired) % 2 == 0
        assert ok == expected


class TestFormula:
    def test_water(self):
        assert hill_formula([1, 1, 8]) == "H2O"

    def test_methane(self):
        assert hill_formula([6, 1, 1, 1, 1]) == "CH4"

    def test_ethanol_hill_order(self):
        assert hill_formula([6, 6, 8, 1, 1, 1, 1, 1, 1]) == "C2H6O"

    @given(st.permutations([6, 6, 8, 1, 1, 1, 1, 1, 1]))
    def test_permutation_invariant(self, z):
        assert hill_formula(z) == "C2H6O"


class TestConceptualAtoms:
    def test_formula_derived(self):
        assert water().chemical_formula == "H2O"

    def test_rejects_pseudo_atoms(self):
        with pytest.raises(ValueError):
            ConceptualAtoms(
                instance_iri=IRI("https://ex.org/ns/x_1"),
                geometry=XYZ([0, 1], np.zeros((2, 3))),
            )

    def test_cell_periodic_coupling(self):
        with pytest.raises(ValueError):
            ConceptualAtoms(
                instance_iri=IRI("https://ex.org/ns/x_1"),
                geometry=XYZ([2], np.zeros((1, 3))),
                cell=np.eye(3),
            )

    def test_extxyz_round_trip(self):
        atoms = water(charge=1, mult=2)
        back = from_extxyz(to_extxyz(atoms))
        assert back.instance_iri == atoms.instance_iri
        assert back.electronic == atoms.electronic
        np.testing.assert_allclose(back.geometry.positions, atoms.geometry.positions)
        assert back.geometry.atomic_numbers.tolist() == [1, 1, 8]

    def test_extxyz_periodic_round_trip(self):
        atoms = ConceptualAtoms(
            instance_iri=IRI("https://ex.org/ns/ConceptualAtoms_0000000b"),
            geometry=XYZ([2], [[1.0, 2.0, 3.0]]),
            cell=np.diag([10.0, 10.0, 10.0]),
            periodic=(True, True, True),
        )
        back = from_extxyz(to_extxyz(atoms))
        np.testing.assert_allclose(back.cell, atoms.cell)
        assert back.periodic == (True, True, True)
