import csv
import itertools

import pytest

from helpers import ESOL, chem_corpus, hill_formula
from molgnn.chem import AROMATIC, DOUBLE, SINGLE, parse_smiles, perceive_rings
from molgnn.errors import (
    EmptyInput,
    KekulizationFailure,
    UnbalancedParenthesis,
    UnclosedRing,
    UnknownAtomToken,
    ValenceViolation,
)


@pytest.mark.parametrize("entry", chem_corpus(), ids=lambda e: e["name"])
def test_corpus_formula_rings_aromaticity(entry):
    mol = parse_smiles(entry["smiles"])
    assert hill_formula(mol.formula()) == entry["formula"]
    assert sorted(len(r) for r in mol.rings) == entry["rings"]
    assert sum(a.aromatic_flag for a in mol.atoms) == entry["aromatic"]
    assert sum(a.formal_charge for a in mol.atoms) == entry.get("charge", 0)


def test_methane():
    mol = parse_smiles("C")
    assert len(mol.atoms) == 1 and not mol.bonds
    assert mol.atoms[0].implicit_h == 4


def test_benzene_atoms_and_kekule_pattern():
    mol = parse_smiles("c1ccccc1")
    assert all(a.aromatic_flag and a.implicit_h == 1 for a in mol.atoms)
    assert len(mol.bonds) == 6 and all(b.order == AROMATIC and b.in_ring for b in mol.bonds)
    kek = [b.kekulized_order for b in mol.bonds]
    assert kek.count(DOUBLE) == 3 and kek.count(SINGLE) == 3
    # every atom carries exactly one kekulized double bond
    for a in mol.atoms:
        assert sum(b.kekulized_order == DOUBLE for b in mol.bonds_of(a.index)) == 1


def test_acetic_acid_connectivity():
    mol = parse_smiles("CC(=O)O")
    assert len(mol.atoms) == 4 and len(mol.bonds) == 3
    assert [b.order for b in mol.bonds].count(DOUBLE) == 1


def test_pyridine_nitrogen_has_no_hydrogen():
    mol = parse_smiles("c1ccncc1")
    n = next(a for a in mol.atoms if a.symbol == "N")
    assert n.total_h == 0


def test_bracket_and_charge_rules():
    assert parse_smiles("N").atoms[0].implicit_h == 3
    nh4 = parse_smiles("[NH4+]").atoms[0]
    assert nh4.explicit_h == 4 and nh4.implicit_h == 0 and nh4.formal_charge == 1
    co2 = parse_smiles("O=C=O")
    assert all(a.implicit_h == 0 for a in co2.atoms)


def test_hypervalent_and_radicals():
    assert parse_smiles("CS(=O)(=O)C").atoms[1].implicit_h == 0
    assert parse_smiles("OP(=O)(O)O").atoms[1].implicit_h == 0
    assert parse_smiles("[CH3]").atoms[0].radical_electrons == 1


@pytest.mark.parametrize("text, err", [
    ("", EmptyInput),
    ("C1CC", UnclosedRing),
    ("C(C", UnbalancedParenthesis),
    ("CC)", UnbalancedParenthesis),
    ("CXC", UnknownAtomToken),
    ("C(C)(C)(C)(C)C", ValenceViolation),
    ("c1ccc1", KekulizationFailure),
])
def test_parse_errors(text, err):
    with pytest.raises(err):
        parse_smiles(text)


def test_stereo_tokens_are_counted_and_ignored():
    mol = parse_smiles("F/C=C/F")
    assert mol.stereo_count == 2 and len(mol.atoms) == 4
    chiral = parse_smiles("N[C@@H](C)C(=O)O")
    assert chiral.stereo_count >= 1 and hill_formula(chiral.formula()) == "C3H7NO2"


def test_ring_closure_percent_and_dot():
    assert len(parse_smiles("C%10CCCCC%10").rings) == 1
    mol = parse_smiles("C.C")
    assert mol.components == 2 and len(mol.atoms) == 2


def test_ring_perception_examples():
    assert [len(r) for r in perceive_rings(parse_smiles("C1CC1"))] == [3]
    assert sorted(len(r) for r in parse_smiles("c1ccc2ccccc2c1").rings) == [6, 6]
    assert sorted(len(r) for r in parse_smiles("C1CC2CCC1C2").rings) == [5, 5]  # norbornane


def _all_simple_cycles(mol):
    """Brute force: every simple cycle as a frozenset of bond indices."""
    n = len(mol.atoms)
    out = set()
    for start in range(n):
        stack = [(start, [start])]
        while stack:
            node, path = stack.pop()
            for nb in mol.neighbors(node):
                if nb == start and len(path) >= 3:
                    bonds = frozenset(frozenset(p) for p in zip(path, path[1:] + [start]))
                    out.add(bonds)
                elif nb not in path and nb > start:
                    stack.append((nb, path + [nb]))
    return out


@pytest.mark.parametrize("smiles", ["c1ccc2ccccc2c1", "C1CC2CCC1C2", "c1ccc2c(c1)ccc1ccccc12",
                                    "C12C3C4C1C5C2C3C45"])
def test_minimal_cycle_basis_against_brute_force(smiles):
    mol = parse_smiles(smiles)
    cycles = sorted(_all_simple_cycles(mol), key=len)
    rank = len(mol.bonds) - len(mol.atoms) + mol.components
    assert len(mol.rings) == rank
    # minimal basis total length from brute force via greedy GF(2) selection
    index = {frozenset((b.src, b.dst)): i for i, b in enumerate(mol.bonds)}
    basis, total = [], 0
    for c in cycles:
        v = sum(1 << index[e] for e in c)
        for b in basis:
            v = min(v, v ^ b)
        if v:
            basis.append(v)
            total += len(c)
    assert total == sum(len(r) for r in mol.rings)


def test_bond_properties():
    butadiene = parse_smiles("C=CC=C")
    central = butadiene.bonds[1]
    assert central.conjugated and central.rotatable
    ethane = parse_smiles("CC").bonds[0]
    assert not ethane.conjugated and not ethane.rotatable
    assert not any(b.rotatable for b in parse_smiles("C1CCCCC1").bonds)


def test_deterministic_and_total_over_esol():
    with open(ESOL, newline="") as fh:
        smiles = [r["smiles"].strip() for r in csv.DictReader(fh)]
    for s in itertools.islice(smiles, 0, None, 7):
        a, b = parse_smiles(s), parse_smiles(s)
        assert a == b
        assert len(a.rings) == len(a.bonds) - len(a.atoms) + a.components
        for bond in a.bonds:
            assert 0 <= bond.src < len(a.atoms) and 0 <= bond.dst < len(a.atoms)
        for atom in a.atoms:
            if atom.aromatic_flag:
                assert a.ring_sizes_of_atom(atom.index)
