"""Atom/bond featurization and molecule -> GraphTensor encoding."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .chem import DOUBLE, TRIPLE, Atom, Bond, Molecule, parse_smiles
from .errors import BatchParseError, EmptyBatch, MolGnnError, UnknownFeatureName
from .graph import GraphTensor, merge

OOV = "<oov>"

ATOM_ONE_HOT = {
    "symbol": ["B", "C", "N", "O", "F", "P", "S", "Cl", "Br", "I"],
    "degree": [0, 1, 2, 3, 4, 5, 6],
    "formal_charge": [-2, -1, 0, 1, 2],
    "num_hydrogens": [0, 1, 2, 3, 4],
    "hybridization": ["sp", "sp2", "sp3"],
    "ring_size": [3, 4, 5, 6, 7, 8],
    "valence_electrons": [1, 2, 3, 4, 5, 6, 7, 8],
    "radical_electrons": [0, 1, 2],
}
ATOM_BINARY = ("aromatic", "hetero", "hydrogen_donor", "hydrogen_acceptor", "in_ring")
ATOM_FEATURES = (
    "symbol", "degree", "formal_charge", "num_hydrogens", "hybridization", "aromatic",
    "hetero", "hydrogen_donor", "hydrogen_acceptor", "in_ring", "ring_size",
    "valence_electrons", "radical_electrons",
)

BOND_ONE_HOT = {
    "bond_type": ["single", "double", "triple", "aromatic"],
    "ring_size": [3, 4, 5, 6, 7, 8],
}
BOND_BINARY = ("conjugated", "rotatable", "in_ring")
BOND_FEATURES = ("bond_type", "conjugated", "rotatable", "in_ring", "ring_size")

# Descriptor features that need substructure libraries; rejected explicitly.
EXCLUDED_FEATURES = (
    "chiral_center", "chirality", "stereo", "crippen_logp", "crippen_mr",
    "gasteiger_charge", "labute_asa", "tpsa",
)

VALENCE_ELECTRONS = {
    "H": 1, "Li": 1, "Na": 1, "K": 1, "Be": 2, "Mg": 2, "Ca": 2, "B": 3, "Al": 3,
    "C": 4, "Si": 4, "Ge": 4, "Sn": 4, "N": 5, "P": 5, "As": 5, "Sb": 5,
    "O": 6, "S": 6, "Se": 6, "Te": 6, "F": 7, "Cl": 7, "Br": 7, "I": 7,
}


@dataclass
class FeatureConfig:
    atom_features: list = field(default_factory=lambda: list(ATOM_FEATURES))
    bond_features: list = field(default_factory=lambda: list(BOND_FEATURES))
    vocabularies: dict = field(default_factory=dict)
    include_edge_features: bool = True
    self_loops: bool = False

    def __post_init__(self):
        self.atom_features = list(self.atom_features)
        self.bond_features = list(self.bond_features)
        for name in self.atom_features:
            _check_name(name, ATOM_FEATURES, "atom")
        for name in self.bond_features:
            _check_name(name, BOND_FEATURES, "bond")
        vocab = {}
        for name in self.atom_features:
            if name in ATOM_ONE_HOT:
                vocab[f"atom.{name}"] = list(self.vocabularies.get(f"atom.{name}", ATOM_ONE_HOT[name]))
        for name in self.bond_features:
            if name in BOND_ONE_HOT:
                vocab[f"bond.{name}"] = list(self.vocabularies.get(f"bond.{name}", BOND_ONE_HOT[name]))
        unknown = set(self.vocabularies) - set(vocab)
        if unknown:
            raise UnknownFeatureName(f"vocabularies given for unused features: {sorted(unknown)}")
        self.vocabularies = vocab

    def block_width(self, kind: str, name: str) -> int:
        key = f"{kind}.{name}"
        if key in self.vocabularies:
            return len(self.vocabularies[key]) + 1
        return 1

    def block_slices(self, kind: str) -> dict[str, slice]:
        names = self.atom_features if kind == "atom" else self.bond_features
        out, start = {}, 0
        for name in names:
            w = self.block_width(kind, name)
            out[name] = slice(start, start + w)
            start += w
        return out

    @property
    def atom_dim(self) -> int:
        return sum(self.block_width("atom", n) for n in self.atom_features)

    @property
    def bond_dim(self) -> int:
        return sum(self.block_width("bond", n) for n in self.bond_features)

    def to_dict(self) -> dict:
        return {
            "atom_features": list(self.atom_features),
            "bond_features": list(self.bond_features),
            "vocabularies": {k: list(v) for k, v in self.vocabularies.items()},
            "include_edge_features": bool(self.include_edge_features),
            "self_loops": bool(self.self_loops),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FeatureConfig":
        allowed = {"atom_features", "bond_features", "vocabularies",
                   "include_edge_features", "self_loops"}
        extra = set(data) - allowed
        if extra:
            raise UnknownFeatureName(f"unknown feature-config keys: {sorted(extra)}")
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "FeatureConfig":
        return cls.from_dict(json.loads(text))

    def digest(self) -> bytes:
        """32-byte SHA-256 over the canonical JSON; binds record files to this layout."""
        return hashlib.sha256(self.to_json().encode("ascii")).digest()


def _check_name(name, allowed, kind):
    if name in EXCLUDED_FEATURES:
        raise UnknownFeatureName(f"{kind} feature {name!r} is not supported by this toolkit")
    if name not in allowed:
        raise UnknownFeatureName(f"unknown {kind} feature {name!r}")


def _one_hot(value, vocab) -> list[float]:
    out = [0.0] * (len(vocab) + 1)
    try:
        out[vocab.index(value)] = 1.0
    except ValueError:
        out[-1] = 1.0
    return out


def hybridization(atom: Atom, mol: Molecule) -> str:
    bonds = mol.bonds_of(atom.index)
    doubles = sum(1 for b in bonds if b.order == DOUBLE)
    triples = sum(1 for b in bonds if b.order == TRIPLE)
    if atom.aromatic_flag:
        return "sp2"
    if triples or doubles >= 2:
        return "sp"
    if doubles == 1:
        return "sp2"
    if atom.symbol == "H" or mol.degree(atom.index) + atom.total_h == 0:
        return "other"
    return "sp3"


def is_hydrogen_acceptor(atom: Atom, mol: Molecule) -> bool:
    if atom.symbol not in ("N", "O") or atom.formal_charge > 0:
        return False
    # pyrrole-type nitrogen: its lone pair is part of the aromatic sextet
    if atom.symbol == "N" and atom.aromatic_flag and mol.degree(atom.index) + atom.total_h >= 3:
        return False
    return True


def _atom_value(name: str, atom: Atom, mol: Molecule):
    if name == "symbol":
        return atom.symbol
    if name == "degree":
        return mol.degree(atom.index)
    if name == "formal_charge":
        return atom.formal_charge
    if name == "num_hydrogens":
        return atom.total_h
    if name == "hybridization":
        return hybridization(atom, mol)
    if name == "aromatic":
        return atom.aromatic_flag
    if name == "hetero":
        return atom.symbol not in ("C", "H")
    if name == "hydrogen_donor":
        return atom.symbol in ("N", "O", "S") and atom.total_h >= 1
    if name == "hydrogen_acceptor":
        return is_hydrogen_acceptor(atom, mol)
    if name == "in_ring":
        return bool(mol.ring_sizes_of_atom(atom.index))
    if name == "ring_size":
        sizes = mol.ring_sizes_of_atom(atom.index)
        return min(sizes) if sizes else None
    if name == "valence_electrons":
        return VALENCE_ELECTRONS.get(atom.symbol)
    if name == "radical_electrons":
        return atom.radical_electrons
    raise UnknownFeatureName(name)


def _bond_value(name: str, bond: Bond, mol: Molecule):
    if name == "bond_type":
        return bond.order
    if name == "conjugated":
        return bond.conjugated
    if name == "rotatable":
        return bond.rotatable
    if name == "in_ring":
        return bond.in_ring
    if name == "ring_size":
        sizes = mol.ring_sizes_of_bond(bond)
        return min(sizes) if sizes else None
    raise UnknownFeatureName(name)


def featurize_atom(atom: Atom, mol: Molecule, cfg: FeatureConfig) -> np.ndarray:
    parts: list[float] = []
    for name in cfg.atom_features:
        value = _atom_value(name, atom, mol)
        key = f"atom.{name}"
        if key in cfg.vocabularies:
            parts.extend(_one_hot(value, cfg.vocabularies[key]))
        else:
            parts.append(1.0 if value else 0.0)
    return np.array(parts, dtype=np.float64)


def featurize_bond(bond: Bond, mol: Molecule, cfg: FeatureConfig) -> np.ndarray:
    parts: list[float] = []
    for name in cfg.bond_features:
        value = _bond_value(name, bond, mol)
        key = f"bond.{name}"
        if key in cfg.vocabularies:
            parts.extend(_one_hot(value, cfg.vocabularies[key]))
        else:
            parts.append(1.0 if value else 0.0)
    return np.array(parts, dtype=np.float64)


def encode_mol(mol: Molecule, cfg: FeatureConfig) -> GraphTensor:
    n = len(mol.atoms)
    nodes = np.zeros((n, cfg.atom_dim))
    for a in mol.atoms:
        nodes[a.index] = featurize_atom(a, mol, cfg)
    edges = []
    for b in mol.bonds:
        feat = featurize_bond(b, mol, cfg) if cfg.include_edge_features else None
        edges.append((b.src, b.dst, feat))
        edges.append((b.dst, b.src, feat))
    if cfg.self_loops:
        zero = np.zeros(cfg.bond_dim) if cfg.include_edge_features else None
        edges.extend((i, i, zero) for i in range(n))
    edges.sort(key=lambda e: (e[0], e[1]))
    src = np.array([e[0] for e in edges], dtype=np.int64)
    dst = np.array([e[1] for e in edges], dtype=np.int64)
    edge_feature = None
    if cfg.include_edge_features:
        edge_feature = (np.stack([e[2] for e in edges]) if edges
                        else np.zeros((0, cfg.bond_dim)))
    return GraphTensor(sizes=np.array([n]), node_feature=nodes, edge_src=src, edge_dst=dst,
                       edge_feature=edge_feature)


def encode_molecule(smiles: str, cfg: Optional[FeatureConfig] = None) -> GraphTensor:
    """Encode one SMILES as a single-subgraph GraphTensor (fragments stay in one record)."""
    cfg = cfg or FeatureConfig()
    return encode_mol(parse_smiles(smiles), cfg)


def encode_batch(smiles_list: Sequence[str], cfg: Optional[FeatureConfig] = None,
                 strict: bool = True, report: Optional[list] = None) -> GraphTensor:
    """Disjoint union of per-molecule encodings, in input order.

    In strict mode any parse failure raises :class:`BatchParseError` listing
    every failing index. With ``strict=False`` failing molecules are skipped
    and ``(index, smiles, error)`` tuples are appended to ``report``.
    """
    cfg = cfg or FeatureConfig()
    if len(smiles_list) == 0:
        raise EmptyBatch("cannot encode an empty batch")
    graphs, failures = [], []
    for i, s in enumerate(smiles_list):
        try:
            graphs.append(encode_molecule(s, cfg))
        except MolGnnError as exc:
            failures.append((i, s, exc))
    if failures:
        if strict:
            raise BatchParseError(failures)
        if report is not None:
            report.extend(failures)
    if not graphs:
        raise EmptyBatch("no molecule in the batch could be encoded")
    return merge(graphs)
