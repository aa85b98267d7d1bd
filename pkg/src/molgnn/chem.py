"""SMILES parsing and the small amount of chemistry perception the featurizer needs.

The grammar covers the OpenSMILES organic subset, bracket atoms, branches,
ring closures (single digits and ``%nn``), explicit bond symbols and ``.``
disconnections.  Stereo markers are consumed and counted but otherwise
ignored.  Aromaticity is taken from the input (lowercase atoms and ``:``
bonds); kekulization assigns alternating orders so valences can be checked.
"""

from __future__ import annotations

import dataclasses
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from .errors import (
    EmptyInput,
    KekulizationFailure,
    SmilesError,
    UnbalancedParenthesis,
    UnclosedRing,
    UnknownAtomToken,
    ValenceViolation,
)

KNOWN_ELEMENTS = ("H", "B", "C", "N", "O", "F", "P", "S", "Cl", "Br", "I")
ORGANIC_SUBSET = ("B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I")
AROMATIC_ORGANIC = ("b", "c", "n", "o", "p", "s")
AROMATIC_BRACKET = ("b", "c", "n", "o", "p", "s", "se", "as", "te")

SINGLE, DOUBLE, TRIPLE, AROMATIC = "single", "double", "triple", "aromatic"
BOND_ORDERS = (SINGLE, DOUBLE, TRIPLE, AROMATIC)
_ORDER_VALUE = {SINGLE: 1, DOUBLE: 2, TRIPLE: 3}
_BOND_SYMBOLS = {"-": SINGLE, "=": DOUBLE, "#": TRIPLE, ":": AROMATIC, "/": SINGLE, "\\": SINGLE}

# Admissible valences keyed by (element, formal charge). Neutral entries follow
# the SMILES organic-subset convention; charged entries use the isoelectronic
# neighbour (N+ behaves like C, O- like F, ...).
VALENCES: dict[tuple[str, int], tuple[int, ...]] = {
    ("H", 0): (1,), ("H", 1): (0,), ("H", -1): (0,),
    ("B", 0): (3,), ("B", -1): (4,), ("B", 1): (2,),
    ("C", 0): (4,), ("C", 1): (3,), ("C", -1): (3,),
    ("N", 0): (3,), ("N", 1): (4,), ("N", -1): (2,),
    ("O", 0): (2,), ("O", 1): (3,), ("O", -1): (1,),
    ("F", 0): (1,), ("F", -1): (0,),
    ("P", 0): (3, 5), ("P", 1): (4,), ("P", -1): (2, 4),
    ("S", 0): (2, 4, 6), ("S", 1): (3, 5), ("S", -1): (1, 3, 5),
    ("Cl", 0): (1,), ("Cl", -1): (0,),
    ("Br", 0): (1,), ("Br", -1): (0,),
    ("I", 0): (1,), ("I", -1): (0,),
}

ATOMIC_NUMBERS = {"H": 1, "B": 5, "C": 6, "N": 7, "O": 8, "F": 9, "P": 15, "S": 16,
                  "Cl": 17, "Br": 35, "I": 53}


def admissible_valences(element: str, charge: int) -> Optional[tuple[int, ...]]:
    """Allowed total valences, or None when the element/charge pair is not tabulated."""
    return VALENCES.get((element, charge))


@dataclass(frozen=True)
class Atom:
    symbol: str
    index: int
    formal_charge: int = 0
    explicit_h: Optional[int] = None
    isotope: Optional[int] = None
    aromatic_flag: bool = False
    implicit_h: int = 0
    radical_electrons: int = 0

    @property
    def element(self) -> str:
        """Symbol folded onto the known element set; anything else is ``"other"``."""
        return self.symbol if self.symbol in KNOWN_ELEMENTS else "other"

    @property
    def bracket(self) -> bool:
        return self.explicit_h is not None

    @property
    def total_h(self) -> int:
        return self.implicit_h + (self.explicit_h or 0)


@dataclass(frozen=True)
class Bond:
    src: int
    dst: int
    order: str
    in_ring: bool = False
    conjugated: bool = False
    rotatable: bool = False
    kekulized_order: Optional[str] = None

    def other(self, atom_index: int) -> int:
        return self.dst if atom_index == self.src else self.src

    @property
    def valence_order(self) -> int:
        """Bond order used for valence bookkeeping (kekulized for aromatic bonds)."""
        order = self.kekulized_order or self.order
        return _ORDER_VALUE.get(order, 1)


@dataclass(frozen=True)
class Molecule:
    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...]
    rings: tuple[tuple[int, ...], ...] = ()
    components: int = 1
    stereo_count: int = 0
    smiles: str = ""
    _adjacency: tuple[tuple[int, ...], ...] = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        if not self._adjacency:
            adj: list[list[int]] = [[] for _ in self.atoms]
            for bi, b in enumerate(self.bonds):
                adj[b.src].append(bi)
                adj[b.dst].append(bi)
            object.__setattr__(self, "_adjacency", tuple(tuple(a) for a in adj))

    def bonds_of(self, atom_index: int) -> list[Bond]:
        return [self.bonds[bi] for bi in self._adjacency[atom_index]]

    def bond_indices_of(self, atom_index: int) -> tuple[int, ...]:
        return self._adjacency[atom_index]

    def neighbors(self, atom_index: int) -> list[int]:
        return [b.other(atom_index) for b in self.bonds_of(atom_index)]

    def degree(self, atom_index: int) -> int:
        return len(self._adjacency[atom_index])

    def bond_order_sum(self, atom_index: int) -> int:
        return sum(b.valence_order for b in self.bonds_of(atom_index))

    def replace(self, **changes) -> "Molecule":
        if "bonds" in changes:
            changes.setdefault("_adjacency", ())
        return dataclasses.replace(self, **changes)

    def formula(self) -> dict[str, int]:
        """Element counts including implicit and explicit hydrogens."""
        counts: dict[str, int] = {}
        for a in self.atoms:
            counts[a.symbol] = counts.get(a.symbol, 0) + 1
            if a.total_h:
                counts["H"] = counts.get("H", 0) + a.total_h
        return counts

    def ring_sizes_of_atom(self, atom_index: int) -> list[int]:
        return [len(r) for r in self.rings if atom_index in r]

    def ring_sizes_of_bond(self, bond: Bond) -> list[int]:
        sizes = []
        for r in self.rings:
            n = len(r)
            for k in range(n):
                a, b = r[k], r[(k + 1) % n]
                if {a, b} == {bond.src, bond.dst}:
                    sizes.append(n)
                    break
        return sizes


# ---------------------------------------------------------------- tokenizer

@dataclass
class _RawAtom:
    symbol: str
    aromatic: bool
    charge: int = 0
    hcount: Optional[int] = None
    isotope: Optional[int] = None


def _parse_bracket(body: str, pos: int) -> tuple[_RawAtom, int]:
    """Parse the inside of ``[...]``; returns the atom and the number of stereo marks."""
    i = 0
    n = len(body)
    digits = ""
    while i < n and body[i].isdigit():
        digits += body[i]
        i += 1
    isotope = int(digits) if digits else None

    symbol = None
    if i < n and body[i].islower():
        for cand in sorted(AROMATIC_BRACKET, key=len, reverse=True):
            if body.startswith(cand, i):
                symbol = cand
                break
    elif i < n and body[i].isupper():
        if i + 1 < n and body[i + 1].islower():
            symbol = body[i:i + 2]
        else:
            symbol = body[i]
    if symbol is None:
        raise UnknownAtomToken(f"bad bracket atom [{body}] at position {pos}")
    i += len(symbol)
    aromatic = symbol.islower()
    symbol = symbol.capitalize()

    stereo = 0
    if i < n and body[i] == "@":
        stereo = 1
        while i < n and body[i] == "@":
            i += 1
        # chirality classes such as @TH1, @SP2
        while i < n and body[i].isupper() and body[i] != "H":
            i += 1
        while i < n and body[i].isdigit():
            i += 1

    hcount = 0
    if i < n and body[i] == "H":
        i += 1
        hd = ""
        while i < n and body[i].isdigit():
            hd += body[i]
            i += 1
        hcount = int(hd) if hd else 1

    charge = 0
    if i < n and body[i] in "+-":
        sign = 1 if body[i] == "+" else -1
        ch = body[i]
        i += 1
        if i < n and body[i].isdigit():
            cd = ""
            while i < n and body[i].isdigit():
                cd += body[i]
                i += 1
            charge = sign * int(cd)
        else:
            magnitude = 1
            while i < n and body[i] == ch:
                magnitude += 1
                i += 1
            charge = sign * magnitude

    if i < n and body[i] == ":":
        i += 1
        while i < n and body[i].isdigit():
            i += 1
    if i != n:
        raise UnknownAtomToken(f"bad bracket atom [{body}] at position {pos}")
    return _RawAtom(symbol, aromatic, charge, hcount, isotope), stereo


def _parse_raw(text: str):
    """Tokenize and build connectivity. Returns (atoms, bonds, stereo_count)."""
    if not text or not text.strip():
        raise EmptyInput("empty SMILES")
    if not text.isascii():
        raise UnknownAtomToken("SMILES must be ASCII")
    text = text.strip()

    atoms: list[_RawAtom] = []
    bonds: list[list] = []  # [src, dst, explicit order or None]
    bond_pairs: set[frozenset] = set()
    stack: list[Optional[int]] = []
    prev: Optional[int] = None
    pending_bond: Optional[str] = None
    open_rings: dict[int, tuple[int, Optional[str], int]] = {}
    stereo = 0
    i = 0
    n = len(text)

    def add_bond(a: int, b: int, order: Optional[str], pos: int):
        if a == b:
            raise SmilesError(f"atom bonded to itself at position {pos}")
        key = frozenset((a, b))
        if key in bond_pairs:
            raise SmilesError(f"duplicate bond between atoms {a} and {b} at position {pos}")
        bond_pairs.add(key)
        bonds.append([a, b, order])

    def add_atom(raw: _RawAtom, pos: int):
        nonlocal prev, pending_bond
        atoms.append(raw)
        idx = len(atoms) - 1
        if prev is not None:
            add_bond(prev, idx, pending_bond, pos)
        elif pending_bond is not None:
            raise SmilesError(f"bond symbol without a preceding atom at position {pos}")
        pending_bond = None
        prev = idx

    while i < n:
        ch = text[i]
        if ch == "[":
            end = text.find("]", i)
            if end < 0:
                raise UnknownAtomToken(f"unterminated bracket atom at position {i}")
            raw, st = _parse_bracket(text[i + 1:end], i)
            stereo += st
            add_atom(raw, i)
            i = end + 1
        elif ch in "BCNOPSFI":
            if text.startswith("Cl", i):
                add_atom(_RawAtom("Cl", False), i)
                i += 2
            elif text.startswith("Br", i):
                add_atom(_RawAtom("Br", False), i)
                i += 2
            else:
                add_atom(_RawAtom(ch, False), i)
                i += 1
        elif ch in AROMATIC_ORGANIC:
            add_atom(_RawAtom(ch.upper(), True), i)
            i += 1
        elif ch in _BOND_SYMBOLS:
            if pending_bond is not None:
                raise SmilesError(f"two consecutive bond symbols at position {i}")
            if ch in "/\\":
                stereo += 1
            pending_bond = _BOND_SYMBOLS[ch]
            i += 1
        elif ch == "(":
            if prev is None:
                raise UnbalancedParenthesis(f"branch opened before any atom at position {i}")
            stack.append(prev)
            i += 1
        elif ch == ")":
            if not stack:
                raise UnbalancedParenthesis(f"unmatched ')' at position {i}")
            if pending_bond is not None:
                raise SmilesError(f"dangling bond symbol before ')' at position {i}")
            prev = stack.pop()
            i += 1
        elif ch.isdigit() or ch == "%":
            if ch == "%":
                num_text = text[i + 1:i + 3]
                if len(num_text) != 2 or not num_text.isdigit():
                    raise UnknownAtomToken(f"bad ring label at position {i}")
                label = int(num_text)
                step = 3
            else:
                label = int(ch)
                step = 1
            if prev is None:
                raise SmilesError(f"ring closure before any atom at position {i}")
            if label in open_rings:
                other, order, _ = open_rings.pop(label)
                if order is not None and pending_bond is not None and order != pending_bond:
                    raise SmilesError(f"conflicting ring-closure bond symbols at position {i}")
                add_bond(other, prev, pending_bond or order, i)
            else:
                open_rings[label] = (prev, pending_bond, i)
            pending_bond = None
            i += step
        elif ch == ".":
            if pending_bond is not None:
                raise SmilesError(f"bond symbol before '.' at position {i}")
            prev = None
            i += 1
        else:
            raise UnknownAtomToken(f"unknown token {ch!r} at position {i}")

    if stack:
        raise UnbalancedParenthesis("unclosed '(' in SMILES")
    if open_rings:
        label, (_, _, pos) = next(iter(open_rings.items()))
        raise UnclosedRing(f"ring-closure {label} opened at position {pos} never closed")
    if pending_bond is not None:
        raise SmilesError("SMILES ends with a bond symbol")

    out_atoms = tuple(
        Atom(symbol=a.symbol, index=k, formal_charge=a.charge, explicit_h=a.hcount,
             isotope=a.isotope, aromatic_flag=a.aromatic)
        for k, a in enumerate(atoms)
    )
    out_bonds = []
    for a, b, order in bonds:
        if order is None:
            order = AROMATIC if (atoms[a].aromatic and atoms[b].aromatic) else SINGLE
        out_bonds.append(Bond(src=a, dst=b, order=order))
    return out_atoms, tuple(out_bonds), stereo


# ------------------------------------------------------------------- rings

def _count_components(n_atoms: int, bonds) -> int:
    parent = list(range(n_atoms))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for b in bonds:
        ra, rb = find(b.src), find(b.dst)
        if ra != rb:
            parent[ra] = rb
    return len({find(i) for i in range(n_atoms)})


def perceive_rings(mol: Molecule) -> list[tuple[int, ...]]:
    """Minimum cycle basis (Horton candidates, greedy GF(2) independence).

    Returns cycles as atom-index tuples in ring order. The basis size always
    equals ``bonds - atoms + components``.
    """
    n = len(mol.atoms)
    target = len(mol.bonds) - n + _count_components(n, mol.bonds)
    if target <= 0:
        return []
    bond_index = {frozenset((b.src, b.dst)): k for k, b in enumerate(mol.bonds)}
    nbrs = [sorted(mol.neighbors(i)) for i in range(n)]

    candidates: dict[int, tuple[int, ...]] = {}
    for root in range(n):
        parent = {root: None}
        depth = {root: 0}
        q = deque([root])
        while q:
            u = q.popleft()
            for v in nbrs[u]:
                if v not in depth:
                    depth[v] = depth[u] + 1
                    parent[v] = u
                    q.append(v)

        def path_to_root(v):
            out = []
            while v is not None:
                out.append(v)
                v = parent[v]
            return out

        for b in mol.bonds:
            u, v = b.src, b.dst
            if u not in depth or v not in depth:
                continue
            pu, pv = path_to_root(u), path_to_root(v)
            if set(pu) & set(pv) != {root}:
                continue
            cycle = tuple(reversed(pu)) + tuple(pv[:-1])
            if len(cycle) < 3:
                continue
            mask = 0
            for k in range(len(cycle)):
                mask |= 1 << bond_index[frozenset((cycle[k], cycle[(k + 1) % len(cycle)]))]
            candidates.setdefault(mask, cycle)

    ordered = sorted(candidates.items(), key=lambda kv: (len(kv[1]), sorted(kv[1]), kv[1]))
    basis_rows: dict[int, int] = {}  # pivot bit -> reduced row
    rings: list[tuple[int, ...]] = []
    for mask, cycle in ordered:
        row = mask
        while row:
            pivot = row.bit_length() - 1
            if pivot in basis_rows:
                row ^= basis_rows[pivot]
            else:
                basis_rows[pivot] = row
                rings.append(_canonical_cycle(cycle))
                break
        if len(rings) == target:
            break
    return rings


def _canonical_cycle(cycle: tuple[int, ...]) -> tuple[int, ...]:
    k = cycle.index(min(cycle))
    rot = cycle[k:] + cycle[:k]
    if len(rot) > 2 and rot[-1] < rot[1]:
        rot = (rot[0],) + tuple(reversed(rot[1:]))
    return rot


def ring_size_label(size: int):
    """Ring size as reported downstream: 3..8 verbatim, anything larger is ``"large"``."""
    return size if 3 <= size <= 8 else "large"


def _mark_ring_bonds(mol: Molecule) -> Molecule:
    ring_pairs = set()
    for r in mol.rings:
        for k in range(len(r)):
            ring_pairs.add(frozenset((r[k], r[(k + 1) % len(r)])))
    bonds = []
    for b in mol.bonds:
        in_ring = frozenset((b.src, b.dst)) in ring_pairs
        order = b.order
        # an implicit aromatic bond between two ring systems (biphenyl) is single
        if order == AROMATIC and not in_ring:
            order = SINGLE
        bonds.append(dataclasses.replace(b, in_ring=in_ring, order=order))
    atoms = list(mol.atoms)
    for a in atoms:
        if a.aromatic_flag and not mol.ring_sizes_of_atom(a.index):
            raise KekulizationFailure(f"aromatic atom {a.index} ({a.symbol}) is not in a ring")
    return mol.replace(bonds=tuple(bonds))


def normalize_nitro(mol: Molecule) -> Molecule:
    """Charge-separate over-valent N=O groups.

    Neutral nitrogen written with valence above 3 and a terminal ``=O``
    (``N(=O)=O`` nitro groups, aromatic ``n=O`` N-oxides) is rewritten as
    ``[N+][O-]``, the form valence rules accept.
    """
    atoms, bonds = list(mol.atoms), list(mol.bonds)
    changed = False
    for a in mol.atoms:
        if a.symbol != "N" or a.bracket or a.formal_charge != 0:
            continue
        if mol.bond_order_sum(a.index) <= 3:
            continue
        oxo = [k for k in mol.bond_indices_of(a.index)
               if mol.bonds[k].order == DOUBLE
               and mol.atoms[mol.bonds[k].other(a.index)].symbol == "O"
               and mol.degree(mol.bonds[k].other(a.index)) == 1]
        if not oxo:
            continue
        k = oxo[-1]
        o = bonds[k].other(a.index)
        bonds[k] = dataclasses.replace(bonds[k], order=SINGLE)
        atoms[a.index] = dataclasses.replace(a, formal_charge=1)
        atoms[o] = dataclasses.replace(atoms[o], formal_charge=-1)
        changed = True
    return mol.replace(atoms=tuple(atoms), bonds=tuple(bonds)) if changed else mol


# ------------------------------------------------------------- kekulization

def _needs_double_bond(mol: Molecule, atom: Atom) -> bool:
    """True when an aromatic atom must receive one double bond from its ring system."""
    single_sum = 0
    for b in mol.bonds_of(atom.index):
        single_sum += 1 if b.order == AROMATIC else _ORDER_VALUE[b.order]
    valences = admissible_valences(atom.symbol, atom.formal_charge)
    if valences is None:
        # untabulated aromatic atoms (se, te, ...) behave like their group-16 cousins
        return False
    used = single_sum + (atom.explicit_h or 0)
    fitting = [v for v in valences if v >= used]
    if not fitting:
        return False
    return fitting[0] - used >= 1 and any(b.order == AROMATIC for b in mol.bonds_of(atom.index))


def kekulize(mol: Molecule) -> Molecule:
    """Assign single/double ``kekulized_order`` to every aromatic bond.

    Atoms that still need a double bond are perfectly matched along aromatic
    bonds by backtracking. Non-fused aromatic rings are additionally checked
    for a 4n+2 pi-electron count.
    """
    aromatic_bonds = [k for k, b in enumerate(mol.bonds) if b.order == AROMATIC]
    if not aromatic_bonds:
        return mol
    need = {a.index for a in mol.atoms if a.aromatic_flag and _needs_double_bond(mol, a)}
    options: dict[int, list[tuple[int, int]]] = {i: [] for i in need}
    for k in aromatic_bonds:
        b = mol.bonds[k]
        if b.src in need and b.dst in need:
            options[b.src].append((b.dst, k))
            options[b.dst].append((b.src, k))

    matched: dict[int, int] = {}
    chosen: set[int] = set()

    def solve() -> bool:
        free = [i for i in need if i not in matched]
        if not free:
            return True
        # most-constrained atom first; ties broken by index for determinism
        atom = min(free, key=lambda i: (sum(1 for j, _ in options[i] if j not in matched), i))
        for other, k in options[atom]:
            if other in matched:
                continue
            matched[atom] = k
            matched[other] = k
            chosen.add(k)
            if solve():
                return True
            del matched[atom]
            del matched[other]
            chosen.discard(k)
        return False

    if not solve():
        raise KekulizationFailure(f"cannot kekulize {mol.smiles or 'molecule'}")

    bonds = list(mol.bonds)
    for k in aromatic_bonds:
        bonds[k] = dataclasses.replace(bonds[k], kekulized_order=DOUBLE if k in chosen else SINGLE)
    out = mol.replace(bonds=tuple(bonds))
    _check_isolated_ring_electrons(out)
    return out


def _pi_electrons(mol: Molecule, atom: Atom, ring_pairs: set) -> Optional[int]:
    in_ring_double = False
    exo_double = False
    for b in mol.bonds_of(atom.index):
        order = b.kekulized_order or b.order
        if order == DOUBLE:
            if frozenset((b.src, b.dst)) in ring_pairs:
                in_ring_double = True
            else:
                exo_double = True
    if in_ring_double:
        return 1
    if exo_double:
        return 0
    if atom.symbol in ("N", "P") and atom.formal_charge == 0:
        return 2
    if atom.symbol in ("O", "S", "Se", "Te"):
        return 2 if atom.formal_charge <= 0 else 1
    if atom.symbol == "C":
        return {1: 0, -1: 2}.get(atom.formal_charge, None)
    if atom.symbol == "B":
        return 0
    return None


def _check_isolated_ring_electrons(mol: Molecule) -> None:
    aromatic_rings = [r for r in mol.rings if all(mol.atoms[i].aromatic_flag for i in r)]
    for r in aromatic_rings:
        rs = set(r)
        fused = any(len(rs & set(other)) >= 2 for other in aromatic_rings if other is not r)
        if fused:
            continue
        pairs = {frozenset((r[k], r[(k + 1) % len(r)])) for k in range(len(r))}
        total = 0
        for i in r:
            e = _pi_electrons(mol, mol.atoms[i], pairs)
            if e is None:
                total = None
                break
            total += e
        if total is not None and (total - 2) % 4 != 0:
            raise KekulizationFailure(
                f"aromatic ring {r} has {total} pi electrons; not a 4n+2 system"
            )


# ------------------------------------------------------------------ valence

def assign_implicit_hydrogens(mol: Molecule) -> Molecule:
    """Fill ``implicit_h`` and ``radical_electrons`` from default valences.

    Organic-subset atoms take the smallest admissible valence not below their
    bond-order sum. Bracket atoms keep their explicit hydrogen count.
    """
    atoms = []
    for a in mol.atoms:
        order_sum = mol.bond_order_sum(a.index)
        valences = admissible_valences(a.symbol, a.formal_charge)
        if a.bracket:
            used = order_sum + a.explicit_h
            if valences is not None and used > max(valences):
                raise ValenceViolation(
                    f"atom {a.index} ({a.symbol}{a.formal_charge:+d}) has valence {used}, "
                    f"max allowed {max(valences)}"
                )
            radical = 0
            if a.formal_charge == 0 and valences is not None:
                radical = max(0, valences[0] - order_sum - a.explicit_h)
            atoms.append(dataclasses.replace(a, implicit_h=0, radical_electrons=radical))
            continue
        if valences is None:
            raise UnknownAtomToken(f"no valence model for organic atom {a.symbol}")
        fitting = [v for v in valences if v >= order_sum]
        if not fitting:
            raise ValenceViolation(
                f"atom {a.index} ({a.symbol}) has bond-order sum {order_sum}, "
                f"max allowed {max(valences)}"
            )
        atoms.append(dataclasses.replace(a, implicit_h=fitting[0] - order_sum, radical_electrons=0))
    return mol.replace(atoms=tuple(atoms))


# ------------------------------------------------------------ bond features

def perceive_bond_properties(mol: Molecule) -> Molecule:
    """Set ``conjugated`` and ``rotatable`` on every bond."""
    multiple = [b.order in (DOUBLE, TRIPLE, AROMATIC) for b in mol.bonds]

    def other_multiple(atom_index: int, exclude: int) -> bool:
        return any(multiple[k] for k in mol.bond_indices_of(atom_index) if k != exclude)

    bonds = []
    for k, b in enumerate(mol.bonds):
        if b.order == AROMATIC:
            conj = True
        elif b.order == SINGLE:
            conj = other_multiple(b.src, k) and other_multiple(b.dst, k)
        else:
            conj = other_multiple(b.src, k) or other_multiple(b.dst, k)
        rot = (
            b.order == SINGLE
            and not b.in_ring
            and mol.degree(b.src) >= 2
            and mol.degree(b.dst) >= 2
        )
        bonds.append(dataclasses.replace(b, conjugated=conj, rotatable=rot))
    return mol.replace(bonds=tuple(bonds))


def parse_smiles(text: str) -> Molecule:
    """Parse a SMILES string into a fully perceived :class:`Molecule`."""
    atoms, bonds, stereo = _parse_raw(text)
    mol = Molecule(atoms=atoms, bonds=bonds, stereo_count=stereo, smiles=text.strip(),
                   components=_count_components(len(atoms), bonds))
    mol = mol.replace(rings=tuple(perceive_rings(mol)))
    mol = _mark_ring_bonds(mol)
    mol = normalize_nitro(mol)
    mol = kekulize(mol)
    mol = assign_implicit_hydrogens(mol)
    return perceive_bond_properties(mol)
