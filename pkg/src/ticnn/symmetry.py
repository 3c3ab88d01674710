"""Type-1 (interpolation-free) transformation families on square and cubic grids.

Every element is stored as a signed permutation matrix ``R`` acting on the
trailing spatial axes of a tensor: the entry at centred coordinate ``x`` moves
to ``R @ x``. Composition is matrix product, inversion is transpose, and
``apply(compose(a, b), v) == apply(a, apply(b, v))``.

Orientation convention (2D, axes = (row, col)): one quarter turn is a
counterclockwise rotation, i.e. ``numpy.rot90``; the reflection is a
left-right flip applied after the rotation.  Any leading (channel) axes are
carried along untouched.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .tensor import DEFAULT_TOL, Tolerance, approx_eq

Matrix = tuple[tuple[int, ...], ...]


@dataclass(frozen=True)
class GroupElement:
    family: str
    matrix: Matrix
    label: str = field(default="", compare=False)

    @property
    def dim(self) -> int:
        return len(self.matrix)

    @property
    def is_identity(self) -> bool:
        return self.matrix == _identity_matrix(self.dim)

    @property
    def quarter_turns(self) -> int:
        """Counterclockwise quarter turns (2D only)."""
        return _decompose_2d(self)[0]

    @property
    def reflect(self) -> int:
        """1 if a left-right flip follows the rotation (2D only)."""
        return _decompose_2d(self)[1]

    def __str__(self) -> str:
        return self.label or repr(self.matrix)


@dataclass(frozen=True)
class TransformFamily:
    name: str
    dim: int
    elements: tuple[GroupElement, ...]
    closed: bool = True

    @property
    def order(self) -> int:
        return len(self.elements)

    def __iter__(self):
        return iter(self.elements)

    def __len__(self) -> int:
        return len(self.elements)

    def __getitem__(self, i: int) -> GroupElement:
        return self.elements[i]


def _identity_matrix(d: int) -> Matrix:
    return tuple(tuple(int(i == j) for j in range(d)) for i in range(d))


def _as_matrix(a: np.ndarray) -> Matrix:
    return tuple(tuple(int(x) for x in row) for row in a)


_ROT90 = np.array([[0, -1], [1, 0]])
_FLIP_LR = np.array([[1, 0], [0, -1]])


def _matrix_2d(quarter_turns: int, reflect: int) -> Matrix:
    m = np.linalg.matrix_power(_ROT90, quarter_turns % 4)
    if reflect:
        m = _FLIP_LR @ m
    return _as_matrix(m)


def _decompose_2d(e: GroupElement) -> tuple[int, int]:
    if e.dim != 2:
        raise ValueError("quarter_turns/reflect are defined for 2D elements only")
    for f in (0, 1):
        for r in range(4):
            if _matrix_2d(r, f) == e.matrix:
                return r, f
    raise AssertionError("unreachable: every signed 2x2 permutation is in Dih4")


_LABELS_2D = {
    (0, 0): "id", (1, 0): "rot90", (2, 0): "rot180", (3, 0): "rot270",
    (0, 1): "flip-lr", (1, 1): "flip-anti", (2, 1): "flip-td", (3, 1): "flip-diag",
}


def element_2d(family: str, quarter_turns: int, reflect: int = 0) -> GroupElement:
    key = (quarter_turns % 4, int(bool(reflect)))
    return GroupElement(family, _matrix_2d(*key), _LABELS_2D[key])


def _axis_rotation_3d(axis: int, quarter_turns: int) -> Matrix:
    """Counterclockwise quarter turns in the plane of the two axes other than ``axis``."""
    p, q = [i for i in range(3) if i != axis]
    m = np.eye(3, dtype=int)
    r = np.linalg.matrix_power(_ROT90, quarter_turns % 4)
    m[np.ix_([p, q], [p, q])] = r
    return _as_matrix(m)


def _oct24() -> tuple[GroupElement, ...]:
    mats = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1, -1), repeat=3):
            m = np.zeros((3, 3), dtype=int)
            for i, (j, s) in enumerate(zip(perm, signs)):
                m[i, j] = s
            if round(np.linalg.det(m)) == 1:
                mats.append(_as_matrix(m))
    # identity first, then a fixed lexicographic order
    ident = _identity_matrix(3)
    mats.sort(key=lambda m: (m != ident, m))
    return tuple(GroupElement("oct24", m, f"oct24[{i}]") for i, m in enumerate(mats))


def _axis3d() -> tuple[GroupElement, ...]:
    out = []
    for axis, name in enumerate("xyz"):
        for r in range(4):
            out.append(GroupElement("axis3d", _axis_rotation_3d(axis, r), f"{name}-rot{90 * r}"))
    return tuple(out)


_FAMILY_2D = {
    "trivial": [(0, 0)],
    "dih4": [(r, f) for f in (0, 1) for r in range(4)],
    "c4": [(r, 0) for r in range(4)],
    "c2": [(0, 0), (2, 0)],
    "flip-td": [(0, 0), (2, 1)],
    "flip-lr": [(0, 0), (0, 1)],
    "flip-diag": [(0, 0), (3, 1)],
    "flip-anti": [(0, 0), (1, 1)],
}

FAMILY_NAMES = tuple(_FAMILY_2D) + ("oct24", "axis3d")
FAMILIES_2D = tuple(n for n in _FAMILY_2D if n != "trivial")


@lru_cache(maxsize=None)
def get_family(name: str, dedup: bool = False) -> TransformFamily:
    """Look up a family by its CLI name.

    ``axis3d`` lists four quarter turns about each of the three axes (twelve
    entries, identity three times); it is not closed under composition.
    With ``dedup=True`` repeated matrices are dropped, leaving ten.
    """
    if name in _FAMILY_2D:
        elems = tuple(element_2d(name, r, f) for r, f in _FAMILY_2D[name])
        return TransformFamily(name, 2, elems)
    if name == "oct24":
        return TransformFamily(name, 3, _oct24())
    if name == "axis3d":
        elems = _axis3d()
        if dedup:
            seen, kept = set(), []
            for e in elems:
                if e.matrix not in seen:
                    seen.add(e.matrix)
                    kept.append(e)
            elems = tuple(kept)
        return TransformFamily(name, 3, elems, closed=False)
    raise ValueError(f"unknown family {name!r}; expected one of {', '.join(FAMILY_NAMES)}")


def elements(family: TransformFamily | str) -> list[GroupElement]:
    if isinstance(family, str):
        family = get_family(family)
    return list(family.elements)


def identity(family: TransformFamily | str) -> GroupElement:
    return elements(family)[0]


def _check_spatial(e: GroupElement, v: np.ndarray) -> None:
    d = e.dim
    if v.ndim < d:
        raise ValueError(f"tensor of rank {v.ndim} has fewer than {d} spatial axes")
    sides = v.shape[-d:]
    if len(set(sides)) != 1:
        raise ValueError(f"spatial extent must be square/cubic, got {sides}")


def apply(e: GroupElement, v) -> np.ndarray:
    """Permute the trailing spatial axes of ``v`` according to ``e``."""
    v = np.asarray(v)
    _check_spatial(e, v)
    d = e.dim
    lead = v.ndim - d
    perm = []
    flips = []
    for i, row in enumerate(e.matrix):
        j = next(k for k, x in enumerate(row) if x)
        perm.append(lead + j)
        if row[j] < 0:
            flips.append(lead + i)
    out = np.transpose(v, tuple(range(lead)) + tuple(perm))
    if flips:
        out = np.flip(out, axis=tuple(flips))
    return np.ascontiguousarray(out)


def inverse(e: GroupElement) -> GroupElement:
    m = np.array(e.matrix).T
    inv = _as_matrix(m)
    for cand in elements(e.family):
        if cand.matrix == inv:
            return cand
    return GroupElement(e.family, inv, f"inv({e.label})")


def compose(a: GroupElement, b: GroupElement) -> GroupElement:
    """Element equivalent to applying ``b`` first, then ``a``."""
    if a.family != b.family:
        raise ValueError(f"cannot compose elements of {a.family!r} and {b.family!r}")
    m = _as_matrix(np.array(a.matrix) @ np.array(b.matrix))
    for cand in elements(a.family):
        if cand.matrix == m:
            return cand
    raise ValueError(f"family {a.family!r} is not closed: {a} o {b} is not a member")


def symmetrize(v, family: TransformFamily | str) -> np.ndarray:
    """Group average ``(1/M) * sum_r apply(inverse(e_r), v)``.

    The M transformed copies are summed per entry in ascending value order.
    Group closure means every input in an orbit produces the same multiset of
    copies at each position, so orbit members symmetrize to bit-identical
    arrays.
    """
    if isinstance(family, str):
        family = get_family(family)
    v = np.asarray(v, dtype=np.float64)
    stack = np.stack([apply(inverse(e), v) for e in family.elements])
    stack.sort(axis=0)
    acc = stack[0].copy()
    for s in stack[1:]:
        acc += s
    return acc / family.order


def is_invariant(v, family: TransformFamily | str, tol: Tolerance = DEFAULT_TOL) -> bool:
    v = np.asarray(v, dtype=np.float64)
    return all(approx_eq(apply(e, v), v, tol) for e in elements(family))
