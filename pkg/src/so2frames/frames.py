"""Rotations, real-basis Wigner-D matrices, and SO(2) local frames.

The fixed target axis of all local frames is the z-axis:

    TARGET_AXIS = (0, 0, 1)

so the stabilizer subgroup consists of rotations about z, and the real
spherical-harmonic basis of :mod:`so2frames.irreps` (polar axis z) makes
stabilizer rotations act block-diagonally on each degree: the component
pair ``(x_{-m}, x_{+m})`` transforms by the order-m planar rotation
matrix.  A frame for a unit direction ``r`` is the minimal-angle rotation
``h`` with ``h^{-1} r = TARGET_AXIS``; mapping features into the frame
("to local") applies ``D(h^{-1})`` per degree and regroups components by
order m.

Wigner-D construction: the complex little-d matrix from the standard
factorial sum, assembled into ``D(a,b,g) = e^{-i m' a} d(b) e^{-i m g}``
(active ZYZ composition), then conjugated into the real basis with the
fixed unitary change of basis U.  The resulting real matrices satisfy
``Y(R r) = D(R) Y(r)`` exactly in exact arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .counters import OpCounter
from .irreps import (DEFAULT_L_CAP, SO3, IrrepsLayout, So2Features,
                     So3Features, rotate_so2, so2_layout)

TARGET_AXIS = np.array([0.0, 0.0, 1.0])
# antipodal fallback: pi rotation about this axis maps -TARGET_AXIS to TARGET_AXIS
FALLBACK_AXIS = np.array([1.0, 0.0, 0.0])


@dataclass(frozen=True)
class Rotation:
    """A proper 3D rotation with its ZYZ Euler angles."""

    matrix: np.ndarray
    euler: tuple[float, float, float]

    def __post_init__(self):
        R = self.matrix
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-12:
            raise ValueError("rotation matrix is not orthogonal")
        if abs(np.linalg.det(R) - 1.0) > 1e-12:
            raise ValueError("rotation matrix must have determinant +1")

    def inverse(self) -> "Rotation":
        return rotation_from_matrix(self.matrix.T)

    def compose(self, other: "Rotation") -> "Rotation":
        """self after other: matrix product self.matrix @ other.matrix."""
        return rotation_from_matrix(self.matrix @ other.matrix)

    def apply(self, vec) -> np.ndarray:
        return self.matrix @ np.asarray(vec, dtype=np.float64)

    def to_json_obj(self):
        return [[float(x) for x in row] for row in self.matrix]


def _rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_from_euler(alpha: float, beta: float, gamma: float) -> Rotation:
    """Active ZYZ composition R = Rz(alpha) Ry(beta) Rz(gamma)."""
    return Rotation(_rot_z(alpha) @ _rot_y(beta) @ _rot_z(gamma),
                    (float(alpha), float(beta), float(gamma)))


def euler_from_matrix(R: np.ndarray) -> tuple[float, float, float]:
    """ZYZ angles reproducing the matrix; beta in [0, pi].

    At the gimbal poles (beta = 0 or pi) gamma is fixed to 0.
    """
    r22 = min(1.0, max(-1.0, float(R[2, 2])))
    beta = math.acos(r22)
    if r22 > 1.0 - 1e-12:
        return math.atan2(R[1, 0], R[0, 0]), 0.0, 0.0
    if r22 < -1.0 + 1e-12:
        return math.atan2(-R[1, 0], -R[0, 0]), math.pi, 0.0
    alpha = math.atan2(R[1, 2], R[0, 2])
    gamma = math.atan2(R[2, 1], -R[2, 0])
    return alpha, beta, gamma


def rotation_from_matrix(R) -> Rotation:
    R = np.asarray(R, dtype=np.float64)
    return Rotation(R, euler_from_matrix(R))


def rotation_from_axis_angle(axis, angle: float) -> Rotation:
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    K = np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])
    R = np.eye(3) + math.sin(angle) * K + (1.0 - math.cos(angle)) * (K @ K)
    return rotation_from_matrix(R)


# ---------------------------------------------------------------------------
# Wigner-D in the real basis
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _u_matrix(l: int) -> np.ndarray:
    """Unitary change of basis: real components = U @ complex components."""
    U = np.zeros((2 * l + 1, 2 * l + 1), dtype=complex)
    U[l, l] = 1.0
    rt2 = 1.0 / math.sqrt(2.0)
    for m in range(1, l + 1):
        sign = -1.0 if m % 2 else 1.0
        U[l + m, l + m] = sign * rt2
        U[l + m, l - m] = rt2
        U[l - m, l + m] = -1j * sign * rt2
        U[l - m, l - m] = 1j * rt2
    return U


def _wigner_small_d(l: int, beta: float) -> np.ndarray:
    d = np.zeros((2 * l + 1, 2 * l + 1))
    cb, sb = math.cos(beta / 2.0), math.sin(beta / 2.0)
    for mp in range(-l, l + 1):
        for m in range(-l, l + 1):
            pref = math.sqrt(
                math.factorial(l + mp) * math.factorial(l - mp)
                * math.factorial(l + m) * math.factorial(l - m))
            acc = 0.0
            for k in range(max(0, m - mp), min(l + m, l - mp) + 1):
                den = (math.factorial(l + m - k) * math.factorial(k)
                       * math.factorial(mp - m + k) * math.factorial(l - mp - k))
                term = cb ** (2 * l + m - mp - 2 * k) * sb ** (mp - m + 2 * k) / den
                acc += -term if (mp - m + k) % 2 else term
            d[l + mp, l + m] = pref * acc
    return d


def wigner_d(l: int, rotation: Rotation) -> np.ndarray:
    """Real-basis Wigner-D matrix of a rotation for degree l.

    Orthogonal, and consistent with the harmonics:
    ``Y_l(R r) = wigner_d(l, R) @ Y_l(r)``.
    """
    if l < 0 or l > DEFAULT_L_CAP:
        raise ValueError(f"degree must be in [0, {DEFAULT_L_CAP}], got {l}")
    if l == 0:
        return np.array([[1.0]])
    alpha, beta, gamma = rotation.euler
    if alpha == 0.0 and beta == 0.0 and gamma == 0.0:
        return np.eye(2 * l + 1)  # keep the identity exact
    d = _wigner_small_d(l, beta)
    mvals = np.arange(-l, l + 1)
    Dc = np.exp(-1j * alpha * mvals)[:, None] * d * np.exp(-1j * gamma * mvals)[None, :]
    U = _u_matrix(l)
    Dr = U @ np.conj(Dc) @ np.conj(U).T
    if np.max(np.abs(Dr.imag)) > 1e-12:
        raise AssertionError(f"real Wigner-D has imaginary residue at l={l}")
    return np.ascontiguousarray(Dr.real)


def order_alignment_permutation(l: int) -> np.ndarray:
    """Permutation grouping degree-l components as (0, -1,+1, -2,+2, ...).

    In the permuted basis a rotation about the target axis is
    block-diagonal ``diag(1, R_1(a), ..., R_l(a))``.
    """
    perm = [l] + [i for m in range(1, l + 1) for i in (l - m, l + m)]
    P = np.zeros((2 * l + 1, 2 * l + 1))
    for row, col in enumerate(perm):
        P[row, col] = 1.0
    return P


# ---------------------------------------------------------------------------
# local frames
# ---------------------------------------------------------------------------

class Frame:
    """Minimal-angle canonicalization of a reference direction.

    ``rotation`` is h with ``h^{-1} reference = TARGET_AXIS``; the per
    degree caches hold ``D(h^{-1})`` (into the frame) and ``D(h)`` (out of
    the frame) up to ``l_max``.
    """

    def __init__(self, reference: np.ndarray, rotation: Rotation, l_max: int):
        self.reference = reference
        self.rotation = rotation
        self.l_max = l_max
        inv = rotation.inverse()
        self.d_in = [wigner_d(l, inv) for l in range(l_max + 1)]
        self.d_out = [wigner_d(l, rotation) for l in range(l_max + 1)]

    def __repr__(self):
        return f"Frame(reference={self.reference.tolist()}, l_max={self.l_max})"


def frame_from_direction(direction, l_max: int = 4) -> Frame:
    """Deterministic frame for a direction (need not be normalized).

    The canonical choice is the minimal-angle rotation about
    ``r x TARGET_AXIS``; for the antipodal degeneracy ``r = -TARGET_AXIS``
    the frame is the pi rotation about ``FALLBACK_AXIS``.
    """
    r = np.asarray(direction, dtype=np.float64)
    n = float(np.linalg.norm(r))
    if n < 1e-12:
        raise ValueError("cannot build a frame from a zero-length direction")
    r = r / n
    c = min(1.0, max(-1.0, float(np.dot(r, TARGET_AXIS))))
    if c > 1.0 - 1e-14:
        h_inv = rotation_from_matrix(np.eye(3))
    elif c < -1.0 + 1e-14:
        h_inv = rotation_from_axis_angle(FALLBACK_AXIS, math.pi)
    else:
        axis = np.cross(r, TARGET_AXIS)
        h_inv = rotation_from_axis_angle(axis, math.acos(c))
    frame = Frame(r, h_inv.inverse(), l_max)
    residual = np.linalg.norm(h_inv.apply(r) - TARGET_AXIS)
    if residual > 1e-12:
        raise AssertionError(f"frame residual {residual}")
    return frame


def so2_layout_of(so3: IrrepsLayout) -> IrrepsLayout:
    """The SO(2) layout produced by regrouping an SO(3) layout by order.

    Order m collects the channels of every degree l >= m, ascending l.
    """
    if so3.kind != SO3:
        raise ValueError("expected an SO(3) layout")
    entries = []
    for m in range(so3.max_index + 1):
        mult = sum(c for l, c in so3.entries if l >= m)
        if mult > 0:
            entries.append((m, mult))
    return so2_layout(entries)


def to_local(frame: Frame, x: So3Features, counter: OpCounter | None = None) -> So2Features:
    """Rotate SO(3) features into the frame and regroup by order m.

    ``x'_l = D_l(h^{-1}) x_l`` per degree, then order m gathers the
    ``(x_{-m}, x_{+m})`` column pairs of every degree l >= m (ascending l).
    """
    if x.layout.max_index > frame.l_max:
        raise ValueError(
            f"feature degree {x.layout.max_index} exceeds frame cache l_max {frame.l_max}")
    rotated = {}
    for l, block in x.items():
        rotated[l] = ad.matmul(block, frame.d_in[l].T)
        if counter is not None:
            counter.add("frame_rotation", x.layout.mult(l) * l * l)
    out_layout = so2_layout_of(x.layout)
    blocks = []
    for m in out_layout.indices:
        cols = []
        for l in x.layout.indices:
            if l < m:
                continue
            blk = rotated[l]
            if m == 0:
                cols.append(ad.take(blk, (slice(None), slice(l, l + 1))))
            else:
                cols.append(ad.concat(
                    [ad.take(blk, (slice(None), slice(l - m, l - m + 1))),
                     ad.take(blk, (slice(None), slice(l + m, l + m + 1)))], axis=1))
        blocks.append(cols[0] if len(cols) == 1 else ad.concat(cols, axis=0))
    return So2Features(out_layout, blocks)


def from_local(frame: Frame, x: So2Features, so3_layout: IrrepsLayout,
               counter: OpCounter | None = None) -> So3Features:
    """Exact inverse of :func:`to_local` for the given SO(3) layout."""
    if so2_layout_of(so3_layout) != x.layout:
        raise ValueError("SO(2) layout is not the regrouping of the SO(3) layout")
    order_offsets = {m: 0 for m in x.layout.indices}
    blocks = []
    for l in so3_layout.indices:
        mult = so3_layout.mult(l)
        cols = [None] * (2 * l + 1)
        for m in range(0, l + 1):
            blk = x.block(m)
            off = order_offsets[m]
            rows = (slice(off, off + mult),)
            if m == 0:
                cols[l] = ad.take(blk, rows + (slice(0, 1),))
            else:
                cols[l - m] = ad.take(blk, rows + (slice(0, 1),))
                cols[l + m] = ad.take(blk, rows + (slice(1, 2),))
            order_offsets[m] = off + mult
        assembled = ad.concat(cols, axis=1)
        blocks.append(ad.matmul(assembled, frame.d_out[l].T))
        if counter is not None:
            counter.add("frame_rotation", mult * l * l)
    return So3Features(so3_layout, blocks)


def rotate_so3(features: So3Features, rotation: Rotation) -> So3Features:
    """Apply a global rotation to SO(3) features (per-degree Wigner-D)."""
    blocks = [ad.matmul(block, wigner_d(l, rotation).T) for l, block in features.items()]
    return So3Features(features.layout, blocks)


def frame_average_check(phi, direction, x: So3Features, samples: int,
                        rng: np.random.Generator) -> float:
    """Deviation between stabilizer-averaged and single-frame evaluation.

    ``phi`` maps So2Features to So2Features.  Averages ``(hg) phi((hg)^{-1} x)``
    over ``samples`` uniformly sampled stabilizer rotations g and compares
    with ``h phi(h^{-1} x)``; for a stabilizer-equivariant phi the average
    collapses to the single term and the deviation vanishes.
    """
    if samples < 1:
        raise ValueError("sample count must be >= 1")
    frame = frame_from_direction(direction, x.layout.max_index)
    local = to_local(frame, x)
    single = from_local(frame, phi(local), x.layout)
    acc = [np.zeros_like(b) for b in single.as_arrays()]
    for _ in range(samples):
        theta = rng.uniform(0.0, 2.0 * math.pi)
        term = from_local(frame, rotate_so2(phi(rotate_so2(local, -theta)), theta), x.layout)
        for a, b in zip(acc, term.as_arrays()):
            a += b
    deviation = 0.0
    for a, b in zip(acc, single.as_arrays()):
        deviation = max(deviation, float(np.max(np.abs(a / samples - b))))
    return deviation
