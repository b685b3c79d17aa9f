"""Real-basis Clebsch-Gordan tables, the reference SO(3) tensor product,
per-order SO(2) weights equivalent to a spherical-harmonic-filter tensor
product, and the expansion from irrep features to matrix sub-blocks.

Real CG coefficients are derived from the complex ones (exact rational
arithmetic inside the factorial sums) via the same change of basis used
for the Wigner-D matrices, so the equivariance identity

    contract(C, D1 x, D2 y) = D3 contract(C, x, y)

holds to machine precision for the real matrices of
:func:`so2frames.frames.wigner_d`.  Tables for odd l1+l2+l3 come out
purely imaginary under the basis change; the imaginary part is kept
(any fixed unit phase preserves equivariance and orthonormality).

Tables satisfy sum_{m1,m2} C[m1,m2,m3] C[m1,m2,m3'] = delta_{m3,m3'}
(normalization constant 1).
"""

from __future__ import annotations

import math
import threading
from fractions import Fraction

import numpy as np

from . import autodiff as ad
from .counters import OpCounter
from .frames import from_local, to_local
from .irreps import DEFAULT_L_CAP, IrrepsLayout, So2Features, So3Features, so3_layout

_TABLES: dict[tuple[int, int, int], np.ndarray] = {}
_TABLES_LOCK = threading.Lock()


def _check_triangle(l1: int, l2: int, l3: int) -> None:
    for l in (l1, l2, l3):
        if l < 0 or l > DEFAULT_L_CAP:
            raise ValueError(f"degree {l} outside [0, {DEFAULT_L_CAP}]")
    if not abs(l1 - l2) <= l3 <= l1 + l2:
        raise ValueError(f"triangle rule violated for ({l1}, {l2}, {l3})")


def _cg_complex(l1: int, l2: int, l3: int) -> np.ndarray:
    """<l1 m1 l2 m2 | l3 m3> with exact rational factorial sums."""
    fact = math.factorial
    C = np.zeros((2 * l1 + 1, 2 * l2 + 1, 2 * l3 + 1))
    for m1 in range(-l1, l1 + 1):
        for m2 in range(-l2, l2 + 1):
            m3 = m1 + m2
            if abs(m3) > l3:
                continue
            pref = Fraction(
                (2 * l3 + 1) * fact(l3 + l1 - l2) * fact(l3 - l1 + l2) * fact(l1 + l2 - l3),
                fact(l1 + l2 + l3 + 1))
            pref *= (fact(l3 + m3) * fact(l3 - m3) * fact(l1 - m1) * fact(l1 + m1)
                     * fact(l2 - m2) * fact(l2 + m2))
            acc = Fraction(0)
            kmin = max(0, -(l3 - l2 + m1), -(l3 - l1 - m2))
            kmax = min(l1 + l2 - l3, l1 - m1, l2 + m2)
            for k in range(kmin, kmax + 1):
                den = (fact(k) * fact(l1 + l2 - l3 - k) * fact(l1 - m1 - k)
                       * fact(l2 + m2 - k) * fact(l3 - l2 + m1 + k) * fact(l3 - l1 - m2 + k))
                acc += Fraction(-1 if k % 2 else 1, den)
            C[l1 + m1, l2 + m2, l3 + m3] = float(acc) * math.sqrt(float(pref))
    return C


def cg_table(l1: int, l2: int, l3: int) -> np.ndarray:
    """Memoized real-basis CG table with axes (m1, m2, m3).

    The returned array is shared and must not be mutated.
    """
    key = (l1, l2, l3)
    table = _TABLES.get(key)
    if table is not None:
        return table
    _check_triangle(l1, l2, l3)
    with _TABLES_LOCK:
        table = _TABLES.get(key)
        if table is not None:
            return table
        from .frames import _u_matrix  # same basis change as wigner_d

        Cc = _cg_complex(l1, l2, l3)
        U1, U2, U3 = _u_matrix(l1), _u_matrix(l2), _u_matrix(l3)
        T = np.einsum("abc,ma,nb,kc->mnk", Cc, np.conj(U1), np.conj(U2), U3)
        re, im = np.max(np.abs(T.real)), np.max(np.abs(T.imag))
        if im > re:
            assert re < 1e-12, f"mixed-phase CG table for {key}"
            table = np.ascontiguousarray(T.imag)
        else:
            assert im < 1e-12, f"mixed-phase CG table for {key}"
            table = np.ascontiguousarray(T.real)
        table.setflags(write=False)
        _TABLES[key] = table
    return table


def valid_paths(l_in: tuple[int, ...], l_filter: tuple[int, ...],
                l_out_max: int) -> list[tuple[int, int, int]]:
    """All triangle-valid (l_i, l_f, l_o) triples with l_o <= l_out_max."""
    paths = []
    for li in l_in:
        for lf in l_filter:
            for lo in range(abs(li - lf), min(li + lf, l_out_max) + 1):
                paths.append((li, lf, lo))
    return paths


class PathWeights:
    """Per-(l_i, l_f, l_o) channel weights for the SO(3) tensor product.

    Channels act independently (one scalar per path per channel), so every
    weight array has shape ``(channels,)``.
    """

    def __init__(self, weights: dict[tuple[int, int, int], np.ndarray]):
        self.weights = {}
        for path, w in weights.items():
            _check_triangle(*path)
            arr = w if ad.is_var(w) else np.atleast_1d(np.asarray(w, dtype=np.float64))
            if not np.all(np.isfinite(ad.value_of(arr))):
                raise ValueError(f"non-finite path weight for {path}")
            self.weights[path] = arr

    @classmethod
    def random(cls, paths, channels: int, rng: np.random.Generator) -> "PathWeights":
        return cls({p: rng.normal(size=channels) for p in paths})

    def items(self):
        return self.weights.items()

    def __getitem__(self, path):
        return self.weights[path]


def so3_tensor_product(x: So3Features, sh: So3Features, weights: PathWeights,
                       counter: OpCounter | None = None) -> So3Features:
    """Full CG tensor product of features with a single-channel filter.

    Computes, per path (l_i, l_f, l_o) and channel c,

        out[l_o][c, m3] += w[path][c] * sum_{m1,m2} C[m1,m2,m3] x[l_i][c,m1] sh[l_f][m2]

    summed over all paths in ``weights``.  The output layout carries every
    degree reachable by some path, with the channel count of its inputs.
    The counter (if given) is incremented by the exact multiply count of
    the defining sums: 2 per (m1, m2, m3, c) term plus the path-weight
    products.
    """
    mults = {c for _, c in x.layout.entries}
    if len(mults) != 1:
        raise ValueError("tensor product requires uniform multiplicity across degrees")
    channels = mults.pop()
    if any(c != 1 for _, c in sh.layout.entries):
        raise ValueError("filter must be single-channel")
    out_degrees = sorted({lo for (_, _, lo) in weights.weights})
    acc: dict[int, list] = {lo: [] for lo in out_degrees}
    for (li, lf, lo), w in weights.items():
        if x.layout.mult(li) == 0 or sh.layout.mult(lf) == 0:
            raise ValueError(f"path ({li},{lf},{lo}) not covered by input layouts")
        C = cg_table(li, lf, lo)
        raw = ad.einsum("abc,ua,b->uc", C, x.block(li),
                        ad.reshape(sh.block(lf), (2 * lf + 1,)))
        acc[lo].append(ad.mul(raw, ad.reshape(w, (channels, 1))))
        if counter is not None:
            counter.add("so3_tp", channels * max(1, li * lf * lo))
    layout = so3_layout([(lo, channels) for lo in out_degrees])
    blocks = []
    for lo in out_degrees:
        total = acc[lo][0]
        for term in acc[lo][1:]:
            total = ad.add(total, term)
        blocks.append(total)
    return So3Features(layout, blocks)


def filter_pole_amplitude(lf: int) -> float:
    """Value of the degree-lf orthonormal harmonic (m=0) at the target axis."""
    return math.sqrt((2 * lf + 1) / (4.0 * math.pi))


def escn_weights_from_paths(weights: PathWeights, li: int, lo: int):
    """Per-order complex weights reproducing the spherical-filter TP.

    For the (li, lo) pair, combines all filter degrees lf into per-order
    pairs ``(w1_m, w2_m)`` of shape ``(channels,)`` such that the SO(2)
    linear action

        z_{-m} = w1 x_{-m} + w2 x_{+m}
        z_{+m} = -w2 x_{-m} + w1 x_{+m}

    inside the local frame of the filter direction equals the full tensor
    product.  Only m = 0 filter components survive canonicalization, so
    each path contributes its CG column at m2 = 0 scaled by the filter's
    pole amplitude:

        w1_m = sum_lf h * K(lf) * C[(li, m), (lf, 0), (lo, m)]
        w2_m = -sum_lf h * K(lf) * C[(li, -m), (lf, 0), (lo, m)]

    Returns ``{m: (w1_m, w2_m)}`` for m = 0..min(li, lo) with w2_0 = 0.
    """
    channels = None
    for (pli, _, plo), w in weights.items():
        if (pli, plo) == (li, lo):
            channels = ad.value_of(w).shape[0]
    if channels is None:
        raise ValueError(f"no paths for (l_i, l_o) = ({li}, {lo})")
    out = {m: (np.zeros(channels), np.zeros(channels))
           for m in range(0, min(li, lo) + 1)}
    for (pli, lf, plo), h in weights.items():
        if (pli, plo) != (li, lo):
            continue
        K = filter_pole_amplitude(lf)
        C = cg_table(li, lf, lo)
        for m in range(0, min(li, lo) + 1):
            w1, w2 = out[m]
            w1 = ad.add(w1, ad.mul(h, K * C[li + m, lf, lo + m]))
            if m > 0:
                w2 = ad.add(w2, ad.mul(h, -K * C[li - m, lf, lo + m]))
            out[m] = (w1, w2)
    return out


def escn_so2_linear_weights(weights: PathWeights, in_layout: IrrepsLayout,
                            out_degrees) -> "object":
    """Assemble full per-order SO(2) linear weights matching a filter TP.

    Input channels at order m are the regrouped (degree, channel) slots of
    ``in_layout``; output channels those of the out_degrees layout.  The
    result is block-structured: slot (lo, c) at order m receives only from
    slot (li, c) via ``escn_weights_from_paths``.
    """
    from .frames import so2_layout_of
    from .so2ops import So2LinearWeights

    mults = {c for _, c in in_layout.entries}
    if len(mults) != 1:
        raise ValueError("uniform multiplicity required")
    channels = mults.pop()
    out_layout = so3_layout([(lo, channels) for lo in sorted(out_degrees)])
    per_pair = {}
    for li in in_layout.indices:
        for lo in sorted(out_degrees):
            try:
                per_pair[(li, lo)] = escn_weights_from_paths(weights, li, lo)
            except ValueError:
                continue
    lin = {}
    in_so2 = so2_layout_of(in_layout)
    out_so2 = so2_layout_of(out_layout)
    for m in out_so2.indices:
        cin = in_so2.mult(m)
        if cin == 0:
            continue  # no source channels at this order; the block is zero
        cout = out_so2.mult(m)
        w1 = np.zeros((cout, cin))
        w2 = np.zeros((cout, cin))
        row = 0
        for lo in out_layout.indices:
            if lo < m:
                continue
            col = 0
            for li in in_layout.indices:
                if li < m:
                    continue
                pair = per_pair.get((li, lo))
                if pair is not None and m in pair:
                    pw1, pw2 = pair[m]
                    for c in range(channels):
                        w1[row + c, col + c] = ad.value_of(pw1)[c]
                        w2[row + c, col + c] = ad.value_of(pw2)[c]
                col += channels
            row += channels
        lin[m] = (w1, w2)
    return So2LinearWeights({m: (lin[m][0], lin[m][1] if m > 0 else None)
                             for m in lin})


def escn_reference_apply(x: So3Features, direction, weights: PathWeights,
                         out_degrees, l_max: int | None = None,
                         counter: OpCounter | None = None) -> So3Features:
    """rotate -> SO(2) linear -> rotate back, the O(L^3) route.

    Equals ``so3_tensor_product(x, Y(direction), weights)`` for paths with
    a spherical-harmonic filter.
    """
    from .frames import frame_from_direction
    from .so2ops import so2_linear

    out_degrees = sorted(out_degrees)
    cap = l_max if l_max is not None else max(x.layout.max_index, out_degrees[-1])
    frame = frame_from_direction(direction, cap)
    lin = escn_so2_linear_weights(weights, x.layout, out_degrees)
    mults = {c for _, c in x.layout.entries}
    channels = mults.pop()
    out_layout = so3_layout([(lo, channels) for lo in out_degrees])
    local = to_local(frame, x, counter=counter)
    mixed = so2_linear(local, lin, counter=counter)
    # orders the input cannot reach stay zero but must exist for the
    # inverse mapping
    from .frames import so2_layout_of as regroup
    full = regroup(out_layout)
    blocks = []
    for m in full.indices:
        if mixed.layout.mult(m):
            blocks.append(mixed.block(m))
        else:
            blocks.append(np.zeros(full.block_shape(m)))
    padded = So2Features(full, blocks)
    return from_local(frame, padded, out_layout, counter=counter)


def expansion(feature: So3Features, w: dict[int, np.ndarray], l1: int, l2: int):
    """CG expansion of irrep features into a (2*l1+1, 2*l2+1) sub-block.

    ``w`` maps degree l3 to per-channel weights of shape ``(mult_l3,)``;
    degrees in the triangle range missing from the feature or from ``w``
    contribute zero.  Linear in both the feature and the weights.
    """
    dim1, dim2 = 2 * l1 + 1, 2 * l2 + 1
    total = None
    for l3 in range(abs(l1 - l2), l1 + l2 + 1):
        if l3 not in w or feature.layout.mult(l3) == 0:
            continue
        C = cg_table(l1, l2, l3)
        term = ad.einsum("abc,uc,u->ab", C, feature.block(l3), w[l3])
        total = term if total is None else ad.add(total, term)
    if total is None:
        return np.zeros((dim1, dim2))
    return total


def expansion_decompose(block, l1: int, l2: int) -> dict[int, np.ndarray]:
    """CG decomposition of a sub-block, the adjoint of :func:`expansion`.

    Returns per-degree vectors ``v[l3][m3] = sum_{m1,m2} C[m1,m2,m3] block[m1,m2]``.
    Because the CG tables for different l3 are mutually orthonormal,
    decomposing ``expansion(feature, w)`` recovers the w-weighted feature
    ``v[l3] = sum_c w[l3][c] feature[l3][c, :]`` exactly.
    """
    out = {}
    arr = ad.value_of(block)
    for l3 in range(abs(l1 - l2), l1 + l2 + 1):
        C = cg_table(l1, l2, l3)
        out[l3] = np.einsum("abc,ab->c", C, arr)
    return out
