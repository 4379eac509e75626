"""Block-Toeplitz operator algebra on truncated Fourier fields.

Operators that commute with time translations have matrix elements depending
on the time indices only through their difference:
A^{(l2,j2)}_{(l1,j1)} = A^{j2}_{j1}(l1 - l2).  They are stored as a table of
spatial blocks indexed by the offset l on the doubled rectangle
|l_i| <= 2 n_phi.  The module provides construction from multiplication and
Fourier-multiplier operators, application to fields, composition, s-decay
norms, time-offset smoothing, Neumann inversion, matrix exponentials, and
dense materialization for oracle checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spectral import FourierField, Frequency, Truncation, sobolev_norm

__all__ = [
    "ToplitzOperator",
    "DiagonalOperator",
    "identity",
    "from_multiplication",
    "from_multiplier",
    "from_diagonal",
    "apply",
    "compose",
    "add",
    "decay_norm",
    "smooth",
    "smooth_complement",
    "neumann_inverse",
    "matrix_exponential",
    "materialize_matrix",
    "materialize_linearized",
    "flatten_field",
    "unflatten_field",
    "operator_to_json",
]

MATERIALIZE_CAP = 20000


def _block_shape(trunc: Truncation) -> tuple[int, ...]:
    m = 2 * trunc.n_x + 1
    return (4 * trunc.n_phi + 1,) * trunc.nu + (m, m)


@dataclass(frozen=True)
class ToplitzOperator:
    """Operator A with blocks[l][j1, j2] = A^{j2}_{j1}(l), |l_i| <= 2 n_phi."""

    trunc: Truncation
    blocks: np.ndarray = field(repr=False)
    #: Frobenius mass of blocks dropped at the |l| <= 2 n_phi boundary by the
    #: producing operation (composition leakage diagnostic).
    dropped_mass: float = 0.0

    def __post_init__(self):
        if self.blocks.shape != _block_shape(self.trunc):
            raise ValueError(
                f"block table shape {self.blocks.shape} does not match {_block_shape(self.trunc)}"
            )
        self.blocks.setflags(write=False)

    # offsets are centered at index 2*n_phi per phi axis
    def block(self, l: tuple[int, ...]) -> np.ndarray:
        idx = tuple(li + 2 * self.trunc.n_phi for li in l)
        return self.blocks[idx]

    def scale(self, a: complex) -> "ToplitzOperator":
        return ToplitzOperator(self.trunc, self.blocks * a)

    def __add__(self, other: "ToplitzOperator") -> "ToplitzOperator":
        return add(self, other)

    def __sub__(self, other: "ToplitzOperator") -> "ToplitzOperator":
        return add(self, other.scale(-1.0))

    def reality_defect(self) -> float:
        """sup |conj(A^j_k(l)) - A^{-j}_{-k}(-l)| (zero for real operators)."""
        rev = self.blocks[tuple(slice(None, None, -1) for _ in self.blocks.shape)]
        return float(np.max(np.abs(np.conj(self.blocks) - rev)))

    def reversibility_defect(self) -> float:
        """sup |A^{-j}_{-k}(-l) - A^j_k(l)|; zero for operators preserving parity classes."""
        rev = self.blocks[tuple(slice(None, None, -1) for _ in self.blocks.shape)]
        return float(np.max(np.abs(rev - self.blocks)))


@dataclass(frozen=True)
class DiagonalOperator:
    """Constant-coefficient diagonal operator: mu[j + n_x] acts on the j-th mode."""

    trunc: Truncation
    mu: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.mu.shape != (2 * self.trunc.n_x + 1,):
            raise ValueError("mu must have one entry per spatial mode")
        self.mu.setflags(write=False)

    def mu_at(self, j: int) -> complex:
        return complex(self.mu[j + self.trunc.n_x])

    def conjugate_symmetry_defect(self) -> float:
        return float(np.max(np.abs(self.mu - np.conj(self.mu[::-1]))))

    def __add__(self, other: "DiagonalOperator") -> "DiagonalOperator":
        return DiagonalOperator(self.trunc, self.mu + other.mu)


# ---------------------------------------------------------------------------
# constructors


def identity(trunc: Truncation) -> ToplitzOperator:
    blocks = np.zeros(_block_shape(trunc), dtype=complex)
    center = (2 * trunc.n_phi,) * trunc.nu
    blocks[center] = np.eye(2 * trunc.n_x + 1)
    return ToplitzOperator(trunc, blocks)


def from_multiplication(p: FourierField) -> ToplitzOperator:
    """Multiplication operator h -> p h as a block-Toeplitz table."""
    trunc = p.trunc
    m = 2 * trunc.n_x + 1
    blocks = np.zeros(_block_shape(trunc), dtype=complex)
    j1 = np.arange(m)[:, None]
    j2 = np.arange(m)[None, :]
    off = j1 - j2  # spatial offset j1 - j2 in [-2 n_x, 2 n_x]
    valid = np.abs(off - 0) <= trunc.n_x
    for lidx in np.ndindex(*trunc.shape[: trunc.nu]):
        row = p.c[lidx]
        blk = np.zeros((m, m), dtype=complex)
        blk[valid] = row[(off + trunc.n_x)[valid]]
        bidx = tuple(i + trunc.n_phi for i in lidx)  # offset l equals the mode of p
        blocks[bidx] = blk
    return ToplitzOperator(trunc, blocks)


def from_multiplier(trunc: Truncation, m_func) -> ToplitzOperator:
    """Fourier multiplier h_{l,j} -> m(j) h_{l,j} (only the l = 0 block)."""
    jj = np.arange(-trunc.n_x, trunc.n_x + 1)
    vals = np.array([m_func(int(j)) for j in jj], dtype=complex)
    blocks = np.zeros(_block_shape(trunc), dtype=complex)
    center = (2 * trunc.n_phi,) * trunc.nu
    blocks[center] = np.diag(vals)
    return ToplitzOperator(trunc, blocks)


def from_diagonal(d: DiagonalOperator) -> ToplitzOperator:
    return from_multiplier(d.trunc, lambda j: d.mu[j + d.trunc.n_x])


def dx_inv_multiplier(trunc: Truncation) -> ToplitzOperator:
    """The zero-average antiderivative d/dx^{-1} as a multiplier operator."""
    return from_multiplier(trunc, lambda j: 0.0 if j == 0 else 1.0 / (1j * j))


def pi0_multiplier(trunc: Truncation) -> ToplitzOperator:
    """Projector removing the x-average (j = 0 modes)."""
    return from_multiplier(trunc, lambda j: 0.0 if j == 0 else 1.0)


# ---------------------------------------------------------------------------
# action and composition


def _offsets(trunc: Truncation):
    return np.ndindex(*(4 * trunc.n_phi + 1,) * trunc.nu)


def apply(A: ToplitzOperator, u: FourierField) -> FourierField:
    """(Au)_{l1,j1} = sum_{l2,j2} A^{j2}_{j1}(l1-l2) u_{l2,j2}, clipped to the rectangle."""
    trunc = A.trunc
    if trunc != u.trunc:
        raise ValueError("truncation mismatch between operator and field")
    nu, npk = trunc.nu, trunc.n_phi
    out = np.zeros(trunc.shape, dtype=complex)
    uc = u.c
    for off in _offsets(trunc):
        l = tuple(o - 2 * npk for o in off)
        blk = A.blocks[off]
        if not blk.any():
            continue
        # output index l1 = l2 + l must stay within |l1_i| <= n_phi
        src = []
        dst = []
        ok = True
        for li in l:
            lo_src = max(0, -li)
            hi_src = min(2 * npk + 1, 2 * npk + 1 - li)
            if lo_src >= hi_src:
                ok = False
                break
            src.append(slice(lo_src, hi_src))
            dst.append(slice(lo_src + li, hi_src + li))
        if not ok:
            continue
        contrib = uc[tuple(src)] @ blk.T
        out[tuple(dst)] += contrib
    return FourierField(trunc, out)


def compose(A: ToplitzOperator, B: ToplitzOperator) -> ToplitzOperator:
    """(AB)(l) = sum_{l'} A(l') B(l - l'), offsets clipped at |l| <= 2 n_phi.

    Mass pushed beyond the doubled rectangle is accumulated in dropped_mass.
    """
    trunc = A.trunc
    if trunc != B.trunc:
        raise ValueError("truncation mismatch")
    nu, npk = trunc.nu, trunc.n_phi
    w = 4 * npk + 1
    out = np.zeros(_block_shape(trunc), dtype=complex)
    dropped = 0.0
    Bb = B.blocks
    for offA in _offsets(trunc):
        blkA = A.blocks[offA]
        if not blkA.any():
            continue
        la = tuple(o - 2 * npk for o in offA)
        prod = np.einsum("ab,...bc->...ac", blkA, Bb)
        # shift the whole table of products by la with clipping
        src, dst = [], []
        ok = True
        for li in la:
            lo = max(0, -li)
            hi = min(w, w - li)
            if lo >= hi:
                ok = False
                break
            src.append(slice(lo, hi))
            dst.append(slice(lo + li, hi + li))
        if ok:
            out[tuple(dst)] += prod[tuple(src)]
            # anything outside the kept slices is dropped
            kept = np.zeros(prod.shape[: nu], dtype=bool)
            kept[tuple(src)] = True
            if not kept.all():
                dropped += float(np.sum(np.abs(prod[~kept]) ** 2))
        else:
            dropped += float(np.sum(np.abs(prod) ** 2))
    return ToplitzOperator(trunc, out, dropped_mass=np.sqrt(dropped) + A.dropped_mass + B.dropped_mass)


def add(A: ToplitzOperator, B: ToplitzOperator) -> ToplitzOperator:
    if A.trunc != B.trunc:
        raise ValueError("truncation mismatch")
    return ToplitzOperator(A.trunc, A.blocks + B.blocks, A.dropped_mass + B.dropped_mass)


def omega_commutator(A: ToplitzOperator, freq) -> ToplitzOperator:
    """[omega.d_phi, A]: each block A(l) picks up the factor i omega.l."""
    dots = freq.omega_dot_l(A.trunc, double=True)
    factor = (1j * dots)[(...,) + (None, None)]
    return ToplitzOperator(A.trunc, factor * A.blocks, A.dropped_mass)


# ---------------------------------------------------------------------------
# norms and smoothing


def _offset_profile(A: ToplitzOperator) -> np.ndarray:
    """sup over diagonals: P[l..., d] = sup_{j1-j2=d} |A^{j2}_{j1}(l)|."""
    trunc = A.trunc
    m = 2 * trunc.n_x + 1
    prof = np.zeros(A.blocks.shape[: trunc.nu] + (2 * m - 1,))
    absb = np.abs(A.blocks)
    for d in range(-(m - 1), m):
        diag = np.diagonal(absb, offset=-d, axis1=-2, axis2=-1)  # j1 - j2 = d
        prof[..., d + m - 1] = diag.max(axis=-1) if diag.size else 0.0
    return prof


def decay_norm(A: ToplitzOperator, s: float) -> float:
    """|A|_s^2 = sum_{l,d} <l,d>^{2s} sup_{j1-j2=d} |A^{j2}_{j1}(l)|^2."""
    trunc = A.trunc
    prof = _offset_profile(A)
    m = 2 * trunc.n_x + 1
    w = np.ones(prof.shape)
    for ax in range(trunc.nu):
        r = np.abs(np.arange(-2 * trunc.n_phi, 2 * trunc.n_phi + 1))
        shape = [1] * (trunc.nu + 1)
        shape[ax] = len(r)
        w = np.maximum(w, r.reshape(shape))
    d = np.abs(np.arange(-(m - 1), m))
    w = np.maximum(w, d.reshape((1,) * trunc.nu + (-1,)))
    return float(np.sqrt(np.sum(w ** (2.0 * s) * prof**2)))


def smooth(A: ToplitzOperator, N: int) -> ToplitzOperator:
    """Keep only the blocks with time offset |l|_inf <= N."""
    if N < 0:
        raise ValueError("N must be >= 0")
    trunc = A.trunc
    blocks = A.blocks.copy()
    r = np.abs(np.arange(-2 * trunc.n_phi, 2 * trunc.n_phi + 1))
    mask = np.zeros(blocks.shape[: trunc.nu], dtype=bool)
    linf = np.zeros(blocks.shape[: trunc.nu])
    for ax in range(trunc.nu):
        shape = [1] * trunc.nu
        shape[ax] = len(r)
        linf = np.maximum(linf, r.reshape(shape))
    blocks[linf > N] = 0.0
    return ToplitzOperator(trunc, blocks, A.dropped_mass)


def smooth_complement(A: ToplitzOperator, N: int) -> ToplitzOperator:
    return add(A, smooth(A, N).scale(-1.0))


# ---------------------------------------------------------------------------
# inversion and exponential


def neumann_inverse(
    Psi: ToplitzOperator,
    tol: float = 1e-14,
    max_terms: int = 60,
) -> ToplitzOperator:
    """Inverse of I + Psi by the geometric series, requiring |Psi|_{s0} < 1/2."""
    s0 = Psi.trunc.s0
    norm0 = decay_norm(Psi, s0)
    if norm0 >= 0.5:
        raise ValueError(f"Neumann contraction fails: |Psi|_s0 = {norm0:.3f} >= 1/2")
    out = identity(Psi.trunc)
    term = identity(Psi.trunc)
    negPsi = Psi.scale(-1.0)
    for _ in range(max_terms):
        term = compose(term, negPsi)
        out = add(out, term)
        if decay_norm(term, s0) < tol:
            break
    else:
        raise RuntimeError("Neumann series did not converge within the term cap")
    return out


def matrix_exponential(Psi: ToplitzOperator, term_tol: float = 1e-15) -> ToplitzOperator:
    """exp(Psi) by scaling-and-squaring of the block series."""
    s0 = Psi.trunc.s0
    norm0 = decay_norm(Psi, s0)
    if norm0 > 1.0:
        raise ValueError(f"|Psi|_s0 = {norm0:.3f} > 1; refuse to exponentiate")
    k = 0
    while norm0 / (2**k) > 0.25:
        k += 1
    scaled = Psi.scale(0.5**k)
    out = identity(Psi.trunc)
    term = identity(Psi.trunc)
    fact = 1.0
    for n in range(1, 30):
        term = compose(term, scaled)
        fact /= n
        out = add(out, term.scale(fact))
        if decay_norm(term, s0) * fact < term_tol:
            break
    for _ in range(k):
        out = compose(out, out)
    return out


# ---------------------------------------------------------------------------
# dense materialization (oracle support)


def flatten_field(u: FourierField) -> np.ndarray:
    return u.c.reshape(-1)


def unflatten_field(trunc: Truncation, vec: np.ndarray) -> FourierField:
    return FourierField(trunc, vec.reshape(trunc.shape).copy())


def materialize_matrix(
    op: ToplitzOperator | DiagonalOperator,
    freq: Frequency | None = None,
    include_omega_dphi: bool = False,
) -> np.ndarray:
    """Dense matrix over the flattened (l, j) index (row-major over trunc.shape)."""
    trunc = op.trunc
    dim = int(np.prod(trunc.shape))
    if dim > MATERIALIZE_CAP:
        raise ValueError(f"flattened dimension {dim} exceeds cap {MATERIALIZE_CAP}")
    M = np.zeros((dim, dim), dtype=complex)
    idx = list(np.ndindex(*trunc.shape))
    if isinstance(op, DiagonalOperator):
        for r, i in enumerate(idx):
            M[r, r] = op.mu[i[-1]]
    else:
        nu, npk = trunc.nu, trunc.n_phi
        multi = np.array(idx)  # (dim, nu + 1) raw indices
        gather = []
        for ax in range(nu):
            gather.append(multi[:, ax][:, None] - multi[:, ax][None, :] + 2 * npk)
        gather.append(np.broadcast_to(multi[:, -1][:, None], (dim, dim)))
        gather.append(np.broadcast_to(multi[:, -1][None, :], (dim, dim)))
        M = op.blocks[tuple(gather)]
    if include_omega_dphi:
        if freq is None:
            raise ValueError("include_omega_dphi requires a Frequency")
        dots = freq.omega_dot_l(trunc).reshape(-1)
        mshape = 2 * trunc.n_x + 1
        M += np.diag(np.repeat(1j * dots, mshape))
    return M


def materialize_linearized(
    a3: FourierField, a2: FourierField, a1: FourierField, a0: FourierField, freq: Frequency
) -> np.ndarray:
    """Dense matrix of omega.d_phi + (1+a3) d_xxx + a2 d_xx + a1 d_x + a0."""
    trunc = a3.trunc
    dd = lambda k: from_multiplier(trunc, lambda j: (1j * j) ** k)
    one = FourierField.constant(trunc, 1.0)
    T = compose(from_multiplication(one + a3), dd(3))
    T = add(T, compose(from_multiplication(a2), dd(2)))
    T = add(T, compose(from_multiplication(a1), dd(1)))
    T = add(T, from_multiplication(a0))
    return materialize_matrix(T, freq, include_omega_dphi=True)


def operator_to_json(A: ToplitzOperator) -> dict:
    """{trunc, blocks: [[l..., re-block, im-block]...]} for nonzero offsets."""
    trunc = A.trunc
    entries = []
    for off in _offsets(trunc):
        blk = A.blocks[off]
        if not blk.any():
            continue
        l = [int(o - 2 * trunc.n_phi) for o in off]
        entries.append([l, blk.real.tolist(), blk.imag.tolist()])
    return {
        "nu": trunc.nu,
        "n_phi": trunc.n_phi,
        "n_x": trunc.n_x,
        "blocks": entries,
    }
