"""Multi-matrix *-algebra arithmetic with a faithful normalized trace.

An algebra here is a finite direct sum of complex matrix blocks
``M_{n_1} + ... + M_{n_B}`` carrying the trace ``tau(x) = sum_k t_k Tr(x_k)``
where ``t_k`` is the trace of a minimal projection of block ``k`` and
``sum_k t_k n_k = 1``.  This is the desk-scale stand-in for a tracial von
Neumann algebra: everything downstream (inclusions, conditional expectations,
paving partitions) is built on the operations in this module.

All spectral operations go through dense Hermitian eigendecompositions.
Projections produced by spectral calculus are re-symmetrized eigenvector
outer products, so they stay exact idempotents instead of drifting through
pipeline stages.  Tolerances:

* ``TOL_PROJ`` (1e-8): algebraic identity checks (idempotency, unitarity,
  partition completeness).
* spectral reconstruction: 1e-10 * norm.
* ``TIE_TOL`` (1e-12): eigenvalue/endpoint tie detection; ties are resolved
  by exact comparison of the computed eigenvalue and recorded as boundary
  warnings in the result metadata.
"""

from __future__ import annotations

import math
import numbers
from dataclasses import dataclass, field

import numpy as np

from .seeding import child_rng

TOL_PROJ = 1e-8
SPECTRAL_RTOL = 1e-10
TIE_TOL = 1e-12

SELFADJOINT = "selfadjoint-trace-zero-contraction"
POSITIVE = "positive-contraction"
PROJECTION = "projection"


class AlgebraError(ValueError):
    """Malformed element or invalid operand."""


class ShapeMismatchError(AlgebraError):
    """Operands live over different algebra shapes."""


class InfeasibleTraceError(AlgebraError):
    """Requested projection trace is not a sum of block weights times ranks."""

    def __init__(self, requested, nearest):
        self.requested = requested
        self.nearest = nearest
        super().__init__(
            f"trace {requested} is not realizable by integer ranks; "
            f"nearest realizable value is {nearest}"
        )


@dataclass(frozen=True)
class AlgebraShape:
    """Block dimensions and minimal-projection trace weights of the algebra."""

    block_dims: tuple[int, ...]
    trace_weights: tuple[float, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.block_dims)
        weights = tuple(float(t) for t in self.trace_weights)
        object.__setattr__(self, "block_dims", dims)
        object.__setattr__(self, "trace_weights", weights)
        if len(dims) != len(weights) or not dims:
            raise AlgebraError("block_dims and trace_weights must be equal-length, nonempty")
        if any(d < 1 for d in dims):
            raise AlgebraError("block dimensions must be >= 1")
        if any(t <= 0 for t in weights):
            raise AlgebraError("trace weights must be positive")
        total = sum(t * d for t, d in zip(weights, dims))
        if abs(total - 1.0) > 1e-12:
            raise AlgebraError(f"trace not normalized: sum t_k * n_k = {total!r}")

    @classmethod
    def matrix(cls, dim: int) -> "AlgebraShape":
        """Single full matrix block with the uniform normalized trace."""
        return cls((dim,), (1.0 / dim,))

    @property
    def num_blocks(self) -> int:
        return len(self.block_dims)

    @property
    def total_dim(self) -> int:
        return sum(self.block_dims)

    @property
    def l2_dim(self) -> int:
        return sum(d * d for d in self.block_dims)


@dataclass
class Element:
    """One algebra element: a list of complex matrix blocks over a shape.

    ``meta`` carries non-semantic side information (spectral frames, boundary
    warnings, producer notes); it is ignored by arithmetic and comparisons.
    """

    shape: AlgebraShape
    blocks: list
    meta: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        blocks = [np.ascontiguousarray(b, dtype=np.complex128) for b in self.blocks]
        if len(blocks) != self.shape.num_blocks:
            raise AlgebraError("block count does not match shape")
        for b, d in zip(blocks, self.shape.block_dims):
            if b.shape != (d, d):
                raise AlgebraError(f"block of shape {b.shape}, expected {(d, d)}")
        self.blocks = blocks

    def copy(self) -> "Element":
        return Element(self.shape, [b.copy() for b in self.blocks])

    def _check(self, other: "Element"):
        if self.shape != other.shape:
            raise ShapeMismatchError("elements live over different shapes")

    def __add__(self, other):
        self._check(other)
        return Element(self.shape, [a + b for a, b in zip(self.blocks, other.blocks)])

    def __sub__(self, other):
        self._check(other)
        return Element(self.shape, [a - b for a, b in zip(self.blocks, other.blocks)])

    def __neg__(self):
        return Element(self.shape, [-b for b in self.blocks])

    def __mul__(self, scalar):
        if not isinstance(scalar, numbers.Number):
            return NotImplemented
        return Element(self.shape, [scalar * b for b in self.blocks])

    __rmul__ = __mul__

    def __matmul__(self, other):
        self._check(other)
        return Element(self.shape, [a @ b for a, b in zip(self.blocks, other.blocks)])

    def adjoint(self) -> "Element":
        return Element(self.shape, [b.conj().T for b in self.blocks])

    @property
    def H(self) -> "Element":
        return self.adjoint()

    def allclose(self, other: "Element", tol: float = TOL_PROJ) -> bool:
        self._check(other)
        return all(np.abs(a - b).max() <= tol if a.size else True
                   for a, b in zip(self.blocks, other.blocks))


def identity(shape: AlgebraShape) -> Element:
    return Element(shape, [np.eye(d, dtype=np.complex128) for d in shape.block_dims])


def zero(shape: AlgebraShape) -> Element:
    return Element(shape, [np.zeros((d, d), dtype=np.complex128) for d in shape.block_dims])


def trace(x: Element) -> complex:
    """tau(x) = sum_k t_k Tr(x_k); linear, tau(1) = 1."""
    return sum(t * np.trace(b) for t, b in zip(x.shape.trace_weights, x.blocks))


def _require_finite(x: Element):
    for b in x.blocks:
        if not np.all(np.isfinite(b.view(np.float64))):
            raise AlgebraError("non-finite entries")


def op_norm(x: Element) -> float:
    """Largest singular value across blocks, via eigendecomposition of x*x."""
    _require_finite(x)
    worst = 0.0
    for b in x.blocks:
        if b.size == 0:
            continue
        w = np.linalg.eigvalsh(b.conj().T @ b)
        worst = max(worst, math.sqrt(max(w[-1], 0.0)))
    return worst


def l2_norm(x: Element) -> float:
    """Trace norm sqrt(tau(x* x))."""
    val = sum(t * np.sum(np.abs(b) ** 2) for t, b in zip(x.shape.trace_weights, x.blocks))
    return math.sqrt(max(float(val), 0.0))


def hermitian_part_residual(x: Element) -> float:
    return max(float(np.linalg.norm(b - b.conj().T)) for b in x.blocks)


def herm_eig(x: Element, tol: float = TOL_PROJ):
    """Eigenvalues (ascending) and unitary diagonalizers per block.

    Requires x Hermitian within `tol`; reconstruction x = U diag(w) U* is
    accurate to 1e-10 * norm (LAPACK backward stability, covered by tests).
    """
    if hermitian_part_residual(x) > tol:
        raise AlgebraError("input is not Hermitian within tolerance")
    vals, vecs = [], []
    for b in x.blocks:
        w, v = np.linalg.eigh((b + b.conj().T) / 2.0)
        vals.append(w)
        vecs.append(v)
    return vals, vecs


def frame_projection(shape: AlgebraShape, frames: list) -> Element:
    """Projection sum_cols v v* from per-block orthonormal column frames.

    The frame is kept in ``meta['frame']`` so downstream operations (pinching,
    embedding, verification) can use the rank-factored form.
    """
    blocks, kept = [], []
    for d, f in zip(shape.block_dims, frames):
        f = np.ascontiguousarray(f, dtype=np.complex128).reshape(d, -1)
        p = f @ f.conj().T
        blocks.append((p + p.conj().T) / 2.0)
        kept.append(f)
    return Element(shape, blocks, meta={"frame": kept})


def projection_frame(p: Element, tol: float = TOL_PROJ) -> list:
    """Orthonormal column frames of a projection, from meta or eigenvectors."""
    if "frame" in p.meta:
        return p.meta["frame"]
    vals, vecs = herm_eig(p, tol=max(tol, 1e-6))
    frames = []
    for w, v in zip(vals, vecs):
        frames.append(np.ascontiguousarray(v[:, w > 0.5]))
    return frames


def projection_defect(p: Element) -> float:
    """max(‖p - p*‖, ‖p^2 - p‖) in Frobenius norm, per block max."""
    worst = 0.0
    for b in p.blocks:
        worst = max(worst, float(np.linalg.norm(b - b.conj().T)))
        worst = max(worst, float(np.linalg.norm(b @ b - b)))
    return worst


def is_projection(p: Element, tol: float = TOL_PROJ) -> bool:
    return projection_defect(p) <= tol


def spectral_projection(x: Element, interval, tol: float = TOL_PROJ) -> Element:
    """Projection onto eigenspaces of Hermitian x with eigenvalue in [a, b).

    Endpoint ties: an eigenvalue is included iff >= a and < b under exact
    comparison of the computed value; eigenvalues within TIE_TOL of either
    endpoint are recorded in ``meta['boundary_warnings']`` as
    (block, eigenvalue, endpoint) triples.
    """
    a, b = float(interval[0]), float(interval[1])
    vals, vecs = herm_eig(x, tol=tol)
    frames, warnings = [], []
    for k, (w, v) in enumerate(zip(vals, vecs)):
        sel = (w >= a) & (w < b)
        frames.append(v[:, sel])
        for lam in w[np.abs(w - a) < TIE_TOL]:
            warnings.append((k, float(lam), a))
        if np.isfinite(b):
            for lam in w[np.abs(w - b) < TIE_TOL]:
                warnings.append((k, float(lam), b))
    p = frame_projection(x.shape, frames)
    if warnings:
        p.meta["boundary_warnings"] = warnings
    return p


def support_projection(b: Element, rank_tol: float = 1e-9) -> Element:
    """Projection onto eigenspaces of a PSD element with eigenvalue > rank_tol * ‖b‖."""
    vals, vecs = herm_eig(b)
    norm = max((float(np.abs(w).max()) if w.size else 0.0) for w in vals)
    if any(w.size and w[0] < -rank_tol * max(norm, 1.0) for w in vals):
        raise AlgebraError("input is not positive semidefinite")
    cut = rank_tol * norm
    frames = [v[:, w > cut] for w, v in zip(vals, vecs)]
    return frame_projection(b.shape, frames)


def haar_block(rng: np.random.Generator, dim: int) -> np.ndarray:
    """One Haar unitary: QR of a complex Ginibre matrix with R-phase fix."""
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2.0)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


def random_haar_unitary(shape: AlgebraShape, seed) -> Element:
    """Blockwise Haar unitary; deterministic for a fixed seed."""
    rng = child_rng(seed)
    return Element(shape, [haar_block(rng, d) for d in shape.block_dims])


def _projection_ranks(shape: AlgebraShape, theta: float):
    """Integer block ranks whose weighted sum best matches theta.

    Exhaustive over blocks when cheap, greedy + local repair otherwise.
    """
    dims, weights = shape.block_dims, shape.trace_weights
    combos = 1
    for d in dims:
        combos *= d + 1
        if combos > 200_000:
            break
    if combos <= 200_000:
        best, best_err = None, np.inf
        stack = [((), 0.0)]
        for k, (d, t) in enumerate(zip(dims, weights)):
            nxt = []
            for ranks, acc in stack:
                for r in range(d + 1):
                    nxt.append((ranks + (r,), acc + t * r))
            stack = nxt
        for ranks, acc in stack:
            err = abs(acc - theta)
            if err < best_err:
                best, best_err = ranks, err
        return best, best_err
    ranks = [min(d, max(0, round(theta * d))) for d in dims]  # coarse start
    def err(rs):
        return abs(sum(t * r for t, r in zip(weights, rs)) - theta)
    improved = True
    while improved:
        improved = False
        for k in range(len(dims)):
            for step in (-1, 1):
                trial = list(ranks)
                trial[k] += step
                if 0 <= trial[k] <= dims[k] and err(trial) < err(ranks):
                    ranks = trial
                    improved = True
    return tuple(ranks), err(ranks)


def random_element(shape: AlgebraShape, kind: str, seed, theta: float = None) -> Element:
    """Seeded random element of a named class.

    Kinds: ``selfadjoint-trace-zero-contraction`` (Haar-rotated centered
    spectrum in [-1, 1]), ``positive-contraction`` (Haar-rotated spectrum in
    [0, 1]), ``projection`` of trace ``theta`` (Haar-rotated coordinate
    projection with block ranks realizing theta).
    """
    rng = child_rng(seed)
    if kind == PROJECTION:
        if theta is None:
            raise AlgebraError("projection kind needs a target trace theta")
        ranks, err = _projection_ranks(shape, float(theta))
        granularity = 1.0 / max(shape.block_dims)
        if err > min(1e-9, 0.5 * granularity):
            nearest = sum(t * r for t, r in zip(shape.trace_weights, ranks))
            raise InfeasibleTraceError(theta, nearest)
        frames = []
        for d, r in zip(shape.block_dims, ranks):
            u = haar_block(rng, d)
            frames.append(u[:, :r])
        return frame_projection(shape, frames)

    if kind == SELFADJOINT:
        spectra = [rng.uniform(-1.0, 1.0, d) for d in shape.block_dims]
        mean = sum(t * s.sum() for t, s in zip(shape.trace_weights, spectra))
        spectra = [s - mean for s in spectra]
        top = max(np.abs(s).max() for s in spectra)
        if top > 1.0:
            spectra = [s / top for s in spectra]
    elif kind == POSITIVE:
        spectra = [rng.uniform(0.0, 1.0, d) for d in shape.block_dims]
    else:
        raise AlgebraError(f"unknown random element kind {kind!r}")
    blocks = []
    for d, s in zip(shape.block_dims, spectra):
        u = haar_block(rng, d)
        b = (u * s) @ u.conj().T
        blocks.append((b + b.conj().T) / 2.0)
    return Element(shape, blocks)


@dataclass
class PartitionOfUnity:
    """Mutually orthogonal projections p_1..p_r summing to 1."""

    projections: list

    @property
    def size(self) -> int:
        return len(self.projections)

    @property
    def shape(self) -> AlgebraShape:
        return self.projections[0].shape

    def validate(self, tol: float = TOL_PROJ) -> float:
        """Worst residual among idempotency, orthogonality and completeness."""
        worst = max(projection_defect(p) for p in self.projections)
        total = zero(self.shape)
        for p in self.projections:
            total = total + p
        one = identity(self.shape)
        worst = max(worst, max(float(np.linalg.norm(a - b))
                               for a, b in zip(total.blocks, one.blocks)))
        # orthogonality of distinct parts follows from sum = 1 for exact
        # projections; spot-check the first few pairs for drift anyway
        for i in range(min(4, self.size)):
            for j in range(i + 1, min(4, self.size)):
                prod = self.projections[i] @ self.projections[j]
                worst = max(worst, max(float(np.abs(b).max()) for b in prod.blocks))
        if worst > tol:
            raise AlgebraError(f"partition residual {worst:.3e} exceeds {tol}")
        return worst

    def frames(self):
        return [projection_frame(p) for p in self.projections]


def balanced_sizes(total: int, parts: int):
    """Sizes differing by at most one, larger parts first."""
    q, rem = divmod(total, parts)
    return [q + 1 if i < rem else q for i in range(parts)]


def balanced_slot_partition(shape: AlgebraShape, r: int):
    """Assign the diagonal slots of every block to r near-equal-trace groups.

    Returns per-part lists of (block, slot) pairs.  Slots are dealt in block
    order to the currently lightest part, which keeps traces within one slot
    weight of each other.  Raises if r exceeds the number of slots.
    """
    slots = [(k, i) for k, d in enumerate(shape.block_dims) for i in range(d)]
    if r > len(slots):
        raise AlgebraError(f"cannot split {len(slots)} slots into {r} nonzero parts")
    loads = np.zeros(r)
    parts = [[] for _ in range(r)]
    for k, i in slots:
        j = int(np.argmin(loads))
        parts[j].append((k, i))
        loads[j] += shape.trace_weights[k]
    return parts


def coordinate_partition(shape: AlgebraShape, r: int, unitary: Element = None) -> PartitionOfUnity:
    """Partition of unity from balanced diagonal slot groups, optionally rotated."""
    parts = balanced_slot_partition(shape, r)
    projections = []
    for part in parts:
        frames = []
        for k, d in enumerate(shape.block_dims):
            cols = [i for blk, i in part if blk == k]
            if unitary is None:
                f = np.zeros((d, len(cols)), dtype=np.complex128)
                for j, i in enumerate(cols):
                    f[i, j] = 1.0
            else:
                f = unitary.blocks[k][:, cols]
            frames.append(f)
        projections.append(frame_projection(shape, frames))
    return PartitionOfUnity(projections)


def cyclic_unitary_from_partition(partition: PartitionOfUnity):
    """v = sum_k alpha^(k-1) p_k with alpha = exp(2 pi i / n); v^n = 1."""
    n = partition.size
    if n < 1:
        raise AlgebraError("empty partition")
    partition.validate()
    alpha = np.exp(2j * np.pi / n)
    v = zero(partition.shape)
    for k, p in enumerate(partition.projections):
        v = v + (alpha ** k) * p
    if all("frame" in p.meta for p in partition.projections):
        v.meta["frames"] = [p.meta["frame"] for p in partition.projections]
    return CyclicUnitary(v=v, order=n)


@dataclass
class CyclicUnitary:
    """Unitary of finite order n; its spectral projections recover a partition."""

    v: Element
    order: int

    def validate(self, tol: float = TOL_PROJ) -> float:
        one = identity(self.v.shape)
        worst = max(float(np.linalg.norm(a - b)) for a, b in
                    zip((self.v @ self.v.adjoint()).blocks, one.blocks))
        power = one
        for _ in range(self.order):
            power = power @ self.v
        worst = max(worst, max(float(np.linalg.norm(a - b)) for a, b in
                               zip(power.blocks, one.blocks)))
        if worst > tol:
            raise AlgebraError(f"cyclic unitary residual {worst:.3e}")
        return worst

    def spectral_partition(self) -> PartitionOfUnity:
        """Partition from the n-th-root eigenvalue groups of v."""
        if "frames" in self.v.meta:
            return PartitionOfUnity(
                [frame_projection(self.v.shape, f) for f in self.v.meta["frames"]])
        import scipy.linalg

        n = self.order
        grouped = [[[] for _ in self.v.blocks] for _ in range(n)]
        for kb, vb in enumerate(self.v.blocks):
            t, z = scipy.linalg.schur(vb, output="complex")
            eigs = np.diag(t)
            idx = np.rint(np.angle(eigs) / (2 * np.pi) * n).astype(int) % n
            for k in range(n):
                grouped[k][kb] = z[:, idx == k]
        return PartitionOfUnity(
            [frame_projection(self.v.shape, frames) for frames in grouped])


def pinch(partition: PartitionOfUnity, x: Element) -> Element:
    """sum_i p_i x p_i; idempotent and contractive in both norms."""
    if partition.shape != x.shape:
        raise ShapeMismatchError("partition and element shapes differ")
    out = [np.zeros_like(b) for b in x.blocks]
    for p in partition.projections:
        if "frame" in p.meta:
            for k, f in enumerate(p.meta["frame"]):
                if f.shape[1] == 0:
                    continue
                out[k] += f @ (f.conj().T @ x.blocks[k] @ f) @ f.conj().T
        else:
            for k, pb in enumerate(p.blocks):
                out[k] += pb @ x.blocks[k] @ pb
    return Element(x.shape, out)


def unitary_average(unitaries, x: Element, tol: float = TOL_PROJ) -> Element:
    """(1/n) sum_i u_i x u_i*; trace-preserving."""
    us = list(unitaries)
    if not us:
        raise AlgebraError("need at least one unitary")
    one = identity(x.shape)
    for u in us:
        resid = max(float(np.linalg.norm(a - b)) for a, b in
                    zip((u @ u.adjoint()).blocks, one.blocks))
        if resid > max(tol, 1e-6):
            raise AlgebraError(f"operand is not unitary (residual {resid:.3e})")
    acc = zero(x.shape)
    for u in us:
        acc = acc + (u @ x @ u.adjoint())
    return (1.0 / len(us)) * acc
