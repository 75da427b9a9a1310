"""Unital trace-compatible inclusions N ⊆ M of multi-matrix algebras.

An inclusion is presented by an inclusion matrix Λ with Λ[k][l] copies of
N-block k sitting inside M-block l, plus one unitary per M-block fixing the
concrete embedding.  Internally every M-block is handled in a "grouped"
layout whose basis is ordered (N-block k, copy c, internal index i); the
embedding unitary maps grouped coordinates to the presented ones.

The trace-preserving conditional expectation onto N is the orthogonal
projection in the trace inner product <a, b> = tau(a* b).  Because the
embedded matrix units of N form an orthogonal family in that inner product,
the projection has a closed structured form (average the diagonal copy
blocks with weights t_l / s_k); the same goes for the expectation onto the
relative commutant N' ∩ M.  Both are therefore applied blockwise in
O(dim M^2) without ever materializing a dim(M)^2-squared operator matrix.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import algebra as alg
from .algebra import (AlgebraShape, AlgebraError, Element, TOL_PROJ,
                      identity, zero, trace, op_norm)
from .seeding import child_rng, child_seed

log = logging.getLogger(__name__)


class InclusionSpecError(AlgebraError):
    """Inconsistent inclusion data (dimension or trace bookkeeping)."""


class ResourceBudgetError(RuntimeError):
    """Construction would exceed the configured dimension budget."""


@dataclass(frozen=True)
class InclusionSpec:
    """Shapes of N and M plus the multiplicity matrix Λ[k][l]."""

    n_shape: AlgebraShape
    m_shape: AlgebraShape
    inclusion_matrix: tuple

    def __post_init__(self):
        lam = tuple(tuple(int(v) for v in row) for row in self.inclusion_matrix)
        object.__setattr__(self, "inclusion_matrix", lam)
        nk, ml = self.n_shape.num_blocks, self.m_shape.num_blocks
        if len(lam) != nk or any(len(row) != ml for row in lam):
            raise InclusionSpecError("inclusion matrix shape does not match block counts")
        if any(v < 0 for row in lam for v in row):
            raise InclusionSpecError("multiplicities must be nonnegative")
        for k in range(nk):
            if all(lam[k][l] == 0 for l in range(ml)):
                raise InclusionSpecError(f"N-block {k} does not embed anywhere (zero row)")
        for l in range(ml):
            if all(lam[k][l] == 0 for k in range(nk)):
                raise InclusionSpecError(f"M-block {l} contains no copy of N (zero column)")
        for l in range(ml):
            filled = sum(lam[k][l] * self.n_shape.block_dims[k] for k in range(nk))
            if filled != self.m_shape.block_dims[l]:
                raise InclusionSpecError(
                    f"M-block {l}: multiplicities fill {filled} of "
                    f"{self.m_shape.block_dims[l]} dimensions")
        for k in range(nk):
            s = sum(lam[k][l] * self.m_shape.trace_weights[l] for l in range(ml))
            if abs(s - self.n_shape.trace_weights[k]) > 1e-12:
                raise InclusionSpecError(
                    f"trace incompatibility on N-block {k}: "
                    f"s_{k} = {self.n_shape.trace_weights[k]!r} but "
                    f"sum_l Lambda[{k}][l] t_l = {s!r}")

    @property
    def is_trivial(self) -> bool:
        """N = M blockwise (identity inclusion matrix)."""
        if self.n_shape.block_dims != self.m_shape.block_dims:
            return False
        nk = self.n_shape.num_blocks
        return all(self.inclusion_matrix[k][l] == (1 if k == l else 0)
                   for k in range(nk) for l in range(nk))


@dataclass
class Inclusion:
    """A realized inclusion: spec + per-M-block embedding unitaries.

    ``embed_unitaries[l]`` is ``("id", None)``, ``("perm", pi)`` with pi the
    grouped-to-presented index map, or ``("dense", u)`` with u unitary.
    """

    spec: InclusionSpec
    embed_unitaries: list
    known_index: float = None
    label: str = ""
    _offsets: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        offsets = []
        for l in range(self.m_shape.num_blocks):
            table = {}
            off = 0
            for k, nk in enumerate(self.spec.n_shape.block_dims):
                for c in range(self.spec.inclusion_matrix[k][l]):
                    table[(k, c)] = off
                    off += nk
            offsets.append(table)
        self._offsets = offsets

    @property
    def n_shape(self) -> AlgebraShape:
        return self.spec.n_shape

    @property
    def m_shape(self) -> AlgebraShape:
        return self.spec.m_shape

    # -- grouped layout <-> presented layout ---------------------------------

    def _to_grouped(self, l: int, x_l: np.ndarray) -> np.ndarray:
        kind, u = self.embed_unitaries[l]
        if kind == "id":
            return x_l
        if kind == "perm":
            return x_l[np.ix_(u, u)]
        return u.conj().T @ x_l @ u

    def _from_grouped(self, l: int, y_l: np.ndarray) -> np.ndarray:
        kind, u = self.embed_unitaries[l]
        if kind == "id":
            return y_l
        if kind == "perm":
            out = np.zeros_like(y_l)
            out[np.ix_(u, u)] = y_l
            return out
        return u @ y_l @ u.conj().T

    def _from_grouped_cols(self, l: int, cols: np.ndarray) -> np.ndarray:
        kind, u = self.embed_unitaries[l]
        if kind == "id":
            return cols
        if kind == "perm":
            out = np.zeros_like(cols)
            out[u, :] = cols
            return out
        return u @ cols

    # -- embedding and expectations -------------------------------------------

    def embed(self, x: Element) -> Element:
        """Unital trace-preserving *-homomorphism N -> M."""
        if x.shape != self.n_shape:
            raise alg.ShapeMismatchError("element does not live over N")
        blocks = []
        for l, ml in enumerate(self.m_shape.block_dims):
            y = np.zeros((ml, ml), dtype=np.complex128)
            for (k, c), off in self._offsets[l].items():
                nk = self.n_shape.block_dims[k]
                y[off:off + nk, off:off + nk] = x.blocks[k]
            blocks.append(self._from_grouped(l, y))
        return Element(self.m_shape, blocks)

    def restrict_to_n(self, x: Element) -> Element:
        """N-coordinates of the expectation E_N(x) (an element of N)."""
        if x.shape != self.m_shape:
            raise alg.ShapeMismatchError("element does not live over M")
        acc = [np.zeros((d, d), dtype=np.complex128) for d in self.n_shape.block_dims]
        for l, tl in enumerate(self.m_shape.trace_weights):
            y = self._to_grouped(l, x.blocks[l])
            for (k, c), off in self._offsets[l].items():
                nk = self.n_shape.block_dims[k]
                acc[k] += tl * y[off:off + nk, off:off + nk]
        for k, sk in enumerate(self.n_shape.trace_weights):
            acc[k] /= sk
        return Element(self.n_shape, acc)

    def cond_exp_n(self, x: Element) -> Element:
        """E_N(x) as an element of M (image inside the embedded copy of N)."""
        return self.embed(self.restrict_to_n(x))

    def cond_exp_comm(self, x: Element) -> Element:
        """E_{N' ∩ M}(x): normalized partial trace over each copy grid."""
        if x.shape != self.m_shape:
            raise alg.ShapeMismatchError("element does not live over M")
        blocks = []
        for l, ml in enumerate(self.m_shape.block_dims):
            y = self._to_grouped(l, x.blocks[l])
            z = np.zeros_like(y)
            for k, nk in enumerate(self.n_shape.block_dims):
                mult = self.spec.inclusion_matrix[k][l]
                for c in range(mult):
                    oc = self._offsets[l][(k, c)]
                    for cp in range(mult):
                        op = self._offsets[l][(k, cp)]
                        sub = y[oc:oc + nk, op:op + nk]
                        val = np.trace(sub) / nk
                        z[oc:oc + nk, op:op + nk] = val * np.eye(nk)
            blocks.append(self._from_grouped(l, z))
        return Element(self.m_shape, blocks)

    def commutant_dim(self) -> int:
        return sum(v * v for row in self.spec.inclusion_matrix for v in row)

    def commutant_basis(self) -> list:
        """Orthonormal (in tau(a* b)) basis of N' ∩ M."""
        basis = []
        for l, ml in enumerate(self.m_shape.block_dims):
            tl = self.m_shape.trace_weights[l]
            for k, nk in enumerate(self.n_shape.block_dims):
                mult = self.spec.inclusion_matrix[k][l]
                for c in range(mult):
                    for cp in range(mult):
                        y = np.zeros((ml, ml), dtype=np.complex128)
                        oc = self._offsets[l][(k, c)]
                        op = self._offsets[l][(k, cp)]
                        y[oc:oc + nk, op:op + nk] = np.eye(nk)
                        blocks = [np.zeros((d, d), dtype=np.complex128)
                                  for d in self.m_shape.block_dims]
                        blocks[l] = self._from_grouped(l, y) / math.sqrt(tl * nk)
                        basis.append(Element(self.m_shape, blocks))
        return basis

    def embed_frame(self, frames_n: list) -> list:
        """Push per-N-block orthonormal columns to per-M-block ones.

        A rank-r projection of N embeds with rank sum_k Λ[k][l] r_k in
        M-block l; the embedded columns stay orthonormal.
        """
        out = []
        for l, ml in enumerate(self.m_shape.block_dims):
            cols = []
            for (k, c), off in self._offsets[l].items():
                f = frames_n[k]
                if f.shape[1] == 0:
                    continue
                nk = self.n_shape.block_dims[k]
                g = np.zeros((ml, f.shape[1]), dtype=np.complex128)
                g[off:off + nk, :] = f
                cols.append(g)
            stacked = (np.concatenate(cols, axis=1) if cols
                       else np.zeros((ml, 0), dtype=np.complex128))
            out.append(self._from_grouped_cols(l, stacked))
        return out

    def embed_projection(self, p: Element) -> Element:
        """Embed a projection, carrying its frame along when available."""
        if "frame" in p.meta:
            return alg.frame_projection(self.m_shape, self.embed_frame(p.meta["frame"]))
        return self.embed(p)


def build_inclusion(spec: InclusionSpec, seed=0, embed: str = "haar",
                    known_index: float = None, label: str = "") -> Inclusion:
    """Realize a spec with identity, permutation, or seeded Haar embeddings."""
    unitaries = []
    for l, ml in enumerate(spec.m_shape.block_dims):
        if embed == "identity":
            unitaries.append(("id", None))
        elif embed == "haar":
            unitaries.append(("dense", alg.haar_block(child_rng(seed, l), ml)))
        else:
            raise ValueError(f"unknown embedding style {embed!r}")
    return Inclusion(spec, unitaries, known_index=known_index, label=label)


def validate_inclusion(inc: Inclusion, seed=0, samples: int = 6) -> dict:
    """Sampled residuals of the expectation axioms; used by tests and the CLI."""
    rng_seed = seed
    residuals = {"bimodular": 0.0, "idempotent": 0.0, "trace": 0.0,
                 "positive": 0.0, "comm_idempotent": 0.0, "comm_commutes": 0.0}
    for t in range(samples):
        x = alg.random_element(inc.m_shape, alg.SELFADJOINT, child_seed(rng_seed, 0, t))
        a = alg.random_element(inc.n_shape, alg.SELFADJOINT, child_seed(rng_seed, 1, t))
        b = alg.random_element(inc.n_shape, alg.SELFADJOINT, child_seed(rng_seed, 2, t))
        ex = inc.cond_exp_n(x)
        residuals["idempotent"] = max(residuals["idempotent"],
                                      op_norm(inc.cond_exp_n(ex) - ex))
        residuals["trace"] = max(residuals["trace"], abs(trace(ex) - trace(x)))
        lhs = inc.cond_exp_n(inc.embed(a) @ x @ inc.embed(b))
        rhs = inc.embed(a) @ ex @ inc.embed(b)
        residuals["bimodular"] = max(residuals["bimodular"], op_norm(lhs - rhs))
        pos = alg.random_element(inc.m_shape, alg.POSITIVE, child_seed(rng_seed, 3, t))
        w = np.concatenate([np.linalg.eigvalsh(bk) for bk in inc.cond_exp_n(pos).blocks])
        residuals["positive"] = max(residuals["positive"], max(0.0, -float(w.min())))
        ec = inc.cond_exp_comm(x)
        residuals["comm_idempotent"] = max(residuals["comm_idempotent"],
                                           op_norm(inc.cond_exp_comm(ec) - ec))
        residuals["comm_commutes"] = max(
            residuals["comm_commutes"],
            op_norm(ec @ inc.embed(a) - inc.embed(a) @ ec))
    return residuals


# -- index estimation ---------------------------------------------------------

@dataclass
class IndexEstimate:
    lambda_est: float
    index_est: float
    trials: int
    best_trial: int
    seed: int
    regularized: int


def expectation_index_estimate(inc: Inclusion, trials: int, seed: int) -> IndexEstimate:
    """Monte-Carlo estimate of the best constant in E_N(x) >= lambda x.

    For each sampled positive x the largest admissible constant is the
    smallest eigenvalue of x^{-1/2} E_N(x) x^{-1/2}; the estimate is the
    minimum over samples, so the derived index 1/lambda converges to the
    true probabilistic index from below as trials grow.  Low-rank samples
    (regularized as recorded) dominate the minimization, and for product
    inclusions a single generic rank-one sample is already extremal.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    best, best_t, regularized = np.inf, 0, 0
    for t in range(trials):
        rng = child_rng(seed, t)
        blocks = []
        for d in inc.m_shape.block_dims:
            r = int(rng.integers(1, d + 1))
            g = (rng.standard_normal((d, r)) + 1j * rng.standard_normal((d, r)))
            blocks.append(g @ g.conj().T)
        x = Element(inc.m_shape, blocks)
        x = (1.0 / op_norm(x)) * x
        reg = False
        for bk in x.blocks:
            if np.linalg.eigvalsh(bk)[0] < 1e-12:
                reg = True
        if reg:
            regularized += 1
            x = x + 1e-10 * identity(inc.m_shape)
        ex = inc.cond_exp_n(x)
        c = np.inf
        for xb, eb in zip(x.blocks, ex.blocks):
            w, v = np.linalg.eigh(xb)
            w = np.clip(w, 1e-300, None)
            inv_half = (v * w ** -0.5) @ v.conj().T
            a = inv_half @ eb @ inv_half
            c = min(c, float(np.linalg.eigvalsh((a + a.conj().T) / 2)[0]))
        if c < best:
            best, best_t = c, t
    return IndexEstimate(lambda_est=best, index_est=1.0 / best, trials=trials,
                         best_trial=best_t, seed=seed, regularized=regularized)


def expectation_inequality_margin(inc: Inclusion, index: float, x: Element) -> float:
    """Smallest eigenvalue of index * E_N(x) - x; >= -1e-9 whenever index
    dominates the true index of the inclusion."""
    gap = index * inc.cond_exp_n(x) - x
    return min(float(np.linalg.eigvalsh((b + b.conj().T) / 2)[0]) for b in gap.blocks)


def expectation_support_bound(inc: Inclusion, q: Element, index: float,
                              rank_tol: float = 1e-9):
    """(tau of the support of E_N(q), index * tau(q)) for a projection q.

    The finiteness of the inclusion forces lhs <= rhs up to rank tolerance.
    """
    h = inc.restrict_to_n(q)
    s = alg.support_projection(h, rank_tol=rank_tol)
    return float(trace(s).real), float(index * trace(q).real)


# -- basic construction -------------------------------------------------------

@dataclass
class BasicConstruction:
    """⟨M, e_N⟩ acting on L²(M, tau), with the projection e_N onto L²(N)."""

    inc: Inclusion
    dim: int
    block_offsets: list
    e_n: np.ndarray
    lam: float

    def m_rep(self, x: Element) -> np.ndarray:
        """Left-multiplication representation of x on L²(M)."""
        out = np.zeros((self.dim, self.dim), dtype=np.complex128)
        for l, (off, ml) in enumerate(self.block_offsets):
            out[off:off + ml * ml, off:off + ml * ml] = np.kron(
                x.blocks[l], np.eye(ml))
        return out

    def trace(self, t: np.ndarray) -> complex:
        """The normalized trace extending tau from M to operators on L²(M)."""
        acc = 0.0 + 0.0j
        for l, (off, ml) in enumerate(self.block_offsets):
            w = self.inc.m_shape.trace_weights[l] / ml
            acc += w * np.trace(t[off:off + ml * ml, off:off + ml * ml])
        return acc


def _l2_coords(inc: Inclusion, x: Element, offsets, dim) -> np.ndarray:
    """Coordinates of x in the weighted matrix-unit basis of L²(M)."""
    vec = np.zeros(dim, dtype=np.complex128)
    for l, (off, ml) in enumerate(offsets):
        tl = inc.m_shape.trace_weights[l]
        vec[off:off + ml * ml] = math.sqrt(tl) * x.blocks[l].reshape(-1)
    return vec


def basic_construction(inc: Inclusion, index: float = None,
                       budget: int = 4096) -> BasicConstruction:
    """Build ⟨M, e_N⟩ on L²(M); requires sum_l m_l^2 within the budget."""
    dim = inc.m_shape.l2_dim
    if dim > budget:
        raise ResourceBudgetError(
            f"L2 dimension {dim} exceeds the budget {budget}")
    if index is None:
        index = inc.known_index
    if index is None:
        raise ValueError("need an exact or estimated index for the trace identity")
    offsets, off = [], 0
    for ml in inc.m_shape.block_dims:
        offsets.append((off, ml))
        off += ml * ml
    cols = []
    for k, nk in enumerate(inc.n_shape.block_dims):
        sk = inc.n_shape.trace_weights[k]
        for i in range(nk):
            for j in range(nk):
                unit = zero(inc.n_shape)
                unit.blocks[k][i, j] = 1.0
                emb = inc.embed(unit)
                cols.append(_l2_coords(inc, emb, offsets, dim) / math.sqrt(sk))
    w = np.stack(cols, axis=1)
    e_n = w @ w.conj().T
    e_n = (e_n + e_n.conj().T) / 2.0
    return BasicConstruction(inc=inc, dim=dim, block_offsets=offsets,
                             e_n=e_n, lam=1.0 / float(index))


# -- orthonormal bases over N --------------------------------------------------

@dataclass
class OrthonormalBasis:
    """Elements m_1..m_J of M with m_1 = 1 and E_N(m_i* m_j) = δ_ij projection."""

    elements: list
    dropped: int


def _pinv_sqrt(h: Element, rank_tol: float = 1e-9) -> Element:
    blocks = []
    for b in h.blocks:
        w, v = np.linalg.eigh((b + b.conj().T) / 2)
        cut = rank_tol * max(float(w.max()), 0.0) if w.size else 0.0
        inv = np.where(w > cut, np.where(w > 0, w, 1.0) ** -0.5, 0.0)
        blocks.append((v * inv) @ v.conj().T)
    return Element(h.shape, blocks)


def _expansion_residual(inc: Inclusion, basis: list, probes: list) -> float:
    worst = 0.0
    for x in probes:
        acc = zero(inc.m_shape)
        for m in basis:
            acc = acc + m @ inc.cond_exp_n(m.adjoint() @ x)
        worst = max(worst, op_norm(acc - x) / max(op_norm(x), 1e-30))
    return worst


def orthonormal_basis(inc: Inclusion, budget: int = 4096,
                      drop_tol: float = 1e-8, seed: int = 0) -> OrthonormalBasis:
    """Gram-Schmidt over the N-valued inner product E_N(x* y), from m_1 = 1.

    Candidates are the identity, the relative commutant basis, and (when M is
    small enough and the commutant alone does not span M over N) all matrix
    units of M.  Numerically dependent candidates are dropped.
    """
    def gram_schmidt(candidates):
        basis, dropped = [], 0
        for z in candidates:
            w = z
            for m in basis:
                w = w - m @ inc.cond_exp_n(m.adjoint() @ z)
            h = inc.restrict_to_n(w.adjoint() @ w)
            if op_norm(h) < drop_tol:
                dropped += 1
                log.debug("dropped numerically dependent spanning vector")
                continue
            basis.append(w @ inc.embed(_pinv_sqrt(h)))
        return basis, dropped

    probes = [alg.random_element(inc.m_shape, alg.SELFADJOINT, child_seed(seed, 7, t))
              for t in range(3)]
    candidates = [identity(inc.m_shape)] + inc.commutant_basis()
    basis, dropped = gram_schmidt(candidates)
    if _expansion_residual(inc, basis, probes) <= 1e-8:
        return OrthonormalBasis(elements=basis, dropped=dropped)
    if inc.m_shape.l2_dim > budget:
        raise ResourceBudgetError(
            "commutant candidates do not span M over N and the matrix-unit "
            f"fallback exceeds the budget ({inc.m_shape.l2_dim} > {budget})")
    units = []
    for l, ml in enumerate(inc.m_shape.block_dims):
        for i in range(ml):
            for j in range(ml):
                u = zero(inc.m_shape)
                u.blocks[l][i, j] = 1.0
                units.append(u)
    basis, dropped = gram_schmidt(candidates + units)
    return OrthonormalBasis(elements=basis, dropped=dropped)


def basis_frame_sum(basis: OrthonormalBasis) -> Element:
    """sum_j m_j* m_j, whose norm upper-bounds the basis-size invariant."""
    acc = zero(basis.elements[0].shape)
    for m in basis.elements:
        acc = acc + m.adjoint() @ m
    return acc


def d_ob(inc: Inclusion, basis: OrthonormalBasis = None) -> float:
    """‖sum_j m_j* m_j‖ for the constructed orthonormal basis."""
    if basis is None:
        basis = orthonormal_basis(inc)
    return op_norm(basis_frame_sum(basis))


def d_ob_interval(index: float):
    """[index, 1 + index (ceil(index) - 1)]: the bracket for the infimum."""
    return float(index), 1.0 + index * (math.ceil(index) - 1.0)


def jones_type_projection(inc: Inclusion):
    """A projection e with E_N(e) = (1/index) 1, when representable.

    Exists for the tensor families M_k ⊗ 1_d ⊆ M_k ⊗ M_d with d | k (groups
    of maximally entangled rank-one projections); returns None otherwise.
    """
    lam = inc.spec.inclusion_matrix
    if (inc.n_shape.num_blocks != 1 or inc.m_shape.num_blocks != 1):
        return None
    k, = inc.n_shape.block_dims
    d = lam[0][0]
    if d < 2 or k % d != 0 or k * d != inc.m_shape.block_dims[0]:
        return None
    ml = k * d
    y = np.zeros((ml, ml), dtype=np.complex128)
    for g in range(k // d):
        vec = np.zeros(ml, dtype=np.complex128)
        for a in range(d):
            # grouped layout: copy a, internal index g*d + a
            vec[a * k + (g * d + a)] = 1.0 / math.sqrt(d)
        y += np.outer(vec, vec.conj())
    block = inc._from_grouped(0, y)
    return Element(inc.m_shape, [(block + block.conj().T) / 2])
