"""Tests for paving bounds, constructions, search, averaging, and verification."""

import math

import numpy as np
import pytest

from pavelab import algebra as alg
from pavelab import families
from pavelab import paving as pv
from pavelab.algebra import AlgebraShape, Element, identity, op_norm, trace, zero
from pavelab.seeding import child_rng, child_seed


def selfadjoint(shape, seed):
    return alg.random_element(shape, alg.SELFADJOINT, seed)


class TestBounds:
    def test_partition_bound_examples(self):
        assert pv.paving_partition_bound(4, 1.0) == (16, 16, 256)
        assert pv.paving_partition_bound(2, 0.5) == (64, 32, 2048)
        assert pv.paving_partition_bound(1, 2.0) == (4, 1, 4)
        assert pv.paving_partition_bound(4, 0.9) == (20, 20, 400)

    def test_lower_bound_examples(self):
        assert abs(pv.averaging_count_lower_bound(0.05, 0.05) - 10.0) < 1e-12
        assert abs(pv.averaging_count_lower_bound(1.0, 1.0) - 0.5) < 1e-12
        # trace -> 0 recovers the 1/epsilon floor
        assert abs(pv.averaging_count_lower_bound(0.0, 0.25) - 4.0) < 1e-12

    def test_dixmier_count_examples(self):
        assert pv.dixmier_count_bound(0.5) == 4
        assert pv.dixmier_count_bound(0.25) == 11
        assert pv.dixmier_count_bound(0.1) == 52
        assert pv.dixmier_count_bound(1.0) == 1

    def test_dixmier_count_monotone(self):
        values = [pv.dixmier_count_bound(e) for e in (0.9, 0.5, 0.3, 0.1, 0.05)]
        assert values == sorted(values)

    def test_domains(self):
        with pytest.raises(pv.PavingError):
            pv.paving_partition_bound(0.5, 1.0)
        with pytest.raises(pv.PavingError):
            pv.dixmier_count_bound(1.5)
        with pytest.raises(pv.PavingError):
            pv.averaging_count_lower_bound(-0.1, 0.5)


class TestSmallSupportPaving:
    def test_rank_one_in_m16(self):
        sh = AlgebraShape.matrix(16)
        x = zero(sh)
        x.blocks[0][0, 0] = 1.0
        part = pv.pave_small_support([x], 0.25)
        part.validate()
        assert part.size == 4
        assert op_norm(alg.pinch(part, x)) <= 0.25 + 1e-9

    def test_zero_family(self):
        sh = AlgebraShape.matrix(16)
        part = pv.pave_small_support([zero(sh)], 0.5)
        assert part.size == 1
        assert part.projections[0].allclose(identity(sh))

    def test_random_small_support_families(self):
        # guarantee ‖sum q x q‖ <= ‖x‖ / m for every member, across seeds
        sh = AlgebraShape.matrix(64)
        eps = 0.5
        for seed in range(20):
            rng = child_rng(40, seed)
            ops = []
            for j in range(3):
                g = rng.standard_normal((64, 1)) + 1j * rng.standard_normal((64, 1))
                h = rng.standard_normal((64, 1)) + 1j * rng.standard_normal((64, 1))
                mat = g @ h.conj().T
                mat /= np.linalg.norm(mat, 2)
                ops.append(Element(sh, [mat]))
            part = pv.pave_small_support(ops, eps)
            m = part.size
            for x in ops:
                assert op_norm(alg.pinch(part, x)) <= op_norm(x) / m + 1e-9
                assert op_norm(alg.pinch(part, x)) <= eps + 1e-9

    def test_precondition_violation(self):
        sh = AlgebraShape.matrix(8)
        x = selfadjoint(sh, 1)  # full support
        with pytest.raises(pv.PavingError, match="support too large"):
            pv.pave_small_support([x], 0.25)

    def test_granularity_suggestion(self):
        # a low-weight small block satisfies the trace precondition but cannot
        # host the required cycle: the finite-dimension guard must fire
        sh = AlgebraShape((8, 2), (0.98 / 8, 0.01))
        x = zero(sh)
        x.blocks[1][0, 0] = 1.0
        with pytest.raises(pv.GranularityError, match="nearest feasible"):
            pv.pave_small_support([x], 0.25)


@pytest.fixture(scope="module")
def aligned_pipeline_case():
    """tensor(32,2) with a rank-one operator aligned to the first sampled
    partition part, which forces the exceptional stage to fire."""
    inc = families.tensor_product(32, 2)
    seed = 5
    u = alg.haar_block(child_rng(seed, 0), 32)
    w = u[:, :1]
    frame_m = inc.embed_frame([w])[0]
    xi = frame_m[:, :1]
    x = Element(inc.m_shape, [xi @ xi.conj().T])
    problem = pv.PavingProblem(inclusion=inc, operators=[x], epsilon=0.99,
                               index=4.0)
    return inc, problem, seed


class TestConstructivePipeline:
    def test_commutant_family_trivial(self):
        inc = families.tensor_product(4, 2)
        b = np.diag([1.0, -1.0]).astype(complex)
        x = Element(inc.m_shape, [np.kron(np.eye(4), b)])
        problem = pv.PavingProblem(inclusion=inc, operators=[x], epsilon=0.5,
                                   index=4.0)
        cert = pv.pave_constructive(problem, pv.PipelineConfig(2, 2, seed=1))
        assert cert.r == 1 and cert.verified
        assert cert.per_x_ratio == [0.0]

    def test_degenerate_self_inclusion(self):
        # N = M: the spectral partition of v is already the paving; the ratio
        # stays under the free pinching constant plus finite-dim slack
        inc = families.self_inclusion(64)
        x = selfadjoint(inc.m_shape, 2)
        problem = pv.PavingProblem(inclusion=inc, operators=[x], epsilon=0.95,
                                   index=1.0)
        cert = pv.pave_constructive(problem, pv.PipelineConfig(4, 4, seed=3))
        assert cert.verified
        assert max(cert.per_x_ratio) <= 2 * math.sqrt(3) / 4 + 0.1

    def test_epsilon_ge_one_trivial(self):
        inc = families.self_inclusion(8)
        problem = pv.PavingProblem(inclusion=inc, operators=[selfadjoint(inc.m_shape, 4)],
                                   epsilon=1.5, index=1.0)
        cert = pv.pave_constructive(problem, pv.PipelineConfig(2, 2, seed=0))
        assert cert.r == 1 and cert.verified
        assert max(cert.per_x_ratio) <= 1.0 + 1e-9

    def test_dimension_resource_error(self):
        inc = families.self_inclusion(8)
        problem = pv.PavingProblem(inclusion=inc, operators=[selfadjoint(inc.m_shape, 5)],
                                   epsilon=0.5, index=1.0)
        with pytest.raises(pv.ResourceError):
            pv.pave_constructive(problem, pv.PipelineConfig(3, 3, seed=0))

    def test_multiblock_subalgebra_rejected(self):
        spec_n = AlgebraShape((1, 1), (0.5, 0.5))
        spec_m = AlgebraShape.matrix(2)
        from pavelab.inclusion import Inclusion, InclusionSpec
        inc = Inclusion(InclusionSpec(spec_n, spec_m, ((1,), (1,))), [("id", None)])
        x = selfadjoint(inc.m_shape, 6)
        problem = pv.PavingProblem(inclusion=inc, operators=[x], epsilon=0.5,
                                   index=2.0)
        with pytest.raises(pv.ResourceError):
            pv.pave_constructive(problem, pv.PipelineConfig(1, 1, seed=0))

    def test_delta_prime_domain(self):
        with pytest.raises(pv.PavingError):
            pv.PipelineConfig(4, 4, delta_prime=0.3)

    def test_exceptional_stage_fires(self, aligned_pipeline_case):
        inc, problem, seed = aligned_pipeline_case
        cfg = pv.PipelineConfig(4, 2, delta_prime=0.1, retry_budget=0, seed=seed)
        cert = pv.pave_constructive(problem, cfg)
        rec = cert.diagnostics["attempts"][0]
        assert rec["stage_ok"]
        assert max(rec["tau_q"]) > 0.0
        theta = cert.diagnostics["theta_exceptional"]
        assert all(v <= math.sqrt(theta) + 1e-9 for v in rec["compression_tail"])
        assert all(v <= 1.0 / 2 + 1e-8 for v in rec["refined_expectation"])
        assert all(l <= r + 1e-8 for l, r in zip(rec["transfer_lhs"], rec["transfer_rhs"]))
        assert all(v >= -1e-9 for v in rec["schwarz_min"])
        assert all(lhs <= rhs + 1e-9 for lhs, rhs in rec["support_trace_bound"]
                   if rhs > 0)
        assert cert.r == 8
        assert max(cert.per_x_ratio) <= 1.0 + 1e-9

    def test_retry_on_budget_violation(self, aligned_pipeline_case):
        inc, problem, seed = aligned_pipeline_case
        # the aligned operator forces tau(q) ~ 1/32 > delta' on attempt 0;
        # a fresh rotation is generic and passes
        cfg = pv.PipelineConfig(4, 2, delta_prime=0.012, retry_budget=8, seed=seed)
        cert = pv.pave_constructive(problem, cfg)
        attempts = cert.diagnostics["attempts"]
        assert not attempts[0]["stage_ok"]
        assert "delta" in attempts[0]["reason"]
        assert attempts[-1]["stage_ok"]
        assert cert.verified

    def test_stage_exhaustion_returns_diagnostics(self, aligned_pipeline_case):
        inc, problem, seed = aligned_pipeline_case
        cfg = pv.PipelineConfig(4, 2, delta_prime=0.012, retry_budget=0, seed=seed)
        cert = pv.pave_constructive(problem, cfg)
        assert cert.diagnostics.get("stage_exhausted")
        assert not cert.diagnostics["attempts"][0]["stage_ok"]
        assert cert.r == 4  # falls back to the outer partition

    def test_reverification_bit_identical(self):
        inc = families.tensor_product(16, 2)
        ops = [selfadjoint(inc.m_shape, child_seed(7, t)) for t in range(2)]
        problem = pv.PavingProblem(inclusion=inc, operators=ops, epsilon=0.9,
                                   index=4.0)
        cert = pv.pave_constructive(problem, pv.PipelineConfig(2, 2, seed=8))
        again = pv.verify(problem, cert)
        assert again.per_x_ratio == cert.per_x_ratio
        assert again.verified == cert.verified
        rerun = pv.pave_constructive(problem, pv.PipelineConfig(2, 2, seed=8))
        assert rerun.per_x_ratio == cert.per_x_ratio

    def test_kadison_inequality_on_pipeline_partition(self):
        # the pinching map of the refined partition is unital completely
        # positive: its Schwarz gap stays PSD on random operators
        inc = families.tensor_product(8, 2)
        x = selfadjoint(inc.m_shape, 9)
        problem = pv.PavingProblem(inclusion=inc, operators=[x], epsilon=0.95,
                                   index=4.0)
        cert = pv.pave_constructive(problem, pv.PipelineConfig(2, 2, seed=10))
        frames = [alg.projection_frame(p) for p in cert.partition.projections]
        for t in range(100):
            rng = child_rng(11, t)
            y = Element(inc.m_shape, [rng.standard_normal((16, 16))
                                      + 1j * rng.standard_normal((16, 16))])
            phi_y = pv._pinched(inc, frames, y)
            phi_yy = pv._pinched(inc, frames, y.adjoint() @ y)
            gap = phi_yy - phi_y.adjoint() @ phi_y
            lam = min(np.linalg.eigvalsh((b + b.conj().T) / 2)[0]
                      for b in gap.blocks)
            assert lam >= -1e-9


class TestSearch:
    def test_r1_ratio_is_one(self):
        inc = families.self_inclusion(8)
        x = selfadjoint(inc.m_shape, 12)
        problem = pv.PavingProblem(inclusion=inc, operators=[x], epsilon=0.5,
                                   index=1.0)
        cert = pv.pave_search(problem, pv.SearchConfig(r=1, restarts=1, steps=5, seed=0))
        assert abs(cert.per_x_ratio[0] - 1.0) < 1e-12
        assert not cert.verified

    def test_commutant_family(self):
        inc = families.tensor_product(4, 2)
        b = np.diag([1.0, -1.0]).astype(complex)
        x = Element(inc.m_shape, [np.kron(np.eye(4), b)])
        problem = pv.PavingProblem(inclusion=inc, operators=[x], epsilon=0.5,
                                   index=4.0)
        cert = pv.pave_search(problem, pv.SearchConfig(r=1, restarts=1, steps=5, seed=0))
        assert cert.per_x_ratio == [0.0] and cert.verified

    def test_granularity(self):
        inc = families.self_inclusion(4)
        problem = pv.PavingProblem(inclusion=inc, operators=[selfadjoint(inc.m_shape, 13)],
                                   epsilon=0.5, index=1.0)
        with pytest.raises(alg.AlgebraError):
            pv.pave_search(problem, pv.SearchConfig(r=5, seed=0))

    def test_annealing_beats_coordinate_scan(self):
        # brute-force oracle: all balanced bisections in the eigenbasis of
        # the centered operator; the annealer searches a superset
        inc = families.self_inclusion(8)
        q = alg.random_element(inc.m_shape, alg.PROJECTION, 14, theta=0.5)
        problem = pv.PavingProblem(inclusion=inc, operators=[q], epsilon=0.9,
                                   index=1.0)
        xt = q - trace(q) * identity(inc.m_shape)
        den = op_norm(xt)
        _, vecs = alg.herm_eig(xt)
        v = vecs[0]
        import itertools

        best = np.inf
        for combo in itertools.combinations(range(8), 4):
            rest = [i for i in range(8) if i not in combo]
            val = 0.0
            for cols in (combo, rest):
                f = v[:, list(cols)]
                c = f.conj().T @ xt.blocks[0] @ f
                val = max(val, float(np.abs(np.linalg.eigvalsh(c)).max()))
            best = min(best, val / den)
        cert = pv.pave_search(problem, pv.SearchConfig(r=2, restarts=3, steps=250, seed=15))
        assert max(cert.per_x_ratio) <= best + 0.02

    def test_incumbent_monotone(self):
        inc = families.self_inclusion(16)
        x = selfadjoint(inc.m_shape, 16)
        problem = pv.PavingProblem(inclusion=inc, operators=[x], epsilon=0.4,
                                   index=1.0)
        cert = pv.pave_search(problem, pv.SearchConfig(r=4, restarts=2, steps=80, seed=17))
        hist = cert.diagnostics["incumbent_history"]
        assert all(b <= a + 1e-15 for a, b in zip(hist, hist[1:]))


class TestVerify:
    def test_rejects_broken_partition(self):
        inc = families.self_inclusion(4)
        p = alg.random_element(inc.n_shape, alg.PROJECTION, 18, theta=0.5)
        problem = pv.PavingProblem(inclusion=inc, operators=[selfadjoint(inc.m_shape, 19)],
                                   epsilon=0.5, index=1.0)
        with pytest.raises(pv.CandidateRejected):
            pv.verify(problem, alg.PartitionOfUnity([p, p]))

    def test_rejects_candidate_outside_subalgebra(self):
        inc = families.tensor_product(2, 2)
        problem = pv.PavingProblem(inclusion=inc, operators=[selfadjoint(inc.m_shape, 20)],
                                   epsilon=0.5, index=4.0)
        p = alg.random_element(inc.m_shape, alg.PROJECTION, 21, theta=0.5)
        q = identity(inc.m_shape) - p
        with pytest.raises(pv.CandidateRejected) as err:
            pv.verify(problem, alg.PartitionOfUnity([p, q]))
        assert "expectation_residual" in err.value.residuals

    def test_accepts_embedded_partition(self):
        inc = families.tensor_product(2, 2)
        problem = pv.PavingProblem(inclusion=inc, operators=[selfadjoint(inc.m_shape, 22)],
                                   epsilon=1.5, index=4.0)
        parts_n = alg.coordinate_partition(inc.n_shape, 2)
        embedded = alg.PartitionOfUnity(
            [inc.embed(p) for p in parts_n.projections])
        cert = pv.verify(problem, embedded)
        assert cert.r == 2 and cert.verified

    def test_rejects_non_unitary_family(self):
        inc = families.self_inclusion(4)
        problem = pv.PavingProblem(inclusion=inc, operators=[selfadjoint(inc.m_shape, 23)],
                                   epsilon=0.5, index=1.0)
        bad = 0.5 * identity(inc.n_shape)
        with pytest.raises(pv.CandidateRejected):
            pv.verify(problem, [bad])

    def test_trivial_partition_on_commutant(self):
        inc = families.scalars_in(3)
        x = trace_zero_free = 0.7 * identity(inc.m_shape)
        problem = pv.PavingProblem(inclusion=inc, operators=[x], epsilon=0.5,
                                   index=9.0)
        cert = pv.verify(problem, alg.PartitionOfUnity([identity(inc.n_shape)]))
        assert cert.per_x_ratio == [0.0] and cert.verified


class TestDixmier:
    def test_two_point_spectrum_one_fold(self):
        inc = families.self_inclusion(2)
        x = Element(inc.m_shape, [np.diag([1.0, -1.0]).astype(complex)])
        problem = pv.PavingProblem(inclusion=inc, operators=[x], epsilon=0.1,
                                   index=1.0)
        cert = pv.dixmier_average_run(problem)
        assert cert.r == 2 and cert.verified
        assert max(cert.per_x_ratio) < 1e-12

    def test_commutant_element_single_unitary(self):
        inc = families.tensor_product(2, 2)
        b = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
        x = Element(inc.m_shape, [np.kron(np.eye(2), b)])
        problem = pv.PavingProblem(inclusion=inc, operators=[x], epsilon=0.3,
                                   index=4.0)
        cert = pv.dixmier_average_run(problem)
        assert cert.r == 1 and cert.verified and cert.per_x_ratio == [0.0]

    def test_counts_within_bound_random(self):
        inc = families.self_inclusion(64)
        for seed in range(5):
            x = selfadjoint(inc.m_shape, child_seed(24, seed))
            for eps in (0.5, 0.25, 0.1):
                problem = pv.PavingProblem(inclusion=inc, operators=[x],
                                           epsilon=eps, index=1.0)
                cert = pv.dixmier_average_run(problem, seed=seed)
                assert cert.verified
                assert cert.r <= pv.dixmier_count_bound(eps)
                assert not cert.soundness_alarm

    def test_multi_element_family(self):
        inc = families.self_inclusion(32)
        ops = [selfadjoint(inc.m_shape, child_seed(25, t)) for t in range(2)]
        problem = pv.PavingProblem(inclusion=inc, operators=ops, epsilon=0.25,
                                   index=1.0)
        cert = pv.dixmier_average_run(problem, seed=1)
        assert cert.verified
        assert max(cert.per_x_ratio) <= 0.25 + 1e-9

    def test_proper_inclusion_rejected(self):
        inc = families.tensor_product(4, 2)
        x = selfadjoint(inc.m_shape, 26)
        problem = pv.PavingProblem(inclusion=inc, operators=[x], epsilon=0.5,
                                   index=4.0)
        with pytest.raises(pv.ResourceError):
            pv.dixmier_average_run(problem)

    def test_non_selfadjoint_rejected(self):
        inc = families.self_inclusion(4)
        rng = child_rng(27)
        x = Element(inc.m_shape, [rng.standard_normal((4, 4))
                                  + 1j * rng.standard_normal((4, 4))])
        problem = pv.PavingProblem(inclusion=inc, operators=[x], epsilon=0.5,
                                   index=1.0)
        with pytest.raises(pv.PavingError):
            pv.dixmier_average_run(problem)

    def test_positive_norm_one_lower_bound(self):
        # verified averaging of a projection respects (tau + eps)^-1
        inc = families.self_inclusion(64)
        q = alg.random_element(inc.m_shape, alg.PROJECTION, 28, theta=1 / 16)
        problem = pv.PavingProblem(inclusion=inc, operators=[q], epsilon=0.25,
                                   index=1.0)
        cert = pv.dixmier_average_run(problem, seed=2)
        assert cert.verified and not cert.soundness_alarm
        lb = pv.averaging_count_lower_bound(1 / 16, 0.25)
        assert cert.r >= lb - 1e-9


class TestL2Paving:
    def test_single_part(self):
        inc = families.self_inclusion(8)
        x = selfadjoint(inc.m_shape, 29)
        problem = pv.PavingProblem(inclusion=inc, operators=[x], epsilon=0.3,
                                   index=1.0)
        cert = pv.l2_pave(problem, 1, seed=0)
        assert abs(cert.per_x_ratio[0] - 1.0) < 1e-12
        assert cert.threshold == 1.0 + 0.05

    def test_block_diagonal_worst_case(self):
        # an operator already block-diagonal for the sampled partition is
        # fixed by the pinching: ratio 1
        inc = families.self_inclusion(12)
        seed = 30
        u = alg.random_haar_unitary(inc.n_shape, child_rng(seed))
        vals = np.concatenate([np.full(4, 1.0), np.full(4, -0.5), np.full(4, -0.5)])
        x = Element(inc.m_shape, [(u.blocks[0] * vals) @ u.blocks[0].conj().T])
        problem = pv.PavingProblem(inclusion=inc, operators=[x], epsilon=0.3,
                                   index=1.0)
        cert = pv.l2_pave(problem, 3, seed=seed)
        assert abs(cert.per_x_ratio[0] - 1.0) < 1e-9
        assert not cert.verified

    def test_haar_band(self):
        inc = families.self_inclusion(64)
        ratios = []
        for seed in range(10):
            x = selfadjoint(inc.m_shape, child_seed(31, seed))
            problem = pv.PavingProblem(inclusion=inc, operators=[x], epsilon=0.3,
                                       index=1.0)
            cert = pv.l2_pave(problem, 4, seed=seed)
            ratios.append(cert.per_x_ratio[0])
        assert 0.8 * 0.5 <= np.mean(ratios) <= 1.2 * 0.5


class TestScan:
    def test_rows_and_bounds(self):
        inc = families.self_inclusion(8)
        q = alg.random_element(inc.m_shape, alg.PROJECTION, 32, theta=0.25)
        rows = pv.scan(inc, [0.8, 1.2], [q], 1.0, seed=3, r_cap=8)
        assert [r["epsilon"] for r in rows] == [0.8, 1.2]
        for row in rows:
            assert row["r_verified"]
            assert row["r_found"] <= row["theorem_r"]
        # epsilon >= 1 is paved by the trivial partition
        assert rows[1]["r_found"] == 1
        # lower-bound column uses the normalized trace of the positive member
        tau = 0.25 / op_norm(q)
        assert rows[0]["lower_bound"] == math.ceil(1.0 / (tau + 0.8) - 1e-12)

    def test_found_respects_lemma_bound(self):
        # verified averaging size can never undercut the (tau+eps)^-1 floor
        inc = families.self_inclusion(16)
        q = alg.random_element(inc.m_shape, alg.PROJECTION, 33, theta=1 / 16)
        rows = pv.scan(inc, [0.45], [q], 1.0, seed=4, r_cap=16)
        row = rows[0]
        assert row["r_verified"]
        assert row["r_found"] >= row["lower_bound"]

    def test_empty_grid(self):
        inc = families.self_inclusion(8)
        with pytest.raises(pv.PavingError):
            pv.scan(inc, [], [identity(inc.m_shape)], 1.0)
