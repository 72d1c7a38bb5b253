import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gaugetc.gauge import (
    AtomicModel,
    SignVertex,
    canonical_vertices,
    canonicalize,
    cp_inner_product,
    is_canonical,
    model_entry,
    model_inner_product,
    tiny_norm_oracle,
    vertex_entry,
    vertex_project,
)
from gaugetc.tensor import Shape, all_indices, materialize_dense

from oracles import dense_combination, dense_vertex


def identity_exhibit():
    return AtomicModel((2, 2), 1.0, [0.5, 0.5],
                       [SignVertex([[1, 1], [1, 1]]), SignVertex([[1, -1], [1, -1]])])


@st.composite
def vertices(draw, max_order=4, max_size=4):
    dims = draw(st.lists(st.integers(1, max_size), min_size=1, max_size=max_order))
    return SignVertex([draw(st.lists(st.sampled_from([-1, 1]), min_size=r, max_size=r)) for r in dims])


class TestSignVertex:
    def test_rejects_non_signs(self):
        with pytest.raises(ValueError, match="exactly -1 or \\+1"):
            SignVertex([[1, 0]])
        with pytest.raises(ValueError):
            SignVertex([])
        with pytest.raises(ValueError):
            SignVertex([[]])

    def test_shape_and_flat(self):
        v = SignVertex([[1, -1], [1, 1, -1]])
        assert v.shape == Shape((2, 3))
        np.testing.assert_array_equal(v.flat(), [1, -1, 1, 1, -1])
        assert SignVertex.from_flat(v.flat(), (2, 3)) == v

    def test_immutable(self):
        v = SignVertex([[1, -1]])
        with pytest.raises(ValueError):
            v.signs[0][0] = -1

    @pytest.mark.parametrize("signs, x, expect", [
        ([[1, 1], [1, 1]], (1, 1), 1),
        ([[1, -1], [1, 1], [-1, 1]], (1, 0, 0), 1),
        ([[1, -1], [1, 1]], (1, 0), -1),
    ])
    def test_vertex_entry(self, signs, x, expect):
        assert vertex_entry(SignVertex(signs), x) == expect

    def test_vertex_project(self):
        v = SignVertex([[1, -1], [1, -1]])
        np.testing.assert_array_equal(vertex_project(v, [[0, 0], [1, 1]]), [1, 1])
        assert vertex_project(v, np.zeros((0, 2), dtype=int)).size == 0
        np.testing.assert_array_equal(vertex_project(SignVertex([[1, -1], [1, 1]]), [[1, 0]]), [-1])


class TestCanonicalize:
    def test_example(self):
        v = SignVertex([[1, 1], [-1, 1]])
        c = canonicalize(v)
        assert c == SignVertex([[-1, -1], [1, -1]])
        np.testing.assert_array_equal(dense_vertex(c.signs), dense_vertex(v.signs))

    def test_pair_flip_invariance(self):
        v = SignVertex([[1, -1], [1, 1, -1], [-1, 1]])
        w = SignVertex([v.signs[0], -v.signs[1], -v.signs[2]])
        np.testing.assert_array_equal(dense_vertex(v.signs), dense_vertex(w.signs))
        assert canonicalize(v) == canonicalize(w)

    def test_idempotent(self):
        v = SignVertex([[-1, 1], [1, -1]])
        assert is_canonical(v) and canonicalize(v) == v

    @settings(max_examples=100, deadline=None)
    @given(vertices())
    def test_preserves_entries(self, v):
        c = canonicalize(v)
        assert is_canonical(c)
        np.testing.assert_array_equal(dense_vertex(c.signs), dense_vertex(v.signs))
        assert canonicalize(c) == c

    @pytest.mark.parametrize("shape", [(2,), (2, 2), (3, 2), (2, 2, 2), (1, 3, 2)])
    def test_canonical_vertices_are_distinct_tensors(self, shape):
        verts = canonical_vertices(shape)
        s = Shape(shape)
        assert len(verts) == 2 ** (s.rho - s.order + 1)
        dense = {dense_vertex(v.signs).tobytes() for v in verts}
        # size-1 modes collapse distinct sign vectors only through pair flips
        assert len(dense) == len(verts)


class TestAtomicModel:
    def test_identity_exhibit(self):
        m = identity_exhibit()
        np.testing.assert_array_equal(materialize_dense(m, (2, 2)), [1, 0, 0, 1])
        assert model_entry(m, (0, 0)) == 1.0 and model_entry(m, (0, 1)) == 0.0

    def test_single_term_matches_vertex(self):
        v = SignVertex([[1, -1, 1], [-1, 1]])
        m = AtomicModel.from_vertex(v)
        for x in all_indices(v.shape):
            assert model_entry(m, x) == vertex_entry(v, x)

    def test_empty_is_zero(self):
        m = AtomicModel.zero((3, 2))
        np.testing.assert_array_equal(materialize_dense(m, (3, 2)), np.zeros(6))

    def test_validation(self):
        v = SignVertex([[1, -1], [1, 1]])
        with pytest.raises(ValueError, match="nonnegative"):
            AtomicModel((2, 2), 1.0, [-0.1], [v])
        with pytest.raises(ValueError, match="> 1"):
            AtomicModel((2, 2), 1.0, [0.6, 0.6], [v, SignVertex([[1, 1], [1, 1]])])
        with pytest.raises(ValueError, match="duplicate"):
            # same tensor as v after flipping both modes
            AtomicModel((2, 2), 1.0, [0.5, 0.5], [v, SignVertex([[-1, 1], [-1, -1]])])
        with pytest.raises(ValueError, match="does not match"):
            AtomicModel((2, 3), 1.0, [1.0], [v])
        AtomicModel((2, 2), 1.0, [0.5, 0.5 + 1e-10], [v, SignVertex([[1, 1], [1, 1]])])

    def test_to_factors_reconstructs(self):
        rng = np.random.default_rng(3)
        shape = (3, 2, 2)
        verts = list(dict.fromkeys(canonicalize(SignVertex([rng.choice([-1, 1], r) for r in shape]))
                                   for _ in range(4)))
        w = rng.random(len(verts))
        w /= w.sum()
        m = AtomicModel(shape, 0.7, w, verts)
        F = m.to_factors()
        dense = np.einsum("ir,jr,kr->ijk", *F)
        np.testing.assert_allclose(dense.reshape(-1), materialize_dense(m, shape), atol=1e-15)


class TestInnerProduct:
    def test_vertex_self(self):
        v = SignVertex([[1, -1, 1], [1, 1], [-1, 1, 1, 1]])
        m = AtomicModel.from_vertex(v)
        assert model_inner_product(m, m) == 24.0

    def test_identity(self):
        m = identity_exhibit()
        assert model_inner_product(m, m) == 2.0

    def test_zero(self):
        m = identity_exhibit()
        assert model_inner_product(m, AtomicModel.zero((2, 2))) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape mismatch"):
            model_inner_product(AtomicModel.zero((2, 2)), AtomicModel.zero((2, 3)))

    @pytest.mark.parametrize("shape", [(4,), (5, 3), (3, 4, 2), (2, 3, 2, 3), (10, 10, 10)])
    def test_against_dense(self, shape):
        rng = np.random.default_rng(len(shape))
        models = []
        for _ in range(2):
            t = int(rng.integers(1, 6))
            verts = list(dict.fromkeys(canonicalize(SignVertex([rng.choice([-1, 1], r) for r in shape]))
                                       for _ in range(t)))
            w = rng.random(len(verts))
            models.append(AtomicModel(shape, rng.uniform(0.5, 2), w / w.sum(), verts))
        a, b = (materialize_dense(m, shape) for m in models)
        expect = float(np.dot(a, b))
        assert model_inner_product(*models) == pytest.approx(expect, rel=1e-12, abs=1e-12)
        assert cp_inner_product(models[0].to_factors(), models[1].to_factors()) == \
            pytest.approx(expect, rel=1e-12, abs=1e-12)


class TestTinyNorm:
    def test_vertex_is_one(self):
        v = SignVertex([[1, -1], [1, 1, -1]])
        assert tiny_norm_oracle(dense_vertex(v.signs), (2, 3)) == pytest.approx(1.0, abs=1e-12)

    def test_identity_is_one(self):
        assert tiny_norm_oracle(np.eye(2), (2, 2)) == pytest.approx(1.0, abs=1e-12)

    def test_zero(self):
        assert tiny_norm_oracle(np.zeros((2, 2)), (2, 2)) == 0.0

    def test_guard(self):
        with pytest.raises(ValueError, match="guard"):
            tiny_norm_oracle(np.zeros((9, 9)), (9, 9))

    def test_convex_combination_is_certificate(self):
        rng = np.random.default_rng(0)
        shape = (3, 2, 2)
        signs = [[rng.choice([-1, 1], r) for r in shape] for _ in range(3)]
        w = np.array([0.2, 0.3, 0.1])
        psi = dense_combination(shape, 1.0, w, signs)
        assert tiny_norm_oracle(psi, shape) <= w.sum() + 1e-12
        assert tiny_norm_oracle(psi, shape) >= np.abs(psi).max() - 1e-12

    @pytest.mark.parametrize("k", [3, 4])
    def test_larger_identities(self, k):
        # frozen LP values: the max-entry lower bound is attained, not k
        assert tiny_norm_oracle(np.eye(k), (k, k)) == pytest.approx(1.0, abs=1e-9)

    def test_norm_axioms_small(self):
        rng = np.random.default_rng(5)
        shape = (2, 3)
        a, b = rng.standard_normal((2, 6))
        na, nb = tiny_norm_oracle(a, shape), tiny_norm_oracle(b, shape)
        assert tiny_norm_oracle(-a, shape) == pytest.approx(na, rel=1e-12)
        assert tiny_norm_oracle(2.5 * a, shape) == pytest.approx(2.5 * na, rel=1e-9)
        assert tiny_norm_oracle(a + b, shape) <= na + nb + 1e-9
