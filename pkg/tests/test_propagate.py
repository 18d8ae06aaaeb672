import numpy as np
import pytest

from capnet.augment import Activation
from capnet.core import ProjectionMatrix, SpatialCapacity
from capnet.propagate import (
    Layer,
    LayerChain,
    PropagationOperator,
    differential_propagation_matrix,
    propagate_chain,
    propagate_single,
    propagation_matrix,
)


def _random_stochastic(rng, n_in, n_out):
    m = rng.random((n_in, n_out)) + 0.05
    return PropagationOperator(m / m.sum(axis=0))


class TestPropagationMatrix:
    def test_coordinate_column_passes_through(self):
        p = ProjectionMatrix(np.array([[1.0, 1 / np.sqrt(2)], [0.0, 1 / np.sqrt(2)]]))
        d = propagation_matrix(p)
        np.testing.assert_allclose(d.matrix[:, 0], [1.0, 0.0])

    def test_hand_example(self):
        p = ProjectionMatrix(
            np.array([[1 / np.sqrt(2), 0.0], [1 / np.sqrt(2), 1.0]])
        )
        d = propagation_matrix(p)
        np.testing.assert_allclose(d.matrix, [[0.5, 0.0], [0.5, 1.0]], atol=1e-15)

    def test_columns_sum_to_one(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            n, m = int(rng.integers(2, 8)), int(rng.integers(1, 8))
            p = ProjectionMatrix.from_raw(rng.standard_normal((n, m)))
            d = propagation_matrix(p)
            np.testing.assert_allclose(d.matrix.sum(axis=0), 1.0, atol=1e-12)

    def test_raw_weights_renormalized(self):
        raw = np.array([[3.0, 0.0], [4.0, 2.0]])
        d = propagation_matrix(raw)
        np.testing.assert_allclose(d.matrix[:, 0], [9 / 25, 16 / 25])
        np.testing.assert_allclose(d.matrix[:, 1], [0.0, 1.0])

    def test_zero_column_rejected(self):
        with pytest.raises(ValueError, match="zero column"):
            propagation_matrix(np.array([[1.0, 0.0], [0.0, 0.0]]))


class TestPropagateSingle:
    def test_identity(self):
        kappa = SpatialCapacity(np.array([0.3, 0.7, 2.0]))
        out = propagate_single(PropagationOperator.identity(3), kappa)
        np.testing.assert_array_equal(out.values, kappa.values)

    def test_hand_product(self):
        d = PropagationOperator(np.array([[0.5, 0.0], [0.5, 1.0]]))
        out = propagate_single(d, SpatialCapacity(np.array([1.0, 1.0])))
        np.testing.assert_allclose(out.values, [0.5, 1.5])
        assert out.total == pytest.approx(2.0)

    def test_uniform_operator_uniformizes(self):
        d = PropagationOperator.uniform(4)
        out = propagate_single(d, SpatialCapacity(np.array([4.0, 0.0, 0.0, 0.0])))
        np.testing.assert_allclose(out.values, 1.0)

    def test_conservation_random(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            n, m = int(rng.integers(1, 9)), int(rng.integers(1, 9))
            d = _random_stochastic(rng, n, m)
            kappa = SpatialCapacity(rng.random(m) * 3)
            out = propagate_single(d, kappa)
            assert out.total == pytest.approx(kappa.total, abs=1e-10)
            assert out.values.min() >= 0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="length"):
            propagate_single(PropagationOperator.identity(2), SpatialCapacity(np.ones(3)))


class TestPropagateChain:
    def test_identity_chain(self):
        chain = LayerChain.of_operators([PropagationOperator.identity(3)] * 4)
        kappa = SpatialCapacity(np.array([1.0, 0.5, 0.0]))
        profiles = propagate_chain(chain, kappa)
        assert len(profiles) == 5
        for profile in profiles:
            np.testing.assert_array_equal(profile.values, kappa.values)

    def test_two_uniform_layers(self):
        chain = LayerChain.of_operators([PropagationOperator.uniform(2)] * 2)
        profiles = propagate_chain(chain, SpatialCapacity(np.array([2.0, 0.0])))
        np.testing.assert_allclose(profiles[0].values, [1.0, 1.0])
        np.testing.assert_allclose(profiles[1].values, [1.0, 1.0])

    def test_matches_dense_product_oracle(self):
        rng = np.random.default_rng(3)
        dims = [int(rng.integers(2, 7)) for _ in range(4)]
        ops = [
            _random_stochastic(rng, dims[i], dims[i + 1]) for i in range(3)
        ]
        chain = LayerChain.of_operators(ops)
        kappa_top = SpatialCapacity(rng.random(dims[3]))
        profiles = propagate_chain(chain, kappa_top)
        product = ops[0].matrix @ ops[1].matrix @ ops[2].matrix
        np.testing.assert_allclose(
            profiles[0].values, product @ kappa_top.values, atol=1e-12
        )

    def test_composition_matches_nested_single_steps(self):
        rng = np.random.default_rng(4)
        d1 = _random_stochastic(rng, 3, 4)
        d2 = _random_stochastic(rng, 4, 2)
        kappa = SpatialCapacity(rng.random(2))
        chain = LayerChain.of_operators([d1, d2])
        profiles = propagate_chain(chain, kappa)
        np.testing.assert_array_equal(
            profiles[0].values,
            propagate_single(d1, propagate_single(d2, kappa)).values,
        )

    def test_long_chain_conserves_total(self):
        rng = np.random.default_rng(5)
        ops = [_random_stochastic(rng, 5, 5) for _ in range(1000)]
        chain = LayerChain.of_operators(ops)
        kappa = SpatialCapacity(rng.random(5) * 2)
        profiles = propagate_chain(chain, kappa)
        for profile in profiles:
            assert profile.total == pytest.approx(kappa.total, abs=1e-9)

    def test_max_entry_bounded_by_total(self):
        rng = np.random.default_rng(6)
        ops = [_random_stochastic(rng, 4, 4) for _ in range(10)]
        kappa = SpatialCapacity(rng.random(4))
        for profile in propagate_chain(LayerChain.of_operators(ops), kappa):
            assert profile.values.max() <= kappa.total + 1e-12

    def test_non_eligible_activation_named(self):
        p = ProjectionMatrix.from_raw(np.random.default_rng(7).standard_normal((3, 3)))
        chain = LayerChain(
            (
                Layer.standard(p, Activation.pseudo_random()),
                Layer.standard(p, Activation.relu()),
            )
        )
        with pytest.raises(ValueError, match="layer 1 activation 'relu'"):
            propagate_chain(chain, SpatialCapacity(np.ones(3)))

    def test_projection_layers_propagate(self):
        rng = np.random.default_rng(8)
        p = ProjectionMatrix.from_raw(rng.standard_normal((4, 4)))
        chain = LayerChain((Layer.standard(p, Activation.pseudo_random()),))
        kappa = SpatialCapacity(np.array([1.0, 0.0, 2.0, 0.0]))
        profiles = propagate_chain(chain, kappa)
        np.testing.assert_allclose(
            profiles[0].values, (p.matrix**2) @ kappa.values, atol=1e-12
        )

    def test_top_dimension_checked(self):
        chain = LayerChain.of_operators([PropagationOperator.identity(3)])
        with pytest.raises(ValueError, match="top dimension"):
            propagate_chain(chain, SpatialCapacity(np.ones(2)))


class TestDifferentialPropagationMatrix:
    def test_tiny_eps_near_identity(self):
        p = ProjectionMatrix.from_raw(np.random.default_rng(9).standard_normal((3, 3)))
        d = differential_propagation_matrix(p, eps=1e-9)
        np.testing.assert_allclose(d.matrix, np.eye(3), atol=2e-9)

    def test_identity_projection_any_eps(self):
        p = ProjectionMatrix.identity(3)
        for eps in (0.1, 0.5, 1.0, 10.0):
            d = differential_propagation_matrix(p, eps)
            np.testing.assert_array_equal(d.matrix, np.eye(3))

    def test_swap_example(self):
        p = ProjectionMatrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
        d = differential_propagation_matrix(p, eps=0.5)
        kappa = propagate_single(d, SpatialCapacity(np.array([1.0, 0.0])))
        np.testing.assert_array_equal(kappa.values, [2 / 3, 1 / 3])

    def test_componentwise_formula_agreement(self):
        # kappa_i = (kappa_phi_i + eps * sum_j p_ij^2 kappa_phi_j) / (1 + eps)
        rng = np.random.default_rng(10)
        p = ProjectionMatrix.from_raw(rng.standard_normal((4, 4)))
        kappa_phi = rng.random(4)
        for eps in (0.1, 0.5, 1.0):
            d = differential_propagation_matrix(p, eps)
            expected = (kappa_phi + eps * (p.matrix**2) @ kappa_phi) / (1 + eps)
            np.testing.assert_allclose(
                d.matrix @ kappa_phi, expected, atol=1e-12
            )

    def test_column_stochastic_across_eps(self):
        rng = np.random.default_rng(11)
        p = ProjectionMatrix.from_raw(rng.standard_normal((5, 5)))
        for eps in (0.1, 0.5, 1.0):
            d = differential_propagation_matrix(p, eps)
            assert d.matrix.min() >= 0
            np.testing.assert_allclose(d.matrix.sum(axis=0), 1.0, atol=1e-12)

    def test_first_order_expansion(self):
        rng = np.random.default_rng(12)
        p = ProjectionMatrix.from_raw(rng.standard_normal((4, 4)))
        eps = 1e-3
        d = differential_propagation_matrix(p, eps)
        first_order = np.eye(4) + eps * (p.matrix**2 - np.eye(4))
        assert np.max(np.abs(d.matrix - first_order)) <= 1e-5

    def test_rejects_non_square(self):
        p = ProjectionMatrix.from_raw(np.random.default_rng(13).standard_normal((3, 2)))
        with pytest.raises(ValueError, match="square"):
            differential_propagation_matrix(p, 0.5)

    def test_rejects_nonpositive_eps(self):
        p = ProjectionMatrix.identity(2)
        with pytest.raises(ValueError, match="eps"):
            differential_propagation_matrix(p, 0.0)


class TestOperatorAndLayerValidation:
    def test_operator_rejects_negative_entries(self):
        with pytest.raises(ValueError, match="negative"):
            PropagationOperator(np.array([[1.5], [-0.5]]))

    def test_operator_rejects_bad_column_sums(self):
        with pytest.raises(ValueError, match="sums to"):
            PropagationOperator(np.array([[0.5], [0.4]]))

    def test_uniform_window_columns(self):
        d = PropagationOperator.uniform_window(5, 3)
        np.testing.assert_allclose(d.matrix.sum(axis=0), 1.0)
        np.testing.assert_allclose(d.matrix[[1, 2, 3], 2], 1 / 3)
        np.testing.assert_allclose(d.matrix[[4, 0, 1], 0], 1 / 3)

    def test_uniform_window_size_bounds(self):
        with pytest.raises(ValueError, match="window"):
            PropagationOperator.uniform_window(3, 4)

    def test_layer_needs_exactly_one_source(self):
        p = ProjectionMatrix.identity(2)
        with pytest.raises(ValueError, match="exactly one"):
            Layer("standard", projection=p, operator=PropagationOperator.identity(2))
        with pytest.raises(ValueError, match="exactly one"):
            Layer("standard")

    def test_projection_layer_needs_activation(self):
        with pytest.raises(ValueError, match="activation"):
            Layer("standard", projection=ProjectionMatrix.identity(2))

    def test_differential_layer_needs_eps(self):
        p = ProjectionMatrix.identity(2)
        with pytest.raises(ValueError, match="eps"):
            Layer.differential(p, eps=0.0)

    def test_chain_dimension_compatibility(self):
        with pytest.raises(ValueError, match="layer 1 expects"):
            LayerChain.of_operators(
                [PropagationOperator.identity(2), PropagationOperator.identity(3)]
            )

    def test_chain_must_be_non_empty(self):
        with pytest.raises(ValueError, match="at least one"):
            LayerChain(())
