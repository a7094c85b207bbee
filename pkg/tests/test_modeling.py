import dataclasses

import numpy as np
import pytest

from splitkit.errors import ConfigurationError, DimensionMismatchError, ParameterError
from splitkit.modeling import (
    ProblemSpec,
    SolverConfig,
    ValidatedConfig,
    build_product_reformulation,
    validate_config,
)
from splitkit.operators import identity_map, matrix_map, shifted_identity_op

from instances import affine_instance


def _two_block_spec():
    rng = np.random.default_rng(0)
    return ProblemSpec(
        primal_ops=[shifted_identity_op(rng.standard_normal(4))],
        composed_ops=[
            shifted_identity_op(rng.standard_normal(2)),
            shifted_identity_op(rng.standard_normal(3)),
        ],
        linear_maps=[
            matrix_map(rng.standard_normal((2, 4))),
            matrix_map(rng.standard_normal((3, 4))),
        ],
    )


class TestProblemSpec:
    def test_dimensions_exposed(self):
        spec = _two_block_spec()
        assert spec.n == 1 and spec.m == 2
        assert spec.dim_primal == 4
        assert spec.dims_dual == (2, 3)

    def test_empty_primal_gets_zero_operator(self):
        spec = ProblemSpec(
            primal_ops=[],
            composed_ops=[shifted_identity_op([1.0, 0.0])],
            linear_maps=[matrix_map(np.eye(2))],
        )
        assert spec.n == 1
        point = np.array([0.3, -0.8])
        assert np.array_equal(spec.primal_ops[0].eval(point, 2.0), point)

    def test_completely_empty_rejected(self):
        with pytest.raises(DimensionMismatchError):
            ProblemSpec(primal_ops=[], composed_ops=[], linear_maps=[])

    def test_length_mismatch_rejected(self):
        with pytest.raises(DimensionMismatchError):
            ProblemSpec(
                primal_ops=[shifted_identity_op([0.0])],
                composed_ops=[shifted_identity_op([0.0])],
                linear_maps=[],
            )

    def test_map_dimension_mismatch_rejected(self):
        with pytest.raises(DimensionMismatchError):
            ProblemSpec(
                primal_ops=[shifted_identity_op([0.0, 0.0])],
                composed_ops=[shifted_identity_op([0.0])],
                linear_maps=[matrix_map(np.ones((1, 3)))],
            )
        with pytest.raises(DimensionMismatchError):
            ProblemSpec(
                primal_ops=[shifted_identity_op([0.0, 0.0])],
                composed_ops=[shifted_identity_op([0.0, 0.0])],
                linear_maps=[matrix_map(np.ones((1, 2)))],
            )

    def test_immutable(self):
        spec = _two_block_spec()
        with pytest.raises(dataclasses.FrozenInstanceError):
            spec.primal_ops = ()


class TestProductReformulation:
    def test_singleton_returns_originals(self):
        rng = np.random.default_rng(1)
        spec = ProblemSpec(
            primal_ops=[shifted_identity_op(rng.standard_normal(3))],
            composed_ops=[shifted_identity_op(rng.standard_normal(2))],
            linear_maps=[matrix_map(rng.standard_normal((2, 3)))],
        )
        stacked_op, stacked_map = build_product_reformulation(spec)
        assert stacked_op is spec.composed_ops[0]
        assert stacked_map is spec.linear_maps[0]

    def test_two_identities_on_reals(self):
        spec = ProblemSpec(
            primal_ops=[shifted_identity_op([0.0])],
            composed_ops=[shifted_identity_op([0.0]), shifted_identity_op([0.0])],
            linear_maps=[identity_map(1), identity_map(1)],
        )
        _, stacked = build_product_reformulation(spec)
        assert np.allclose(stacked.forward([2.0]), [2.0, 2.0])
        assert np.allclose(stacked.adjoint([1.0, 5.0]), [6.0])
        assert stacked.norm_bound**2 == pytest.approx(2.0, rel=1e-15)

    def test_blockwise_resolvent(self):
        spec = _two_block_spec()
        stacked_op, _ = build_product_reformulation(spec)
        rng = np.random.default_rng(2)
        point = rng.standard_normal(5)
        for s in (0.5, 1.0, 2.0):
            blocks = np.concatenate(
                [
                    spec.composed_ops[0].eval(point[:2], s),
                    spec.composed_ops[1].eval(point[2:], s),
                ]
            )
            assert np.array_equal(stacked_op.eval(point, s), blocks)

    def test_empty_stack_rejected(self):
        spec = ProblemSpec(primal_ops=[shifted_identity_op([0.0])])
        with pytest.raises(ParameterError):
            build_product_reformulation(spec)

    def test_stacked_adjoint_identity(self):
        spec = _two_block_spec()
        _, stacked = build_product_reformulation(spec)
        rng = np.random.default_rng(3)
        for _ in range(100):
            x = rng.standard_normal(4)
            y = rng.standard_normal(5)
            lhs = float(np.dot(stacked.forward(x), y))
            rhs = float(np.dot(x, stacked.adjoint(y)))
            assert abs(lhs - rhs) <= 1e-10 * (1 + np.linalg.norm(x) * np.linalg.norm(y))

    def test_pythagorean_norm_bound(self):
        spec = _two_block_spec()
        _, stacked = build_product_reformulation(spec)
        blocks = sum(lin.norm_bound**2 for lin in spec.linear_maps)
        assert stacked.norm_bound**2 == pytest.approx(blocks, rel=1e-15)


class TestValidateConfig:
    def test_boundary_gamma_accepted(self):
        spec = ProblemSpec(
            primal_ops=[shifted_identity_op([0.0])],
            composed_ops=[shifted_identity_op([0.0])],
            linear_maps=[identity_map(1)],
        )
        config = validate_config(spec, SolverConfig(lam=0.5, gamma=1.0))
        assert isinstance(config, ValidatedConfig)
        assert config.gamma_bound == pytest.approx(1.0)

    def test_deblurring_bound(self):
        # blur has norm 1 and the scaled difference map norm sqrt(8)*mu, so at
        # mu = 1/sqrt(8) the composite bound is 1/(1+1) and gamma = 1/2 passes
        mu = 1.0 / np.sqrt(8.0)
        spec = ProblemSpec(
            primal_ops=[shifted_identity_op([0.0, 0.0])],
            composed_ops=[
                shifted_identity_op([0.0, 0.0]),
                shifted_identity_op([0.0, 0.0]),
            ],
            linear_maps=[
                matrix_map(np.eye(2)),
                matrix_map(np.sqrt(8.0) * mu / np.sqrt(2.0) * np.array([[1.0, 0.0], [1.0, 0.0]])),
            ],
        )
        assert spec.linear_norm_bound_sq() == pytest.approx(2.0, rel=1e-12)
        config = validate_config(spec, SolverConfig(lam=0.99, gamma=0.5))
        assert config.gamma == 0.5

    def test_lambda_one_rejected(self):
        spec = ProblemSpec(primal_ops=[shifted_identity_op([0.0])])
        with pytest.raises(ConfigurationError, match="0 < lam < 1"):
            validate_config(spec, SolverConfig(lam=1.0, gamma=1.0))

    def test_lambda_zero_rejected(self):
        spec = ProblemSpec(primal_ops=[shifted_identity_op([0.0])])
        with pytest.raises(ConfigurationError):
            validate_config(spec, SolverConfig(lam=0.0, gamma=1.0))

    def test_gamma_above_bound_rejected(self):
        instance = affine_instance(4, n=2, m=2)
        with pytest.raises(ConfigurationError, match="1/sum"):
            validate_config(
                instance.spec,
                SolverConfig(lam=0.5, gamma=instance.gamma_max * 1.01),
            )

    def test_gamma_nonpositive_rejected(self):
        instance = affine_instance(5, n=2, m=1)
        with pytest.raises(ConfigurationError):
            validate_config(instance.spec, SolverConfig(lam=0.5, gamma=0.0))

    def test_no_dual_block_pins_gamma(self):
        spec = ProblemSpec(primal_ops=[shifted_identity_op([0.0])])
        validate_config(spec, SolverConfig(lam=0.5, gamma=1.0))
        with pytest.raises(ConfigurationError, match="norm weight"):
            validate_config(spec, SolverConfig(lam=0.5, gamma=0.5))

    def test_annotated_bound(self):
        instance = affine_instance(6, n=3, m=2)
        config = validate_config(
            instance.spec, SolverConfig(lam=0.25, gamma=instance.gamma_max / 2)
        )
        assert config.gamma_bound == pytest.approx(instance.gamma_max, rel=1e-12)

    def test_revalidation_idempotent(self):
        instance = affine_instance(7, n=2, m=1)
        config = validate_config(
            instance.spec, SolverConfig(lam=0.5, gamma=instance.gamma_max)
        )
        again = validate_config(instance.spec, config)
        assert again.gamma == config.gamma
        assert again.gamma_bound == config.gamma_bound
