"""Analytic oracle for negative feedback around a linear system.

The main system is a symmetric matrix with one dominant eigenpair `(1/ε, v₁)` and all other
eigenvalues equal to one. A small input perturbation `ε·v₁` is amplified to an output of unit size;
the rank-one controller `K = κ v₁ v₁ᵀ` attenuates it, either exactly (closed loop solve) or by
iterating the correction a finite number of times.

```pycon
>>> system = build_example_system(10, 0.1, seed=0)
>>> controller = make_controller(system, kappa=1.0)
>>> float(np.linalg.norm(closed_loop_output(system, controller, 0.1 * system.dominant)))
0.1111111111111111
>>> exact_gain(0.1, 1.0)
0.1111111111111111
```
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve
from scipy.linalg.lapack import dgecon

from .errors import InvalidParameterError, PoleError, SingularSystemError
from .tensor import Array

__all__ = (
    'MAX_CONDITION',
    'LinearController',
    'LinearSystem',
    'build_example_system',
    'closed_loop_output',
    'exact_gain',
    'iterated_feedback',
    'iterated_gain',
    'make_controller',
    'open_loop_output',
)

MAX_CONDITION = 1e12
"""Closed loop matrices with a larger 1-norm condition estimate are treated as singular."""

_ORTHONORMAL_TOL = 1e-12


@dataclass(frozen=True)
class LinearSystem:
    """A symmetric system `A = ε⁻¹ v₁v₁ᵀ + Σ_{i≥2} vᵢvᵢᵀ`."""

    epsilon: float
    """The reciprocal of the dominant eigenvalue."""

    basis: Array
    """The `n×n` matrix whose columns are the orthonormal eigenvectors, `v₁` first."""

    matrix: Array
    """The system matrix `A`."""

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def dominant(self) -> Array:
        """The dominant eigenvector `v₁`."""
        return self.basis[:, 0]


@dataclass(frozen=True)
class LinearController:
    """The rank-one controller `K = κ v₁ v₁ᵀ`."""

    kappa: float
    """The controller gain."""

    matrix: Array
    """The controller matrix `K`."""


def _gram_schmidt(matrix: Array) -> Array:
    """Orthonormalize the columns of `matrix` with the modified Gram-Schmidt process.

    Each column is projected out twice, which keeps the basis orthonormal to working precision.
    """
    basis = matrix.copy()
    for j in range(basis.shape[1]):
        for _ in range(2):
            for i in range(j):
                basis[:, j] -= (basis[:, i] @ basis[:, j]) * basis[:, i]
        norm = np.linalg.norm(basis[:, j])
        if norm == 0:  # pragma: no cover
            raise InvalidParameterError('basis', 'columns are linearly dependent')
        basis[:, j] /= norm
    return basis


def build_example_system(n: int, epsilon: float, seed: int = 0, *, basis: ArrayLike | None = None) -> LinearSystem:
    """Build the example system of dimension `n` with dominant eigenvalue `1 / epsilon`.

    Args:
        n: The dimension, at least 2.
        epsilon: The dominant eigenvalue reciprocal, in `(0, 1)`.
        seed: Seed of the Gaussian matrix orthonormalized into the eigenbasis.
        basis: An explicit orthonormal basis (columns, `v₁` first), overriding the seeded one.

    Raises:
        InvalidParameterError: If `n < 2`, `epsilon` is outside of `(0, 1)` or `basis` is not orthonormal.
    """
    if n < 2:
        raise InvalidParameterError('n', f'dimension must be at least 2, got {n}')
    if not 0 < epsilon < 1:
        raise InvalidParameterError('epsilon', f'must lie in (0, 1), got {epsilon!r}')

    if basis is None:
        rng = np.random.default_rng(seed)
        vectors = _gram_schmidt(rng.standard_normal((n, n)))
    else:
        vectors = np.array(basis, dtype=np.float64)
        if vectors.shape != (n, n):
            raise InvalidParameterError('basis', f'expected shape {(n, n)}, got {vectors.shape}')
        if np.max(np.abs(vectors.T @ vectors - np.eye(n))) > _ORTHONORMAL_TOL:
            raise InvalidParameterError('basis', 'columns are not orthonormal')

    eigenvalues = np.ones(n)
    eigenvalues[0] = 1.0 / epsilon
    matrix = (vectors * eigenvalues) @ vectors.T
    # Symmetrize away the roundoff of the product:
    matrix = 0.5 * (matrix + matrix.T)
    return LinearSystem(epsilon=epsilon, basis=vectors, matrix=matrix)


def make_controller(system: LinearSystem, kappa: float) -> LinearController:
    """Return the controller `K = κ v₁ v₁ᵀ` aligned with the dominant direction of `system`."""
    v1 = system.dominant
    return LinearController(kappa=kappa, matrix=kappa * np.outer(v1, v1))


def open_loop_output(system: LinearSystem, x: ArrayLike) -> Array:
    """Return the uncontrolled response `A·x`."""
    return system.matrix @ np.asarray(x, dtype=np.float64)


def closed_loop_output(system: LinearSystem, controller: LinearController, x: ArrayLike) -> Array:
    """Solve the closed loop relation `(I - A K) y = A x` for `y`.

    The system is solved by LU factorization with partial pivoting.

    Raises:
        SingularSystemError: If the 1-norm condition estimate of `I - A K` exceeds
            [`MAX_CONDITION`][feedback_nn.linear_control.MAX_CONDITION].
    """
    closed = np.eye(system.n) - system.matrix @ controller.matrix
    gain_ratio = controller.kappa / system.epsilon
    with warnings.catch_warnings():
        # An exactly singular factorization is reported through the condition estimate below.
        warnings.simplefilter('ignore', LinAlgWarning)
        lu, piv = lu_factor(closed, check_finite=True)
    rcond, _ = dgecon(lu, np.linalg.norm(closed, 1), norm='1')
    condition = np.inf if rcond == 0 else 1.0 / rcond
    if condition > MAX_CONDITION:
        raise SingularSystemError(gain_ratio, condition)
    return lu_solve((lu, piv), open_loop_output(system, x))


def iterated_feedback(system: LinearSystem, controller: LinearController, x0: ArrayLike, iterations: int) -> Array:
    """Return `y(P) = A (I - K A)^P x0`, computed by `P` corrections `x ← x - K (A x)` then `A x`."""
    if iterations < 0:
        raise InvalidParameterError('iterations', f'must be non-negative, got {iterations}')
    x = np.array(x0, dtype=np.float64)
    for _ in range(iterations):
        x = x - controller.matrix @ (system.matrix @ x)
    return system.matrix @ x


def exact_gain(epsilon: float, kappa: float) -> float:
    """Return the closed loop attenuation `|1 / (1 - κ/ε)|` of the dominant perturbation.

    Raises:
        PoleError: If `κ = ε`.
    """
    denominator = 1.0 - kappa / epsilon
    if abs(denominator) < 1e-12:
        raise PoleError(epsilon, kappa)
    return abs(1.0 / denominator)


def iterated_gain(epsilon: float, kappa: float, iterations: int) -> float:
    """Return the attenuation `|1 - κ/ε|^P` after `P` feedback iterations."""
    if iterations < 0:
        raise InvalidParameterError('iterations', f'must be non-negative, got {iterations}')
    return abs(1.0 - kappa / epsilon) ** iterations
