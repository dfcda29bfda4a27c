"""
Spectral Service - truncated generalized eigendecomposition L phi = lambda M phi and heat diffusion
"""
import logging
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, eigsh
from tenacity import RetryError, Retrying, retry_if_exception_type, stop_after_attempt

from src.exceptions import ArgumentError, ConvergenceError
from src.models import SpectralBasis, TriMesh
from src.services.mesh_ops import cotan_laplacian, lumped_mass

logger = logging.getLogger(__name__)

EIGSH_TOLERANCE = 1e-8
RESIDUAL_TOLERANCE = 1e-6
MAX_ITER_PER_EIGENPAIR = 50
SOLVER_ATTEMPTS = 4
INITIAL_SHIFT_FRACTION = 1e-5  # of the median diagonal ratio L_ii / M_ii


class _ResidualCheckFailed(Exception):
    def __init__(self, residuals: np.ndarray):
        self.residuals = residuals
        super().__init__(f"max residual {residuals.max():.3e}")


def dense_threshold(k: int) -> int:
    """Problems up to this many vertices go to the dense solver"""
    return max(400, 2 * k)


def residual_norms(L: sp.spmatrix, mass: np.ndarray, eigenvalues: np.ndarray, eigenvectors: np.ndarray) -> np.ndarray:
    """||L phi_i - lambda_i M phi_i||_2 per eigenpair"""
    R = L @ eigenvectors - (mass[:, None] * eigenvectors) * eigenvalues[None, :]
    return np.linalg.norm(R, axis=0)


def _canonicalize(eigenvalues: np.ndarray, eigenvectors: np.ndarray, mass: np.ndarray):
    """Ascending order, M-normalized, non-negative eigenvalues, largest-|entry| positive"""
    order = np.argsort(eigenvalues, kind="stable")
    eigenvalues = eigenvalues[order]
    eigenvectors = eigenvectors[:, order]

    scale = max(abs(eigenvalues[-1]), 1.0)
    eigenvalues = np.where(eigenvalues < 0, np.where(eigenvalues > -1e-10 * scale, 0.0, eigenvalues), eigenvalues)

    norms = np.sqrt(np.einsum("vk,v,vk->k", eigenvectors, mass, eigenvectors))
    eigenvectors = eigenvectors / norms[None, :]

    pivot = np.argmax(np.abs(eigenvectors), axis=0)
    signs = np.sign(eigenvectors[pivot, np.arange(eigenvectors.shape[1])])
    signs[signs == 0] = 1.0
    return eigenvalues, eigenvectors * signs[None, :]


def _dense_solve(L: sp.spmatrix, mass: np.ndarray, k: int):
    eigenvalues, eigenvectors = scipy.linalg.eigh(L.toarray(), np.diag(mass), subset_by_index=[0, k - 1])
    return eigenvalues, eigenvectors


def _shift_invert_solve(L: sp.spmatrix, mass: np.ndarray, k: int, sigma: float, v0: np.ndarray):
    M = sp.diags(mass).tocsc()
    eigenvalues, eigenvectors = eigsh(
        L.tocsc(),
        k=k,
        M=M,
        sigma=sigma,
        which="LM",
        v0=v0,
        tol=EIGSH_TOLERANCE,
        maxiter=MAX_ITER_PER_EIGENPAIR * k,
    )
    return eigenvalues, eigenvectors


def eigensolve(L: sp.spmatrix, M: sp.spmatrix, k: int, seed: int = 0) -> SpectralBasis:
    """
    k smallest eigenpairs of L phi = lambda M phi

    Dense `scipy.linalg.eigh` for small problems, shift-invert Lanczos (`eigsh`)
    otherwise. A failed or inaccurate Lanczos run is retried with the shift moved
    further below the spectrum.

    Args:
        L: Symmetric PSD Laplacian (V x V)
        M: Diagonal positive mass matrix (V x V)
        k: Number of eigenpairs, 1 <= k < V
        seed: Seed of the Lanczos start vector

    Returns:
        SpectralBasis

    Raises:
        ArgumentError: k out of range or inconsistent shapes
        ConvergenceError: solver failed after all attempts (carries residual norms)
    """
    V = L.shape[0]
    if L.shape != (V, V) or M.shape != (V, V):
        raise ArgumentError(f"operator shapes disagree: L {L.shape}, M {M.shape}")
    if k < 1 or k >= V:
        raise ArgumentError(f"k must satisfy 1 <= k < V, got k={k}, V={V}")
    mass = np.asarray(M.diagonal(), dtype=np.float64)
    if np.any(mass <= 0):
        raise ArgumentError("mass matrix must be positive on the diagonal")
    L = sp.csr_matrix(L, dtype=np.float64)

    if V <= dense_threshold(k):
        logger.debug(f"Dense eigensolve V={V}, k={k}")
        eigenvalues, eigenvectors = _dense_solve(L, mass, k)
        eigenvalues, eigenvectors = _canonicalize(eigenvalues, eigenvectors, mass)
        return SpectralBasis(eigenvalues=eigenvalues, eigenvectors=eigenvectors, mass=mass)

    ratio = np.median(np.abs(L.diagonal()) / mass)
    base_shift = -INITIAL_SHIFT_FRACTION * max(ratio, 1e-12)
    v0 = np.random.default_rng(seed).standard_normal(V)
    last_residuals = np.full(k, np.inf)

    try:
        for attempt in Retrying(
            stop=stop_after_attempt(SOLVER_ATTEMPTS),
            retry=retry_if_exception_type((ArpackNoConvergence, ArpackError, RuntimeError, _ResidualCheckFailed)),
            before_sleep=lambda state: logger.warning(
                f"Eigensolve attempt {state.attempt_number} failed ({state.outcome.exception()}); "
                f"moving shift further below the spectrum"
            ),
        ):
            with attempt:
                sigma = base_shift * 10 ** (attempt.retry_state.attempt_number - 1)
                logger.debug(f"Shift-invert eigensolve V={V}, k={k}, sigma={sigma:.3e}")
                eigenvalues, eigenvectors = _shift_invert_solve(L, mass, k, sigma, v0)
                eigenvalues, eigenvectors = _canonicalize(eigenvalues, eigenvectors, mass)
                last_residuals = residual_norms(L, mass, eigenvalues, eigenvectors)
                if np.any(last_residuals > RESIDUAL_TOLERANCE * (1.0 + eigenvalues)):
                    raise _ResidualCheckFailed(last_residuals)
    except RetryError as e:
        cause = e.last_attempt.exception()
        if isinstance(cause, _ResidualCheckFailed):
            last_residuals = cause.residuals
        raise ConvergenceError(
            f"eigensolve did not converge after {SOLVER_ATTEMPTS} attempts (V={V}, k={k}): {cause}",
            residuals=last_residuals.tolist(),
        ) from cause

    return SpectralBasis(eigenvalues=eigenvalues, eigenvectors=eigenvectors, mass=mass)


def compute_basis(mesh: TriMesh, k: int, seed: int = 0) -> SpectralBasis:
    """Cotangent Laplacian + lumped mass + eigensolve"""
    return eigensolve(cotan_laplacian(mesh), lumped_mass(mesh), k, seed=seed)


def project_to_basis(basis: SpectralBasis, x: np.ndarray) -> np.ndarray:
    """(V, C) -> (k, C) coefficients Phi^T M x"""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != basis.num_vertices:
        raise ArgumentError(f"signal has {x.shape[0]} rows, basis has {basis.num_vertices} vertices")
    weighted = x * basis.mass.reshape((-1,) + (1,) * (x.ndim - 1))
    return basis.eigenvectors.T @ weighted


def reconstruct(basis: SpectralBasis, coeffs: np.ndarray) -> np.ndarray:
    return basis.eigenvectors @ coeffs


def heat_diffuse(basis: SpectralBasis, x: np.ndarray, t: float | Sequence[float] | np.ndarray) -> np.ndarray:
    """
    Phi diag(exp(-lambda t_c)) Phi^T M x, per channel c

    Args:
        basis: Spectral basis
        x: (V,) or (V, C) signal
        t: scalar or per-channel diffusion times, >= 0

    Raises:
        ArgumentError: negative time or channel-count mismatch
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 0:
        t = np.full(x.shape[1], float(t))
    if t.shape != (x.shape[1],):
        raise ArgumentError(f"expected {x.shape[1]} diffusion times, got shape {t.shape}")
    if np.any(t < 0) or not np.all(np.isfinite(t)):
        raise ArgumentError("diffusion times must be finite and >= 0")

    coeffs = project_to_basis(basis, x)
    decay = np.exp(-np.outer(basis.eigenvalues, t))
    out = reconstruct(basis, decay * coeffs)
    return out[:, 0] if squeeze else out
