"""Layer-wise Hessian statistics for weight quantization.

For a linear layer y = x W^T the reconstruction objective
||(W_q - W) X^T||_F^2 has Hessian H = 2 X^T X per output row. Error
propagation works on the upper Cholesky factor of H^{-1}.
"""

import numpy as np


def gram_hessian(X: np.ndarray, damping: float = 0.01) -> np.ndarray:
    """Damped Hessian 2 X^T X + damping * mean(diag(X^T X)) * I.

    X is (samples, in_features). Damping is relative to the average
    diagonal so it is scale free; it keeps the factorization well posed
    when X is rank deficient.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"calibration matrix must be 2-D, got shape {X.shape}")
    if damping < 0.0:
        raise ValueError(f"damping must be non-negative, got {damping}")
    gram = X.T @ X
    h = 2.0 * gram
    if damping > 0.0:
        h = h + damping * float(np.mean(np.diag(gram))) * np.eye(X.shape[1])
    return h


def inverse_hessian_factor(X: np.ndarray, damping: float = 0.01) -> np.ndarray:
    """Upper-triangular U with H^{-1} = U^T U.

    This is the factor the block solver consumes: diag(U) scales the
    in-block quantization error and the rows of U above the diagonal
    carry it into later columns.
    """
    h = gram_hessian(X, damping)
    try:
        hinv = np.linalg.inv(h)
    except np.linalg.LinAlgError as exc:
        raise ValueError("Hessian is singular; increase damping") from exc
    # Symmetrize before factoring; inv() drift can break Cholesky.
    hinv = 0.5 * (hinv + hinv.T)
    return np.linalg.cholesky(hinv).T
