"""Self-contained linear learners: ridge, lasso and IRLS logistic regression.

These are deliberately dependency-free implementations with inspectable
internals (closed-form normal equations, cyclic coordinate descent, iteratively
reweighted least squares) so the fitting behaviour is pinned by this package's
own tests rather than by an external library's release notes.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
from scipy.special import expit
from sklearn.base import BaseEstimator

from .exceptions import ConvergenceError, SingularSystemError
from .validation import as_binary_vector, as_float_matrix, as_float_vector

#: Diagonal stabilizer added to every weighted normal system in IRLS.
IRLS_STABILIZER = 1e-10


def _solve_spd(gram: np.ndarray, rhs: np.ndarray, context: str,
               suggested_penalty: float | None = None) -> np.ndarray:
    """Solve a symmetric positive-definite system, raising a typed error."""
    try:
        chol = scipy.linalg.cho_factor(gram, check_finite=False)
        return scipy.linalg.cho_solve(chol, rhs, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise SingularSystemError(
            f"{context}: normal system is singular or indefinite "
            f"(try a positive penalty{f', e.g. {suggested_penalty:g}' if suggested_penalty else ''})",
            suggested_penalty=suggested_penalty,
        ) from exc


class RidgeRegression(BaseEstimator):
    """Least squares with an L2 penalty on the slopes, intercept unpenalized.

    Solved in closed form via the centered normal equations
    ``(Xc' Xc + penalty * I) beta = Xc' yc``.
    """

    def __init__(self, penalty: float = 0.0, fit_intercept: bool = True):
        self.penalty = penalty
        self.fit_intercept = fit_intercept

    def fit(self, features, labels):
        x = as_float_matrix(features, "features")
        y = as_float_vector(labels, "labels")
        if x.shape[0] != y.shape[0]:
            raise ValueError("features and labels are misaligned")
        if x.shape[0] < 2:
            raise ValueError("need at least two rows to fit")
        if self.penalty < 0:
            raise ValueError("penalty must be >= 0")
        if self.fit_intercept:
            x_mean = x.mean(axis=0)
            y_mean = float(y.mean())
        else:
            x_mean = np.zeros(x.shape[1])
            y_mean = 0.0
        xc = x - x_mean
        gram = xc.T @ xc
        gram[np.diag_indices_from(gram)] += self.penalty
        suggested = 1e-6 * x.shape[0]
        coef = _solve_spd(gram, xc.T @ (y - y_mean), "ridge",
                          suggested_penalty=suggested if self.penalty == 0 else None)
        self.coef_ = coef
        self.intercept_ = y_mean - float(x_mean @ coef)
        return self

    def predict(self, features) -> np.ndarray:
        x = as_float_matrix(features, "features")
        return x @ self.coef_ + self.intercept_


def _soft_threshold(value: float, threshold: float) -> float:
    if value > threshold:
        return value - threshold
    if value < -threshold:
        return value + threshold
    return 0.0


class LassoRegression(BaseEstimator):
    """L1-penalized least squares fit by cyclic coordinate descent.

    Minimizes ``(1/2n) ||y - Xb||^2 + penalty * ||b||_1`` on internally
    standardized columns (the stored transform folds back to the raw scale).
    Convergence: the largest coefficient move in a full sweep falls below
    ``tol``.
    """

    def __init__(self, penalty: float = 0.01, max_sweeps: int = 1000,
                 tol: float = 1e-8):
        self.penalty = penalty
        self.max_sweeps = max_sweeps
        self.tol = tol

    def fit(self, features, labels):
        x = as_float_matrix(features, "features")
        y = as_float_vector(labels, "labels")
        n, p = x.shape
        if n != y.shape[0]:
            raise ValueError("features and labels are misaligned")
        if n < 2:
            raise ValueError("need at least two rows to fit")
        if self.penalty < 0:
            raise ValueError("penalty must be >= 0")
        means = x.mean(axis=0)
        scales = x.std(axis=0)
        scales[scales == 0.0] = 1.0
        xs = (x - means) / scales
        y_mean = float(y.mean())
        r = y - y_mean  # residual with beta = 0
        beta = np.zeros(p)
        col_sq = (xs * xs).sum(axis=0) / n  # 1.0 except for constant columns
        for _ in range(self.max_sweeps):
            max_move = 0.0
            for j in range(p):
                if col_sq[j] == 0.0:
                    continue
                old = beta[j]
                rho = xs[:, j] @ r / n + col_sq[j] * old
                new = _soft_threshold(rho, self.penalty) / col_sq[j]
                if new != old:
                    r -= xs[:, j] * (new - old)
                    beta[j] = new
                    max_move = max(max_move, abs(new - old))
            if max_move <= self.tol:
                break
        self.n_samples_ = n
        self.means_ = means
        self.scales_ = scales
        self.std_coef_ = beta
        self.coef_ = beta / scales
        self.intercept_ = y_mean - float(means @ self.coef_)
        return self

    def predict(self, features) -> np.ndarray:
        x = as_float_matrix(features, "features")
        return x @ self.coef_ + self.intercept_

    def kkt_gap(self, features, labels) -> float:
        """Largest violation of the zero-coordinate stationarity bound.

        At a minimizer, |d/db_j of the smooth part| <= penalty for every j with
        b_j = 0; returns max_j(|gradient_j| - penalty) over those coordinates
        (negative or ~0 at convergence).
        """
        x = as_float_matrix(features, "features")
        y = as_float_vector(labels, "labels")
        xs = (x - self.means_) / self.scales_
        r = (y - y.mean()) - xs @ self.std_coef_
        grad = np.abs(xs.T @ r / x.shape[0])
        zero = self.std_coef_ == 0.0
        if not zero.any():
            return -np.inf
        return float((grad[zero] - self.penalty).max())


class IrlsLogisticRegression(BaseEstimator):
    """Logistic regression fit by IRLS with a step-halving safeguard.

    Features are standardized internally and an unpenalized intercept column is
    appended. Every weighted normal system gets ``IRLS_STABILIZER`` added to
    its diagonal. Stops when the largest coefficient change falls below ``tol``
    or after ``max_iter`` Newton steps; a step that cannot improve the log-loss
    even after halving is a reported divergence, not silently absorbed.
    """

    def __init__(self, max_iter: int = 100, tol: float = 1e-8,
                 max_halvings: int = 30):
        self.max_iter = max_iter
        self.tol = tol
        self.max_halvings = max_halvings

    @staticmethod
    def _log_loss(z: np.ndarray, y: np.ndarray) -> float:
        # mean of log(1 + exp(z)) - y*z, computed stably
        return float(np.mean(np.logaddexp(0.0, z) - y * z))

    def fit(self, features, labels):
        x = as_float_matrix(features, "features")
        y = as_binary_vector(labels, "labels").astype(float)
        n, p = x.shape
        if n != y.shape[0]:
            raise ValueError("features and labels are misaligned")
        if y.min() == y.max():
            raise ValueError("labels contain a single class; cannot fit a propensity")
        means = x.mean(axis=0)
        scales = x.std(axis=0)
        scales[scales == 0.0] = 1.0
        design = np.column_stack([(x - means) / scales, np.ones(n)])
        beta = np.zeros(p + 1)
        z = design @ beta
        loss = self._log_loss(z, y)
        converged = False
        for _ in range(self.max_iter):
            prob = expit(z)
            weight = prob * (1.0 - prob)
            gram = design.T @ (design * weight[:, None])
            gram[np.diag_indices_from(gram)] += IRLS_STABILIZER
            grad = design.T @ (y - prob)
            step = _solve_spd(gram, grad, "logistic IRLS")
            scale = 1.0
            for _ in range(self.max_halvings + 1):
                cand = beta + scale * step
                cand_z = design @ cand
                cand_loss = self._log_loss(cand_z, y)
                if np.isfinite(cand_loss) and cand_loss <= loss + 1e-12:
                    break
                scale *= 0.5
            else:
                raise ConvergenceError(
                    "logistic IRLS diverged: no improving step after "
                    f"{self.max_halvings} halvings (loss={loss:.6g})"
                )
            move = float(np.max(np.abs(cand - beta)))
            beta, z, loss = cand, cand_z, cand_loss
            if move < self.tol:
                converged = True
                break
        self.converged_ = converged
        self.n_iter_loss_ = loss
        self.means_ = means
        self.scales_ = scales
        self.coef_ = beta[:p] / scales
        self.intercept_ = float(beta[p] - (means / scales) @ beta[:p])
        return self

    def decision_function(self, features) -> np.ndarray:
        x = as_float_matrix(features, "features")
        return x @ self.coef_ + self.intercept_

    def predict_proba(self, features) -> np.ndarray:
        """Probability of the positive class (unclipped)."""
        return expit(self.decision_function(features))
