"""Age-component dictionaries and the homotopy L1-path solver.

The solver traces the exact solution path of
``min 0.5 ||y - D a||^2 + lambda ||a||_1`` from lambda_0 = ||D^T y||_inf
downward, maintaining the active set across breakpoints.  It stops at
the first breakpoint where the support reaches ``max_support`` or where
lambda crosses ``lambda_ratio * lambda_0``.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateAtom, NumericError, ShapeError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AgeDictionary:
    """Unit-norm age-component atoms of one (group, region) cell."""

    atoms: np.ndarray         # n x K, unit columns
    group_id: int
    region_id: str
    column_norms: np.ndarray  # original atom norms, length K

    @property
    def n(self):
        return self.atoms.shape[0]

    @property
    def num_atoms(self):
        return self.atoms.shape[1]


@dataclass(frozen=True)
class SparseCode:
    coefficients: np.ndarray
    lambda_final: float
    support_size: int
    kkt_residual: float


@dataclass(frozen=True)
class SolverStop:
    max_support: int
    lambda_ratio: float = 0.01
    kkt_tol: float = 1e-8

    def __post_init__(self):
        if self.max_support < 1:
            raise ShapeError("max_support must be >= 1")
        if not 0.0 <= self.lambda_ratio < 1.0:
            raise ShapeError("lambda_ratio must lie in [0, 1)")
        if self.kkt_tol <= 0:
            raise ShapeError("kkt_tol must be positive")


def default_stop(num_atoms):
    return SolverStop(max_support=max(1, math.ceil(num_atoms / 10)))


def build_dictionary(components, group_id, region_id):
    if len(components) == 0:
        raise ShapeError("dictionary needs at least one atom")
    mat = np.asarray(components, dtype=float).T  # n x K
    if mat.ndim != 2:
        raise ShapeError("age components must have uniform length")
    norms = np.linalg.norm(mat, axis=0)
    if np.any(norms == 0.0):
        raise DegenerateAtom("dictionary atoms must be nonzero")
    return AgeDictionary(atoms=mat / norms, group_id=group_id,
                         region_id=region_id, column_norms=norms)


def kkt_residual(D, y, alpha, lam):
    """Maximum violation of the L1 stationarity conditions at lambda."""
    atoms = D.atoms
    y = np.asarray(y, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if y.shape != (D.n,) or alpha.shape != (D.num_atoms,):
        raise ShapeError("inconsistent shapes in kkt_residual")
    grad = atoms.T @ (atoms @ alpha - y)
    active = alpha != 0.0
    viol_active = np.abs(grad[active] + lam * np.sign(alpha[active]))
    viol_inactive = np.maximum(np.abs(grad[~active]) - lam, 0.0)
    worst = 0.0
    if viol_active.size:
        worst = max(worst, float(viol_active.max()))
    if viol_inactive.size:
        worst = max(worst, float(viol_inactive.max()))
    return worst


def _active_direction(atoms, active, signs):
    """Solve (D_A^T D_A) dir = signs; min-norm on rank deficiency."""
    gram = atoms[:, active].T @ atoms[:, active]
    try:
        direction = np.linalg.solve(gram, signs)
    except np.linalg.LinAlgError:
        direction = None
    if direction is None or not np.all(np.isfinite(direction)):
        direction, *_ = np.linalg.lstsq(gram, signs, rcond=None)
        log.warning("rank-deficient active set (%d atoms); min-norm solve",
                    len(active))
    return direction


def homotopy_solve(D, y, stop):
    y = np.asarray(y, dtype=float)
    if y.shape != (D.n,):
        raise ShapeError("expected signal of length %d" % D.n)
    if not np.all(np.isfinite(y)):
        raise NumericError("signal contains non-finite values")
    atoms = D.atoms
    K = D.num_atoms
    alpha = np.zeros(K)

    corr = atoms.T @ y
    lam0 = float(np.abs(corr).max()) if K else 0.0
    if lam0 == 0.0:
        return SparseCode(coefficients=alpha, lambda_final=0.0,
                          support_size=0, kkt_residual=0.0)
    lam_floor = stop.lambda_ratio * lam0
    tiny = 1e-12 * lam0

    lam = lam0
    first = int(np.argmax(np.abs(corr)))  # argmax takes the lowest index on ties
    active = [first]
    signs = np.array([np.sign(corr[first])])

    while True:
        direction = _active_direction(atoms, active, signs)
        v = atoms[:, active] @ direction
        resid = y - atoms @ alpha
        corr = atoms.T @ resid
        corr_v = atoms.T @ v

        gamma_max = lam - lam_floor
        best = (gamma_max, "floor", -1, 0.0)

        inactive = [k for k in range(K) if k not in active]
        for k in inactive:
            for num, den in ((lam - corr[k], 1.0 - corr_v[k]),
                             (lam + corr[k], 1.0 + corr_v[k])):
                if den > 1e-14:
                    g = num / den
                    if tiny < g < best[0]:
                        best = (g, "enter", k, 0.0)
        for idx, j in enumerate(active):
            dj = direction[idx]
            aj = alpha[j]
            if dj != 0.0 and aj != 0.0 and np.sign(dj) != np.sign(aj):
                g = -aj / dj
                if tiny < g < best[0]:
                    best = (g, "drop", j, 0.0)

        gamma, kind, col, _ = best
        alpha[active] = alpha[active] + gamma * direction
        lam = lam - gamma

        if kind == "floor" or lam <= tiny:
            break
        if kind == "enter":
            resid = y - atoms @ alpha
            c = atoms[:, col] @ resid
            active.append(col)
            signs = np.append(signs, np.sign(c) if c != 0.0 else 1.0)
        else:  # drop
            idx = active.index(col)
            alpha[col] = 0.0
            active.pop(idx)
            signs = np.delete(signs, idx)
            if not active:
                break
        support = int(np.count_nonzero(alpha))
        if support >= stop.max_support:
            break

    support = int(np.count_nonzero(alpha))
    lam_final = max(lam, 0.0)
    kkt = kkt_residual(D, y, alpha, lam_final)
    if kkt > stop.kkt_tol:
        log.warning("homotopy KKT residual %.3e exceeds tolerance %.3e",
                    kkt, stop.kkt_tol)
    return SparseCode(coefficients=alpha, lambda_final=lam_final,
                      support_size=support, kkt_residual=kkt)


def reconstruct(D, code):
    coeff = np.asarray(code.coefficients, dtype=float)
    if coeff.shape != (D.num_atoms,):
        raise ShapeError("coefficient length %s, expected %d"
                         % (coeff.shape, D.num_atoms))
    return D.atoms @ coeff
