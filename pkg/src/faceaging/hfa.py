"""Two-factor latent linear-Gaussian face model and its EM trainer.

A face vector decomposes as f = m + U x + V y + eps, where x is shared
by all faces of one subject and y by all faces of one age group.  The
model is fit by block-coordinate EM on a structured mean-field
posterior; the monitored ELBO is non-decreasing per sweep, which the
tests exploit.  Projections apply Sigma^{-1} through the Woodbury
identity so the d x d covariance is never materialized.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import EmptyInput, NumericError, ShapeError

SIGMA2_FLOOR = 1e-10


@dataclass(frozen=True)
class HfaConfig:
    d: int
    p: int
    q: int
    max_sweeps: int = 200
    elbo_rel_tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.p <= 0 or self.q <= 0 or self.p + self.q > self.d:
            raise ShapeError("need 0 < p, 0 < q, p + q <= d")
        if self.elbo_rel_tol <= 0:
            raise ShapeError("elbo_rel_tol must be positive")


class HfaModel:
    """Trained parameters (m, U, V, sigma2) with cached Woodbury solves."""

    def __init__(self, m, U, V, sigma2):
        self.m = np.asarray(m, dtype=float)
        self.U = np.asarray(U, dtype=float)
        self.V = np.asarray(V, dtype=float)
        self.sigma2 = float(max(sigma2, SIGMA2_FLOOR))
        d = self.m.shape[0]
        if self.m.ndim != 1 or self.U.ndim != 2 or self.V.ndim != 2 \
                or self.U.shape[0] != d or self.V.shape[0] != d:
            raise ShapeError("inconsistent model dimensions")
        if not (np.all(np.isfinite(self.m)) and np.all(np.isfinite(self.U))
                and np.all(np.isfinite(self.V))):
            raise NumericError("model parameters must be finite")
        self._core = None

    @property
    def d(self):
        return self.m.shape[0]

    @property
    def p(self):
        return self.U.shape[1]

    @property
    def q(self):
        return self.V.shape[1]

    def _factor(self):
        if self._core is None:
            W = np.hstack([self.U, self.V])
            core = self.sigma2 * np.eye(W.shape[1]) + W.T @ W
            self._core = (W, cho_factor(core))
        return self._core

    def solve_sigma(self, r):
        """Apply Sigma^{-1} = (sigma2 I + U U^T + V V^T)^{-1} to r."""
        r = np.asarray(r, dtype=float)
        if r.shape != (self.d,):
            raise ShapeError("expected vector of length %d" % self.d)
        W, factor = self._factor()
        return (r - W @ cho_solve(factor, W.T @ r)) / self.sigma2


@dataclass
class FaceDecomposition:
    mean: np.ndarray
    identity: np.ndarray
    age: np.ndarray
    residual: np.ndarray


@dataclass
class TrainingState:
    identity_means: dict       # subject key -> <x_i>, length p
    age_means: dict            # group key -> <y_j>, length q
    elbo_history: list = field(default_factory=list)


def mean_face(vectors):
    if len(vectors) == 0:
        raise EmptyInput("mean_face requires at least one vector")
    mat = np.asarray(vectors, dtype=float)
    if mat.ndim != 2:
        raise ShapeError("face vectors must have uniform length")
    return mat.mean(axis=0)


def project_identity(model, f):
    g = model.solve_sigma(np.asarray(f, dtype=float) - model.m)
    return model.U @ (model.U.T @ g)


def project_age(model, f):
    g = model.solve_sigma(np.asarray(f, dtype=float) - model.m)
    return model.V @ (model.V.T @ g)


def decompose(model, f):
    f = np.asarray(f, dtype=float)
    if f.shape != (model.d,):
        raise ShapeError("expected face vector of length %d" % model.d)
    g = model.solve_sigma(f - model.m)
    identity = model.U @ (model.U.T @ g)
    age = model.V @ (model.V.T @ g)
    residual = f - model.m - identity - age
    return FaceDecomposition(mean=model.m, identity=identity, age=age,
                             residual=residual)


def _orthonormal_fill(existing, extra, rng, scale=0.01):
    """Seeded random columns orthonormalized against ``existing``."""
    d = existing.shape[0]
    g = rng.standard_normal((d, extra))
    q, _ = np.linalg.qr(np.hstack([existing, g]))
    return scale * q[:, existing.shape[1]:existing.shape[1] + extra]


def _scatter_init(dev_means, k, rng):
    """Top-k principal directions of a stack of deviation means, scaled
    by the implied loading magnitudes; random fill past the rank."""
    n = max(len(dev_means), 1)
    _, sv, vt = np.linalg.svd(dev_means, full_matrices=False)
    keep = min(k, int(np.sum(sv > 1e-12 * max(sv[0], 1e-300))))
    cols = vt[:keep].T * (sv[:keep] / np.sqrt(n))
    if keep < k:
        cols = np.hstack([cols, _orthonormal_fill(cols, k - keep, rng)])
    return cols


def _flatten(data, d):
    subjects, groups = [], []
    subj_index, grp_index = {}, {}
    rows, si, gi = [], [], []
    for (subj, grp), vecs in data.items():
        if subj not in subj_index:
            subj_index[subj] = len(subjects)
            subjects.append(subj)
        if grp not in grp_index:
            grp_index[grp] = len(groups)
            groups.append(grp)
        for v in vecs:
            v = np.asarray(v, dtype=float)
            if v.shape != (d,):
                raise ShapeError("face vector of length %s, expected %d"
                                 % (v.shape, d))
            rows.append(v)
            si.append(subj_index[subj])
            gi.append(grp_index[grp])
    if not rows:
        raise EmptyInput("training data is empty")
    F = np.asarray(rows)
    if not np.all(np.isfinite(F)):
        raise NumericError("training data contains non-finite values")
    return F, np.asarray(si), np.asarray(gi), subjects, groups


def train(data, config):
    """Fit the model by block-coordinate EM.

    ``data`` maps (subject, group) to a list of face vectors; all faces
    of one subject share one latent identity factor and all faces of one
    group share one latent age factor.
    """
    F, si, gi, subjects, groups = _flatten(data, config.d)
    n_obs, d = F.shape
    n_subj, n_grp = len(subjects), len(groups)
    if n_subj < 2 or n_grp < 2:
        raise ShapeError("need at least 2 subjects and 2 age groups")
    p, q = config.p, config.q
    rng = np.random.default_rng(config.seed)

    m = F.mean(axis=0)
    cnt_s = np.bincount(si, minlength=n_subj).astype(float)
    cnt_g = np.bincount(gi, minlength=n_grp).astype(float)
    n_sg = np.zeros((n_subj, n_grp))
    np.add.at(n_sg, (si, gi), 1.0)
    sum_s = np.zeros((n_subj, d))
    np.add.at(sum_s, si, F)
    sum_g = np.zeros((n_grp, d))
    np.add.at(sum_g, gi, F)
    dev_s = sum_s / cnt_s[:, None] - m    # between-subject deviations
    dev_g = sum_g / cnt_g[:, None] - m    # between-group deviations

    U = _scatter_init(dev_s, p, rng)
    V = _scatter_init(dev_g, q, rng)
    W = np.hstack([U, V])
    coef, *_ = np.linalg.lstsq(W, (F - m).T, rcond=None)
    sigma2 = max(float(np.mean(((F - m).T - W @ coef) ** 2)), SIGMA2_FLOOR)

    xm = np.zeros((n_subj, p))
    ym = np.zeros((n_grp, q))
    cov_x = np.tile(np.eye(p), (n_subj, 1, 1))
    cov_y = np.tile(np.eye(q), (n_grp, 1, 1))
    r0_s = sum_s - cnt_s[:, None] * m     # sum of (f - m) per subject
    r0_g = sum_g - cnt_g[:, None] * m
    total_sq = float(np.sum((F - m) ** 2))
    elbo_history = []

    for sweep in range(config.max_sweeps):
        # E-step, identity block (age factors fixed)
        utu = U.T @ U
        r_s = r0_s - (n_sg @ ym) @ V.T
        t_s = r_s @ U
        for i in range(n_subj):
            a = cnt_s[i] * utu + sigma2 * np.eye(p)
            fac = cho_factor(a)
            xm[i] = cho_solve(fac, t_s[i])
            cov_x[i] = sigma2 * cho_solve(fac, np.eye(p))

        # E-step, age block (identity factors fixed)
        vtv = V.T @ V
        r_g = r0_g - (n_sg.T @ xm) @ U.T
        t_g = r_g @ V
        for j in range(n_grp):
            a = cnt_g[j] * vtv + sigma2 * np.eye(q)
            fac = cho_factor(a)
            ym[j] = cho_solve(fac, t_g[j])
            cov_y[j] = sigma2 * cho_solve(fac, np.eye(q))

        # M-step: U with V fixed, then V with the new U, then sigma2
        r_s = r0_s - (n_sg @ ym) @ V.T
        num_u = r_s.T @ xm
        den_u = np.einsum("i,ijk->jk", cnt_s, cov_x) \
            + (xm * cnt_s[:, None]).T @ xm
        U = np.linalg.solve(den_u.T, num_u.T).T

        r_g = r0_g - (n_sg.T @ xm) @ U.T
        num_v = r_g.T @ ym
        den_v = np.einsum("j,jkl->kl", cnt_g, cov_y) \
            + (ym * cnt_g[:, None]).T @ ym
        V = np.linalg.solve(den_v.T, num_v.T).T

        utu = U.T @ U
        vtv = V.T @ V
        cross = U.T @ V
        fit = 2.0 * (np.sum((r0_s @ U) * xm) + np.sum((r0_g @ V) * ym))
        quad = float(np.einsum("jk,jk->", den_u, utu)
                     + np.einsum("kl,kl->", den_v, vtv)) \
            + 2.0 * float(np.sum((xm @ cross) * (n_sg @ ym)))
        sres = total_sq - fit + quad
        sigma2 = max(sres / (n_obs * d), SIGMA2_FLOOR)

        # ELBO of the current posterior at the updated parameters
        elbo = -0.5 * n_obs * d * np.log(2.0 * np.pi * sigma2) \
            - sres / (2.0 * sigma2)
        for i in range(n_subj):
            elbo += -0.5 * (xm[i] @ xm[i] + np.trace(cov_x[i])) \
                + 0.5 * np.linalg.slogdet(cov_x[i])[1] + 0.5 * p
        for j in range(n_grp):
            elbo += -0.5 * (ym[j] @ ym[j] + np.trace(cov_y[j])) \
                + 0.5 * np.linalg.slogdet(cov_y[j])[1] + 0.5 * q
        elbo = float(elbo)
        elbo_history.append(elbo)
        if sweep > 0:
            prev = elbo_history[-2]
            if abs(elbo - prev) < config.elbo_rel_tol * (abs(prev) + 1e-12):
                break

    model = HfaModel(m=m, U=U, V=V, sigma2=sigma2)
    state = TrainingState(
        identity_means={s: xm[i].copy() for i, s in enumerate(subjects)},
        age_means={g: ym[j].copy() for j, g in enumerate(groups)},
        elbo_history=elbo_history)
    return model, state
