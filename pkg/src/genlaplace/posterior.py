"""Gaussian posterior ``N(theta_MAP, H_T^{-1})`` and structure-aware sampling."""

from __future__ import annotations

import json

import numpy as np
from scipy.linalg import solve_triangular

from .curvature import DiagCurvature, TemperedHessian, curvature_from_dict, temper
from .exceptions import NotPositiveDefiniteError, ShapeError


def _generator(seed):
    return np.random.Generator(np.random.Philox(int(seed)))


class GlaPosterior:
    """Laplace posterior around ``theta_map`` with a tempered precision.

    Full and block-diagonal precisions are Cholesky-factorised per block;
    diagonal precisions sample per coordinate; Kronecker structures sample
    through their eigenbases with the matrix-normal identity.
    """

    def __init__(self, theta_map, precision, seed=0):
        theta_map = np.asarray(theta_map, dtype=np.float64)
        if theta_map.shape != (precision.n_params,):
            raise ShapeError(f"theta_map has shape {theta_map.shape}, precision covers {precision.n_params}")
        self.theta_map = theta_map
        self.precision = precision
        self.seed = int(seed)
        self._rng = _generator(self.seed)
        self._factorize()

    def _factorize(self):
        p = self.precision
        if p.kind == "diag":
            d = p.diagonal_precision()
            if d.min() <= 0:
                raise NotPositiveDefiniteError(
                    f"diagonal precision has non-positive entry {d.min():g}", min_eigenvalue=float(d.min())
                )
            self._std = 1.0 / np.sqrt(d)
        elif p.kind in ("full", "blockdiag"):
            self._chol = []
            for l, (s, block) in enumerate(p.dense_blocks()):
                try:
                    self._chol.append((s, np.linalg.cholesky(block)))
                except np.linalg.LinAlgError:
                    lo = float(np.linalg.eigvalsh(block).min())
                    raise NotPositiveDefiniteError(
                        f"precision block {l} is not positive definite (min eigenvalue {lo:g})",
                        min_eigenvalue=lo,
                        layer=l,
                    ) from None
        else:
            self._kron = []
            for l, (s, UQ, UG, lam) in enumerate(p.kron_eigen()):
                if lam.min() <= 0:
                    raise NotPositiveDefiniteError(
                        f"layer {l} has non-positive eigenvalue {lam.min():g}",
                        min_eigenvalue=float(lam.min()),
                        layer=l,
                    )
                self._kron.append((s, UQ, UG, (1.0 / np.sqrt(lam)).reshape(UQ.shape[0], UG.shape[0])))

    @property
    def kind(self):
        return self.precision.kind

    @property
    def temperature(self):
        return self.precision.temperature

    @property
    def n_params(self):
        return self.theta_map.size

    def sample(self, count, seed=None):
        """Draw ``count`` parameter vectors as a ``(count, P)`` array."""
        if int(count) < 1:
            raise ValueError(f"count must be at least 1, got {count}")
        rng = self._rng if seed is None else _generator(seed)
        eps = rng.standard_normal((int(count), self.n_params))
        return self.theta_map + self._scale_noise(eps)

    def _scale_noise(self, eps):
        if self.kind == "diag":
            return eps * self._std
        out = np.empty_like(eps)
        if self.kind in ("full", "blockdiag"):
            for s, L in self._chol:
                out[:, s] = solve_triangular(L, eps[:, s].T, lower=True, trans="T").T
            return out
        for s, UQ, UG, scale in self._kron:
            E = eps[:, s].reshape(-1, *scale.shape) * scale
            out[:, s] = np.einsum("ia,nab,jb->nij", UQ, E, UG).reshape(eps.shape[0], -1)
        return out

    def covariance_dense(self):
        return self.precision.inverse_dense()

    def covariance_trace(self):
        return self.precision.covariance_trace()

    def marginal_std(self):
        if self.kind == "diag":
            return self._std.copy()
        return np.sqrt(np.diag(self.covariance_dense()))

    def logpdf(self, thetas):
        """Gaussian log-density of each row of ``thetas``."""
        thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
        diff = thetas - self.theta_map
        quad = np.array([d @ self.precision.matvec(d) for d in diff])
        return -0.5 * quad - 0.5 * self.n_params * np.log(2 * np.pi) + 0.5 * self.precision.logdet()

    def with_temperature(self, temperature, prior_std=None):
        """Same curvature and mean, different temperature (and optionally prior)."""
        if prior_std is None:
            prior_std = self.precision.prior_precision**-0.5
        return build(self.theta_map, temper(self.precision.curvature, temperature, prior_std), self.seed)

    def to_dict(self):
        return {
            "theta_map": self.theta_map.tolist(),
            "temperature": self.temperature,
            "prior_std": float(self.precision.prior_precision**-0.5),
            "seed": self.seed,
            "curvature": self.precision.curvature.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc):
        curv = curvature_from_dict(doc["curvature"])
        return build(doc["theta_map"], temper(curv, doc["temperature"], doc["prior_std"]), doc.get("seed", 0))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def __repr__(self):
        return f"GlaPosterior(kind={self.kind!r}, temperature={self.temperature}, n_params={self.n_params})"


def build(theta_map, tempered, seed=0):
    """Assemble a posterior from ``theta_MAP`` and a tempered precision."""
    if not isinstance(tempered, TemperedHessian):
        raise TypeError("tempered must be a TemperedHessian")
    return GlaPosterior(theta_map, tempered, seed=seed)


def sample(posterior, count, seed=None):
    return posterior.sample(count, seed)


def prior_only(n_params, prior_std, layer_shapes=None, seed=0):
    """Zero-mean isotropic prior ``N(0, prior_std^2 I)`` as a posterior object."""
    if not prior_std > 0:
        raise ValueError(f"prior_std must be positive, got {prior_std}")
    curv = DiagCurvature(np.zeros(int(n_params)), 0, layer_shapes)
    return build(np.zeros(int(n_params)), temper(curv, 1.0, prior_std), seed)


def contraction_ratio(posterior_a, posterior_b):
    """``trace(Sigma_b) / trace(Sigma_a)`` for posteriors sharing structure and mean."""
    if posterior_a.kind != posterior_b.kind:
        raise ValueError(f"structure mismatch: {posterior_a.kind} vs {posterior_b.kind}")
    if not np.array_equal(posterior_a.theta_map, posterior_b.theta_map):
        raise ValueError("posteriors do not share theta_map")
    return posterior_b.covariance_trace() / posterior_a.covariance_trace()


def laplace_log_evidence(loss_at_map, precision):
    """``log Z_T ~ -L_T(theta_MAP) + P/2 log(2 pi) - 1/2 log det H_T``."""
    P = precision.n_params
    return -float(loss_at_map) + 0.5 * P * np.log(2 * np.pi) - 0.5 * precision.logdet()
