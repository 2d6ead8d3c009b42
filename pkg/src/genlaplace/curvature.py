"""Structured Fisher curvature estimates and their tempered precisions.

Every estimate approximates ``M = sum_n grad_n grad_n^T`` where ``grad_n`` is
the per-datum gradient of the negative log-likelihood at ``theta_MAP``. The
tempered precision is ``H_T = T * M + tau * I`` with ``tau = prior_std**-2``.

Within a layer the flat index is row-major over (input, output), so a single
datum's layer gradient ``q g^T`` flattens to ``kron(q, g)`` and the Kronecker
block is ``np.kron(Q, G)``.
"""

from __future__ import annotations

import numpy as np

from .exceptions import ConfigError, ShapeError
from .nn import MlpArchitecture, check_targets, forward, per_sample_backprop, softmax

KINDS = ("full", "diag", "blockdiag", "kfac", "ekfac")
DEFAULT_MAX_FULL_PARAMS = 2000
_JITTER_THRESHOLD = 1e-10

_ALIASES = {
    "full": "full",
    "diag": "diag",
    "diagonal": "diag",
    "blockdiag": "blockdiag",
    "block_diag": "blockdiag",
    "b-diag": "blockdiag",
    "bdiag": "blockdiag",
    "kfac": "kfac",
    "kron": "kfac",
    "ekfac": "ekfac",
}


def normalize_kind(kind):
    try:
        return _ALIASES[str(kind).strip().lower()]
    except KeyError:
        raise ConfigError(f"unknown curvature kind {kind!r}; expected one of {KINDS}", field="kind") from None


def _slices(layer_shapes):
    out, start = [], 0
    for r, c in layer_shapes:
        out.append(slice(start, start + r * c))
        start += r * c
    return out


def kron_block_to_dense(Q, G, n_data=1):
    """Dense layer block ``n_data * (Q kron G)``."""
    return n_data * np.kron(np.asarray(Q, dtype=np.float64), np.asarray(G, dtype=np.float64))


def kron_matvec(A, B, v):
    """``(A kron B) v`` for row-major ``v`` of length ``A.shape[1] * B.shape[1]``."""
    V = v.reshape(A.shape[1], B.shape[1])
    return (A @ V @ B.T).ravel()


def _sym_eigh(matrix, what):
    if not np.allclose(matrix, matrix.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(matrix).max())):
        raise ValueError(f"{what} is not symmetric; cannot eigendecompose")
    return np.linalg.eigh(0.5 * (matrix + matrix.T))


class Curvature:
    """Common interface of the five structured estimates."""

    kind = None

    def __init__(self, n_data, layer_shapes):
        self.n_data = int(n_data)
        self.layer_shapes = [tuple(s) for s in layer_shapes]

    @property
    def n_params(self):
        return sum(r * c for r, c in self.layer_shapes)

    @property
    def layer_slices(self):
        return _slices(self.layer_shapes)

    def dense(self):
        """Densified ``P x P`` matrix (only sensible for small nets)."""
        P = self.n_params
        out = np.zeros((P, P))
        for l, s in enumerate(self.layer_slices):
            out[s, s] = self.layer_dense(l)
        return out

    def layer_dense(self, layer):
        raise NotImplementedError

    def frobenius_norm(self, layer=None):
        raise NotImplementedError

    def tempered(self, temperature, prior_std):
        return temper(self, temperature, prior_std)

    def to_dict(self):
        doc = {"kind": self.kind, "N": self.n_data, "layer_shapes": [list(s) for s in self.layer_shapes]}
        doc.update(self._payload())
        return doc

    def _payload(self):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}(n_data={self.n_data}, n_params={self.n_params})"


class FullCurvature(Curvature):
    kind = "full"

    def __init__(self, matrix, n_data, layer_shapes=None):
        matrix = np.asarray(matrix, dtype=np.float64)
        if layer_shapes is None:
            layer_shapes = [(matrix.shape[0], 1)]
        super().__init__(n_data, layer_shapes)
        if matrix.shape != (self.n_params, self.n_params):
            raise ShapeError(f"full curvature must be {self.n_params} square, got {matrix.shape}")
        self.matrix = matrix

    def dense(self):
        return self.matrix.copy()

    def layer_dense(self, layer):
        s = self.layer_slices[layer]
        return self.matrix[s, s]

    def frobenius_norm(self, layer=None):
        m = self.matrix if layer is None else self.layer_dense(layer)
        return float(np.linalg.norm(m))

    def _payload(self):
        return {"matrix": self.matrix.tolist()}


class DiagCurvature(Curvature):
    kind = "diag"

    def __init__(self, diagonal, n_data, layer_shapes=None):
        diagonal = np.asarray(diagonal, dtype=np.float64)
        if layer_shapes is None:
            layer_shapes = [(diagonal.size, 1)]
        super().__init__(n_data, layer_shapes)
        if diagonal.shape != (self.n_params,):
            raise ShapeError(f"diagonal must have length {self.n_params}, got {diagonal.shape}")
        self.diagonal = diagonal

    def layer_dense(self, layer):
        return np.diag(self.diagonal[self.layer_slices[layer]])

    def frobenius_norm(self, layer=None):
        d = self.diagonal if layer is None else self.diagonal[self.layer_slices[layer]]
        return float(np.linalg.norm(d))

    def _payload(self):
        return {"diagonal": self.diagonal.tolist()}


class BlockDiagCurvature(Curvature):
    kind = "blockdiag"

    def __init__(self, blocks, n_data, layer_shapes):
        super().__init__(n_data, layer_shapes)
        self.blocks = [np.asarray(b, dtype=np.float64) for b in blocks]
        for l, (b, (r, c)) in enumerate(zip(self.blocks, self.layer_shapes)):
            if b.shape != (r * c, r * c):
                raise ShapeError(f"block {l} has shape {b.shape}, expected {(r * c, r * c)}", layer=l)

    def layer_dense(self, layer):
        return self.blocks[layer]

    def frobenius_norm(self, layer=None):
        if layer is not None:
            return float(np.linalg.norm(self.blocks[layer]))
        return float(np.sqrt(sum(np.sum(b * b) for b in self.blocks)))

    def _payload(self):
        return {"blocks": [b.tolist() for b in self.blocks]}


class KfacCurvature(Curvature):
    """Per-layer ``N * (Q kron G)`` with ``Q = E[q q^T]`` and ``G = E[g g^T]``."""

    kind = "kfac"

    def __init__(self, factors, n_data, layer_shapes):
        super().__init__(n_data, layer_shapes)
        self.factors = [(np.asarray(Q, dtype=np.float64), np.asarray(G, dtype=np.float64)) for Q, G in factors]
        for l, ((Q, G), (r, c)) in enumerate(zip(self.factors, self.layer_shapes)):
            if Q.shape != (r, r) or G.shape != (c, c):
                raise ShapeError(f"layer {l} factors {Q.shape}, {G.shape} do not match {(r, c)}", layer=l)

    def layer_dense(self, layer):
        Q, G = self.factors[layer]
        return kron_block_to_dense(Q, G, self.n_data)

    def layer_eigen(self, layer):
        """Eigenbases ``(U_Q, U_G)`` and the block eigenvalues ``N * kron(s_Q, s_G)``."""
        Q, G = self.factors[layer]
        sq, UQ = _sym_eigh(Q, f"layer {layer} input factor")
        sg, UG = _sym_eigh(G, f"layer {layer} gradient factor")
        return UQ, UG, self.n_data * np.kron(sq, sg)

    def frobenius_norm(self, layer=None):
        norms = [self.n_data * np.linalg.norm(Q) * np.linalg.norm(G) for Q, G in self.factors]
        if layer is not None:
            return float(norms[layer])
        return float(np.sqrt(np.sum(np.square(norms))))

    def _payload(self):
        return {"factors": [[Q.tolist(), G.tolist()] for Q, G in self.factors]}


class EkfacCurvature(Curvature):
    """Kronecker eigenbases with per-direction eigenvalues re-fitted to the data."""

    kind = "ekfac"

    def __init__(self, bases, eigenvalues, n_data, layer_shapes):
        super().__init__(n_data, layer_shapes)
        self.bases = [(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)) for a, b in bases]
        self.eigenvalues = [np.asarray(s, dtype=np.float64) for s in eigenvalues]
        for l, ((UQ, UG), s, (r, c)) in enumerate(zip(self.bases, self.eigenvalues, self.layer_shapes)):
            if UQ.shape != (r, r) or UG.shape != (c, c) or s.shape != (r * c,):
                raise ShapeError(f"layer {l} EKFAC payload does not match shape {(r, c)}", layer=l)

    def layer_eigen(self, layer):
        UQ, UG = self.bases[layer]
        return UQ, UG, self.eigenvalues[layer]

    def layer_dense(self, layer):
        UQ, UG = self.bases[layer]
        U = np.kron(UQ, UG)
        return (U * self.eigenvalues[layer]) @ U.T

    def frobenius_norm(self, layer=None):
        if layer is not None:
            return float(np.linalg.norm(self.eigenvalues[layer]))
        return float(np.sqrt(sum(np.sum(s * s) for s in self.eigenvalues)))

    def _payload(self):
        return {
            "bases": [[a.tolist(), b.tolist()] for a, b in self.bases],
            "eigenvalues": [s.tolist() for s in self.eigenvalues],
        }


def curvature_from_dict(doc):
    kind = normalize_kind(doc["kind"])
    n, shapes = doc["N"], [tuple(s) for s in doc["layer_shapes"]]
    if kind == "full":
        return FullCurvature(doc["matrix"], n, shapes)
    if kind == "diag":
        return DiagCurvature(doc["diagonal"], n, shapes)
    if kind == "blockdiag":
        return BlockDiagCurvature(doc["blocks"], n, shapes)
    if kind == "kfac":
        return KfacCurvature([tuple(f) for f in doc["factors"]], n, shapes)
    return EkfacCurvature([tuple(b) for b in doc["bases"]], doc["eigenvalues"], n, shapes)


def _sample_labels(arch, theta, X, seed):
    rng = np.random.default_rng(seed)
    out = forward(arch, theta, X)
    if arch.task == "regression":
        return out + rng.standard_normal(out.shape)
    p = softmax(out)
    u = rng.random((p.shape[0], 1))
    return np.minimum((np.cumsum(p, axis=1) < u).sum(axis=1), p.shape[1] - 1)


def estimate_fisher(
    kind, arch, theta, X, Y, fisher_type="empirical", seed=0, max_full_params=DEFAULT_MAX_FULL_PARAMS
):
    """Estimate the likelihood curvature at ``theta`` under one structure.

    Parameters
    ----------
    kind : {'full', 'diag', 'blockdiag', 'kfac', 'ekfac'}
    fisher_type : {'empirical', 'sampled'}
        ``'empirical'`` uses the observed targets; ``'sampled'`` draws one
        target per input from the model's own predictive distribution.
    """
    kind = normalize_kind(kind)
    if not isinstance(arch, MlpArchitecture):
        raise TypeError("arch must be an MlpArchitecture")
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] == 0:
        raise ShapeError("cannot estimate curvature on an empty dataset")
    if kind == "full" and arch.n_params > max_full_params:
        raise ConfigError(
            f"full curvature needs P <= {max_full_params}, architecture has {arch.n_params}", field="kind"
        )
    if fisher_type == "sampled":
        Y = _sample_labels(arch, theta, X, seed)
    elif fisher_type != "empirical":
        raise ConfigError(f"unknown fisher_type {fisher_type!r}", field="fisher_type")
    else:
        Y = check_targets(arch, Y, X.shape[0])
    ps = per_sample_backprop(arch, theta, X, Y)
    return curvature_from_gradients(kind, arch, ps)


def curvature_from_gradients(kind, arch, per_sample):
    """Build an estimate from precomputed per-sample backprop results."""
    kind = normalize_kind(kind)
    grads = per_sample.gradients
    n = grads.shape[0]
    shapes = arch.layer_shapes
    if kind == "full":
        return FullCurvature(grads.T @ grads, n, shapes)
    if kind == "diag":
        return DiagCurvature(np.einsum("np,np->p", grads, grads), n, shapes)
    if kind == "blockdiag":
        return BlockDiagCurvature([grads[:, s].T @ grads[:, s] for s in arch.layer_slices], n, shapes)
    kfac = KfacCurvature(
        [(q.T @ q / n, g.T @ g / n) for q, g in zip(per_sample.inputs, per_sample.output_grads)], n, shapes
    )
    if kind == "kfac":
        return kfac
    return ekfac_correct(kfac, grads)


def ekfac_correct(kfac, gradients):
    """Replace the Kronecker eigenvalues by the data sum of squared rotated gradients.

    ``gradients`` is the ``(N, P)`` array of per-sample flat gradients (or a
    :class:`~genlaplace.nn.PerSampleGradients`).
    """
    grads = getattr(gradients, "gradients", gradients)
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape[1] != kfac.n_params:
        raise ShapeError(f"gradients have {grads.shape[1]} columns, curvature has {kfac.n_params}")
    bases, eigenvalues = [], []
    for l, (s, (r, c)) in enumerate(zip(kfac.layer_slices, kfac.layer_shapes)):
        UQ, UG, _ = kfac.layer_eigen(l)
        V = grads[:, s].reshape(-1, r, c)
        R = np.einsum("ia,nij,jb->nab", UQ, V, UG)
        bases.append((UQ, UG))
        eigenvalues.append(np.einsum("nab,nab->ab", R, R).ravel())
    return EkfacCurvature(bases, eigenvalues, grads.shape[0], kfac.layer_shapes)


class TemperedHessian:
    """Structured precision ``T * M + tau * I (+ jitter * I)``.

    Full and block-diagonal structures keep dense blocks, the diagonal keeps a
    vector, and Kronecker structures keep eigenbases with tempered eigenvalues
    so that nothing larger than one factor is ever formed.
    """

    def __init__(self, curvature, temperature, prior_precision):
        self.curvature = curvature
        self.temperature = float(temperature)
        self.prior_precision = float(prior_precision)
        self.jitter = 0.0
        T, tau = self.temperature, self.prior_precision
        c = curvature
        if c.kind == "full":
            self._blocks = [(slice(0, c.n_params), T * c.matrix + tau * np.eye(c.n_params))]
        elif c.kind == "diag":
            self._diag = T * c.diagonal + tau
        elif c.kind == "blockdiag":
            self._blocks = [(s, T * b + tau * np.eye(b.shape[0])) for s, b in zip(c.layer_slices, c.blocks)]
        else:
            self._eigen = []
            for l, s in enumerate(c.layer_slices):
                UQ, UG, lam = c.layer_eigen(l)
                self._eigen.append((s, UQ, UG, T * lam + tau))
        lo, hi = self._eig_range()
        if lo < _JITTER_THRESHOLD:
            self.jitter = _JITTER_THRESHOLD * (1.0 + hi)
            self._add_jitter(self.jitter)

    @property
    def kind(self):
        return self.curvature.kind

    @property
    def n_params(self):
        return self.curvature.n_params

    def _eig_range(self):
        vals = self.eigenvalues()
        return float(vals.min()), float(vals.max())

    def _add_jitter(self, j):
        if self.kind == "diag":
            self._diag = self._diag + j
        elif self.kind in ("full", "blockdiag"):
            self._blocks = [(s, b + j * np.eye(b.shape[0])) for s, b in self._blocks]
        else:
            self._eigen = [(s, UQ, UG, lam + j) for s, UQ, UG, lam in self._eigen]

    def eigenvalues(self):
        """All eigenvalues of the precision, concatenated over blocks."""
        if self.kind == "diag":
            return self._diag.copy()
        if self.kind in ("full", "blockdiag"):
            return np.concatenate([np.linalg.eigvalsh(b) for _, b in self._blocks])
        return np.concatenate([lam for *_, lam in self._eigen])

    @property
    def min_eigenvalue(self):
        return float(self.eigenvalues().min())

    def diagonal_precision(self):
        return self._diag

    def dense_blocks(self):
        """``(slice, dense block)`` pairs for full and block-diagonal structures."""
        return list(self._blocks)

    def kron_eigen(self):
        """``(slice, U_Q, U_G, eigenvalues)`` per layer for Kronecker structures."""
        return list(self._eigen)

    def dense(self):
        P = self.n_params
        if self.kind == "diag":
            return np.diag(self._diag)
        out = np.zeros((P, P))
        if self.kind in ("full", "blockdiag"):
            for s, b in self._blocks:
                out[s, s] = b
            return out
        for s, UQ, UG, lam in self._eigen:
            U = np.kron(UQ, UG)
            out[s, s] = (U * lam) @ U.T
        return out

    def inverse_dense(self):
        P = self.n_params
        if self.kind == "diag":
            return np.diag(1.0 / self._diag)
        out = np.zeros((P, P))
        if self.kind in ("full", "blockdiag"):
            for s, b in self._blocks:
                out[s, s] = np.linalg.inv(b)
            return out
        for s, UQ, UG, lam in self._eigen:
            U = np.kron(UQ, UG)
            out[s, s] = (U / lam) @ U.T
        return out

    def matvec(self, v):
        v = np.asarray(v, dtype=np.float64)
        if self.kind == "diag":
            return self._diag * v
        out = np.empty_like(v)
        if self.kind in ("full", "blockdiag"):
            for s, b in self._blocks:
                out[s] = b @ v[s]
            return out
        for s, UQ, UG, lam in self._eigen:
            rotated = kron_matvec(UQ.T, UG.T, v[s])
            out[s] = kron_matvec(UQ, UG, lam * rotated)
        return out

    def logdet(self):
        return float(np.sum(np.log(self.eigenvalues())))

    def covariance_trace(self):
        return float(np.sum(1.0 / self.eigenvalues()))

    def frobenius_norm(self, layer=None):
        if self.kind == "full" and layer is not None:
            s = self.curvature.layer_slices[layer]
            return float(np.linalg.norm(self._blocks[0][1][s, s]))
        if self.kind == "diag":
            d = self._diag if layer is None else self._diag[self.curvature.layer_slices[layer]]
            return float(np.linalg.norm(d))
        if self.kind in ("full", "blockdiag"):
            blocks = [b for _, b in self._blocks]
            if layer is not None:
                return float(np.linalg.norm(blocks[layer]))
            return float(np.sqrt(sum(np.sum(b * b) for b in blocks)))
        lams = [lam for *_, lam in self._eigen]
        if layer is not None:
            return float(np.linalg.norm(lams[layer]))
        return float(np.sqrt(sum(np.sum(lam * lam) for lam in lams)))

    def __repr__(self):
        return (
            f"TemperedHessian(kind={self.kind!r}, temperature={self.temperature}, "
            f"prior_precision={self.prior_precision}, jitter={self.jitter})"
        )


def temper(curvature, temperature, prior_std):
    """Tempered precision ``T * M + prior_std**-2 * I``."""
    if not temperature > 0 or not np.isfinite(temperature):
        raise ValueError(f"temperature must be positive and finite, got {temperature}")
    if not prior_std > 0:
        raise ValueError(f"prior_std must be positive, got {prior_std}")
    return TemperedHessian(curvature, temperature, 1.0 / prior_std**2)


def frobenius_norm(obj, layer=None):
    """Exact Frobenius norm of a curvature estimate or tempered precision."""
    return obj.frobenius_norm(layer)
