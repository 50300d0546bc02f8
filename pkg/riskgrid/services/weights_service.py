"""
Spatial weights service
- k-nearest-neighbour graph over cell centroids (ties broken by ascending id)
- Row-standardized weights W, stored sparse (k entries per row)
- Spatial lag products and the eigenvalue spectrum of W
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.spatial import cKDTree

from ..utils import constants
from ..utils.errors import LengthMismatchError, NotEnoughCellsError, NumericError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NeighborGraph:
    k: int
    neighbors: np.ndarray

    @property
    def n(self):
        return self.neighbors.shape[0]


@dataclass(frozen=True)
class SpatialWeights:
    graph: NeighborGraph
    weights: np.ndarray
    style: str = constants.WEIGHTS_STYLE

    @property
    def n(self):
        return self.graph.n

    @property
    def k(self):
        return self.graph.k

    @property
    def s0(self):
        return float(self.weights.sum())

    @property
    def sparse(self):
        rows = np.repeat(np.arange(self.n), self.graph.k)
        return sparse.csr_matrix(
            (self.weights.ravel(), (rows, self.graph.neighbors.ravel())), shape=(self.n, self.n)
        )

    def lag(self, x):
        return spatial_lag(self, x)


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray
    min_real: float
    max_real: float

    @property
    def n(self):
        return len(self.eigenvalues)

    @property
    def n_complex_pairs(self):
        return int(np.count_nonzero(self.eigenvalues.imag > 0))

    def interval(self, eps=constants.PARAM_BOX_EPS):
        """Admissible open interval (1/min_real, 1/max_real), shrunk by eps"""
        lower = 1.0 / self.min_real if self.min_real < 0 else -np.inf
        upper = 1.0 / self.max_real if self.max_real > 0 else np.inf
        return lower + eps, upper - eps

    def log_det(self, rho):
        return log_det(self, rho)


def knn_neighbors(centroids, k=constants.DEFAULT_K_NEIGHBORS):
    """Each cell's k nearest other centroids; exact distance ties go to the smaller id"""
    centroids = np.asarray(centroids, dtype=float).reshape(-1, 2)
    n = len(centroids)
    if k < 1:
        raise NotEnoughCellsError(f"k must be >= 1, got {k}")
    if n <= k:
        raise NotEnoughCellsError(f"{n} cells cannot each have k={k} distinct neighbours")

    tree = cKDTree(centroids)
    distances, _ = tree.query(centroids, k=k + 1)
    # every centroid tied with the k-th neighbour must be a candidate
    radius = distances[:, k] * (1.0 + 1e-9) + 1e-12
    candidates = tree.query_ball_point(centroids, r=radius)

    neighbors = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        ids = np.array([j for j in candidates[i] if j != i], dtype=np.int64)
        d2 = np.sum((centroids[ids] - centroids[i]) ** 2, axis=1)
        order = np.lexsort((ids, d2))
        neighbors[i] = ids[order[:k]]

    return NeighborGraph(k=int(k), neighbors=neighbors)


def is_symmetric(graph):
    """True when j in N(i) implies i in N(j) for every pair"""
    pairs = set(zip(np.repeat(np.arange(graph.n), graph.k), graph.neighbors.ravel()))
    return all((j, i) in pairs for i, j in pairs)


def row_standardize(graph):
    """Equal weights 1/k on every neighbour"""
    weights = np.full(graph.neighbors.shape, 1.0 / graph.k)
    return SpatialWeights(graph=graph, weights=weights)


def weights_from_neighbors(neighbors):
    """Row-standardized weights from an explicit (n x k) neighbour table"""
    neighbors = np.asarray(neighbors, dtype=np.int64)
    return row_standardize(NeighborGraph(k=neighbors.shape[1], neighbors=neighbors))


def spatial_lag(W, x):
    """(Wx)_i = weighted mean of x over cell i's neighbours; x may be a vector or n x p matrix"""
    x = np.asarray(x, dtype=float)
    if x.shape[0] != W.n:
        raise LengthMismatchError(f"Vector of length {x.shape[0]} does not match {W.n} cells")
    gathered = x[W.graph.neighbors]
    if x.ndim == 1:
        return np.einsum('ik,ik->i', W.weights, gathered)
    return np.einsum('ik,ik...->i...', W.weights, gathered)


def to_dense(W):
    return W.sparse.toarray()


def spectrum(W):
    """Full eigenvalue set of the dense weight matrix (one-time O(n^3))"""
    if W.n < 2:
        raise NumericError("Spectrum requires at least 2 cells", stage='weights')
    dense = to_dense(W)
    try:
        eigenvalues = scipy.linalg.eigvals(dense)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError) as e:
        row_sums = dense.sum(axis=1)
        raise NumericError(
            f"Eigen-decomposition of W failed ({e}); n={W.n}, nnz={np.count_nonzero(dense)}, "
            f"row sums in [{row_sums.min():.6g}, {row_sums.max():.6g}]",
            stage='weights',
        )
    eigenvalues = np.asarray(eigenvalues, dtype=complex)
    # sort for reproducible summation order
    eigenvalues = eigenvalues[np.lexsort((eigenvalues.imag, eigenvalues.real))]
    real = eigenvalues.real
    logger.debug(f"W spectrum: min {real.min():.6f}, max {real.max():.6f}")
    return Spectrum(eigenvalues=eigenvalues, min_real=float(real.min()), max_real=float(real.max()))


def log_det(spec, rho):
    """
    ln|I - rho W| from the spectrum.

    Conjugate pairs contribute ln((1 - rho a)^2 + (rho b)^2) together, so the
    real part of the complex log sum is the real log-determinant.
    """
    terms = 1.0 - rho * spec.eigenvalues
    if np.any(np.abs(terms) == 0):
        return -np.inf
    return float(np.sum(np.log(np.abs(terms))))


def log_det_derivative(spec, rho):
    """d/d rho of ln|I - rho W|"""
    return float(np.real(np.sum(-spec.eigenvalues / (1.0 - rho * spec.eigenvalues))))


def build_weights(centroids, k=constants.DEFAULT_K_NEIGHBORS):
    """k-NN graph plus row standardization in one step"""
    graph = knn_neighbors(centroids, k)
    W = row_standardize(graph)
    logger.info(f"Built {k}-NN row-standardized weights over {W.n} cells (symmetric: {is_symmetric(graph)})")
    return W
