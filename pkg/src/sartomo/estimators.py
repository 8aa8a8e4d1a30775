"""scikit-learn style wrappers around the imaging and SDF-fitting stages.

>>> imager = SparseTomographyImager(bounds=((-2, -2, -2), (2, 2, 2))).fit(ph)
>>> fused = imager.transform(ph)                      # |S| volume
>>> sdf = NeuralSDFRegressor(width=64).fit(points, normals)
>>> sdf.predict(query_points)                         # signed distances
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_bounds, check_oriented, check_phase_history, check_points
from .grid import auto_grid
from .inversion import fuse_noncoherent, invert_all
from .isopoints import SamplerParams
from .network import NetworkConfig, init_network
from .pointcloud import build_cloud
from .training import LossWeights, TrainConfig, train


class SparseTomographyImager(TransformerMixin, BaseEstimator):
    """Per-sub-aperture sparse imaging followed by non-coherent fusion.

    ``fit`` fixes the voxel grid over ``bounds``; ``transform`` images a phase
    history and returns the fused magnitude volume. The sub-aperture images
    of the last transform are kept in ``images_``.
    """

    def __init__(self, bounds=None, spacing=None, max_dim=32, lam=None, lam_rel=0.05,
                 sigma2=None, iters=100, tol=1e-6, method="nufft", threads=1):
        self.bounds = bounds
        self.spacing = spacing
        self.max_dim = max_dim
        self.lam = lam
        self.lam_rel = lam_rel
        self.sigma2 = sigma2
        self.iters = iters
        self.tol = tol
        self.method = method
        self.threads = threads

    def fit(self, X, y=None):
        X = check_phase_history(X)
        if self.bounds is None:
            raise ValueError("bounds are required to lay out the voxel grid")
        self.grid_ = auto_grid(check_bounds(self.bounds), X.geometry.bandwidth,
                               spacing=self.spacing, max_dim=self.max_dim)
        return self

    def transform(self, X):
        check_is_fitted(self, "grid_")
        X = check_phase_history(X)
        lam_rel = self.lam_rel if self.lam is None and self.sigma2 is None else None
        self.images_ = invert_all(X, self.grid_, threads=self.threads, lam=self.lam,
                                  lam_rel=lam_rel, sigma2=self.sigma2, iters=self.iters,
                                  tol=self.tol, method=self.method)
        self.fused_ = fuse_noncoherent(self.images_)
        return self.fused_.values

    def point_cloud(self, quantile=0.97, tau=None, radius=0.3):
        """Oriented cloud from the last transformed volume."""
        check_is_fitted(self, "fused_")
        return build_cloud(self.fused_, self.images_, tau=tau,
                           quantile=None if tau is not None else quantile, radius=radius)


class NeuralSDFRegressor(BaseEstimator):
    """Fourier-feature SDF network fitted to an oriented point cloud.

    ``fit(X, y)`` takes points ``X`` and their normals ``y``; ``predict``
    returns signed distances. ``score`` is the negated mean ``|f|`` on the
    given points (higher is better, 0 when they all lie on the surface).
    """

    def __init__(self, n_layers=8, width=512, n_features=9, sigma_ff=4.0, beta=100.0,
                 skip_layer=4, epochs=2000, batch_size=4096, lr=1e-4, iso_enabled=True,
                 iso_refresh=200, iso_target=None, loss_weights=None, bounds=None,
                 random_state=0):
        self.n_layers = n_layers
        self.width = width
        self.n_features = n_features
        self.sigma_ff = sigma_ff
        self.beta = beta
        self.skip_layer = skip_layer
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.iso_enabled = iso_enabled
        self.iso_refresh = iso_refresh
        self.iso_target = iso_target
        self.loss_weights = loss_weights
        self.bounds = bounds
        self.random_state = random_state

    def fit(self, X, y):
        X, normals = check_oriented(X, y)
        if self.bounds is None:
            lo, hi = X.min(axis=0), X.max(axis=0)
            pad = 0.15 * float(np.max(hi - lo)) + 1e-9
            bounds = (lo - pad, hi + pad)
        else:
            bounds = check_bounds(self.bounds)
        seed = int(self.random_state or 0)
        config = NetworkConfig(self.n_layers, self.width, self.n_features, self.sigma_ff,
                               self.beta, self.skip_layer)
        net = init_network(config, seed=seed, bounds=bounds)
        tc = TrainConfig(epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
                         iso_enabled=self.iso_enabled, iso_refresh=self.iso_refresh,
                         iso_target=self.iso_target, seed=seed)
        weights = LossWeights(**(self.loss_weights or {}))
        target = self.iso_target or min(4096, max(500, 2 * len(X)))
        result = train(net, X, normals, tc, weights, SamplerParams.for_bounds(bounds, target),
                       bounds=bounds)
        self.net_ = result.net
        self.history_ = result.history
        self.bounds_ = bounds
        self.n_features_in_ = 3
        return self

    def predict(self, X):
        check_is_fitted(self, "net_")
        return np.atleast_1d(self.net_.forward(check_points(X)))

    def gradient(self, X):
        check_is_fitted(self, "net_")
        return np.atleast_2d(self.net_.jacobian(check_points(X)))

    def score(self, X, y=None):
        return -float(np.mean(np.abs(self.predict(X))))
