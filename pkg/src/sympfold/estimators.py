"""scikit-learn style wrappers around the library.

The fold and squeeze steps need the set itself (they resample it locally
during certification), so :class:`FoldingSqueezer` is fitted on a
:class:`~sympfold.sets.RectifiableSet` rather than on a point array.
"""
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .displacement import DisplacementProblem, find_generic_direction
from .errors import InsufficientScales
from .folding import SqueezeConfig, squeeze
from .hausdorff import occupied_cells
from .sets import RectifiableSet


class BoxCountingDimension(BaseEstimator):
    """Box-counting dimension of a point cloud.

    Parameters
    ----------
    scales : sequence of float, optional
        Grid sides.  Defaults to ``n_scales`` sides spaced log-evenly over
        ``decades`` decades below a quarter of the cloud diameter.
    """

    def __init__(self, scales=None, n_scales=8, decades=2.0):
        self.scales = scales
        self.n_scales = n_scales
        self.decades = decades

    def fit(self, X, y=None):
        X = check_array(X)
        if self.scales is None:
            diam = max(float(np.linalg.norm(X.max(axis=0) - X.min(axis=0))), 1e-12)
            scales = diam / 4 * np.logspace(0, -self.decades, self.n_scales)
        else:
            scales = np.asarray(self.scales, dtype=float)
        scales = np.sort(scales)[::-1]
        if len(scales) < 3 or np.log10(scales[0] / scales[-1]) < 1.5 - 1e-9:
            raise InsufficientScales("need >= 3 scales spanning >= 1.5 decades")
        self.scales_ = scales
        self.counts_ = np.array([occupied_cells(X, h) for h in scales])
        x, y_ = np.log(1 / scales), np.log(self.counts_)
        self.dimension_, self.intercept_ = np.polyfit(x, y_, 1)
        self.residual_ = float(np.sqrt(np.mean((self.dimension_ * x + self.intercept_ - y_) ** 2)))
        return self


class LinearDisplacer(BaseEstimator, TransformerMixin):
    """Find a translation x -> x + t v0 moving the cloud X off the cloud y.

    ``fit(X, y)`` takes the moving cloud X and the obstacle cloud y (X
    itself when y is None); ``transform`` applies the translation at the
    chosen time ``t_`` (the median certified time unless ``t`` is given).
    """

    def __init__(self, directions=64, t_range=(0.0, 1.0), t_samples=1000, t=None, seed=0):
        self.directions = directions
        self.t_range = t_range
        self.t_samples = t_samples
        self.t = t
        self.seed = seed

    def fit(self, X, y=None):
        X = check_array(X)
        B = X if y is None else check_array(y)
        problem = DisplacementProblem.from_clouds(X, B, seed=self.seed)
        self.result_ = find_generic_direction(problem, self.directions, tuple(self.t_range),
                                              self.t_samples)
        self.v0_ = np.asarray(self.result_.v0, dtype=float)
        times = self.result_.admissible_times
        self.t_ = float(self.t) if self.t is not None else float(np.median(times)) if times else 0.0
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "v0_")
        X = check_array(X)
        return X + self.t_ * self.v0_


class FoldingSqueezer(BaseEstimator, TransformerMixin):
    """Squeeze a set into a product of rectangles by repeated folding."""

    def __init__(self, targets=None, config=None, seed=0):
        self.targets = targets
        self.config = config
        self.seed = seed

    def fit(self, A, y=None):
        if not isinstance(A, RectifiableSet):
            raise TypeError("FoldingSqueezer.fit expects a RectifiableSet")
        self.report_ = squeeze(A, self.targets, self.config or SqueezeConfig(), self.seed)
        self.map_ = self.report_.map
        self.n_features_in_ = A.ambient_dim
        return self

    def transform(self, X):
        check_is_fitted(self, "map_")
        return self.map_(check_array(X))
