"""Shared fixtures-by-hand for the training and acceptance tests."""

import numpy as np

from deeptfp.model import DeepTfpConfig, DeepTfpModel
from deeptfp.series import (FlowSeries, Normalizer, WindowConfig,
                            build_instances)
from deeptfp.tensor import Tensor

AR_WC = WindowConfig(closeness_len=2, period_len=2, trend_len=2,
                     period_stride=4, trend_stride=8)


def ar2_dataset(n=400, seed=42, theta=(0.5, 0.3), intercept=0.5):
    """A scalar AR(2) series with uniform noise, framed as a 1x1 grid.

    The min-max normalization is affine, so the normalized series obeys
    the same AR recurrence with the same theta and a shifted intercept.
    """
    rng = np.random.default_rng(seed)
    x = np.empty(n)
    x[0] = x[1] = 5.0
    for k in range(2, n):
        x[k] = (intercept + theta[0] * x[k - 1] + theta[1] * x[k - 2]
                + rng.uniform(0.0, 1.0))
    frames = x.reshape(n, 1, 1)
    series = FlowSeries(frames=frames, start_timestamp=1696118400)
    return build_instances(series, AR_WC, normalizer=Normalizer.fit(frames))


def frozen_ar_probe_model(ar_order=2):
    """A 1x1-grid model whose fused estimate is exactly the newest frame.

    The closeness branch carries a signed passthrough, relu(x) - relu(-x),
    split over two feature maps; the other branches and the fusion maps
    are frozen so only the AR head can learn.  Training it reduces to a
    plain least-squares autoregression, which has a closed form to check
    against.
    """
    cfg = DeepTfpConfig(rows=1, cols=1, windows=AR_WC, feature_maps=2,
                        residual_units=0, ar_order=ar_order)
    model = DeepTfpModel(cfg)
    ink = np.zeros((2, 2, 3, 3))
    ink[0, 1, 1, 1] = 1.0
    ink[1, 1, 1, 1] = -1.0
    outk = np.zeros((1, 2, 3, 3))
    outk[0, 0, 1, 1] = 1.0
    outk[0, 1, 1, 1] = -1.0
    cb = model.closeness_branch
    cb.in_kernel = Tensor(ink)
    cb.in_bias = Tensor(np.zeros(2))
    cb.out_kernel = Tensor(outk)
    cb.out_bias = Tensor(np.zeros(1))
    for branch in (model.period_branch, model.trend_branch):
        branch.in_kernel = Tensor(np.zeros((2, 2, 3, 3)))
        branch.in_bias = Tensor(np.zeros(2))
        branch.out_kernel = Tensor(np.zeros((1, 2, 3, 3)))
        branch.out_bias = Tensor(np.zeros(1))
    model.fusion.closeness_map = Tensor(np.ones((1, 1)))
    model.fusion.period_map = Tensor(np.zeros((1, 1)))
    model.fusion.trend_map = Tensor(np.zeros((1, 1)))
    return model


def trained_head(model):
    theta = np.array([c.item() for c in model.head.coeffs])
    return theta, model.head.intercept.item()
