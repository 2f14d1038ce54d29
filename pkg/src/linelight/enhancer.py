"""Scikit-learn style estimator wrapping the network and trainer.

``LowLightEnhancer`` follows the estimator protocol (``get_params`` /
``set_params`` / ``fit`` / ``predict`` / ``score``) so it composes with
sklearn-style tooling, while the heavy lifting stays in the subsystem
modules.  X is a batch of packed, amplified raw frames; y is the matching
clean sRGB batch at twice the packed resolution.
"""

from __future__ import annotations

import inspect

import numpy as np

from .model import EnhancerNet, ModelConfig
from .rawdata import SamplePair
from .training import TrainConfig, psnr, train
from .validation import check_packed_raw, check_raw_target, check_rgb_target


class _ArrayDataset:
    def __init__(self, x, y_raw, y_rgb):
        self.x, self.y_raw, self.y_rgb = x, y_raw, y_rgb

    def __len__(self):
        return self.x.shape[0]

    def __getitem__(self, i):
        return SamplePair(x=self.x[i], y_raw=self.y_raw[i], y_rgb=self.y_rgb[i], ratio=1.0)


class LowLightEnhancer:
    """Enhance packed low-light raw frames into sRGB images.

    Parameters mirror the model and trainer configs; ``fit`` trains the
    network on (X, y) pairs, ``predict`` renders new frames.
    """

    def __init__(self, num_scales: int = 3, base_channels: int = 16,
                 blocks_per_scale: int = 2, window_rows: int = 7,
                 norm_groups: int = 4, use_adapter: bool = True,
                 use_raw_supervision: bool = True,
                 adapter_kind: str = "line_attention", lr: float = 2e-4,
                 weight_decay: float = 1e-4, steps: int = 500,
                 batch_size: int = 1, crop: int | None = 64, seed: int = 0):
        self.num_scales = num_scales
        self.base_channels = base_channels
        self.blocks_per_scale = blocks_per_scale
        self.window_rows = window_rows
        self.norm_groups = norm_groups
        self.use_adapter = use_adapter
        self.use_raw_supervision = use_raw_supervision
        self.adapter_kind = adapter_kind
        self.lr = lr
        self.weight_decay = weight_decay
        self.steps = steps
        self.batch_size = batch_size
        self.crop = crop
        self.seed = seed

    # ------------------------------------------------- estimator protocol

    @classmethod
    def _param_names(cls) -> list[str]:
        sig = inspect.signature(cls.__init__)
        return [p for p in sig.parameters if p != "self"]

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params) -> "LowLightEnhancer":
        valid = set(self._param_names())
        for key, value in params.items():
            if key not in valid:
                raise ValueError(f"invalid parameter {key!r} for LowLightEnhancer")
            setattr(self, key, value)
        return self

    # -------------------------------------------------------- model config

    def _model_config(self) -> ModelConfig:
        return ModelConfig(
            num_scales=self.num_scales, base_channels=self.base_channels,
            blocks_per_scale=self.blocks_per_scale, window_rows=self.window_rows,
            norm_groups=self.norm_groups, use_adapter=self.use_adapter,
            use_raw_supervision=self.use_raw_supervision,
            adapter_kind=self.adapter_kind)

    def _train_config(self) -> TrainConfig:
        return TrainConfig(lr=self.lr, weight_decay=self.weight_decay,
                           steps=self.steps, batch_size=self.batch_size,
                           crop=self.crop, seed=self.seed)

    @property
    def _divisor(self) -> int:
        return 1 << (self.num_scales - 1)

    def fit(self, X, y, y_raw=None) -> "LowLightEnhancer":
        """Train on packed raw X (N, 4, H, W) and sRGB targets y (N, 3, 2H, 2W).

        ``y_raw`` supplies clean raw targets for the auxiliary supervision;
        when omitted the raw branch is disabled for this fit.
        """
        X = check_packed_raw(X, divisor=self._divisor)
        y = check_rgb_target(y, X)
        cfg = self._model_config()
        if y_raw is None:
            cfg.use_raw_supervision = False
            y_raw = np.zeros_like(X)
        else:
            y_raw = check_raw_target(y_raw, X)
        self.model_ = EnhancerNet(cfg, seed=self.seed)
        result = train(self.model_, _ArrayDataset(X, y_raw, y), self._train_config())
        self.history_ = result.metrics
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "model_"):
            raise RuntimeError("this LowLightEnhancer instance is not fitted yet")
        X = check_packed_raw(X, divisor=self._divisor)
        return self.model_.forward_infer(_tensor(X)).data

    def score(self, X, y) -> float:
        """Mean PSNR (dB) of predictions against sRGB targets."""
        X = check_packed_raw(X, divisor=self._divisor)
        y = check_rgb_target(y, X)
        pred = self.predict(X)
        return float(np.mean([psnr(p, t) for p, t in zip(pred, y)]))


def _tensor(x):
    from .autodiff import Tensor

    return Tensor(np.asarray(x, dtype=np.float32))
