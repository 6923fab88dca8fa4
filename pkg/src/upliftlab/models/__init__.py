"""Uplift models: the UMLC framework, its attention blocks and standalone baselines."""

from .attention import (CoAttention, CrossAttention, co_attend, cross_attend, gain_from_attention, information_gain,
                        mean_pool)
from .baselines import BASELINES, BaselineConfig, CFRNet, SLearner, TARNet, TLearner, baseline_fit_predict, build_baseline
from .heads import HEAD_KINDS, CFRNetHead, MLPHead, TARNetHead, build_head, median_bandwidth, mmd_linear, mmd_linear_numpy
from .persist import load_model, save_model
from .records import Records
from .training import TrainHistory, fit, predict_uplift, scores
from .umlc import UpliftConfig, UpliftModel, batch_weights, build_uplift_model, umlc_loss


def train_uplift(model: UpliftModel, rec: Records, seed: int) -> TrainHistory:
    """Train a UMLC model in place with its own configuration."""
    return fit(model, rec, model.cfg, seed, stream="uplift")


__all__ = [name for name in dir() if not name.startswith("_")]
