"""Shallow classifier heads over pooled embeddings, trained from scratch."""

from .evaluate import EvalReport, evaluate, predict  # noqa: F401
from .gradcheck import gradient_check  # noqa: F401
from .models import AdamOptimizer, LinearModel, MLPModel  # noqa: F401
from .persist import load_model, save_model  # noqa: F401
from .splits import Split, stratified_split  # noqa: F401
from .train import (  # noqa: F401
    TrainConfig,
    TrainingDivergedError,
    TrainingTrace,
    retrain_final,
    train_linear,
    train_mlp,
)
