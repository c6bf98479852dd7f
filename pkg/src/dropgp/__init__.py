"""Dropout neural networks as approximate Gaussian processes.

Submodules: ``numerics`` (seeded streams, stable reductions), ``network``
(masked forward pass, costs, gradients, SGD), ``gp`` (GP-side objectives and
hyperparameter algebra), ``kl`` (mixture KL approximations), ``uncertainty``
(MC-dropout prediction and calibration) and ``cli``.
"""
from dropgp._kernels import BACKEND
from dropgp.numerics import ContractError, DomainError, RngState
from dropgp.network import (
    Dataset,
    HyperParams,
    MaskSet,
    NetworkSpec,
    ParamSet,
    Schedule,
    dropout_cost,
    forward,
    forward_batch,
    gradients,
    init_params,
    sgd_train,
)
from dropgp.uncertainty import McConfig, mc_predict, mc_predict_batch

__version__ = "0.1.0"
