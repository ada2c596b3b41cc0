"""Bayesian estimation and information measures for Poisson channels.

Point processes, the add-one-atom difference operator, channel likelihoods,
posterior-mean estimators and Monte-Carlo mutual information with its
parameter derivatives.
"""

__version__ = "0.1.0"

from .bayes import (
    FinitePathPrior,
    FiniteScalarPrior,
    conditional_mean_discrete,
    conditional_mean_gradient,
    conditional_mean_mixture,
    conditional_mean_weighting,
)
from .channels import ChannelParams, IntensityPath, MixtureObservation, SwitchFunction
from .point_process import IntensityMeasure, PointConfiguration, TimeGrid

__all__ = [
    "__version__",
    "TimeGrid", "PointConfiguration", "IntensityMeasure",
    "ChannelParams", "IntensityPath", "SwitchFunction", "MixtureObservation",
    "FiniteScalarPrior", "FinitePathPrior",
    "conditional_mean_discrete", "conditional_mean_gradient", "conditional_mean_weighting",
    "conditional_mean_mixture",
]
