"""ResNets viewed as depth-weighted ensembles of spherical spin glasses.

Submodules:

``ensemble``
    depth mixture ``eps_r``, band masses, Legendre normalization, path counts.
``complexity``
    critical-point complexity ``theta`` of a mixture and its maximization.
``spinglass``
    mixed spherical spin-glass models and a multistart critical-point census.
``dynamics``
    one-step scale dynamics of a two-path surrogate loss.
``toynet``
    a small numpy ResNet with multiplicative batch normalization.
``cli``
    the ``resnet-ensembles`` command.
"""

from .errors import DomainError, ParameterError, SizeError

__all__ = ["DomainError", "ParameterError", "SizeError"]
__version__ = "0.1.0"
