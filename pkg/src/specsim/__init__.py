"""Stochastic spectral simulation of circuits with generalized polynomial chaos.

Subpackages and modules:

- :mod:`specsim.polychaos` orthonormal bases for Gaussian, uniform, Gamma and Beta parameters
- :mod:`specsim.quadrature` Gauss, Clenshaw-Curtis, tensor and Smolyak rules
- :mod:`specsim.circuit` netlist parsing and the MNA device model
- :mod:`specsim.detsolve` Newton and trapezoidal transient kernels
- :mod:`specsim.spectral` stochastic testing, Galerkin, collocation and Monte Carlo
- :mod:`specsim.pss` periodic steady state by shooting
- :mod:`specsim.cli` the ``specsim`` command
"""

__version__ = "0.1.0"
