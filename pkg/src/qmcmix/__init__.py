"""Weighted quasi-Monte Carlo integration toolkit.

Estimates integrals of the form ``int f(x) pi(x) dx / int pi(x) dx`` for
densities ``pi`` known only up to scale.  The machinery:

- ``lowdisc``   -- digital binary sequences (Sobol-style) in the unit cube,
- ``mixture``   -- sample allocation and estimation for weighted sums of
                   product densities,
- ``hatbasis``  -- piecewise-linear (hat) density surrogates with exact
                   inverse-CDF transforms,
- ``adaptgrid`` -- coordinate-wise adaptive refinement of hat surrogates,
- ``pou``       -- Gaussian-mixture partition of unity with per-component
                   surrogates on rotated boxes,
- ``problems``  -- built-in benchmark densities and integrands,
- ``oracle``    -- brute-force tensor quadrature references,
- ``cli``       -- command-line experiment harness.
"""

from qmcmix.lowdisc import DigitalSequence, default_sequence, load_direction_numbers

__all__ = ["DigitalSequence", "default_sequence", "load_direction_numbers"]

__version__ = "0.1.0"
