"""Bernstein-type operators on the simplex, resampling chains and their
diffusion / measure-valued limits, with a batch experiment harness."""

__version__ = "0.1.0"

from . import (bernstein, fleming_viot, generators, moments, mutation,
               polynomials, semigroup, simplex)

__all__ = ["bernstein", "fleming_viot", "generators", "moments", "mutation",
           "polynomials", "semigroup", "simplex", "__version__"]
