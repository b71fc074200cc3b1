"""rosselab: a numerical laboratory for scaled kinetic transport with random
relaxation rates and its stochastic nonlinear diffusion limit."""

__version__ = "0.1.0"
