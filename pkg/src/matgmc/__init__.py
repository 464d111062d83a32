"""Matrix-valued Gaussian multiplicative chaos: lattice synthesis, renormalization,
moment scaling and orthogonal-group integrals."""

__version__ = "0.1.0"
