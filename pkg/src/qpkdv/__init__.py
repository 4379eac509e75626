"""Quasi-periodic solutions of forced KdV equations by spectral conjugation.

Submodules:

- ``spectral``   truncated Fourier fields on T^nu x T and spectral calculus
- ``nonlin``     nonlinearity parsing, residuals, linearization coefficients
- ``opalg``      block-Toeplitz operator algebra with decay norms
- ``regularize`` conjugation of the linearized operator to constant coefficients
- ``kamreduce``  quadratic reduction of the remainder to a diagonal operator
- ``solver``     right inverse, quasi-Newton outer iteration, measure scans
- ``dynamics``   linear time integration and stability verification
- ``cli``        configuration-driven experiment runner
"""

__version__ = "0.1.0"
