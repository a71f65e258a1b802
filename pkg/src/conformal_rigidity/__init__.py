"""Numerical toolkit for conformal dilation-translation group actions on S^n.

Submodules
----------
symtensor
    Symmetric multilinear maps, the conformal quadratic form, brackets.
jets
    Order-3 jet calculus for germs of diffeomorphisms fixing the origin.
mobius
    The sphere model R^n plus a point at infinity, standard actions,
    inversion charts.
defcomplex
    Linearized deformation operators and numerical exactness certification.
pipeline
    Perturbation synthesis, fixed-point location, basis recovery and
    global conjugacy experiments.
cli
    Command line front end emitting JSON reports.
"""

__version__ = "0.1.0"
