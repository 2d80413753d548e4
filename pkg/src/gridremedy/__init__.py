"""Grid remedial-action toolkit: load-flow solvers, counterfactual mining of
curative switchings, a neural load-flow surrogate, and a dispatcher advisor."""

__version__ = "0.1.0"
