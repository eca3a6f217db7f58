"""Physics-informed neural networks with spectral pseudo-sequence transformers.

A numpy-backed toolkit: nested-differentiation autodiff core, four model
architectures (MLP PINN, encoder-decoder Pformer, decoder-only Pformer,
spectral Pformer), benchmark PDE problems with closed-form oracles,
NTK-balanced L-BFGS training, and spectral-band error analysis.
"""

__version__ = "0.1.0"
