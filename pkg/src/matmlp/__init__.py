"""Matrix multilayer perceptrons for trace-one SPD outputs, with matrix backprop and VAE tooling."""

__version__ = "0.1.0"
