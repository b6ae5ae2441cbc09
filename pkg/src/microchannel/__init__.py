"""Second-quantized microchannel laboratory: modes, Fock space, channel
reduction, exact propagation and generalized Gibbs states."""

__version__ = "0.1.0"
