"""Learned physical-layer experiments: constellation design, autoencoder links,
OFDM channel estimation, information planes and wide-network Gram matrices."""

__version__ = "0.1.0"
