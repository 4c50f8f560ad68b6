"""Complex-valued spatial autoencoder for multichannel speech enhancement."""

from ._core import (
    Cospa,
    beampattern,
    freefield_steering,
    istft,
    mvdr_weights,
    sdr_db,
    simulate_scene,
    sinr_db,
    stft,
)

__all__ = [
    "Cospa",
    "beampattern",
    "freefield_steering",
    "istft",
    "mvdr_weights",
    "sdr_db",
    "simulate_scene",
    "sinr_db",
    "stft",
]
