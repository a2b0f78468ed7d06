"""Mask-conditioned k-space reconstruction on synthetic phantoms.

A numpy reverse-mode autodiff engine drives a residual k-space U-Net that
optionally receives the Cartesian sampling mask as an extra input channel.
Classical zero-fill and total-variation compressed sensing serve as
references; evaluation covers mask-pattern, acceleration and anatomy shifts.
"""

__version__ = "0.1.0"
