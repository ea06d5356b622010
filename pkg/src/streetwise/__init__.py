"""Streetwise: post-deployment action shaping for offline-trained controllers.

The package combines an offline-RL policy (expectile-regressed value learning
with behavior-regularized extraction), a sequence-autoencoder disturbance
detector, and a runtime shaping rule that nudges candidate actions along the
critic's action gradient, scaled by the detector's normalized surprise.
"""

__version__ = "0.1.0"
