"""Expression-aware adversarial video inpainting for static facial occlusions."""

__version__ = "0.1.0"
