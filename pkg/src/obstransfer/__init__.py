"""Transfer across observation spaces via transferred latent dynamics models."""

__version__ = "0.1.0"
