"""Hide-and-seek self-play: a sneaky role hides errors, a diagnosis role finds them."""

__version__ = "0.1.0"
