"""lesionforge: desk-scale GAN training, SWD evaluation, and blinded
realism-study tooling for small image datasets."""

__version__ = "0.1.0"
