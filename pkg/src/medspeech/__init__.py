"""Medical-domain speech corpus tooling: audio conversion, augmentation,
n-gram language modelling, CTC decoding and WER evaluation."""

__version__ = "0.1.0"
