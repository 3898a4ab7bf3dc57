"""Stage-wise LoRA fine-tuning for compound expression recognition, at desk scale."""

__version__ = "0.1.0"
