"""tunekit: desk-scale supervised fine-tuning over instruction-pair files."""

__version__ = "0.1.0"

from .pairs import InstructionPair, load_pairs, validate_pairs  # noqa: F401
from .train import TuneConfig, run_finetune  # noqa: F401
