"""attention_exporter: dump [CLS]->[SEP] attention into calibkit record files."""

from .encoder import EncoderConfig, TinyEncoder, encoder_from_model_id
from .export import ExportResult, PairsFileError, export, read_pairs
from .tokenizer import TruncationError, encode_pair, word_ids

__version__ = "0.1.0"
