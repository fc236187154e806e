"""CPE entity identification for CVE summary text."""

from .corpus import (
    BioLabel,
    CorpusStats,
    EntitySpan,
    TaggedSentence,
    Token,
    tokenize,
)
from .nvd import CpeName, CveEntry, format_cpe_uri, parse_cpe_uri
from .tagger import TaggerModel, TrainConfig, predict, train, viterbi_decode

__version__ = "0.1.0"

__all__ = [
    "BioLabel",
    "CorpusStats",
    "CpeName",
    "CveEntry",
    "EntitySpan",
    "TaggedSentence",
    "TaggerModel",
    "Token",
    "TrainConfig",
    "format_cpe_uri",
    "parse_cpe_uri",
    "predict",
    "tokenize",
    "train",
    "viterbi_decode",
    "__version__",
]
