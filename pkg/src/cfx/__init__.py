"""Counterfactual natural-language explanations for feature-vector images.

"This is not a Bobolink because it does not have a yellow nape."
"""

__version__ = "0.1.0"

from .chunker import NounPhrase, chunk, contains_phrase
from .corpus import Corpus, ImageRecord, Lexicon, load_corpus, save_corpus, tokenize
from .explainer import compose, explain, negate

__all__ = [
    "Corpus",
    "ImageRecord",
    "Lexicon",
    "NounPhrase",
    "chunk",
    "compose",
    "contains_phrase",
    "explain",
    "load_corpus",
    "negate",
    "save_corpus",
    "tokenize",
]
