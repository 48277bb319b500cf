"""Corpus ingestion, windowing, slicing, splitting, and synthesis."""

from promptscreen.corpus.io import load_corpus, write_corpus
from promptscreen.corpus.records import Corpus, Post, SplitSpec, TokenSeq, TokenWindow, UserRecord
from promptscreen.corpus.splits import fewshot_subset, split_corpus
from promptscreen.corpus.stats import ERISK_TABLE, StatsTable, corpus_stats, validate_stats
from promptscreen.corpus.synth import SynthSpec, generate_synthetic
from promptscreen.corpus.timeslice import PRE_ONSET, PRE_PREDICTION, time_slice
from promptscreen.corpus.tokenize import WhitespaceTokenizer, concat_tokens
from promptscreen.corpus.windows import make_windows

__all__ = [
    "Corpus", "ERISK_TABLE", "PRE_ONSET", "PRE_PREDICTION", "Post", "SplitSpec", "StatsTable",
    "SynthSpec", "TokenSeq", "TokenWindow", "UserRecord", "WhitespaceTokenizer", "concat_tokens",
    "corpus_stats", "fewshot_subset", "generate_synthetic", "load_corpus", "make_windows",
    "split_corpus", "time_slice", "validate_stats", "write_corpus",
]
