"""Multi-level memory network abstractive summarizer."""

from ._mmn import (
    BOS_ID,
    EOS_ID,
    PAD_ID,
    UNK_ID,
    CheckpointError,
    CorpusFormatError,
    Model,
    UndefinedRatioError,
    Vocabulary,
    bias_report,
    causality_suite,
    ext_oracle,
    gradcheck_suite,
    label_smoothing_floor,
    lr_schedule,
    normalize_text,
    novel_ngram_ratio,
    overfit_smoke,
    profile,
    profile_names,
    receptive_field,
    rouge_l,
    rouge_n,
    run_cli,
    smoothed_target,
    tokenize,
    trim_summary_prefix,
)

__version__ = "0.1.0"


def preprocess_text(text):
    """Normalized tokens of a raw document."""
    return tokenize(normalize_text(text))


def summarize(model, vocab, text, max_len=20):
    ids = vocab.encode(preprocess_text(text))
    return " ".join(vocab.decode(model.greedy_decode(ids, max_len)))
