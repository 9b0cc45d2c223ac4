"""Text normalization shared by answer matching, gold-answer selection, and metric tokenization."""

import string

_PUNCT_TO_SPACE = str.maketrans({ch: " " for ch in string.punctuation})


def normalize_text(s: str) -> str:
    """Lowercase, replace ASCII punctuation with spaces, collapse whitespace, trim.

    Idempotent: applying it twice equals applying it once.
    """
    return " ".join(s.lower().translate(_PUNCT_TO_SPACE).split())
