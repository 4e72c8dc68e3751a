"""Ugly-duckling lesion detection over feature embeddings.

Lesions of one patient region are compared through their pairwise cosine
distances; a lesion whose mean distance to its neighbors clears an
interquartile fence is flagged as an ugly duckling. The resulting scores
can gate a small trainable classifier so that suspect lesions carry more
weight, both in the features and, through the chain rule, in every
gradient upstream of the gate.
"""

__version__ = "0.1.0"
