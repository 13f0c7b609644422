"""Caption-derived token features for multi-task ranking models.

Stages: captioning (``content``), caption normalization and token-ID mapping
(``tokenization``), user interest profiles (``profile``), example assembly
(``features``), the multi-task ranker (``ranker``) and offline evaluation
(``evaluation``). ``datagen`` builds a synthetic world with caption-only
signal and ``pipeline`` runs the experiment matrix.
"""

__version__ = "0.1.0"

TASKS = ("comment", "like", "share", "dwell", "consume")
