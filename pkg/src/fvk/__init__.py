"""fvk: few-shot voice cloning toolkit.

Two cloning pathways over a compact multi-speaker generative model
(gradient adaptation and direct embedding regression), the discriminative
evaluation stack that grades them (speaker classification, verification
with PLDA scoring and equal error rate), and embedding-space morphing,
all runnable end to end on a built-in synthetic speaker corpus.
"""

import os

__version__ = "0.1.0"


def worker_count():
    """Worker cap for parallel sections, from FVK_THREADS (default: CPU count)."""
    env = os.environ.get("FVK_THREADS")
    if env:
        n = int(env)
        if n < 1:
            raise ValueError("FVK_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1
