import numpy as np


def polyak_average(avg, new_iterate, xi: float = 0.99):
    """Exponentially decayed iterate average ``xi * avg + (1 - xi) * new``.

    Passing ``avg=None`` starts the average at ``new_iterate``.
    """
    new_iterate = np.asarray(new_iterate, dtype=float)
    if avg is None:
        return new_iterate.copy()
    avg = np.asarray(avg, dtype=float)
    if avg.shape != new_iterate.shape:
        raise ValueError(f"shape mismatch: {avg.shape} vs {new_iterate.shape}")
    return xi * avg + (1.0 - xi) * new_iterate
