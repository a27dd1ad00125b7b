import os


def workers():
    """Thread cap for KD-tree queries, from SYMPFOLD_THREADS (default 1)."""
    try:
        n = int(os.environ.get("SYMPFOLD_THREADS", "1"))
    except ValueError:
        return 1
    return n if n >= 1 or n == -1 else 1
