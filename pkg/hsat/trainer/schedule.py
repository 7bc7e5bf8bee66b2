import math


def lr_schedule(t: int, total: int, lr: float, warmup_frac: float) -> float:
    """Linear warmup over the first ceil(warmup_frac * total) iterations, then cosine decay towards 0."""
    start = math.ceil(warmup_frac * total)
    if t < start:
        return lr * (t + 1) / start
    span = total - start
    if span <= 0:
        return lr
    return lr * 0.5 * (1.0 + math.cos(math.pi * (t - start) / span))


def epsilon_schedule(t: int, total: int, eps: float, warmup_frac: float) -> float:
    warmup = warmup_frac * total
    if warmup <= 0:
        return eps
    return eps * min(1.0, t / warmup)
