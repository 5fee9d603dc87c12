"""Pure-Python implementations of the hot kernels.

These are the reference versions; ``_kernels.pyx`` mirrors them line for
line and is used when the compiled extension is importable.
"""


def variance_split(values, rel_tol=1e-12):
    """Best contiguous two-way split of an ascending sequence.

    Returns ``(k, cost)`` where the lower side is ``values[:k]`` and ``cost``
    is the sum of the two population variances. Only boundaries between
    distinct values are eligible; ``k == 0`` means none exists. Costs within
    ``rel_tol`` of the total variance count as ties and resolve to the
    larger ``k``.
    """
    n = len(values)
    if n < 2:
        return 0, 0.0
    mean = sum(values) / n
    centred = [v - mean for v in values]
    total_sq = sum(c * c for c in centred)
    tol = rel_tol * max(total_sq / n, 1e-300)
    s_low = 0.0
    q_low = 0.0
    best_k = 0
    best = 0.0
    for k in range(1, n):
        c = centred[k - 1]
        s_low += c
        q_low += c * c
        if values[k - 1] == values[k]:
            continue
        m = n - k
        s_high = -s_low
        q_high = total_sq - q_low
        var_low = max(q_low / k - (s_low / k) ** 2, 0.0)
        var_high = max(q_high / m - (s_high / m) ** 2, 0.0)
        cost = var_low + var_high
        if best_k == 0 or cost < best - tol:
            best_k, best = k, cost
        elif cost <= best + tol:
            best_k, best = k, min(best, cost)
    return best_k, best


def lcs_length(a, b):
    """Length of the longest common subsequence of two integer sequences."""
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, 1):
            if x == y:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = cur[j - 1] if cur[j - 1] > prev[j] else prev[j]
        prev = cur
    return prev[-1]
