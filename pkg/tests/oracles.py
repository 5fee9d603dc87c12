"""Brute-force reference implementations for the metric tests.

These are written from the metric definitions with plain lists and loops,
sharing no code with the package beyond the tokenizer.
"""

from itertools import combinations

from intention_tuning.metrics import metric_tokens


def grams(tokens, n):
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def count(items, g):
    return sum(1 for x in items if x == g)


def sari_oracle(src, hyp, refs):
    src, hyp = metric_tokens(src), metric_tokens(hyp)
    refs = [metric_tokens(r) for r in refs]
    nr = len(refs)
    total = 0.0
    for n in range(1, 5):
        s_list, c_list = grams(src, n) * nr, grams(hyp, n) * nr
        r_list = [g for r in refs for g in grams(r, n)]
        universe = sorted(set(s_list) | set(c_list) | set(r_list))
        S = {g: count(s_list, g) for g in universe}
        C = {g: count(c_list, g) for g in universe}
        R = {g: count(r_list, g) for g in universe}

        keep = {g: min(S[g], C[g]) for g in universe if min(S[g], C[g]) > 0}
        keep_all = {g: min(S[g], R[g]) for g in universe if min(S[g], R[g]) > 0}
        kp = sum(min(keep[g], R[g]) / keep[g] for g in keep) / len(keep) if keep else 1.0
        kr = sum(min(keep.get(g, 0), R[g]) / keep_all[g] for g in keep_all) / len(keep_all) if keep_all else 1.0
        keep_f = 0.0 if kp + kr == 0 else 2 * kp * kr / (kp + kr)

        dele = {g: S[g] - C[g] for g in universe if S[g] - C[g] > 0}
        dp = sum(max(dele[g] - R[g], 0) / dele[g] for g in dele) / len(dele) if dele else 1.0

        added = [g for g in universe if C[g] > 0 and S[g] == 0]
        possible = [g for g in universe if R[g] > 0 and S[g] == 0]
        good = [g for g in added if R[g] > 0]
        ap = len(good) / len(added) if added else 1.0
        ar = len(good) / len(possible) if possible else 1.0
        add_f = 0.0 if ap + ar == 0 else 2 * ap * ar / (ap + ar)
        total += (keep_f + dp + add_f) / 3
    return 100 * total / 4


def gleu_oracle(triples):
    """Corpus GLEU for ``(source, hypothesis, [references])`` triples, averaged over reference rounds."""
    import math

    rounds = max(len(t[2]) for t in triples)
    results = []
    for j in range(rounds):
        hyp_len = ref_len = 0
        num = [0] * 5
        den = [0] * 5
        for src, hyp, refs in triples:
            s, h, r = metric_tokens(src), metric_tokens(hyp), metric_tokens(refs[j % len(refs)])
            hyp_len += len(h)
            ref_len += len(r)
            for n in range(1, 5):
                hg, rg, sg = grams(h, n), grams(r, n), grams(s, n)
                matched = sum(min(count(hg, g), count(rg, g)) for g in set(hg))
                penalty = sum(min(count(hg, g), count(sg, g)) for g in set(hg) if g not in rg)
                num[n] += max(matched - penalty, 0)
                den[n] += len(hg)
        if hyp_len == 0:
            results.append(100.0 if ref_len == 0 else 0.0)
            continue
        orders = [n for n in range(1, 5) if den[n] > 0]
        if any(num[n] == 0 for n in orders):
            results.append(0.0)
            continue
        log_p = sum(math.log(num[n] / den[n]) for n in orders) / len(orders)
        bp = 1.0 if hyp_len > ref_len else math.exp(1 - ref_len / hyp_len)
        results.append(100 * bp * math.exp(log_p))
    return sum(results) / len(results)


def lcs_oracle(a, b):
    """Longest common subsequence by enumerating every subsequence of the shorter side."""
    if len(a) > len(b):
        a, b = b, a

    def is_subsequence(sub, seq):
        it = iter(seq)
        return all(any(x == y for y in it) for x in sub)

    for size in range(len(a), 0, -1):
        if any(is_subsequence(c, b) for c in combinations(a, size)):
            return size
    return 0


def split_plain(text):
    """Sentences as token lists, cut after '.', '!' or '?'."""
    out, cur = [], []
    for t in metric_tokens(text):
        cur.append(t)
        if t in ".!?":
            out.append(cur)
            cur = []
    if cur:
        out.append(cur)
    return out


def update_r_oracle(src, hyp, refs):
    src_sents = split_plain(src)
    best = 0.0
    h = [t for s in split_plain(hyp) if s not in src_sents for t in s]
    for ref in refs:
        r = [t for s in split_plain(ref) if s not in src_sents for t in s]
        if not h and not r:
            score = 100.0
        elif not h or not r:
            score = 0.0
        else:
            lcs = lcs_oracle(h, r)
            score = 0.0 if lcs == 0 else 100 * 2 * (lcs / len(h)) * (lcs / len(r)) / (lcs / len(h) + lcs / len(r))
        best = max(best, score)
    return best


# (source, hypothesis, references): short revisions covering copies, pure
# additions and deletions, reorderings, multi-sentence updates, edit tags,
# multiple references and near-empty inputs.
HAND_SUITE = [
    ("the cat sat on the mat.", "the cat sat on the mat.", ["the cat sat on the mat."]),
    ("the cat sat on the mat.", "the cat sat on the mat.", ["a cat sat on a mat."]),
    ("the cat sat on the mat.", "a cat sat on a mat.", ["a cat sat on a mat."]),
    ("the cat sat.", "the cat sat on the mat.", ["the cat sat on the mat."]),
    ("the big old cat sat.", "the cat sat.", ["the old cat sat."]),
    ("a b c d e", "a b c d f", ["a b c d f"]),
    ("e z", "a b c d e", ["a b c d f"]),
    ("x y", "a b", ["c d"]),
    ("he go to school.", "he goes to school.", ["he goes to school.", "he went to school."]),
    ("he go to school.", "he went to the school.", ["he went to school.", "he goes to school."]),
    ("it is, basically, fine.", "it is fine.", ["it is fine."]),
    ("A. B. C.", "A. X y. C.", ["A. X z. D."]),
    ("One. Two. Three.", "One. Two. Three.", ["One. Two! Three."]),
    ("One. Two.", "One. Two. Four.", ["One. Two. Three."]),
    ("the plan works.", "moreover, the plan works.", ["however, the plan works."]),
    ("we buy tools.", "we purchase tools.", ["we acquire tools.", "we purchase the tools.", "we buy tools."]),
    ("a a a b", "a a b b", ["a b b b"]),
    ("the the the", "the", ["the the"]),
    ("First part. <edit>Second part is old.</edit>", "First part. Second part is new.",
     ["First part. <edit>Second part is new.</edit>"]),
    ("short", "short text here", ["short text"]),
]
