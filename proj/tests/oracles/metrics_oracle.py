#!/usr/bin/env python3
"""Reference CIDEr-D / METEOR-lite values for the C++ metric tests.

Written separately from the C++ code (plain dicts and Counters) and run
once; its output is frozen into
tests/oracles/metric_cases.inc. Regenerate with:

    python3 tests/oracles/metrics_oracle.py > tests/oracles/metric_cases.inc
"""

import math
from collections import Counter


def tokenize(text):
    out = []
    for i, c in enumerate(text):
        if c.isascii() and c.isalnum():
            out.append(c.lower())
        elif (c == "'" and 0 < i < len(text) - 1 and text[i - 1].isascii() and text[i - 1].isalnum()
              and text[i + 1].isascii() and text[i + 1].isalnum()):
            out.append(c)
        else:
            out.append(" ")
    return "".join(out).split()


def ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def cider_d(cands, refs, max_n=4, sigma=6.0):
    m = len(refs)
    assert m >= 2
    df = Counter()
    for rs in refs:
        seen = set()
        for r in rs:
            for n in range(1, max_n + 1):
                seen.update(ngrams(r, n).keys())
        df.update(seen)

    def vec(tokens):
        vs, norms = [], []
        for n in range(1, max_n + 1):
            v = {g: c * (math.log(m) - math.log(max(1.0, df[g]))) for g, c in ngrams(tokens, n).items()}
            vs.append(v)
            norms.append(math.sqrt(sum(x * x for x in v.values())))
        return vs, norms

    scores = []
    for c, rs in zip(cands, refs):
        if not c:
            scores.append(0.0)
            continue
        cv, cn = vec(c)
        total = 0.0
        for r in rs:
            rv, rn = vec(r)
            pen = math.exp(-((len(c) - len(r)) ** 2) / (2 * sigma * sigma))
            per_n = []
            for n in range(max_n):
                s = sum(min(x, rv[n].get(g, 0.0)) * rv[n].get(g, 0.0) for g, x in cv[n].items())
                if cn[n] != 0 and rn[n] != 0:
                    s /= cn[n] * rn[n]
                per_n.append(s * pen)
            total += sum(per_n) / max_n
        scores.append(10.0 * total / len(rs))
    return sum(scores) / len(scores), scores


def greedy_alignment(c, r):
    used_c, used_r, links = set(), set(), []
    while True:
        best = (0, 0, 0)
        for i in range(len(c)):
            if i in used_c:
                continue
            for j in range(len(r)):
                k = 0
                while (i + k < len(c) and j + k < len(r) and i + k not in used_c and j + k not in used_r
                       and c[i + k] == r[j + k]):
                    k += 1
                if k > best[0]:
                    best = (k, i, j)
        k, i, j = best
        if k == 0:
            break
        for t in range(k):
            used_c.add(i + t)
            used_r.add(j + t)
            links.append((i + t, j + t))
    links.sort()
    chunks = 0
    prev = None
    for a, b in links:
        if prev is None or a != prev[0] + 1 or b != prev[1] + 1:
            chunks += 1
        prev = (a, b)
    return len(links), chunks


def meteor_single(c, r):
    m, ch = greedy_alignment(c, r)
    if m == 0:
        return 0.0
    p, rr = m / len(c), m / len(r)
    f = 10 * p * rr / (rr + 9 * p)
    return f * (1 - 0.5 * (ch / m) ** 3)


def meteor(cands, refs):
    scores = [max(meteor_single(c, r) for r in rs) for c, rs in zip(cands, refs)]
    return sum(scores) / len(scores), scores


CORPORA = {
    "synthetic": (
        ["a high pitched tone followed by a burst of noise",
         "a low siren then a click train",
         "a series of clicks",
         "a burst of noise followed by a burst of noise",
         ""],
        [["a high pitched tone followed by a burst of noise", "a high tone and then a noise burst",
          "a high pitched beep then a short burst of noise", "a high beep before a burst of static",
          "the sound of a high tone, then the sound of a noise burst"],
         ["a low pitched siren followed by a series of clicks", "a low siren and then a click train",
          "a low pitched wail then rapid clicking", "a low wail before a clicking sound",
          "the sound of a low siren, then the sound of clicking"],
         ["a high pitched chirp", "a high chirp", "a high pitched sweep", "a high sweep",
          "the sound of a high chirp"],
         ["a burst of noise followed by a low pitched tone", "a noise burst and then a low tone",
          "a short burst of noise then a low pitched beep", "a burst of static before a low beep",
          "the sound of a noise burst, then the sound of a low tone"],
         ["a series of clicks", "a click train", "rapid clicking", "a clicking sound", "the sound of clicking"]],
    ),
    "natural": (
        ["A dog barks while cars pass by.", "Rain falls on a tin roof", "Someone's speaking, then a door slams!",
         "birds chirp birds chirp"],
        [["A dog is barking as vehicles pass.", "Cars drive past while a dog barks"],
         ["Heavy rain falls on a metal roof.", "Rain is pattering on a roof", "Rain on a tin roof"],
         ["A man speaks and then a door slams shut", "Someone's talking before a door is slammed",
          "A door slams after a person speaks"],
         ["Birds are chirping in the distance", "Many birds chirp and sing"]],
    ),
    "repeats": (
        ["the the the cat", "dog sat on the rug the dog", "on the mat sat the cat"],
        [["the cat sat on the mat"], ["a dog sat on the rug", "the dog is on a rug"],
         ["the cat lay on the mat", "there is a cat near the mat"]],
    ),
}


def unigram_hand_case():
    # Two items, unigrams only. Exact arithmetic written out by hand:
    # refs: item0 {"a b"}, item1 {"a c"}; M = 2; df(a) = 2, df(b) = 1, df(c) = 1.
    # idf(a) = 0, idf(b) = idf(c) = log 2.
    # item0 candidate "a b": vector (0, log2) vs ref (0, log2) -> cosine 1, same length -> 10.
    # item1 candidate "b c": vector b=log2, c=log2 vs ref c=log2 -> (log2^2) / (sqrt2 log2 * log2) = 1/sqrt2.
    return [10.0, 10.0 / math.sqrt(2.0)]


def fmt(x):
    return repr(float(x))


def main():
    print("// Generated by tests/oracles/metrics_oracle.py; do not edit by hand.")
    print("struct MetricCase {")
    print("  const char* name;")
    print("  std::vector<std::string> candidates;")
    print("  std::vector<std::vector<std::string>> references;")
    print("  double cider;")
    print("  std::vector<double> cider_items;")
    print("  double meteor;")
    print("  std::vector<double> meteor_items;")
    print("};")
    print("inline const std::vector<MetricCase> kMetricCases = {")
    for name, (cands, refs) in CORPORA.items():
        ct = [tokenize(c) for c in cands]
        rt = [[tokenize(r) for r in rs] for rs in refs]
        cd, cdi = cider_d(ct, rt)
        me, mei = meteor(ct, rt)
        q = lambda s: '"' + s.replace('\\', '\\\\').replace('"', '\\"') + '"'
        print("    {" + q(name) + ",")
        print("     {" + ", ".join(q(c) for c in cands) + "},")
        print("     {" + ", ".join("{" + ", ".join(q(r) for r in rs) + "}" for rs in refs) + "},")
        print("     " + fmt(cd) + ",")
        print("     {" + ", ".join(fmt(x) for x in cdi) + "},")
        print("     " + fmt(me) + ",")
        print("     {" + ", ".join(fmt(x) for x in mei) + "}},")
    print("};")
    hand = unigram_hand_case()
    c1, c1i = cider_d([["a", "b"], ["b", "c"]], [[["a", "b"]], [["a", "c"]]], max_n=1)
    assert all(abs(a - b) < 1e-12 for a, b in zip(hand, c1i)), (hand, c1i)
    print("inline const std::vector<double> kUnigramHandCase = {" + ", ".join(fmt(x) for x in hand) + "};")
    # Two-chunk METEOR hand case: candidate "the cat sat on a mat", reference "the cat on a mat".
    # Links: "on a mat" (run 3) then "the cat" (run 2) -> 5 matches, 2 chunks.
    p, r = 5 / 6, 5 / 5
    f = 10 * p * r / (r + 9 * p)
    two_chunk = f * (1 - 0.5 * (2 / 5) ** 3)
    assert abs(two_chunk - meteor_single(tokenize("the cat sat on a mat"), tokenize("the cat on a mat"))) < 1e-15
    print("inline const double kTwoChunkMeteor = " + fmt(two_chunk) + ";")


if __name__ == "__main__":
    main()
