"""Expected end-to-end evaluation report for a chat log.

Runs ingest, collapse, renumbering, the chronological split, pair building on
the train side, hashed embeddings, exact nearest-neighbour retrieval, corpus
BLEU and Laplace-bigram perplexity, all through clonebot_oracle. Writes the
expected JSON report and the parallel TSV.

usage: oracle_eval.py LOG OUT_DIR [--fraction 0.1] [--dim 1024] [--turns 1]
"""
import argparse
import json
import math
import os

import clonebot_oracle as o


def split_words(text):
    return o.split_words(text)


def tokenizer(train):
    content = set()
    speakers = set()
    for c in train:
        for r in c:
            content.update(split_words(r["text"]))
            speakers.add(r["speaker"])
    for s in speakers:
        content.update(split_words(s))
    tokens = ["<unk>", "<eos>"] + sorted(content) + [f"<spk_{s}>" for s in sorted(speakers)]
    index = {t: i for i, t in enumerate(tokens[: 2 + len(content)])}
    return tokens, index


def encode(index, text):
    return [index.get(w, 0) for w in split_words(text)]


def bigram_perplexity(train_texts, test_texts, index, vocab):
    eos = 1
    counts, rows = {}, {}
    for t in train_texts:
        prev = eos
        for tok in encode(index, t) + [eos]:
            counts[(prev, tok)] = counts.get((prev, tok), 0) + 1
            rows[prev] = rows.get(prev, 0) + 1
            prev = tok
    nll, n = 0.0, 0
    for t in test_texts:
        prev = eos
        for tok in encode(index, t) + [eos]:
            p = (counts.get((prev, tok), 0) + 1) / (rows.get(prev, 0) + vocab)
            nll -= math.log(p)
            n += 1
            prev = tok
    return {"ppl": math.exp(nll / n), "token_count": n, "total_nll": nll}


def tsv_escape(s):
    return s.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n").replace("\r", "\\r")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("log")
    ap.add_argument("out")
    ap.add_argument("--fraction", type=float, default=0.1)
    ap.add_argument("--dim", type=int, default=1024)
    ap.add_argument("--turns", type=int, default=1)
    args = ap.parse_args()

    with open(args.log, encoding="utf-8") as f:
        convs = o.renumber(o.collapse(o.parse_jsonl(f)))
    train, test = o.split(convs, args.fraction)
    test_ids = {r["id"] for c in test for r in c}
    targets = sorted({r["speaker"] for c in train for r in c})

    indexes = {}
    for t in targets:
        pairs = o.build_pairs(train, t, args.turns)
        indexes[t] = [(p, o.embed(p["context"], args.dim)) for p in pairs]

    rows = []
    for c in convs:
        for i in range(1, len(c)):
            u = c[i]
            if u["id"] not in test_ids or u["speaker"] not in indexes:
                continue
            query = "\n".join(r["text"] for r in c[max(0, i - args.turns):i])
            hit = o.retrieve(indexes[u["speaker"]], query, args.dim)
            hyp, dist = ("", None) if hit is None else (hit[2]["response"], hit[0])
            rows.append({"query": query, "hypothesis": hyp, "gold": u["text"],
                         "target_speaker": u["speaker"], "distance": dist})

    bleu = o.bleu([r["hypothesis"].split() for r in rows], [r["gold"].split() for r in rows])
    per_target = {}
    for r in rows:
        per_target[r["target_speaker"]] = per_target.get(r["target_speaker"], 0) + 1

    tokens, index = tokenizer(train)
    ppl = bigram_perplexity(
        [r["text"] for c in train for r in c],
        [r["text"] for c in test for r in c],
        index, len(tokens))

    report = {
        "embedder_fingerprint": f"hashing-fnv1a-fmix64-v1/dim={args.dim}",
        "retrieval": {
            "bleu": bleu,
            "pairs": len(rows),
            "no_answer": sum(r["distance"] is None for r in rows),
            "pairs_per_target": dict(sorted(per_target.items())),
            "skipped_targets": [t for t in targets if t not in per_target],
        },
        "perplexity": ppl,
        "train_utterances": sum(len(c) for c in train),
        "test_utterances": sum(len(c) for c in test),
    }
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "expected_report.json"), "w") as f:
        json.dump(report, f, indent=2)
        f.write("\n")
    with open(os.path.join(args.out, "expected_eval.tsv"), "w") as f:
        f.write("query\thypothesis\tgold\ttarget_speaker\tdistance\n")
        for r in rows:
            d = "" if r["distance"] is None else f"{r['distance']:.6f}"
            f.write("\t".join([tsv_escape(r["query"]), tsv_escape(r["hypothesis"]),
                               tsv_escape(r["gold"]), r["target_speaker"], d]) + "\n")
    print(json.dumps(report["retrieval"]["bleu"]["score"]), report["retrieval"]["pairs"])


if __name__ == "__main__":
    main()
