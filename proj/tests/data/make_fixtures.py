"""Regenerates the synthetic fixtures and their frozen oracle values.

Run from this directory: python3 make_fixtures.py
"""
import json
import random

import numpy as np

WORDS = ("the cat sat on mat what is your name my name is anna how do you say "
         "this word in english good morning teacher can we try again please "
         "yes no maybe I think it is a verb past tense of go went gone").split()


def synthetic_corpus(n=50, seed=7):
    rng = random.Random(seed)
    samples = []
    for i in range(n):
        turns = rng.randint(1, 8)
        utterances = []
        for t in range(turns):
            speaker = "student" if (t + turns) % 2 else rng.choice(["teacher", "Teacher"])
            words = [rng.choice(WORDS) for _ in range(rng.randint(1, 12))]
            sep = rng.choice([" ", " ", " ", "  ", "\t"])
            utterances.append({"text": sep.join(words), "speaker": speaker})
        response = {"text": " ".join(rng.choice(WORDS) for _ in range(rng.randint(1, 10))),
                    "speaker": "teacher"}
        samples.append({"id": f"syn-{i:03d}", "utterances": utterances, "response": response})
    return samples


def hand_count(samples):
    turns = 0
    tokens = 0
    for s in samples:
        for u in s["utterances"] + [s["response"]]:
            turns += 1
            tokens += len(u["text"].split())
    return {"num_samples": len(samples),
            "avg_turns": turns / len(samples),
            "avg_tokens_per_turn": tokens / turns,
            "total_turns": turns,
            "total_tokens": tokens}


def antonym_table():
    # Pairwise cosines chosen so that the two opposing candidates land
    # within 0.01 F1 of each other against the same reference.
    names = ["plugged", "in", "disconnected", "out"]
    gram = np.array([[1.0, 0.3, 0.9, 0.7],
                     [0.3, 1.0, 0.6, 0.82],
                     [0.9, 0.6, 1.0, 0.9],
                     [0.7, 0.82, 0.9, 1.0]])
    chol = np.linalg.cholesky(gram)
    return {"model_id": "antonym-stub",
            "tokens": {n: [float(x) for x in chol[i]] for i, n in enumerate(names)}}


if __name__ == "__main__":
    samples = synthetic_corpus()
    with open("synthetic_50.jsonl", "w") as f:
        for s in samples:
            f.write(json.dumps(s) + "\n")
    with open("synthetic_50.oracle.json", "w") as f:
        json.dump(hand_count(samples), f, indent=2)
        f.write("\n")
    with open("antonym_embeddings.json", "w") as f:
        json.dump(antonym_table(), f, indent=2)
        f.write("\n")
