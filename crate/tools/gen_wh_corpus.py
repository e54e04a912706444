"""Writes data/wh_corpus.txt: a synthetic conversational corpus used for the
question-word/noun bigram model. Deterministic for a fixed seed."""

import random
import sys
from pathlib import Path

SEED = 20240501

PEOPLE = "mother father sister brother daughter son friend neighbour doctor nurse teacher cousin aunt uncle grandson granddaughter husband wife".split()
PLACES = "park garden market church library station beach river kitchen hospital village city school office harbour bakery museum cinema theatre lake".split()
FOODS = "tea coffee soup bread cake apples cheese fish rice noodles biscuits jam porridge eggs pie salad chicken".split()
HOBBIES = "knitting gardening painting fishing reading dancing singing walking cooking baking sewing chess puzzles crosswords".split()
THINGS = "book song film game photo letter card radio newspaper magazine recipe story picture programme dress hat coat umbrella bicycle car train bus boat".split()
TIMES = "morning afternoon evening night weekend holiday summer winter spring autumn birthday christmas sunday monday".split()
ADJ = "nice lovely quiet busy old new small big warm cold sunny rainy bright dark happy tired funny strange simple long short sweet".split()
VERBS = "visited watched read cooked baked bought found lost saw heard liked enjoyed painted planted fixed cleaned wrote called met remembered".split()

FILLER_WORDS = [f"{a}{b}" for a in "bcdfghklmnprstvw" for b in ("ane", "ole", "ite", "ump", "ash")]


def noun_pool():
    return PEOPLE + PLACES + FOODS + THINGS + HOBBIES


def statement(rng):
    forms = [
        lambda: f"i {rng.choice(VERBS)} the {rng.choice(THINGS)} in the {rng.choice(TIMES)}",
        lambda: f"my {rng.choice(PEOPLE)} {rng.choice(VERBS)} a {rng.choice(ADJ)} {rng.choice(THINGS)}",
        lambda: f"we went to the {rng.choice(PLACES)} with my {rng.choice(PEOPLE)}",
        lambda: f"the {rng.choice(PLACES)} was {rng.choice(ADJ)} that {rng.choice(TIMES)}",
        lambda: f"i like {rng.choice(HOBBIES)} and {rng.choice(FOODS)}",
        lambda: f"there is a {rng.choice(ADJ)} {rng.choice(FILLER_WORDS)} near the {rng.choice(PLACES)}",
    ]
    return rng.choice(forms)()


def question(rng):
    forms = [
        ("what", lambda: f"what {rng.choice(FOODS)} do you like"),
        ("what", lambda: f"what did your {rng.choice(PEOPLE)} say"),
        ("what", lambda: f"what time is the {rng.choice(THINGS)}"),
        ("where", lambda: f"where is the {rng.choice(PLACES)}"),
        ("where", lambda: f"where did you put the {rng.choice(THINGS)}"),
        ("who", lambda: f"who is your {rng.choice(PEOPLE)}"),
        ("who", lambda: f"who made the {rng.choice(FOODS)}"),
        ("when", lambda: f"when is your {rng.choice(TIMES)} trip"),
        ("when", lambda: f"when did you visit the {rng.choice(PLACES)}"),
        ("which", lambda: f"which {rng.choice(['book', 'song', 'game', 'programme'])} do you like"),
    ]
    return rng.choice(forms)[1]()


def main(out):
    rng = random.Random(SEED)
    lines = []
    for _ in range(140):
        lines.append(statement(rng))
    for _ in range(60):
        lines.append(question(rng))
    # every pool word appears at least once
    for w in noun_pool() + ADJ + VERBS + FILLER_WORDS:
        lines.append(f"the {w}")
    for _ in range(9):
        lines.append(f"which movie did you see last {rng.choice(TIMES)}")
    for w in ("films", "shows", "movies"):
        lines.append(f"we saw some {w} at the cinema")
    rng.shuffle(lines)
    Path(out).write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "data/wh_corpus.txt")
