"""Twenty short documents with hand-counted transition-word occurrences.

Counts follow the matching rule: split on whitespace, lowercase, strip leading
and trailing punctuation, compare whole tokens. Each entry lists the token
count of the document and the per-pattern counts.
"""

PATTERNS = ("but", "however", "wait", "so")

CORPUS = [
    ("But wait, the sum is odd.", 6, {"but": 1, "wait": 1}),
    ("However the answer is 7.", 5, {"however": 1}),
    ("so so so", 3, {"so": 3}),
    ("BUT, however; but.", 3, {"but": 2, "however": 1}),
    ("", 0, {}),
    ("butter is not but", 4, {"but": 1}),
    ("(but) [however] {wait}", 3, {"but": 1, "however": 1, "wait": 1}),
    ("Wait... wait! WAIT?", 3, {"wait": 3}),
    ("no transition words here", 4, {}),
    ("but-however", 1, {}),
    ("So, the result follows. So we stop.", 7, {"so": 2}),
    ("however, however, however", 3, {"however": 3}),
    ("'but' \"but\" but's", 3, {"but": 2}),
    ("   spaced   but   out   ", 3, {"but": 1}),
    ("line one\nbut line two\thowever", 6, {"but": 1, "however": 1}),
    ("wait wait but so however", 5, {"wait": 2, "but": 1, "so": 1, "however": 1}),
    ("....", 1, {}),
    ("Butt but Bu t", 4, {"but": 1}),
    ("so-called so", 2, {"so": 1}),
    ("And yet, however, it moved; but slowly, so slowly.", 9, {"however": 1, "but": 1, "so": 1}),
]

TOTAL_TOKENS = 75
TOTAL_COUNTS = {"but": 12, "however": 9, "wait": 7, "so": 8}
