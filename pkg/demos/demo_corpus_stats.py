#!/usr/bin/env python3
"""Corpus statistics: token lengths, n-gram entropy with bootstrap error
bars, and specificity score distributions."""

import numpy as np

from ricl.corpus import ExplanationSource, count_tokens, make_explanation
from ricl.evaluation import (
    bootstrap_entropy,
    distribution_mean,
    length_stats,
    ngram_entropy,
    specificity_distribution,
)

# The tokenizer splits on whitespace and peels boundary punctuation.
for text in ["", "a b c", "don't stop, now!"]:
    print(f"count_tokens({text!r}) = {count_tokens(text)}")

explanations = [
    make_explanation("r1", ExplanationSource.HUMAN, "The fridge made the oil cloudy."),
    make_explanation("r2", ExplanationSource.HUMAN, "Pulp clumps in cold juice, harmlessly."),
    make_explanation("r3", ExplanationSource.HUMAN,
                     "Whey separates from yogurt naturally; stirring restores the texture."),
]
mean, std = length_stats(explanations)
print(f"\nlength stats over {len(explanations)} explanations: {mean:.1f} +/- {std:.1f} tokens "
      "(population std)")

# Analytic entropy values: a degenerate distribution has 0 bits, a uniform
# distribution over 4 unigrams has exactly 2 bits.
print("\nngram entropy (bits):")
print("  ['a a a'], n=1      ->", ngram_entropy(["a a a"], 1))
print("  ['a b c d'], n=1    ->", ngram_entropy(["a b c d"], 1))
print("  ['a b a b a'], n=2  ->", ngram_entropy(["a b a b a"], 2))

# Bootstrapping over records with several explanations each: every
# iteration samples one explanation per record, pools the n-grams, and
# measures entropy; the spread across iterations is the error bar.
pairs = {
    "r1": ["the oil went cloudy in the cold", "refrigeration congealed the oil"],
    "r2": ["pulp gathered into pale flecks", "the chilled juice separated a little"],
    "r3": ["whey rose to the top of the cup", "the yogurt split into curds and whey"],
}
stats = bootstrap_entropy(pairs, iterations=1000, seed=11)
print("\nbootstrap entropy (1000 iterations, one explanation per record each):")
for n, (mean, std) in sorted(stats.items()):
    print(f"  n={n}: {mean:.3f} +/- {std:.3f} bits")

# Specificity ratings aggregate into a level distribution and a mean.
rng = np.random.default_rng(3)
scores = rng.choice([1, 2, 3, 4, 5], p=[0.305, 0.401, 0.086, 0.119, 0.089], size=1000).tolist()
proportions, mean = specificity_distribution(scores)
print("\nspecificity distribution over scripted ratings:")
for level in range(1, 6):
    print(f"  level {level}: {proportions[level]:6.1%}")
print(f"  mean: {mean:.2f}")

# The same mean can be recovered from a published percentage table.
published = {1: 30.5, 2: 40.1, 3: 8.6, 4: 11.9, 5: 8.9}
print(f"  mean from a percentage table {published}: {distribution_mean(published):.3f}")
