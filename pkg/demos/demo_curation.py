#!/usr/bin/env python3
"""Curation pipeline walkthrough: parse raw generation output into scenario
blocks, then thin the pool with the near-duplicate and keyword filters."""

from ricl.corpus import ScenarioRecord, Split, Subset
from ricl.curation import (
    dedupe,
    keyword_diversity_filter,
    mint_id,
    pair_images,
    parse_scenario_blocks,
)

RAW_GENERATION_OUTPUT = '''
Here are some scenarios:

Example 1:
{Caption: "cloudy olive oil in a chilled glass bottle"} {Rationale: "Refrigeration makes olive oil congeal and turn hazy; the cloudiness disappears at room temperature and the oil is fine."} {Situation: "Person dressed the salad with the oil and enjoyed the meal."}

Example 2:
{Caption: "cloudy olive oil in a chilled glass bottle."} {Rationale: "Cold storage clouds olive oil without spoiling it."} {Situation: "Person used the oil for cooking with no issues."}

Example 3:
{Caption: "white flecks floating in orange juice"} {Rationale: "Chilled juice lets pulp and pectin clump into pale flecks; they are harmless and vanish when the juice warms up."} {Situation: "Person drank the juice at breakfast without concern."}

Example 4:
{Caption: "pulp settled at the bottom of a juice glass"} {Rationale: "Natural pulp sinks when a drink stands still; a quick stir brings it back."} {Situation: "Person stirred the drink and finished it happily."}
'''

blocks = parse_scenario_blocks(RAW_GENERATION_OUTPUT)
print(f"parsed {len(blocks)} scenario blocks:")
for block in blocks:
    print(f"  line {block.source_line}: {block.caption!r}")

# Turn blocks into records; content-hash ids keep joins stable across
# pipeline reruns.
records = [
    ScenarioRecord(
        id=mint_id(block),
        subset=Subset.VIS,
        caption=block.caption,
        rationale=block.rationale,
        outcome=block.situation,
        image_ref=f"images/{mint_id(block)}.jpg",
        split=Split.DB,
    )
    for block in blocks
]

# The two olive-oil captions differ by one character, far above the
# trigram-Jaccard threshold; the earlier record survives.
kept, dedupe_report = dedupe(records, similarity_threshold=0.8)
print(f"\ndedupe: kept {dedupe_report.output_count} of {dedupe_report.input_count} "
      f"({dedupe_report.removed_duplicates} near-duplicates dropped)")

# Keyword caps keep any one topic from dominating: cap=2 means occurrences
# of a keyword across kept captions stay below 2, so at most one "juice"
# record survives and later ones are dropped first.
kept2, keyword_report = keyword_diversity_filter(kept, keywords=["juice"], cap=2)
print("keyword filter: kept "
      f"{keyword_report.output_count} of {keyword_report.input_count}; "
      f"final keyword counts: {keyword_report.keyword_counts}")

merged = dedupe_report.merge(keyword_report)
print(f"pipeline report balances: {merged.input_count} in = {merged.output_count} out "
      f"+ {merged.removed_duplicates} dup + {merged.removed_by_keyword} keyword")

# Image pairing records ranked candidates and leaves the selection to a
# human reviewer. A scripted search client stands in for the real API.
pairing = pair_images(kept2[0], lambda query, count: [
    f"https://images.example/search/{i}?q={query[:20]}" for i in range(count)
])
print(f"\npairing for {pairing.scenario_id}: {len(pairing.candidates)} candidates, "
      f"selected={pairing.selected!r} (awaiting human review)")
