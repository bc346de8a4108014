"""The prefix attention mask, drawn as a grid.

One decoder handles conditional generation by splitting each sequence into an
input segment (fully visible to itself, like an encoder) and an output
segment (causal, like a decoder). The boundary sits at the start token.

Run: python3 demos/04_prefix_attention.py
"""

import numpy as np

from codeclm.transformer import prefix_attention_mask

boundary, total = 5, 11
mask = prefix_attention_mask(boundary, total)

labels = [f"i{p}" for p in range(boundary)] + [f"o{p}" for p in range(total - boundary)]
print("rows = query position, columns = key position, # = may attend\n")
print("      " + " ".join(f"{l:>2}" for l in labels))
for q in range(total):
    row = "  ".join("#" if mask[q, k] else "." for k in range(total))
    print(f"  {labels[q]:>2}  {row}")

print("\ninput rows attend to the whole input block and nothing else;")
print("output rows attend to the full input plus output positions <= their own.")

# the two defining properties, stated as checks
q_idx = np.arange(total)[:, None]
k_idx = np.arange(total)[None, :]
inp = q_idx < boundary
print(f"\ninput block is bidirectional: {bool(np.all(mask[:boundary, :boundary]))}")
print(f"no row sees future output:    {not np.any(mask & (k_idx > np.maximum(q_idx, boundary - 1)))}")
