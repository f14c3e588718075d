"""Build prompts in every mode, weight their token embeddings, and map caption
similarity to a guidance scale.

    python3 demos/01_prompts_and_guidance.py
"""

from __future__ import annotations

import numpy as np

from semaug.prompting import PROMPT_MODES, GuidanceConfig, build_prompt, guidance_scale, weight_embeddings

label = "Chevrolet Silverado 1500 Extended Cab 2012"
caption = "a 2009 chevrolet silverado in a desert"

print("Prompt modes:")
for mode in PROMPT_MODES:
    p = build_prompt(label, caption, mode)
    print(f"  {mode:<13} {p.rendered_text!r}")
print("  bracketed    ", repr(build_prompt(label, caption, bracket_mode=True).rendered_text))

# Token weighting scales the label sentence up and the caption down. Here we
# use random unit vectors in place of a text encoder's token embeddings.
prompt = build_prompt("cat", "a cat asleep on a sofa")
tokens = prompt.tokens()
span = prompt.span_ids()
emb = np.random.default_rng(0).normal(size=(len(tokens), 8))
emb /= np.linalg.norm(emb, axis=1, keepdims=True)
weighted = weight_embeddings(emb, span, prompt.w_l, prompt.w_c)
print("\nToken norms after weighting (span 1 = label, 2 = caption):")
for (tok, _, _), sid, norm in zip(tokens, span, np.linalg.norm(weighted, axis=1)):
    print(f"  {tok:<16} span={sid} norm={norm:.2f}")

# Guidance peaks at s = 0.25 and falls off for very similar or dissimilar captions.
print("\nCaption similarity -> guidance scale:")
for s in (0.0, 0.1, 0.25, 0.3, 0.5, 0.57, 1.0):
    raw, applied = guidance_scale(s, GuidanceConfig(floor=1.0))
    print(f"  s={s:<5} g_raw={raw:+.4f} g_applied(floor 1)={applied:.4f}")
