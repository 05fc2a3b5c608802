# A tour of the toy policy: scoring, sampling, and snapshots.
import numpy as np

from predpo.model import (ArchConfig, init_model, next_token_probs, per_token_log_probs,
                          restore, sample_response, sequence_log_prob)

arch = ArchConfig()  # 32 tokens, 6-token window, 16-d embeddings, 64 hidden units
model = init_model(arch, seed=0)
print("parameters:", arch.n_params)

prompt, response = (5, 9), (12, 7, 20)
print("log pi(y|x):", sequence_log_prob(model, prompt, response))
print("per token  :", np.round(per_token_log_probs(model, prompt, response), 4))

probs = next_token_probs(model, prompt, ())
print("top next tokens:", np.argsort(probs)[::-1][:5])

# seeded sampling is reproducible; temperature 0 is greedy
print(sample_response(model, prompt, temperature=0.8, top_p=0.95, max_len=8, rng_seed=1))
print(sample_response(model, prompt, temperature=0.8, top_p=0.95, max_len=8, rng_seed=1))
print(sample_response(model, prompt, temperature=0.0, max_len=8))

# snapshots are frozen and content-addressed
snap = model.snapshot()
model.set_params(model.params + 0.01)
print(snap.content_hash[:16], model.snapshot().content_hash[:16])
print(restore(snap).snapshot() == snap)
