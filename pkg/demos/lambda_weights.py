# The per-example weight lambda, and why a guide changes it.
import math

import numpy as np

from predpo.losses import dpo_terms_from_logratios, lambda_weight

# reference log-ratio r, policy log-ratio p: lambda = sigmoid(beta * (r - p))
print(lambda_weight(0.7, 0.7, beta=3.0))        # equal -> 0.5
print(lambda_weight(1.0, 0.0, beta=1.0))        # reference prefers chosen more -> above 0.5
print(lambda_weight(-10.0, 10.0, beta=0.05))    # policy already ahead -> below 0.5

# with policy == reference every example weighs 0.5 and the loss is ln 2
losses, lams = dpo_terms_from_logratios(np.zeros(4), np.zeros(4), beta=0.1)
print(losses, math.log(2), lams)

# a guiding reference that already separates the pair pushes lambda toward 0 or 1
guide = np.array([8.0, 2.0, -1.0, -6.0])   # guide log-ratios on four pairs
policy = np.zeros(4)                       # a fresh SFT policy starts at zero margin
for beta in (0.1, 0.5, 1.0):
    print(beta, np.round(lambda_weight(guide, policy, beta), 3))
