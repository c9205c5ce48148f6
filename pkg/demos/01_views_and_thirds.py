"""How a batch is split into positive and negative pools, and what the views look like.

Run: python3 demos/01_views_and_thirds.py
"""

import torch

from seqdisent.data import ShapeMotionSpec, gen_shape_motion
from seqdisent.distributions import pairwise_kl_matrix
from seqdisent.model import ModelConfig, SequenceVAE
from seqdisent.views import NegativeMode, partition_thirds, static_views

torch.manual_seed(0)
data = gen_shape_motion(ShapeMotionSpec(samples_per_pair=1))
model = SequenceVAE(ModelConfig(seq_len=data.seq_len, frame_shape=data.frame_shape)).eval()

# a batch of 9 sequences gives thirds of size 3
x = torch.as_tensor(data.data[:9])
with torch.no_grad():
    post = model.encode(x)
    dist = pairwise_kl_matrix(post.static)
# an untrained encoder maps everything close together, so the divergences are small
print("KL row for anchor 0:", [f"{float(v):.2e}" for v in dist[0]])

for mode in NegativeMode:
    pools = partition_thirds(dist[0], mode, anchor_index=0, generator=torch.Generator().manual_seed(0))
    print(f"{mode.value:>22s}: positive {pools.positive}  negative {pools.negative}")

# each anchor gets one positive view and 2n negative views of its static code
with torch.no_grad():
    views, _ = static_views(model, post, torch.Generator().manual_seed(1))
print("positive views:", tuple(views.positive.shape), "negative views:", tuple(views.negatives.shape))
