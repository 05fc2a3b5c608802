# DPO, TR-DPO, sDPO and SimPO from the same starting point.
from predpo.evaluation import pairwise_win_rate
from predpo.task import build_desk_task
from predpo.trainer import TrainConfig, train_preference

task = build_desk_task(seed=0, n_prompts=128)
sft, ds = task.sft, task.dataset
print(len(ds), "pairs")

runs = {
    "dpo": train_preference(sft, sft, ds, TrainConfig(beta=0.1, epochs=2)),
    "tr-dpo": train_preference(sft, sft, ds, TrainConfig(method="tr-dpo", beta=0.1, epochs=2,
                                                         tr_dpo_update_every=4)),
    "sdpo": train_preference(sft, sft, ds, TrainConfig(method="sdpo", beta=0.1, epochs=2)),
    "simpo": train_preference(sft, None, ds, TrainConfig(method="simpo", beta=2.5, gamma=1.2,
                                                         epochs=2)),
}
for name, rep in runs.items():
    wr = pairwise_win_rate(rep.final_snapshot, sft, task.eval_prompts, task.oracle)
    print(f"{name:7s} steps={rep.total_steps:3d} refs={len(rep.ref_hashes)} vs sft: {wr.summary()}")

# TR-DPO swaps its reference for the live policy; lambda is exactly 0.5 right after each swap
rep = runs["tr-dpo"]
lams = {r.step: r.lambdas for r in rep.lambda_records}
print([(s, set(lams[s])) for s, _ in rep.ref_hashes[1:3]])
