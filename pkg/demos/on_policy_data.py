# Building preference pairs by sampling from a policy and ranking with the oracle.
from predpo.data import GenerationConfig, build_on_policy_dataset, dataset_avg_nld, synthetic_prompts, synthetic_sft_corpus
from predpo.evaluation import RewardOracle
from predpo.model import ArchConfig, init_model
from predpo.trainer import TrainConfig, sft_train

arch = ArchConfig()
oracle = RewardOracle(arch.vocab, seed=0)
prompts = synthetic_prompts(64, arch.vocab, seed=0)
print("targets for", prompts[0], "->", sorted(oracle.targets(prompts[0])))

# a short SFT run on oracle-biased text gives a policy worth sampling from
model = init_model(arch, seed=0)
report = sft_train(model, synthetic_sft_corpus(prompts, oracle, seed=0),
                   TrainConfig(method="sft", learning_rate=1e-2, epochs=10, batch_size=32))
print("sft loss %.3f -> %.3f" % (report.loss_curve[0][2], report.loss_curve[-1][2]))

# six samples per prompt, best vs worst; prompts whose samples all tie are dropped
ds = build_on_policy_dataset(report.final_snapshot, prompts, GenerationConfig(n_samples=6, seed=1), oracle)
print(len(ds), "pairs from", len(prompts), "prompts; avg normalized length gap %.3f" % dataset_avg_nld(ds))
t = ds[0]
print(arch.vocab.render(t.prompt), "|", arch.vocab.render(t.chosen), ">", arch.vocab.render(t.rejected), t.meta)
