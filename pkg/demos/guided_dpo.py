# The guiding-reference pipeline end to end, with lambda phase tables.
from predpo.evaluation import pairwise_win_rate
from predpo.pre_dpo import PreDpoPlan, run_pre_dpo
from predpo.task import build_desk_task
from predpo.telemetry import format_phase_table, phase_summary
from predpo.trainer import TrainConfig, train_preference

task = build_desk_task(seed=0)
cfg = TrainConfig(beta=0.5, epochs=2)

# first round: plain DPO from SFT; second round: DPO from SFT again, guided by round one
result = run_pre_dpo(PreDpoPlan.default(task.sft, task.dataset, cfg, cfg.replace(seed=0)))
for key, value in result.manifest().items():
    print(f"{key:20s} {value if value is None else str(value)[:16]}")

baseline = train_preference(task.sft, task.sft, task.dataset, cfg)
for label, rep in (("dpo", baseline), ("guided", result.second_report)):
    print(format_phase_table(*phase_summary(rep.lambda_records, rep.total_steps), label))

for label, snap in (("dpo", baseline.final_snapshot), ("guided", result.pi_final)):
    print(label, pairwise_win_rate(snap, task.sft, task.eval_prompts, task.oracle).summary())

# the same recipe with a reference-free first round
simpo = TrainConfig(method="simpo", beta=2.5, gamma=1.2, epochs=2)
res2 = run_pre_dpo(PreDpoPlan.default(task.sft, task.dataset, simpo, cfg.replace(seed=1)))
print("simpo first round ref:", res2.first_ref)
