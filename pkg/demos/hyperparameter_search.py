# Two-stage search: sweep beta at a fixed learning rate, then sweep the rate for the top two.
from predpo.search import SearchSpace, two_stage_search, winrate_objective
from predpo.task import build_desk_task

task = build_desk_task(seed=0, n_prompts=96)
space = SearchSpace.desk_default("dpo")
print(space.audit())

objective = winrate_objective(task.sft, task.eval_prompts[:64], task.oracle)
result = two_stage_search(space, task.sft, "sft", task.dataset, objective, jobs=4)
print(len(result.stage_runs(1)), "stage-1 runs,", len(result.stage_runs(2)), "stage-2 runs")
for r in result.ranked[:5]:
    print(r.stage, r.config["beta"], r.config["learning_rate"], round(r.value, 4))
best = result.best.config
print("best: beta", best["beta"], "lr", best["learning_rate"])
