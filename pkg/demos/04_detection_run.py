"""A short guarded run on the one-state testbed: watch the rate estimate
cross the adaptive threshold and raise a flag when an attack begins."""

from cbfguard.config import build_scenario, load_and_validate, resolve_config_path
from cbfguard.sim import run_scenario

cfg = load_and_validate(resolve_config_path("scalar_soundness.cfg"))
res = run_scenario(build_scenario(cfg))
m = res.metrics

print("attack intervals:", [(round(a, 3), round(b, 3)) for a, b in m.schedule_intervals])
print("flags raised at:", [round(f, 3) for f, _ in m.detections])
print("matched delays:", [round(d, 3) for d in m.delays])
print("undetected attacks:", m.undetected_attack_count, "of", m.attack_count)
print("safety violated:", m.safety_violated, "| false negative:", m.false_negative)

first_flag = next((f for f, iv in m.detections if iv is not None), None)
if first_flag is not None:
    k = int(round(first_flag / cfg.dt))
    for r in res.records[k - 2 : k + 2]:
        print(f"  t={r.t:.3f} x={r.state[0]:+.3f} fd={r.fd[0]:+.3f} gamma={r.gamma[0]:.4f} "
              f"region={r.region[0]} flag={int(r.flag_active)} mode={r.mode}")
