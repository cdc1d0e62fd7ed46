"""How the challenge count P and the threshold theta trade errors off.

A reduced population keeps this under a minute. The full-size experiments
are available through the ``sensorprint-eval`` command.
"""

from sensorprint.evaluation import config_from_mapping, run_confusion_matrix, run_P_sweep, run_theta_sweep

cfg = config_from_mapping({"n_matchings": "200", "instances_per_model": "5", "P_values": "5 10 50"})

print("RMSE against the genuine fingerprint versus a same-model sibling:")
for P, mt, st, mi, si in run_P_sweep(cfg, write=False):
    print(f"  P={P:<3} genuine {mt:.4f} +- {st:.4f}   sibling {mi:.4f} +- {si:.4f}")

print("\nThreshold sweep at P=10:")
for theta, precision, recall, f1 in run_theta_sweep(cfg, write=False)[::3]:
    print(f"  theta={theta:.4f}  precision={precision:.3f}  recall={recall:.3f}  f1={f1:.3f}")

print("\nError counts per model at P=10, theta=0.01:")
for name, c in run_confusion_matrix(cfg, write=False).items():
    print(f"  {name:<8} FN={c.fn:<4} FP(intra)={c.fp_intra:<4} FP(inter)={c.fp_inter}")
