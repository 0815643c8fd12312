"""Compile a threshold tree into a share-generating matrix and reconstruct a secret."""
from martsia.lsss import compile_lsss, reconstruct, reconstruction_coefficients, share_secret
from martsia.maabe import GROUP_ORDER
from martsia.policy import expand_policy, parse_policy
from martsia.rng import SeededRandom

UNIVERSE = ["A", "B", "C", "D"]
p = GROUP_ORDER
m = compile_lsss(expand_policy(parse_policy("Supplier@2+ and International@B"), UNIVERSE), p)

print(f"{len(m)} rows x {m.width} columns")
for row, attr in zip(m.rows, m.rho):
    print(f"  {attr:16s} {[x if x < p // 2 else x - p for x in row]}")

secret = 271828
shares = share_secret(m, secret, SeededRandom(b"lsss demo"))
for owned in (["Supplier@A", "International@B"],
              ["Supplier@A", "Supplier@C", "International@B"],
              ["Supplier@A", "Supplier@C"]):
    plan = reconstruction_coefficients(m, owned)
    got = "unqualified" if plan is None else reconstruct(plan, shares, p)
    print(f"{', '.join(owned):45s} -> {got}")
