"""Parse a policy, inject the process-instance clause and check who satisfies it."""
from martsia.policy import evaluate_policy, expand_policy, format_policy, inject_instance_clause, parse_policy

UNIVERSE = ["A", "B", "C", "D"]

ast = parse_policy("(Supplier@2+ and International@B) or Manufacturer@A")
ast = inject_instance_clause(ast, "43175279", len(UNIVERSE))
print("stored policy:", format_policy(ast))
print("threshold tree:", expand_policy(ast, UNIVERSE))

instance = {"43175279": set(UNIVERSE)}
candidates = {
    "manufacturer": {**instance, "Manufacturer": {"A"}},
    "manufacturer certified by B only": {**instance, "Manufacturer": {"B"}},
    "supplier": {**instance, "Supplier": {"C", "D"}, "International": {"B"}},
    "customs": {**instance, "Customs": set(UNIVERSE)},
    "manufacturer outside the instance": {"Manufacturer": {"A"}},
}
for who, certified in candidates.items():
    print(f"{who:36s} {'satisfies' if evaluate_policy(ast, certified) else 'does not satisfy'}")
